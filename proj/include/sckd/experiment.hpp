#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

#include "sckd/config.hpp"

namespace sckd {

/// Synthetic sequence or JSONL file, depending on the config. A missing vocab
/// path defaults to vocab.txt next to the dataset.
TaskSequence load_experiment_data(const ExperimentConfig& cfg);

struct RunArtifacts {
  bool dump_memory = false;
  bool save_model = false;
};

/// Trains one run and writes acc_matrix.csv, summary.json, loss_trace_task{j}.csv,
/// manifest.json and, on request, reps.csv / memory_task{j}.csv / model.ckpt into
/// cfg.out. Per-task artifacts are flushed as soon as each task finishes.
RunResult run_experiment(const ExperimentConfig& cfg, const RunArtifacts& extra = {}, std::ostream* log = nullptr);

void write_summary_json(const AccuracyMatrix& acc, const ExperimentConfig& cfg, const std::filesystem::path& path);

struct SweepCell {
  int memory = 1;
  std::uint64_t seed = 0;
  std::vector<Scalar> acc;  // ACC_1..ACC_J
  std::optional<Scalar> bwt;
};

struct SweepRow {
  int memory = 1;
  int runs = 0;
  std::vector<Scalar> acc_mean;
  Scalar final_mean = 0.0;
  Scalar final_std = 0.0;  // sample standard deviation, 0 for one run
  std::optional<Scalar> bwt_mean;
  std::optional<Scalar> bwt_std;
};

/// Groups cells by memory size (ascending) and reduces them to mean and std.
std::vector<SweepRow> aggregate_sweep(const std::vector<SweepCell>& cells);
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);
void write_sweep_runs_csv(const std::vector<SweepCell>& cells, const std::filesystem::path& path);

/// Runs every (memory, seed) pair; cell artifacts go to out/L{memory}_seed{seed}.
/// Throws ConfigError on an empty grid.
std::vector<SweepCell> run_sweep(const ExperimentConfig& base, const std::vector<int>& memories,
                                 const std::vector<std::uint64_t>& seeds, std::ostream* log = nullptr);

}  // namespace sckd

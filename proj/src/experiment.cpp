#include "sckd/experiment.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>

#include <json.hpp>

namespace sckd {

namespace {

using nlohmann::json;

void write_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json optional_number(const std::optional<Scalar>& v) { return v ? json(*v) : json(nullptr); }

std::vector<Scalar> acc_curve(const AccuracyMatrix& acc) {
  std::vector<Scalar> out;
  for (int j = 1; j <= acc.tasks() && acc.row_complete(j); ++j) out.push_back(average_accuracy(acc, j));
  return out;
}

json echo_json(const ExperimentConfig& cfg) {
  json j = json::object();
  for (const auto& [k, v] : config_echo(cfg)) j[k] = v;
  return j;
}

}  // namespace

TaskSequence load_experiment_data(const ExperimentConfig& cfg) {
  if (cfg.synthetic) return generate_synthetic_sequence(effective_synthetic_config(cfg));
  if (cfg.dataset.empty()) throw ConfigError("no dataset given (use --synthetic or --dataset PATH)");
  const auto vocab = cfg.vocab.empty() ? cfg.dataset.parent_path() / "vocab.txt" : cfg.vocab;
  return load_jsonl(cfg.dataset, vocab);
}

void write_summary_json(const AccuracyMatrix& acc, const ExperimentConfig& cfg, const std::filesystem::path& path) {
  const auto curve = acc_curve(acc);
  json j;
  j["mode"] = to_string(cfg.run.mode);
  j["seed"] = cfg.run.seed;
  j["tasks"] = acc.tasks();
  j["completed_tasks"] = curve.size();
  j["acc"] = curve;
  j["final_acc"] = curve.empty() ? json(nullptr) : json(curve.back());
  j["bwt"] = static_cast<int>(curve.size()) == acc.tasks() ? optional_number(bwt(acc)) : json(nullptr);
  write_json(j, path);
}

RunResult run_experiment(const ExperimentConfig& cfg, const RunArtifacts& extra, std::ostream* log) {
  const TaskSequence seq = load_experiment_data(cfg);
  const RunConfig run = effective_run_config(cfg);
  run.validate();
  std::filesystem::create_directories(cfg.out);
  write_key_values(config_echo(cfg), cfg.out / "config.txt");

  std::vector<double> seconds;
  std::vector<std::size_t> memory_sizes;
  auto last = std::chrono::steady_clock::now();
  const auto start = last;
  auto observer = [&](const TrainerState& state, const Task& task, const AccuracyMatrix& acc) {
    const auto now = std::chrono::steady_clock::now();
    seconds.push_back(std::chrono::duration<double>(now - last).count());
    last = now;
    memory_sizes.push_back(state.memory.exemplar_count());
    write_loss_trace(state.trace, cfg.out / ("loss_trace_task" + std::to_string(task.index) + ".csv"));
    write_accuracy_csv(acc, cfg.out / "acc_matrix.csv");
    write_summary_json(acc, cfg, cfg.out / "summary.json");
    if (extra.dump_memory) state.memory.write_csv(cfg.out / ("memory_task" + std::to_string(task.index) + ".csv"));
    if (log)
      *log << "task " << task.index << "/" << seq.tasks.size() << "  acc " << average_accuracy(acc, task.index)
           << "  (" << seconds.back() << " s)\n"
           << std::flush;
  };

  RunResult result;
  json manifest;
  manifest["format"] = "sckd-run-1";
  manifest["config"] = echo_json(cfg);
  manifest["seed"] = cfg.run.seed;
  manifest["data"] = {{"source", cfg.synthetic ? std::string("synthetic") : cfg.dataset.string()},
                      {"tasks", seq.tasks.size()},
                      {"relations", seq.relation_count()},
                      {"vocab_size", seq.vocab_size()},
                      {"n_ways", seq.n_ways},
                      {"k_shots", seq.k_shots}};
  try {
    result = run_sequence(seq, run, observer);
  } catch (const std::exception& e) {
    manifest["status"] = "failed";
    manifest["error"] = e.what();
    manifest["task_seconds"] = seconds;
    write_json(manifest, cfg.out / "manifest.json");
    throw;
  }

  if (cfg.dump_reps) {
    std::vector<Sample> test;
    for (const Task& t : seq.tasks) test.insert(test.end(), t.test.begin(), t.test.end());
    write_representations_csv(result.final_model, test, cfg.out / "reps.csv");
  }
  if (extra.save_model) save_checkpoint(result.final_model, cfg.out / "model.ckpt");

  const auto curve = acc_curve(result.accuracy);
  manifest["status"] = "completed";
  manifest["task_seconds"] = seconds;
  manifest["total_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  manifest["memory_sizes"] = memory_sizes;
  manifest["final"] = {{"acc", curve.back()}, {"bwt", optional_number(bwt(result.accuracy))}, {"acc_curve", curve}};
  write_json(manifest, cfg.out / "manifest.json");
  return result;
}

std::vector<SweepRow> aggregate_sweep(const std::vector<SweepCell>& cells) {
  std::map<int, std::vector<const SweepCell*>> groups;
  for (const auto& c : cells) groups[c.memory].push_back(&c);
  std::vector<SweepRow> rows;
  for (const auto& [memory, group] : groups) {
    SweepRow row;
    row.memory = memory;
    row.runs = static_cast<int>(group.size());
    const std::size_t J = group.front()->acc.size();
    row.acc_mean.assign(J, 0.0);
    for (const SweepCell* c : group) {
      if (c->acc.size() != J) throw ContractError("aggregate_sweep: cells with different task counts");
      for (std::size_t j = 0; j < J; ++j) row.acc_mean[j] += c->acc[j];
    }
    for (auto& v : row.acc_mean) v /= row.runs;

    auto mean_std = [&](auto get) {
      Scalar mean = 0.0;
      for (const SweepCell* c : group) mean += get(*c);
      mean /= row.runs;
      Scalar ss = 0.0;
      for (const SweepCell* c : group) ss += (get(*c) - mean) * (get(*c) - mean);
      return std::pair{mean, row.runs > 1 ? std::sqrt(ss / (row.runs - 1)) : 0.0};
    };
    std::tie(row.final_mean, row.final_std) = mean_std([](const SweepCell& c) { return c.acc.back(); });
    const bool all_bwt = std::all_of(group.begin(), group.end(), [](const SweepCell* c) { return c->bwt.has_value(); });
    if (all_bwt) {
      auto [m, s] = mean_std([](const SweepCell& c) { return *c.bwt; });
      row.bwt_mean = m;
      row.bwt_std = s;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.precision(17);
  const std::size_t J = rows.empty() ? 0 : rows.front().acc_mean.size();
  out << "memory,runs";
  for (std::size_t j = 1; j <= J; ++j) out << ",acc_T" << j << "_mean";
  out << ",final_acc_mean,final_acc_std,bwt_mean,bwt_std\n";
  for (const auto& r : rows) {
    out << r.memory << ',' << r.runs;
    for (Scalar v : r.acc_mean) out << ',' << v;
    out << ',' << r.final_mean << ',' << r.final_std << ',';
    if (r.bwt_mean) out << *r.bwt_mean;
    out << ',';
    if (r.bwt_std) out << *r.bwt_std;
    out << '\n';
  }
}

void write_sweep_runs_csv(const std::vector<SweepCell>& cells, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.precision(17);
  out << "memory,seed,final_acc,bwt\n";
  for (const auto& c : cells) {
    out << c.memory << ',' << c.seed << ',' << c.acc.back() << ',';
    if (c.bwt) out << *c.bwt;
    out << '\n';
  }
}

std::vector<SweepCell> run_sweep(const ExperimentConfig& base, const std::vector<int>& memories,
                                 const std::vector<std::uint64_t>& seeds, std::ostream* log) {
  if (memories.empty() || seeds.empty()) throw ConfigError("sweep grid is empty");
  std::filesystem::create_directories(base.out);
  std::vector<SweepCell> cells;
  for (int L : memories) {
    for (std::uint64_t seed : seeds) {
      ExperimentConfig cfg = base;
      cfg.run.memory_size = L;
      cfg.run.seed = seed;
      cfg.out = base.out / ("L" + std::to_string(L) + "_seed" + std::to_string(seed));
      if (log) *log << "== memory " << L << ", seed " << seed << '\n';
      const RunResult r = run_experiment(cfg, {}, log);
      SweepCell cell{L, seed, acc_curve(r.accuracy), bwt(r.accuracy)};
      cells.push_back(std::move(cell));
    }
  }
  write_sweep_runs_csv(cells, base.out / "sweep_runs.csv");
  write_sweep_csv(aggregate_sweep(cells), base.out / "sweep.csv");
  return cells;
}

}  // namespace sckd

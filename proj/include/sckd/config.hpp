#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sckd/data.hpp"
#include "sckd/trainer.hpp"

namespace sckd {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Everything one experiment needs: the run config, where the data comes
/// from, and where artifacts go.
struct ExperimentConfig {
  RunConfig run;
  bool synthetic = true;
  SyntheticConfig data;
  std::optional<std::uint64_t> data_seed;  // synthetic generator seed; follows `seed` when unset
  std::filesystem::path dataset;
  std::filesystem::path vocab;
  std::filesystem::path out = "sckd_out";
  bool dump_reps = false;
  std::vector<std::string> ablations;
};

/// Ablation names accepted by `ablate`: no-dst, no-aug, no-fd, no-rd, no-dtr, no-pd.
/// Each one zeroes a weight or switches augmentation off.
void apply_ablation(RunConfig& run, std::string_view name);

/// Sets one key. Throws ConfigError on an unknown key or malformed value.
void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view value);

/// Flat `key = value` lines; '#' starts a comment. ConfigError carries path:line.
KeyValues read_key_values(const std::filesystem::path& path);

/// Run config with ablations folded in and the synthetic seed resolved.
RunConfig effective_run_config(const ExperimentConfig& cfg);
SyntheticConfig effective_synthetic_config(const ExperimentConfig& cfg);

/// Every key with its current value. Feeding the echo back through
/// apply_setting reproduces `cfg` exactly.
KeyValues config_echo(const ExperimentConfig& cfg);
void write_key_values(const KeyValues& kv, const std::filesystem::path& path);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace sckd

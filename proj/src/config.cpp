#include "sckd/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>

namespace sckd {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T v{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty())
    throw ConfigError("invalid value '" + std::string(text) + "' for " + std::string(key));
  return v;
}

int parse_int(std::string_view key, std::string_view text) { return parse_number<int>(key, text); }
double parse_double(std::string_view key, std::string_view text) { return parse_number<double>(key, text); }

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError("invalid boolean '" + std::string(text) + "' for " + std::string(key));
}

using Setter = std::function<void(ExperimentConfig&, std::string_view, std::string_view)>;

#define SCKD_INT(field) [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.field = parse_int(k, v); }
#define SCKD_DBL(field) [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.field = parse_double(k, v); }
#define SCKD_BOOL(field) [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.field = parse_bool(k, v); }

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"mode", [](ExperimentConfig& c, std::string_view, std::string_view v) { c.run.mode = parse_run_mode(std::string(v)); }},
      {"seed", [](ExperimentConfig& c, std::string_view k, std::string_view v) { c.run.seed = parse_number<std::uint64_t>(k, v); }},
      {"data_seed",
       [](ExperimentConfig& c, std::string_view k, std::string_view v) {
         if (v.empty() || v == "auto")
           c.data_seed.reset();
         else
           c.data_seed = parse_number<std::uint64_t>(k, v);
       }},
      {"synthetic", SCKD_BOOL(synthetic)},
      {"dataset",
       [](ExperimentConfig& c, std::string_view, std::string_view v) {
         c.dataset = std::string(v);
         c.synthetic = v.empty();
       }},
      {"vocab", [](ExperimentConfig& c, std::string_view, std::string_view v) { c.vocab = std::string(v); }},
      {"out", [](ExperimentConfig& c, std::string_view, std::string_view v) { c.out = std::string(v); }},
      {"dump_reps", SCKD_BOOL(dump_reps)},
      {"tasks", SCKD_INT(data.n_tasks)},
      {"ways", SCKD_INT(data.n_ways)},
      {"shots", SCKD_INT(data.k_shots)},
      {"first_task_samples", SCKD_INT(data.first_task_samples)},
      {"test_per_relation", SCKD_INT(data.test_per_relation)},
      {"vocab_size", SCKD_INT(data.vocab_size)},
      {"spread", SCKD_DBL(data.cluster_spread)},
      {"cue_pool", SCKD_INT(data.cue_pool)},
      {"memory", SCKD_INT(run.memory_size)},
      {"pseudo", SCKD_INT(run.pseudo_per_relation)},
      {"tau", SCKD_DBL(run.augmentation.tau)},
      {"aug_cap", SCKD_INT(run.augmentation.cap_per_sample)},
      {"augment", SCKD_BOOL(run.augment)},
      {"temp", SCKD_DBL(run.weights.temperature)},
      {"alpha", SCKD_DBL(run.weights.alpha)},
      {"beta", SCKD_DBL(run.weights.beta)},
      {"gamma", SCKD_DBL(run.weights.gamma)},
      {"lambda1", SCKD_DBL(run.weights.lambda1)},
      {"lambda2", SCKD_DBL(run.weights.lambda2)},
      {"rd_weight", SCKD_DBL(run.weights.rd_weight)},
      {"dtr_weight", SCKD_DBL(run.weights.dtr_weight)},
      {"dropout", SCKD_DBL(run.dropout)},
      {"epochs_adapt", SCKD_INT(run.epochs_adapt)},
      {"epochs_sckd", SCKD_INT(run.epochs_sckd)},
      {"batch_size", SCKD_INT(run.batch_size)},
      {"grad_accum", SCKD_INT(run.grad_accum)},
      {"lr_encoder", SCKD_DBL(run.lr.encoder)},
      {"lr_projection", SCKD_DBL(run.lr.projection)},
      {"lr_classifier", SCKD_DBL(run.lr.classifier)},
      {"model_dim", SCKD_INT(run.dims.model_dim)},
      {"heads", SCKD_INT(run.dims.heads)},
      {"ffn_dim", SCKD_INT(run.dims.ffn_dim)},
      {"hidden_dim", SCKD_INT(run.dims.hidden_dim)},
      {"ablate",
       [](ExperimentConfig& c, std::string_view, std::string_view v) {
         c.ablations.clear();
         std::string_view rest = v;
         while (!rest.empty()) {
           const auto comma = rest.find(',');
           const std::string name = trim(rest.substr(0, comma));
           if (!name.empty()) {
             RunConfig probe;
             apply_ablation(probe, name);
             if (std::find(c.ablations.begin(), c.ablations.end(), name) == c.ablations.end())
               c.ablations.push_back(name);
           }
           if (comma == std::string_view::npos) break;
           rest = rest.substr(comma + 1);
         }
       }},
  };
  return table;
}

#undef SCKD_INT
#undef SCKD_DBL
#undef SCKD_BOOL

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void apply_ablation(RunConfig& run, std::string_view name) {
  if (name == "no-dst" || name == "no-distill")
    run.weights.lambda2 = 0.0;
  else if (name == "no-aug" || name == "no-augment")
    run.augment = false;
  else if (name == "no-fd")
    run.weights.alpha = 0.0;
  else if (name == "no-rd")
    run.weights.rd_weight = 0.0;
  else if (name == "no-dtr")
    run.weights.dtr_weight = 0.0;
  else if (name == "no-pd")
    run.weights.gamma = 0.0;
  else
    throw ConfigError("unknown ablation '" + std::string(name) +
                      "' (expected no-dst, no-aug, no-fd, no-rd, no-dtr or no-pd)");
}

void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
  std::string k(key);
  std::replace(k.begin(), k.end(), '-', '_');
  if (k == "baseline") k = "mode";
  const auto it = setters().find(k);
  if (it == setters().end()) throw ConfigError("unknown config key '" + std::string(key) + "'");
  it->second(cfg, k, trim(value));
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  KeyValues out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    const std::string body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(number) + ": expected key = value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    if (key.empty()) throw ConfigError(path.string() + ":" + std::to_string(number) + ": empty key");
    out.emplace_back(key, trim(std::string_view(body).substr(eq + 1)));
  }
  return out;
}

RunConfig effective_run_config(const ExperimentConfig& cfg) {
  RunConfig run = cfg.run;
  for (const auto& a : cfg.ablations) apply_ablation(run, a);
  return run;
}

SyntheticConfig effective_synthetic_config(const ExperimentConfig& cfg) {
  SyntheticConfig s = cfg.data;
  s.seed = cfg.data_seed.value_or(cfg.run.seed);
  return s;
}

KeyValues config_echo(const ExperimentConfig& c) {
  const auto d = format_double;
  const auto i = [](auto v) { return std::to_string(v); };
  const auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  std::string ablate;
  for (const auto& a : c.ablations) ablate += (ablate.empty() ? "" : ",") + a;
  return {
      {"mode", to_string(c.run.mode)},
      {"seed", i(c.run.seed)},
      {"data_seed", c.data_seed ? i(*c.data_seed) : "auto"},
      {"synthetic", b(c.synthetic)},
      {"dataset", c.dataset.string()},
      {"vocab", c.vocab.string()},
      {"out", c.out.string()},
      {"dump_reps", b(c.dump_reps)},
      {"tasks", i(c.data.n_tasks)},
      {"ways", i(c.data.n_ways)},
      {"shots", i(c.data.k_shots)},
      {"first_task_samples", i(c.data.first_task_samples)},
      {"test_per_relation", i(c.data.test_per_relation)},
      {"vocab_size", i(c.data.vocab_size)},
      {"spread", d(c.data.cluster_spread)},
      {"cue_pool", i(c.data.cue_pool)},
      {"memory", i(c.run.memory_size)},
      {"pseudo", i(c.run.pseudo_per_relation)},
      {"tau", d(c.run.augmentation.tau)},
      {"aug_cap", i(c.run.augmentation.cap_per_sample)},
      {"augment", b(c.run.augment)},
      {"temp", d(c.run.weights.temperature)},
      {"alpha", d(c.run.weights.alpha)},
      {"beta", d(c.run.weights.beta)},
      {"gamma", d(c.run.weights.gamma)},
      {"lambda1", d(c.run.weights.lambda1)},
      {"lambda2", d(c.run.weights.lambda2)},
      {"rd_weight", d(c.run.weights.rd_weight)},
      {"dtr_weight", d(c.run.weights.dtr_weight)},
      {"dropout", d(c.run.dropout)},
      {"epochs_adapt", i(c.run.epochs_adapt)},
      {"epochs_sckd", i(c.run.epochs_sckd)},
      {"batch_size", i(c.run.batch_size)},
      {"grad_accum", i(c.run.grad_accum)},
      {"lr_encoder", d(c.run.lr.encoder)},
      {"lr_projection", d(c.run.lr.projection)},
      {"lr_classifier", d(c.run.lr.classifier)},
      {"model_dim", i(c.run.dims.model_dim)},
      {"heads", i(c.run.dims.heads)},
      {"ffn_dim", i(c.run.dims.ffn_dim)},
      {"hidden_dim", i(c.run.dims.hidden_dim)},
      {"ablate", ablate},
  };
}

void write_key_values(const KeyValues& kv, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
}

}  // namespace sckd

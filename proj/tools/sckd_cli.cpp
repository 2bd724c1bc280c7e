// Command-line entry point: `sckd run` trains one configuration, `sckd sweep`
// repeats it over memory sizes and seeds and aggregates the results.

#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "sckd/experiment.hpp"

namespace {

using namespace sckd;

// Flag name -> config key. Values are applied after the config file, so flags win.
const std::vector<std::pair<std::string, std::string>> kValueFlags = {
    {"--dataset", "dataset"},
    {"--vocab", "vocab"},
    {"--tasks", "tasks"},
    {"--ways", "ways"},
    {"--shots", "shots"},
    {"--memory", "memory"},
    {"--pseudo", "pseudo"},
    {"--tau", "tau"},
    {"--temp", "temp"},
    {"--alpha", "alpha"},
    {"--beta", "beta"},
    {"--gamma", "gamma"},
    {"--lambda1", "lambda1"},
    {"--lambda2", "lambda2"},
    {"--seed", "seed"},
    {"--baseline", "mode"},
    {"--out", "out"},
    {"--epochs-adapt", "epochs_adapt"},
    {"--epochs-sckd", "epochs_sckd"},
    {"--lr-encoder", "lr_encoder"},
    {"--lr-projection", "lr_projection"},
    {"--lr-classifier", "lr_classifier"},
    {"--spread", "spread"},
    {"--cue-pool", "cue_pool"},
    {"--first-task-samples", "first_task_samples"},
};

struct Options {
  std::string config_path;
  bool synthetic = false;
  bool dump_reps = false;
  bool dump_memory = false;
  bool save_model = false;
  std::vector<std::string> ablate;
  std::vector<std::string> set;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> value_opts;
};

void add_common(CLI::App* app, Options& o) {
  app->add_option("--config", o.config_path, "flat key = value config file");
  app->add_flag("--synthetic", o.synthetic, "generate a synthetic task sequence");
  app->add_flag("--dump-reps", o.dump_reps, "write reps.csv (final hidden vectors of every test sample)");
  app->add_flag("--dump-memory", o.dump_memory, "write memory_task{j}.csv after each task");
  app->add_flag("--save-model", o.save_model, "write the final model to model.ckpt");
  app->add_option("--ablate", o.ablate, "no-dst, no-aug, no-fd, no-rd, no-dtr, no-pd (repeatable or comma list)")
      ->delimiter(',');
  app->add_option("--set", o.set, "any config key as key=value (repeatable)");
  for (const auto& [flag, key] : kValueFlags) o.value_opts[key] = app->add_option(flag, o.values[key]);
  o.value_opts["mode"]->check(CLI::IsMember({"finetune", "joint", "sckd"}));
}

ExperimentConfig build_config(const Options& o) {
  ExperimentConfig cfg;
  if (!o.config_path.empty())
    for (const auto& [k, v] : read_key_values(o.config_path)) apply_setting(cfg, k, v);
  for (const auto& [key, opt] : o.value_opts)
    if (opt->count() > 0) apply_setting(cfg, key, o.values.at(key));
  for (const auto& kv : o.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.synthetic) apply_setting(cfg, "synthetic", "true");
  if (o.dump_reps) cfg.dump_reps = true;
  if (!o.ablate.empty()) {
    std::string joined;
    for (const auto& a : o.ablate) joined += (joined.empty() ? "" : ",") + a;
    apply_setting(cfg, "ablate", joined);
  }
  effective_run_config(cfg).validate();
  return cfg;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || v < 0) throw ConfigError(std::string("invalid ") + what + " entry '" + item + "'");
    out.push_back(static_cast<T>(v));
  }
  return out;
}

void print_result(const AccuracyMatrix& acc) {
  const int J = acc.tasks();
  std::cout << "final average accuracy: " << average_accuracy(acc, J) << '\n';
  const auto b = bwt(acc);
  std::cout << "BWT: " << (b ? std::to_string(*b) : std::string("n/a (single task)")) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual few-shot relation classification with serial contrastive knowledge distillation"};
  app.require_subcommand(1);

  Options run_opts;
  CLI::App* run = app.add_subcommand("run", "train one configuration and write its artifacts");
  add_common(run, run_opts);

  Options sweep_opts;
  std::string memories;
  std::string seeds;
  CLI::App* sweep = app.add_subcommand("sweep", "grid over memory sizes and seeds, aggregated into sweep.csv");
  add_common(sweep, sweep_opts);
  sweep->add_option("--memories", memories, "comma list of memory sizes L (default: the configured L)");
  sweep->add_option("--seeds", seeds, "comma list of seeds (default: the configured seed)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      const ExperimentConfig cfg = build_config(run_opts);
      RunArtifacts extra{run_opts.dump_memory, run_opts.save_model};
      const RunResult r = run_experiment(cfg, extra, &std::cerr);
      print_result(r.accuracy);
      std::cout << "artifacts: " << cfg.out.string() << '\n';
    } else {
      const ExperimentConfig cfg = build_config(sweep_opts);
      std::vector<int> mem = sweep->get_option("--memories")->count() ? parse_list<int>(memories, "memory size")
                                                                        : std::vector<int>{cfg.run.memory_size};
      std::vector<std::uint64_t> sd = sweep->get_option("--seeds")->count()
                                          ? parse_list<std::uint64_t>(seeds, "seed")
                                          : std::vector<std::uint64_t>{cfg.run.seed};
      const auto cells = run_sweep(cfg, mem, sd, &std::cerr);
      for (const auto& row : aggregate_sweep(cells)) {
        std::cout << "L=" << row.memory << "  runs=" << row.runs << "  final acc " << row.final_mean << " +- "
                  << row.final_std;
        if (row.bwt_mean) std::cout << "  BWT " << *row.bwt_mean << " +- " << *row.bwt_std;
        std::cout << '\n';
      }
      std::cout << "aggregate: " << (cfg.out / "sweep.csv").string() << '\n';
    }
  } catch (const TrainingError& e) {
    std::cerr << "training error: " << e.what() << '\n';
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "invalid dataset: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

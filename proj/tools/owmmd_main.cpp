// owmmd: run continual-learning experiments from a JSON config.
//
//   owmmd run --config exp.json [--out DIR] [--seed N] [--variants a,b] [--threads N]
//   owmmd validate --config exp.json
//   owmmd demo [--out DIR] [--seed N] [--variants a,b] [--seeds N] [--threads N] [--print-config]

#include <CLI11.hpp>

#include <iostream>
#include <thread>

#include "owmmd/experiment.hpp"

namespace {

struct RunFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> variants;
  std::optional<int> seeds;
  unsigned threads = 1;
  bool print_config = false;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--out", f.out, "Output directory (overrides output_dir)");
  cmd->add_option("--seed", f.seed, "Base seed; run i uses seed + i");
  cmd->add_option("--variants", f.variants, "Comma-separated subset of variant names")->delimiter(',');
  cmd->add_option("--threads", f.threads, "Worker threads for independent runs")->check(CLI::PositiveNumber);
}

void apply_flags(owmmd::ExperimentConfig& cfg, const RunFlags& f) {
  if (!f.out.empty()) cfg.output_dir = f.out;
  if (f.seed) owmmd::override_seed(cfg, *f.seed);
  if (f.seeds) cfg.num_seeds = *f.seeds;
  if (!f.variants.empty()) owmmd::select_variants(cfg, f.variants);
}

int execute(owmmd::ExperimentConfig cfg, const RunFlags& f) {
  apply_flags(cfg, f);
  const auto problems = owmmd::validate(cfg);
  if (!problems.empty()) {
    for (const auto& p : problems) std::cerr << "config error: " << p << "\n";
    return 2;
  }
  owmmd::run(cfg, f.threads);
  std::cout << "wrote metrics.csv, summary.csv, weights.csv to " << cfg.output_dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Replay-based continual learning with layer-weighted MMD feature matching"};
  app.require_subcommand(1);

  RunFlags run_flags;
  auto* run_cmd = app.add_subcommand("run", "Run every variant x seed of a config");
  run_cmd->add_option("--config", run_flags.config, "JSON config file")->required();
  add_run_flags(run_cmd, run_flags);

  std::string validate_path;
  auto* validate_cmd = app.add_subcommand("validate", "Check a config and list every violation");
  validate_cmd->add_option("--config", validate_path, "JSON config file")->required();

  RunFlags demo_flags;
  auto* demo_cmd = app.add_subcommand("demo", "Run the built-in 5-task blob stream (owmmd vs derpp)");
  add_run_flags(demo_cmd, demo_flags);
  demo_cmd->add_option("--seeds", demo_flags.seeds, "Number of seeds")->check(CLI::PositiveNumber);
  demo_cmd->add_flag("--print-config", demo_flags.print_config, "Print the built-in config and exit");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) return execute(owmmd::load_config(run_flags.config), run_flags);
    if (*validate_cmd) {
      const auto problems = owmmd::validate(owmmd::load_config(validate_path));
      for (const auto& p : problems) std::cout << p << "\n";
      if (problems.empty()) std::cout << "ok\n";
      return problems.empty() ? 0 : 2;
    }
    if (*demo_cmd) {
      if (demo_flags.print_config) {
        std::cout << owmmd::default_config_json().dump(2) << "\n";
        return 0;
      }
      return execute(owmmd::parse_config(owmmd::default_config_json()), demo_flags);
    }
  } catch (const owmmd::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == owmmd::ErrorCode::ConfigError ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

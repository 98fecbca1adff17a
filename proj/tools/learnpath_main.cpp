// learnpath <subcommand> --config <path> [--out <dir>] [--seed <int>] [--jobs <n>]

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "learnpath/config.hpp"
#include "learnpath/experiments.hpp"

int main(int argc, char** argv) {
  using namespace learnpath;

  CLI::App app{"Learning-path and supervision-quality experiments on a toy Gaussian task"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;

  const char* kinds[] = {"gen-data", "correlate", "paths",      "distance-gap",
                         "recovery", "distill",   "ntk-verify", "zigzag"};
  for (const char* name : kinds) {
    CLI::App* sub = app.add_subcommand(name, std::string("run the ") + name + " experiment");
    sub->add_option("--config", config_path, "flat key=value config file")->required();
    sub->add_option("--out", out_dir, "output directory (overrides output_dir)");
    sub->add_option("--seed", seed, "master seed (overrides master_seed)");
    sub->add_option("--jobs", jobs, "parallel runs (overrides jobs)")->check(CLI::PositiveNumber);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  ExperimentConfig cfg;
  try {
    cfg = load_config(config_path, experiment_kind_from_string(name));
  } catch (const ConfigError& e) {
    std::cerr << name << ": invalid configuration: " << e.what() << "\n";
    return 1;
  }
  if (out_dir) cfg.output_dir = *out_dir;
  if (seed) cfg.master_seed = *seed;
  if (jobs) cfg.jobs = *jobs;
  return run_experiment(cfg);
}

#include <cstdlib>
#include <iostream>
#include <malloc.h>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ecgfe/cli/commands.hpp"
#include "ecgfe/cli/config.hpp"

using namespace ecgfe::cli;

int main(int argc, char** argv) {
  // Large transient matrices otherwise go through mmap on every network call.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  CLI::App app{"ECG feature-engineering and deep-learning experiment runner"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.fallthrough();
  std::string config_path;
  std::vector<std::string> overrides;
  bool show_schema = false;
  app.add_option("-c,--config", config_path, "Experiment config file (key = value, [sections])");
  app.add_option("-s,--set", overrides, "Override one config key, e.g. --set net.epochs=5");
  app.add_flag("--help-config", show_schema, "Print every config key with its default and exit");
  app.require_subcommand(0, 1);

  std::string chosen;
  auto add = [&](const std::string& name, const std::string& help) {
    app.add_subcommand(name, help)->callback([&chosen, name] { chosen = name; });
  };
  add("synth", "Generate the synthetic dataset for the task");
  add("extract", "Preprocess records and extract engineered features");
  add("select", "Rank features with mRMR");
  add("train-rf", "Tune and fit random forests on selected features");
  add("train-dl", "Train the residual network on raw waveforms");
  add("train-merged", "Train the network with engineered features merged in");
  add("evaluate", "Metrics, bootstrap intervals and pairwise significance");
  add("learning-curve", "Metric versus training-set size for FE and DL");
  add("run", "Every stage in order (synth only without a data path)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }
  if (show_schema) {
    std::cout << schema_text();
    return kExitOk;
  }
  if (chosen.empty()) {
    std::cerr << app.help();
    return kExitConfig;
  }

  ExperimentConfig cfg;
  try {
    RawConfig raw = config_path.empty() ? RawConfig{} : read_config_file(config_path);
    for (const auto& o : overrides) apply_override(raw, o);
    cfg = resolve(raw);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  if (cfg.workers > 0) setenv("ECGFE_WORKERS", std::to_string(cfg.workers).c_str(), 1);

  try {
    if (chosen == "run") run_all(cfg);
    else run_command(chosen, cfg);
  } catch (const DependencyError& e) {
    std::cerr << "missing dependency [" << e.stage() << "]: " << e.what() << "\n";
    return kExitDependency;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ecgfe/cli/config.hpp"

namespace ecgfe::cli {

inline constexpr std::string_view kToolVersion = "0.1.0";
inline constexpr std::string_view kStageFile = "stage.json";
inline constexpr std::string_view kRunManifestFile = "run_manifest.json";

struct StageResult {
  std::string stage;
  std::filesystem::path dir;
  std::string fingerprint;
  bool cache_hit = false;
  double seconds = 0.0;
};

StageResult cmd_synth(const ExperimentConfig& cfg);
StageResult cmd_extract(const ExperimentConfig& cfg);
StageResult cmd_select(const ExperimentConfig& cfg);
StageResult cmd_train_rf(const ExperimentConfig& cfg);
StageResult cmd_train_dl(const ExperimentConfig& cfg);
StageResult cmd_train_merged(const ExperimentConfig& cfg);
StageResult cmd_evaluate(const ExperimentConfig& cfg);
StageResult cmd_learning_curve(const ExperimentConfig& cfg);

/// Subcommand names in pipeline order.
const std::vector<std::string>& command_names();
StageResult run_command(std::string_view name, const ExperimentConfig& cfg);

/// Every stage in order: synth (when no external data is configured), extract,
/// select, train-rf, train-dl, train-merged, evaluate.
std::vector<StageResult> run_all(const ExperimentConfig& cfg);

/// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDependency = 3;
inline constexpr int kExitRuntime = 4;

} // namespace ecgfe::cli

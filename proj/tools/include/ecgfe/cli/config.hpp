#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgfe/data.hpp"
#include "ecgfe/error.hpp"

namespace ecgfe::cli {

/// Schema violation; `field` is the offending key path (e.g. "select.k[2]").
class ConfigError : public Error {
public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

private:
  std::string field_;
};

/// An upstream stage's artifact is absent or does not match its recorded hash.
class DependencyError : public Error {
public:
  DependencyError(std::string stage, const std::string& message)
      : Error(message), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

private:
  std::string stage_;
};

enum class Experiment : std::uint8_t { FE, DL, Merged };

std::string_view to_string(Experiment e);
Experiment parse_experiment(std::string_view name);

/// Raw key -> value text, keys fully qualified ("section.key").
using RawConfig = std::map<std::string, std::string>;

/// key = value lines, optional [section] headers, '#' comments. Values may be
/// quoted strings or lists written as "a, b" or "[a, b]".
RawConfig parse_config_text(std::string_view text, std::string_view source = "config");
RawConfig read_config_file(const std::filesystem::path& path);
/// "key=value" from the command line; later overrides win.
void apply_override(RawConfig& raw, std::string_view assignment);

struct ExperimentConfig {
  Task task = Task::Diagnosis;
  std::filesystem::path data;
  std::filesystem::path out = "out";
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> seed_fe, seed_dl, seed_merged;
  SplitPolicy split;

  std::vector<std::size_t> select_k{10, 25, 50, 100};
  /// Greedy mRMR steps; 0 means the largest entry of select_k.
  std::size_t select_limit = 0;

  std::size_t tune_budget = 30;
  std::size_t tune_warmup = 10;
  std::size_t tune_candidates = 600;

  bool rf_balanced = true;
  std::size_t rf_trees = 200;
  /// 0 = unlimited.
  std::size_t rf_max_depth = 0;
  std::size_t rf_min_leaf = 1;
  std::optional<std::string> rf_criterion;

  std::string net_profile = "tiny";
  std::size_t net_epochs = 30;
  std::size_t net_batch = 256;
  double net_lr = 1e-3;
  std::size_t net_patience = 5;
  std::size_t net_early_stop = 0;
  double net_dropout = 0.2;
  /// Candidate merge heads: 0 = no hidden layer, n = one hidden layer of n.
  std::vector<std::size_t> merge_hidden{0};

  std::size_t eval_bootstrap = 1000;
  double eval_fraction = 0.8;

  std::vector<std::size_t> curve_sizes{250, 1000, 4000, 16000};
  std::vector<std::uint64_t> curve_seeds{0, 1, 2};
  std::vector<std::string> curve_experiments{"FE", "DL"};
  /// Sizes at which the DL arm runs; empty means every size.
  std::vector<std::size_t> curve_dl_sizes{250};

  std::size_t synth_n_per_class = 10;
  std::size_t synth_n_total = 1000;
  double synth_positive_fraction = 0.05;
  double synth_noise = 0.015;
  double synth_age_min = 16.0;
  double synth_age_max = 85.0;

  std::size_t workers = 0;

  std::uint64_t seed_for(Experiment e) const;
  /// Pairs of experiments that ended up with the same seed.
  std::vector<std::string> seed_collisions() const;
  std::filesystem::path data_manifest() const;
  std::filesystem::path task_dir() const;
  std::filesystem::path stage_dir(std::string_view experiment, std::string_view stage) const;
  nlohmann::json snapshot() const;
};

/// Validates keys and values against the schema.
ExperimentConfig resolve(const RawConfig& raw);

/// Human-readable schema: one line per key with type, default and meaning.
std::string schema_text();

} // namespace ecgfe::cli

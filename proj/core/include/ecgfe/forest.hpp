#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgfe/features.hpp"

namespace ecgfe::forest {

enum class TaskKind : std::uint8_t { Classification, Regression };
enum class Criterion : std::uint8_t { Gini, Entropy, SquaredError, AbsoluteError };

std::string_view to_string(Criterion c);
Criterion parse_criterion(std::string_view name);

struct ForestConfig {
  std::size_t n_trees = 100;
  /// Unset grows until leaves are pure or too small.
  std::optional<std::size_t> max_depth;
  Criterion criterion = Criterion::Gini;
  std::size_t min_samples_leaf = 1;
  /// Top-ranked features the pipeline feeds this forest; 0 keeps every column.
  std::size_t n_features_selected = 0;
  /// Balanced: w_c = N / (K n_c). Otherwise `class_weights` (empty means all 1).
  bool balanced = false;
  std::vector<double> class_weights;
  std::uint64_t seed = 0;
  /// Features tried per split; unset means sqrt(p) for classification, p/3 for regression.
  std::optional<std::size_t> max_features;
  bool bootstrap = true;

  void validate(TaskKind kind) const;
};

nlohmann::json config_to_json(const ForestConfig& c);
ForestConfig config_from_json(const nlohmann::json& j);

/// w_c = N / (K n_c) over the classes present in `labels`.
std::vector<double> balanced_weights(std::span<const double> labels, std::size_t n_classes);

struct Node {
  /// -1 marks a leaf.
  std::int32_t feature = -1;
  double threshold = 0.0;
  std::int32_t left = -1;
  std::int32_t right = -1;
  /// Leaf: class distribution summing to 1, or a single regression value.
  std::vector<double> value;
};

struct Tree {
  std::vector<Node> nodes;

  std::span<const double> leaf(std::span<const double> row) const;
  std::size_t depth() const;
};

struct ForestModel {
  TaskKind kind = TaskKind::Classification;
  std::size_t n_classes = 2;
  /// Matrix column ids the forest was trained on, in input order.
  std::vector<std::size_t> feature_ids;
  ForestConfig config;
  std::vector<double> class_weights;
  std::vector<Tree> trees;

  std::size_t n_features() const { return feature_ids.size(); }
  /// Outputs per row: n_classes for classification, 1 for regression.
  std::size_t n_outputs() const { return kind == TaskKind::Classification ? n_classes : 1; }
};

/// Classification labels are 0 .. K-1 stored as doubles.
ForestModel fit_forest(const features::DenseMatrix& x, std::span<const double> y, TaskKind kind,
                       const ForestConfig& config);

/// Row-major rows x n_outputs().
std::vector<double> predict(const ForestModel& model, const features::DenseMatrix& x);
std::vector<double> predict_row(const ForestModel& model, std::span<const double> row);
/// Probability of class 1 per row (binary classification).
std::vector<double> predict_positive(const ForestModel& model, const features::DenseMatrix& x);

nlohmann::json model_to_json(const ForestModel& model);
ForestModel model_from_json(const nlohmann::json& j);

} // namespace ecgfe::forest

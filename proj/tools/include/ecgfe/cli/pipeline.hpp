#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgfe/data.hpp"
#include "ecgfe/features.hpp"
#include "ecgfe/forest.hpp"
#include "ecgfe/metrics.hpp"
#include "ecgfe/stats.hpp"
#include "ecgfe/mrmr.hpp"
#include "ecgfe/nn_train.hpp"
#include "ecgfe/tuner.hpp"

// In-memory building blocks of the five pipeline steps. The commands add file
// I/O and caching on top.
namespace ecgfe::cli {

/// Label names of a task: the six arrhythmias, "future_AF" or "age".
std::vector<std::string> label_names(Task task);

/// Targets of one label for the given headers (row order preserved).
std::vector<double> label_values(Task task, std::size_t label, std::span<const RecordHeader* const> headers);

/// Maps record ids to matrix rows.
std::vector<std::size_t> rows_of(const features::FeatureMatrix& m, std::span<const std::string> ids);

/// One mRMR ranking per label over the matrix's train rows.
std::vector<mrmr::FeatureRanking> rank_features(const features::FeatureMatrix& m, const Dataset& dataset,
                                                Task task, std::size_t limit);

/// Registry column ids used for a given k: union over labels or the top k.
std::vector<std::size_t> feature_set(Task task, std::span<const mrmr::FeatureRanking> rankings, std::size_t k);

struct FeOptions {
  std::vector<std::size_t> ks{10, 25, 50, 100};
  tune::TuneOptions tune;
  /// Used directly when tune.budget == 0; n_features_selected falls back to ks.back().
  forest::ForestConfig base;
};

struct FeModel {
  Task task = Task::Diagnosis;
  std::size_t k = 0;
  std::vector<std::size_t> feature_ids;
  forest::ForestConfig config;
  std::optional<tune::SearchTrace> trace;
  /// One forest per label.
  std::vector<forest::ForestModel> models;
};

/// Headline metric of a task on item-major scores (n_labels per item):
/// mean AUPRC over labels with positives, AUROC, or R2.
double task_score(Task task, std::span<const double> scores, std::span<const double> truths, std::size_t n_labels);
eval::MetricKind task_metric(Task task);

/// Tunes on the validation rows (when budgeted) and fits on the train rows.
FeModel train_fe(const features::FeatureMatrix& matrix, const features::DenseMatrix& dense, const Dataset& dataset,
                 const DatasetSplit& split, Task task, std::span<const mrmr::FeatureRanking> rankings,
                 const FeOptions& options);

/// Item-major scores (n_labels per row) for the given matrix rows.
std::vector<double> predict_fe(const FeModel& model, const features::DenseMatrix& dense,
                               std::span<const std::size_t> rows);

nlohmann::json fe_model_to_json(const FeModel& model);
FeModel fe_model_from_json(const nlohmann::json& j);

/// Item-major truths for the given ids.
std::vector<double> truths_for(const Dataset& dataset, Task task, std::span<const std::string> ids);

struct MetricTable {
  /// Per label: metric name -> value (absent when undefined).
  std::vector<std::pair<std::string, std::map<std::string, double>>> per_label;
  double headline = 0.0;
};

MetricTable score_all(Task task, std::span<const double> scores, std::span<const double> truths);
nlohmann::json to_json(const MetricTable& t);

/// Tiny or full profile for a task.
nn::NetConfig net_profile(std::string_view name, Task task);

struct DlResult {
  nn::Network net;
  nn::TrainState state;
  /// Item-major outputs on the requested prediction ids.
  std::vector<double> predictions;
};

/// Trains on split.train with split.validation monitored, then predicts
/// `predict_ids`. With fe given the network is a merged model over its columns.
/// Age heads start from the median training age.
DlResult train_dl(const Dataset& dataset, const DatasetSplit& split, Task task, nn::NetConfig config,
                  const nn::Schedule& schedule, std::span<const std::string> predict_ids,
                  const features::DenseMatrix* fe = nullptr);

/// Integer strata for subsampling: primary arrhythmia class (0 = none), future
/// AF, or a single stratum for age.
std::vector<int> strata_for(const Dataset& dataset, Task task, std::span<const std::string> ids);

struct CurveSetup {
  Task task = Task::Risk;
  const Dataset* dataset = nullptr;
  /// Extracted features for every split record; statistics are refitted per subset.
  const features::FeatureMatrix* matrix = nullptr;
  DatasetSplit split;
  /// Features kept per subset (top k, or union of per-label top k).
  std::size_t k = 50;
  forest::ForestConfig forest;
  nn::NetConfig net;
  nn::Schedule schedule;
};

/// Subsamples split.train per (arm, size, seed), refits mRMR and the forest (FE)
/// or trains the network (DL), and scores the fixed test set.
std::vector<eval::CurvePoint> run_learning_curve(const CurveSetup& setup, std::span<const eval::CurveArm> arms,
                                                 std::span<const std::uint64_t> seeds);

} // namespace ecgfe::cli

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgfe/features.hpp"
#include "ecgfe/nn.hpp"

namespace ecgfe::nn {

/// Prepared inputs and targets, item-major.
struct TrainSet {
  std::size_t size = 0;
  std::size_t wave_stride = 0;  // n_leads * input_length
  std::size_t n_fe = 0;
  std::size_t n_targets = 0;
  std::vector<float> wave;
  std::vector<double> fe;
  std::vector<double> targets;
  std::vector<std::string> record_ids;

  Batch batch(std::span<const std::size_t> items) const;
  std::span<const double> target_row(std::size_t item) const { return {targets.data() + item * n_targets, n_targets}; }
};

/// Targets of one record for a head; throws if the label is absent.
std::vector<double> targets_for(Head head, const TaskLabels& labels);

/// Builds a set from dataset rows. When fe is given its rows are matched by
/// record id and must cover every requested record.
TrainSet make_train_set(const Dataset& dataset, std::span<const std::string> record_ids, const NetConfig& config,
                        const features::DenseMatrix* fe = nullptr);

/// Validation metric over item-major outputs and targets (n_outputs per item).
struct ValidationMetric {
  std::string name;
  bool higher_is_better = true;
  std::function<double(std::span<const double> outputs, std::span<const double> targets, std::size_t n_outputs)> fn;
};

/// Diagnosis: mean AUPRC over labels with positives; risk: AUROC; age: MAE.
ValidationMetric default_metric(Head head);

struct Schedule {
  std::size_t epochs = 50;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  double lr_factor = 0.1;
  /// Non-improving epochs that trigger a reduction.
  std::size_t patience = 5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-7;
  /// Classification only: w_pos = N / (2 n_pos), w_neg = N / (2 n_neg) per label.
  bool class_weights = true;
  bool shuffle = true;
  std::uint64_t seed = 0;
  /// Stop after this many epochs without improvement; 0 disables.
  std::size_t early_stop = 0;
  /// Stop once an epoch's mean training loss falls below this value.
  std::optional<double> target_loss;
};

struct EpochRecord {
  std::size_t epoch = 0;
  /// Mean mini-batch loss; NaN for epoch 0 (evaluation before any update).
  double train_loss = 0.0;
  double metric = 0.0;
  /// Rate used for the updates of this epoch.
  double lr = 0.0;
};

struct TrainState {
  std::size_t epoch = 0;
  double lr = 0.0;
  double best_metric = 0.0;
  std::size_t best_epoch = 0;
  std::size_t since_improvement = 0;
  std::size_t step = 0;
  std::vector<Matrix> m, v;
  std::vector<EpochRecord> history;
  bool diverged = false;
  std::string metric_name;
  bool higher_is_better = true;
  std::vector<double> pos_weight, neg_weight;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains in place. Validation runs before the first epoch (epoch 0) and after
/// every epoch; the network is left at the best-validation parameters. With an
/// empty validation set the training loss (lower is better) is monitored.
/// A non-finite loss stops training and restores the last finite state.
TrainState train(Network& net, const TrainSet& train_set, const TrainSet& validation, const Schedule& schedule,
                 const ValidationMetric& metric, const EpochCallback& on_epoch = {});

/// Eval-mode outputs, item-major.
std::vector<double> predict(Network& net, const TrainSet& set, std::size_t batch_size = 256);

/// Mean task loss in eval mode.
double evaluate_loss(Network& net, const TrainSet& set, std::span<const double> pos_weight = {},
                     std::span<const double> neg_weight = {}, std::size_t batch_size = 256);

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "ECGN", u32 version, u32 header bytes, JSON header, then float32 parameters in
/// parameters() order followed by the batch-norm buffers.
void write_checkpoint(const std::filesystem::path& path, Network& net, const nlohmann::json& extra = {});

struct Checkpoint {
  Network net;
  nlohmann::json header;
};
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::string history_csv(std::span<const EpochRecord> history);

} // namespace ecgfe::nn

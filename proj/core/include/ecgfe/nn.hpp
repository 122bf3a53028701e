#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgfe/data.hpp"
#include "ecgfe/nn_layers.hpp"

namespace ecgfe::nn {

enum class Head : std::uint8_t { Diagnosis, Risk, Age };

Head head_for(Task task);

struct NetConfig {
  Head head = Head::Risk;
  std::size_t n_leads = kLeadCount;
  std::size_t input_length = 4096;
  /// Rate the waveform is resampled to before padding.
  double input_rate_hz = kTargetRateHz;
  std::size_t stem_filters = 64;
  std::size_t stem_kernel = 16;
  std::size_t kernel = 16;
  std::vector<std::size_t> block_filters{128, 196, 256, 320};
  std::vector<std::size_t> block_subsample{4, 4, 4, 4};
  double dropout = 0.2;
  /// Engineered inputs concatenated after the pooled deep features; 0 = DL only.
  std::size_t n_fe = 0;
  /// Hidden FC sizes between the concatenation and the output layer.
  std::vector<std::size_t> hidden;

  static NetConfig full(Head head);
  /// Desk-scale profile: 2 blocks, 8-16 filters, 512 samples at 50 Hz.
  static NetConfig tiny(Head head);

  std::size_t n_outputs() const { return head == Head::Diagnosis ? kArrhythmiaCount : 1; }
  std::size_t deep_width() const { return block_filters.back(); }
  std::size_t merge_width() const { return deep_width() + n_fe; }
  void validate() const;
};

nlohmann::json config_to_json(const NetConfig& c);
NetConfig config_from_json(const nlohmann::json& j);

/// Named view of one parameter tensor, in the declared checkpoint order.
struct ParamRef {
  std::string name;
  Matrix* value;
};

/// One mini-batch: waveforms are per item lead-major (n_leads x input_length),
/// fe holds n_fe values per item.
struct Batch {
  std::size_t size = 0;
  std::vector<double> wave;
  std::vector<double> fe;
};

enum class Mode : std::uint8_t { Train, Eval };

struct Forward {
  /// n_outputs x batch, after the head activation.
  Matrix outputs;
  /// Concatenated deep + engineered inputs of the FC stack: merge_width x batch.
  Matrix penultimate;
};

class Network {
public:
  Network() = default;
  Network(const NetConfig& config, std::uint64_t seed);

  const NetConfig& config() const { return config_; }
  std::vector<ParamRef> parameters();
  /// Batch-norm running statistics (not trained).
  std::vector<ParamRef> buffers();
  std::size_t parameter_count();

  std::vector<double> flat_parameters();
  void set_flat_parameters(std::span<const double> values);

  /// dropout_rng == nullptr disables dropout; Train mode uses batch statistics.
  Forward forward(const Batch& batch, Mode mode, Rng* dropout_rng = nullptr, bool update_running = false);

  /// Loss of a Train-mode pass and gradients in parameters() order.
  double loss_and_gradients(const Batch& batch, std::span<const double> targets, std::span<const double> pos_weight,
                            std::span<const double> neg_weight, Rng* dropout_rng, bool update_running,
                            std::vector<Matrix>& grads);

  /// Sets the output bias (e.g. to the target median for regression).
  void set_output_bias(double value);

  /// Merge-head weights that multiply the engineered inputs.
  std::vector<std::pair<Matrix*, Eigen::Index>> fe_weight_columns();

  bool finite();

private:
  struct Block {
    Conv1d conv1;
    BatchNorm bn1;
    Conv1d conv2;
    bool has_skip_conv = false;
    Conv1d skip;
    BatchNorm bn2;
    std::size_t subsample = 1;
  };

  struct BlockCache {
    Conv1d::Cache c1, c2, cs;
    BatchNorm::Cache b1, b2;
    MaxPoolCache pool;
    Matrix r1, m1, r2, m2;
    std::size_t length_in = 0;
  };

  struct Cache {
    std::size_t batch = 0;
    Conv1d::Cache stem;
    BatchNorm::Cache stem_bn;
    Matrix stem_out;
    std::vector<BlockCache> blocks;
    std::size_t final_length = 0;
    std::vector<Matrix> dense_in;
    std::vector<Matrix> dense_out;
    Matrix logits;
  };

  Forward run(const Batch& batch, Mode mode, Rng* rng, bool update_running, Cache* cache);

  NetConfig config_;
  Conv1d stem_;
  BatchNorm stem_bn_;
  std::vector<Block> blocks_;
  std::vector<Dense> dense_;
};

/// Mean weighted BCE over items and labels (probabilities clamped to
/// [1e-7, 1 - 1e-7]); weights default to 1 when spans are empty.
double bce_loss(const Matrix& probs, std::span<const double> targets, std::span<const double> pos_weight = {},
                std::span<const double> neg_weight = {});
double mae_loss(const Matrix& outputs, std::span<const double> targets);
double task_loss(Head head, const Matrix& outputs, std::span<const double> targets,
                 std::span<const double> pos_weight = {}, std::span<const double> neg_weight = {});

inline constexpr double kProbEps = 1e-7;

/// Resamples to input_rate_hz and zero-pads symmetrically to input_length.
std::vector<float> prepare_waveform(const EcgRecord& record, const NetConfig& config);

} // namespace ecgfe::nn

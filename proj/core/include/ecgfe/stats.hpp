#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgfe/metrics.hpp"

namespace ecgfe::eval {

using MetricFn = std::function<double(std::span<const double> scores, std::span<const double> labels)>;

struct BootstrapOptions {
  std::size_t iterations = 1000;
  double fraction = 0.8;
  std::uint64_t seed = 0;
  /// Abort once more than this share of draws had an undefined metric.
  double max_failure_rate = 0.1;
};

struct BootstrapResult {
  std::vector<double> values;
  double mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::uint64_t seed = 0;
  /// Draws that were redrawn because the metric was undefined on them.
  std::size_t failed_draws = 0;
};

/// Metric over `iterations` subsamples of round(fraction * n) rows drawn without
/// replacement; 2.5/97.5 percentile interval. Iteration i uses its own derived seed.
BootstrapResult bootstrap(const MetricFn& metric, std::span<const double> scores, std::span<const double> labels,
                          const BootstrapOptions& options = {});

/// Same draws, but the metric receives the sampled row indices; useful when a
/// row carries several labels.
using RowMetricFn = std::function<double(std::span<const std::size_t> rows)>;
BootstrapResult bootstrap_rows(const RowMetricFn& metric, std::size_t n, const BootstrapOptions& options = {});

inline constexpr double kSignificanceLevel = 0.01;

struct SignificanceReport {
  std::string first, second;
  double t = 0.0;
  double p_value = 1.0;
  bool significant = false;
};

/// Unpaired two-sample Student t-test (pooled variance), two-sided. Both
/// variances zero: p = 1 for equal means, p = 0 otherwise.
SignificanceReport compare(const BootstrapResult& a, const BootstrapResult& b, std::string first = "A",
                           std::string second = "B");

nlohmann::json to_json(const BootstrapResult& r, bool with_values = false);
nlohmann::json to_json(const SignificanceReport& r);

/// Linear-interpolation quantile of an unsorted sample, q in [0, 1].
double quantile(std::vector<double> values, double q);

/// Stratified subsample of `size` indices out of strata.size(); allocation per
/// stratum is proportional with largest remainders. Returned indices ascend.
std::vector<std::size_t> stratified_subsample(std::span<const int> strata, std::size_t size, std::uint64_t seed);

struct CurvePoint {
  std::size_t train_size = 0;
  std::size_t requested_size = 0;
  /// Request exceeded the training set and was clipped.
  bool clipped = false;
  std::string experiment;
  std::uint64_t seed = 0;
  std::optional<MetricValue> metric;
  std::string error;
};

struct CurveArm {
  std::string experiment;
  std::vector<std::size_t> sizes;
};

/// pipeline(train_indices, experiment, seed) -> metric on the fixed test set.
using CurvePipeline =
    std::function<MetricValue(std::span<const std::size_t> train_indices, const std::string& experiment, std::uint64_t seed)>;

/// One point per (arm, size, seed). A throwing pipeline marks its point failed.
std::vector<CurvePoint> learning_curve(const CurvePipeline& pipeline, std::span<const int> strata,
                                       std::span<const CurveArm> arms, std::span<const std::uint64_t> seeds);

nlohmann::json to_json(const CurvePoint& p);
std::string curve_csv(std::span<const CurvePoint> points);

} // namespace ecgfe::eval

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

// Labels are passed as doubles throughout; for the classification metrics a
// value > 0.5 marks a positive.
namespace ecgfe::eval {

enum class MetricKind : std::uint8_t { AUPRC, F1max, AUROC, R2, MAE, Se, Sp, PPV };

std::string_view to_string(MetricKind kind);
MetricKind parse_metric(std::string_view name);
bool higher_is_better(MetricKind kind);

struct MetricValue {
  MetricKind kind = MetricKind::AUROC;
  double value = 0.0;
  std::size_t n = 0;
};

nlohmann::json to_json(const MetricValue& m);

/// Probability that a random positive outranks a random negative, ties = 1/2.
double auroc(std::span<const double> scores, std::span<const double> labels);

struct RocPoint {
  double threshold, fpr, tpr;
};
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const double> labels);

struct PrPoint {
  double threshold, recall, precision;
};

struct PrCurve {
  /// One point per distinct score, thresholds descending.
  std::vector<PrPoint> raw;
  std::vector<double> recall_grid;
  /// Interpolated then median filtered precision on recall_grid.
  std::vector<double> precision;
  double auprc = 0.0;
  /// Step-wise (average precision) area of the raw curve.
  double raw_auprc = 0.0;
};

inline constexpr std::size_t kPrGridPoints = 1000;
inline constexpr std::size_t kPrMedianWidth = 9;

PrCurve pr_curve(std::span<const double> scores, std::span<const double> labels,
                 std::size_t grid_points = kPrGridPoints, std::size_t median_width = kPrMedianWidth);
double auprc(std::span<const double> scores, std::span<const double> labels);

/// Max F1 over thresholds "score >= t" at every distinct score.
double f1_max(std::span<const double> scores, std::span<const double> labels);

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double sensitivity() const;
  double specificity() const;
  double ppv() const;
  double f1() const;
};
Confusion confusion_at(std::span<const double> scores, std::span<const double> labels, double threshold);

struct Regression {
  /// Missing when the truths are constant.
  std::optional<double> r2;
  double mae = 0.0;
};
Regression r2_mae(std::span<const double> predictions, std::span<const double> truths);

/// Dispatch by kind; Se, Sp and PPV use the threshold 0.5. R2 on constant
/// truths throws UndefinedMetric.
double compute(MetricKind kind, std::span<const double> scores, std::span<const double> labels);

} // namespace ecgfe::eval

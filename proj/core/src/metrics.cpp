#include "ecgfe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <array>
#include <limits>
#include <numeric>

#include "ecgfe/error.hpp"

namespace ecgfe::eval {

namespace {

constexpr std::array<std::string_view, 8> kNames{"AUPRC", "F1max", "AUROC", "R2", "MAE", "Se", "Sp", "PPV"};

void check_aligned(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) throw InvalidArgument(std::string(what) + ": length mismatch");
  if (a.empty()) throw UndefinedMetric(std::string(what) + ": no samples");
  for (double v : a)
    if (!std::isfinite(v)) throw InvalidArgument(std::string(what) + ": non-finite score");
}

bool positive(double label) { return label > 0.5; }

std::size_t count_positive(std::span<const double> labels) {
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), positive));
}

/// Indices sorted by descending score.
std::vector<std::size_t> order_desc(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

/// Cumulative (tp, fp) after each distinct score, descending.
struct Step {
  double threshold;
  std::size_t tp, fp;
};

std::vector<Step> sweep(std::span<const double> scores, std::span<const double> labels) {
  const auto idx = order_desc(scores);
  std::vector<Step> steps;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (positive(labels[idx[i]])) ++tp;
    else ++fp;
    if (i + 1 == idx.size() || scores[idx[i + 1]] != scores[idx[i]]) steps.push_back({scores[idx[i]], tp, fp});
  }
  return steps;
}

} // namespace

std::string_view to_string(MetricKind kind) { return kNames[static_cast<std::size_t>(kind)]; }

MetricKind parse_metric(std::string_view name) {
  for (std::size_t i = 0; i < kNames.size(); ++i)
    if (kNames[i] == name) return static_cast<MetricKind>(i);
  throw InvalidArgument("unknown metric: " + std::string(name));
}

bool higher_is_better(MetricKind kind) { return kind != MetricKind::MAE; }

nlohmann::json to_json(const MetricValue& m) {
  return {{"kind", to_string(m.kind)}, {"value", m.value}, {"n", m.n}};
}

double auroc(std::span<const double> scores, std::span<const double> labels) {
  check_aligned(scores, labels, "auroc");
  const std::size_t np = count_positive(labels), nn = labels.size() - np;
  if (np == 0 || nn == 0) throw UndefinedMetric("auroc: both classes required");
  // Mann-Whitney with average ranks for ties.
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (positive(labels[idx[k]])) rank_sum += avg;
    i = j;
  }
  const double u = rank_sum - 0.5 * static_cast<double>(np) * static_cast<double>(np + 1);
  return u / (static_cast<double>(np) * static_cast<double>(nn));
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const double> labels) {
  check_aligned(scores, labels, "roc_curve");
  const std::size_t np = count_positive(labels), nn = labels.size() - np;
  if (np == 0 || nn == 0) throw UndefinedMetric("roc_curve: both classes required");
  std::vector<RocPoint> out{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  for (const Step& s : sweep(scores, labels))
    out.push_back({s.threshold, static_cast<double>(s.fp) / static_cast<double>(nn),
                   static_cast<double>(s.tp) / static_cast<double>(np)});
  return out;
}

PrCurve pr_curve(std::span<const double> scores, std::span<const double> labels, std::size_t grid_points,
                 std::size_t median_width) {
  check_aligned(scores, labels, "pr_curve");
  const std::size_t np = count_positive(labels);
  if (np == 0) throw UndefinedMetric("pr_curve: no positives");
  if (grid_points < 2 || median_width == 0) throw InvalidArgument("pr_curve: bad grid or filter size");

  PrCurve c;
  double prev_recall = 0.0;
  for (const Step& s : sweep(scores, labels)) {
    const double recall = static_cast<double>(s.tp) / static_cast<double>(np);
    const double precision = static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp);
    c.raw.push_back({s.threshold, recall, precision});
    c.raw_auprc += (recall - prev_recall) * precision;
    prev_recall = recall;
  }

  // Precision as a function of recall: keep the best precision at each recall,
  // anchor recall 0 at the first point's precision, interpolate linearly.
  std::vector<std::pair<double, double>> knots{{0.0, c.raw.front().precision}};
  for (const PrPoint& p : c.raw) {
    if (p.recall == knots.back().first) knots.back().second = std::max(knots.back().second, p.precision);
    else knots.emplace_back(p.recall, p.precision);
  }
  c.recall_grid.resize(grid_points);
  std::vector<double> interp(grid_points);
  std::size_t k = 0;
  for (std::size_t i = 0; i < grid_points; ++i) {
    const double r = static_cast<double>(i) / static_cast<double>(grid_points - 1);
    c.recall_grid[i] = r;
    while (k + 1 < knots.size() && knots[k + 1].first < r) ++k;
    if (k + 1 >= knots.size()) {
      interp[i] = knots.back().second;
    } else if (r <= knots[k].first) {
      interp[i] = knots[k].second;
    } else {
      const auto [r0, p0] = knots[k];
      const auto [r1, p1] = knots[k + 1];
      interp[i] = p0 + (p1 - p0) * (r - r0) / (r1 - r0);
    }
  }

  // Median filter with edge replication.
  const auto half = static_cast<std::ptrdiff_t>(median_width / 2);
  c.precision.resize(grid_points);
  std::vector<double> win(median_width);
  for (std::size_t i = 0; i < grid_points; ++i) {
    for (std::size_t w = 0; w < median_width; ++w) {
      const std::ptrdiff_t j = std::clamp<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(i + w) - half, 0,
                                                          static_cast<std::ptrdiff_t>(grid_points) - 1);
      win[w] = interp[static_cast<std::size_t>(j)];
    }
    std::nth_element(win.begin(), win.begin() + static_cast<std::ptrdiff_t>(median_width / 2), win.end());
    c.precision[i] = win[median_width / 2];
  }

  for (std::size_t i = 1; i < grid_points; ++i)
    c.auprc += 0.5 * (c.precision[i] + c.precision[i - 1]) * (c.recall_grid[i] - c.recall_grid[i - 1]);
  return c;
}

double auprc(std::span<const double> scores, std::span<const double> labels) { return pr_curve(scores, labels).auprc; }

double f1_max(std::span<const double> scores, std::span<const double> labels) {
  check_aligned(scores, labels, "f1_max");
  const std::size_t np = count_positive(labels);
  if (np == 0) throw UndefinedMetric("f1_max: no positives");
  double best = 0.0;
  for (const Step& s : sweep(scores, labels)) {
    if (s.tp == 0) continue;
    const double f1 = 2.0 * static_cast<double>(s.tp) / static_cast<double>(2 * s.tp + s.fp + (np - s.tp));
    best = std::max(best, f1);
  }
  return best;
}

double Confusion::sensitivity() const {
  if (tp + fn == 0) throw UndefinedMetric("sensitivity: no positives");
  return static_cast<double>(tp) / static_cast<double>(tp + fn);
}

double Confusion::specificity() const {
  if (tn + fp == 0) throw UndefinedMetric("specificity: no negatives");
  return static_cast<double>(tn) / static_cast<double>(tn + fp);
}

double Confusion::ppv() const {
  if (tp + fp == 0) throw UndefinedMetric("ppv: no positive predictions");
  return static_cast<double>(tp) / static_cast<double>(tp + fp);
}

double Confusion::f1() const {
  if (tp == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

Confusion confusion_at(std::span<const double> scores, std::span<const double> labels, double threshold) {
  check_aligned(scores, labels, "confusion");
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold, truth = positive(labels[i]);
    if (pred && truth) ++c.tp;
    else if (pred) ++c.fp;
    else if (truth) ++c.fn;
    else ++c.tn;
  }
  return c;
}

Regression r2_mae(std::span<const double> predictions, std::span<const double> truths) {
  check_aligned(predictions, truths, "r2_mae");
  if (truths.size() < 2) throw UndefinedMetric("r2_mae: at least two samples required");
  const double n = static_cast<double>(truths.size());
  const double mean = std::accumulate(truths.begin(), truths.end(), 0.0) / n;
  double ss_res = 0.0, ss_tot = 0.0, abs_err = 0.0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    const double e = truths[i] - predictions[i];
    ss_res += e * e;
    abs_err += std::abs(e);
    ss_tot += (truths[i] - mean) * (truths[i] - mean);
  }
  Regression r;
  r.mae = abs_err / n;
  if (ss_tot > 0.0) r.r2 = 1.0 - ss_res / ss_tot;
  return r;
}

double compute(MetricKind kind, std::span<const double> scores, std::span<const double> labels) {
  switch (kind) {
    case MetricKind::AUPRC: return auprc(scores, labels);
    case MetricKind::F1max: return f1_max(scores, labels);
    case MetricKind::AUROC: return auroc(scores, labels);
    case MetricKind::R2: {
      const auto r = r2_mae(scores, labels);
      if (!r.r2) throw UndefinedMetric("r2: constant truths");
      return *r.r2;
    }
    case MetricKind::MAE: return r2_mae(scores, labels).mae;
    case MetricKind::Se: return confusion_at(scores, labels, 0.5).sensitivity();
    case MetricKind::Sp: return confusion_at(scores, labels, 0.5).specificity();
    case MetricKind::PPV: return confusion_at(scores, labels, 0.5).ppv();
  }
  throw InvalidArgument("unknown metric kind");
}

} // namespace ecgfe::eval

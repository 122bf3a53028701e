#pragma once

#include <algorithm>
#include <span>
#include <vector>

// Brute-force references, deliberately naive.
namespace oracle {

inline double pairwise_auroc(std::span<const double> s, std::span<const double> y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!(y[i] > 0.5 && y[j] <= 0.5)) continue;
      pairs += 1.0;
      wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
    }
  return wins / pairs;
}

// Every observed score as a ">=" threshold, counted from scratch each time.
inline double threshold_f1_max(std::span<const double> s, std::span<const double> y) {
  double best = 0.0;
  for (double t : s) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const bool pred = s[i] >= t, pos = y[i] > 0.5;
      tp += pred && pos;
      fp += pred && !pos;
      fn += !pred && pos;
    }
    if (tp == 0) continue;
    const double p = tp / (tp + fp), r = tp / (tp + fn);
    best = std::max(best, 2 * p * r / (p + r));
  }
  return best;
}

// Average precision: sum of recall increments times precision at each threshold.
inline double threshold_ap(std::span<const double> s, std::span<const double> y) {
  std::vector<double> ts(s.begin(), s.end());
  std::sort(ts.begin(), ts.end(), std::greater<>());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  double npos = 0;
  for (double v : y) npos += v > 0.5;
  double ap = 0.0, prev_r = 0.0;
  for (double t : ts) {
    double tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      tp += s[i] >= t && y[i] > 0.5;
      fp += s[i] >= t && y[i] <= 0.5;
    }
    const double r = tp / npos;
    ap += (r - prev_r) * tp / (tp + fp);
    prev_r = r;
  }
  return ap;
}

} // namespace oracle

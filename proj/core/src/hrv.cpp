#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "ecgfe/features.hpp"

namespace ecgfe::features {

namespace {

// Band edges in units of the 0.005 Hz grid step: LF [0.04, 0.15), HF [0.15, 0.40].
constexpr int kLfFirst = 8;
constexpr int kHfFirst = 30;
constexpr int kHfLast = 80;
constexpr double kFreqStep = 0.005;

double mean_of(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double population_sd(std::span<const double> v, double mean) {
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

MaybeValue ratio(double num, double den) {
  if (!(std::abs(den) > 0.0)) return std::nullopt;
  return num / den;
}

/// Lomb-Scargle periodogram of the demeaned RR series sampled at beat times,
/// scaled so that a band integral approximates the variance (ms^2) it carries.
struct Spectrum {
  double lf = 0.0, hf = 0.0, total = 0.0;
};

Spectrum lomb_scargle(std::span<const double> rr_ms) {
  const std::size_t n = rr_ms.size();
  std::vector<double> t(n);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += rr_ms[i] / 1000.0;
    t[i] = acc;
  }
  const double mean = mean_of(rr_ms);
  const double duration = t.back() - t.front() + rr_ms.front() / 1000.0;
  const double scale = 2.0 * duration / static_cast<double>(n);

  Spectrum s;
  for (int k = 1; k <= kHfLast; ++k) {
    const double w = 2.0 * std::numbers::pi * kFreqStep * k;
    double s2 = 0.0, c2 = 0.0;
    for (double ti : t) {
      s2 += std::sin(2.0 * w * ti);
      c2 += std::cos(2.0 * w * ti);
    }
    const double tau = std::atan2(s2, c2) / (2.0 * w);
    double yc = 0.0, ys = 0.0, cc = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double c = std::cos(w * (t[i] - tau));
      const double sn = std::sin(w * (t[i] - tau));
      const double y = rr_ms[i] - mean;
      yc += y * c;
      ys += y * sn;
      cc += c * c;
      ss += sn * sn;
    }
    double p = 0.0;
    if (cc > 1e-12) p += yc * yc / cc;
    if (ss > 1e-12) p += ys * ys / ss;
    const double psd = 0.5 * p * scale * kFreqStep;
    s.total += psd;
    if (k >= kLfFirst && k < kHfFirst) s.lf += psd;
    if (k >= kHfFirst) s.hf += psd;
  }
  return s;
}

MaybeValue sample_entropy(std::span<const double> rr, double r) {
  constexpr std::size_t m = 2;
  const std::size_t n = rr.size();
  if (n < m + 2) return std::nullopt;
  // Templates of length m and m+1 over the same n - m starting points.
  std::size_t b = 0, a = 0;
  for (std::size_t i = 0; i + m < n; ++i) {
    for (std::size_t j = i + 1; j + m < n; ++j) {
      bool match = true;
      for (std::size_t k = 0; k < m && match; ++k) match = std::abs(rr[i + k] - rr[j + k]) <= r;
      if (!match) continue;
      ++b;
      if (std::abs(rr[i + m] - rr[j + m]) <= r) ++a;
    }
  }
  if (a == 0 || b == 0) return std::nullopt;
  return -std::log(static_cast<double>(a) / static_cast<double>(b));
}

/// Parabola y = alpha * x^2 through the origin, least squares, on the
/// (RR_n - mean, |dRR_n|) plane split by the sign of dRR_n.
std::array<MaybeValue, 3> eppsm(std::span<const double> rr_ms, double mean) {
  double up_num = 0.0, up_den = 0.0, lo_num = 0.0, lo_den = 0.0;
  std::size_t up_n = 0, lo_n = 0;
  for (std::size_t i = 0; i + 1 < rr_ms.size(); ++i) {
    const double x = (rr_ms[i] - mean) / 1000.0;
    const double d = rr_ms[i + 1] - rr_ms[i];
    const double x2 = x * x;
    if (d > 0.0) {
      up_num += d * x2;
      up_den += x2 * x2;
      ++up_n;
    } else if (d < 0.0) {
      lo_num += -d * x2;
      lo_den += x2 * x2;
      ++lo_n;
    }
  }
  std::array<MaybeValue, 3> out{};
  if (up_n > 0 && up_den > 0.0) out[0] = up_num / up_den;
  if (lo_n > 0 && lo_den > 0.0) out[1] = lo_num / lo_den;
  if (out[0] && out[1]) out[2] = ratio(*out[0], *out[1]);
  return out;
}

} // namespace

std::array<MaybeValue, kHrvCount> compute_hrv(const dsp::BeatAnnotations& ann) {
  return compute_hrv(std::span<const double>(ann.rr_ms));
}

std::array<MaybeValue, kHrvCount> compute_hrv(std::span<const double> rr) {
  std::array<MaybeValue, kHrvCount> f{};
  const std::size_t n = rr.size();
  if (n < 2) return f;
  if (!std::all_of(rr.begin(), rr.end(), [](double v) { return std::isfinite(v) && v > 0.0; })) return f;

  const double avnn = mean_of(rr);
  const double sdnn = population_sd(rr, avnn);
  std::vector<double> diff(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) diff[i] = rr[i + 1] - rr[i];
  double sq = 0.0;
  std::size_t over50 = 0;
  for (double d : diff) {
    sq += d * d;
    if (std::abs(d) > 50.0) ++over50;
  }
  const double rmssd = std::sqrt(sq / static_cast<double>(diff.size()));

  f[hrv::kAvnn] = avnn;
  f[hrv::kSdnn] = sdnn;
  f[hrv::kRmssd] = rmssd;
  f[hrv::kPnn50] = 100.0 * static_cast<double>(over50) / static_cast<double>(diff.size());
  f[hrv::kSem] = sdnn / std::sqrt(static_cast<double>(n));
  f[hrv::kCvRr] = ratio(sdnn, avnn);
  std::vector<double> sorted(rr.begin(), rr.end());
  std::sort(sorted.begin(), sorted.end());
  f[hrv::kRrMin] = sorted.front();
  f[hrv::kRrMax] = sorted.back();
  f[hrv::kRrMedian] = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  double hr = 0.0;
  for (double v : rr) hr += 60000.0 / v;
  f[hrv::kHrMean] = hr / static_cast<double>(n);

  if (n >= 3) {
    const Spectrum s = lomb_scargle(rr);
    f[hrv::kLf] = s.lf;
    f[hrv::kHf] = s.hf;
    f[hrv::kTotal] = s.total;
    f[hrv::kLfHf] = ratio(s.lf, s.hf);
    f[hrv::kLfNorm] = ratio(s.lf, s.lf + s.hf);
    f[hrv::kHfNorm] = ratio(s.hf, s.lf + s.hf);
  }

  // Poincare descriptors from SDSD and SDNN.
  const double dmean = mean_of(diff);
  const double sdsd = population_sd(diff, dmean);
  const double sd1 = std::sqrt(0.5) * sdsd;
  const double sd2_sq = 2.0 * sdnn * sdnn - 0.5 * sdsd * sdsd;
  const double sd2 = std::sqrt(std::max(0.0, sd2_sq));
  f[hrv::kSd1] = sd1;
  f[hrv::kSd2] = sd2;
  f[hrv::kSd1Sd2] = ratio(sd1, sd2);

  f[hrv::kSampEn] = sample_entropy(rr, 0.2 * sdnn);

  const auto e = eppsm(rr, avnn);
  f[hrv::kEppsmUpper] = e[0];
  f[hrv::kEppsmLower] = e[1];
  f[hrv::kEppsmRatio] = e[2];

  for (auto& v : f)
    if (v && !std::isfinite(*v)) v.reset();
  return f;
}

} // namespace ecgfe::features

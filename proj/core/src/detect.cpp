#include <algorithm>
#include <cmath>
#include <numeric>

#include "ecgfe/dsp.hpp"
#include "ecgfe/error.hpp"

namespace ecgfe::dsp {

namespace {

constexpr double kRefractoryS = 0.200;
constexpr double kTWaveWindowS = 0.360;
constexpr double kIntegrationWindowS = 0.150;
constexpr double kRefineWindowS = 0.080;

std::size_t seconds_to_samples(double s, double fs) {
  return static_cast<std::size_t>(std::llround(s * fs));
}

std::vector<double> centered_moving_average(const std::vector<double>& x, std::size_t width) {
  const std::size_t n = x.size();
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i];
  std::vector<double> out(n);
  const std::size_t half = width / 2;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(n, i + half + 1);
    out[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(width);
  }
  return out;
}

std::vector<std::size_t> local_maxima(const std::vector<double>& x) {
  std::vector<std::size_t> peaks;
  for (std::size_t i = 1; i + 1 < x.size(); ++i)
    if (x[i] > x[i - 1] && x[i] >= x[i + 1] && x[i] > 0.0) peaks.push_back(i);
  return peaks;
}

/// Moves each candidate to the largest |x| within +/- window and enforces the
/// refractory spacing, keeping the larger of two close peaks.
std::vector<std::size_t> refine_peaks(std::span<const double> x, const std::vector<std::size_t>& candidates,
                                      double fs) {
  const std::size_t w = seconds_to_samples(kRefineWindowS, fs);
  const std::size_t refractory = seconds_to_samples(kRefractoryS, fs);
  std::vector<std::size_t> refined;
  for (std::size_t c : candidates) {
    const std::size_t lo = c >= w ? c - w : 0;
    const std::size_t hi = std::min(x.size() - 1, c + w);
    std::size_t best = lo;
    for (std::size_t i = lo; i <= hi; ++i)
      if (std::abs(x[i]) > std::abs(x[best])) best = i;
    if (!refined.empty() && best < refined.back() + refractory) {
      if (best != refined.back() && std::abs(x[best]) > std::abs(x[refined.back()])) refined.back() = best;
      continue;
    }
    refined.push_back(best);
  }
  return refined;
}

} // namespace

BeatAnnotations detect_r_peaks(std::span<const double> signal, double fs) {
  if (!(fs > 0.0)) throw InvalidArgument("detect_r_peaks: sampling rate must be positive");
  const std::size_t n = signal.size();
  if (n < kMinFilterLength) return annotate({}, fs);

  const Biquad band[] = {Biquad::highpass(5.0, fs), Biquad::lowpass(15.0, fs)};
  const std::vector<double> bp = filtfilt(band, signal, seconds_to_samples(0.5, fs));

  std::vector<double> slope(n, 0.0);
  for (std::size_t i = 2; i + 2 < n; ++i)
    slope[i] = (2.0 * bp[i + 2] + bp[i + 1] - bp[i - 1] - 2.0 * bp[i - 2]) * fs / 8.0;
  std::vector<double> squared(n);
  for (std::size_t i = 0; i < n; ++i) squared[i] = slope[i] * slope[i];
  const std::vector<double> mwi = centered_moving_average(squared, std::max<std::size_t>(1, seconds_to_samples(kIntegrationWindowS, fs)));

  const std::vector<std::size_t> candidates = local_maxima(mwi);
  if (candidates.empty()) return annotate({}, fs);

  // Threshold initialisation over the first two seconds.
  const std::size_t learn = std::min(n, seconds_to_samples(2.0, fs));
  const double learn_max = *std::max_element(mwi.begin(), mwi.begin() + static_cast<std::ptrdiff_t>(learn));
  const double learn_mean =
      std::accumulate(mwi.begin(), mwi.begin() + static_cast<std::ptrdiff_t>(learn), 0.0) / static_cast<double>(learn);
  if (!(learn_max > 0.0)) return annotate({}, fs);
  double spki = 0.25 * learn_max;
  double npki = 0.5 * learn_mean;

  const std::size_t refractory = seconds_to_samples(kRefractoryS, fs);
  const std::size_t t_window = seconds_to_samples(kTWaveWindowS, fs);
  auto max_slope_before = [&](std::size_t p) {
    const std::size_t w = seconds_to_samples(0.075, fs);
    const std::size_t lo = p >= w ? p - w : 0;
    double m = 0.0;
    for (std::size_t i = lo; i <= p; ++i) m = std::max(m, std::abs(slope[i]));
    return m;
  };

  std::vector<std::size_t> qrs;
  std::vector<std::size_t> skipped;
  std::vector<double> recent_rr;
  for (std::size_t p : candidates) {
    const double v = mwi[p];
    double threshold = npki + 0.25 * (spki - npki);

    // Search-back: a long gap since the last beat re-examines skipped peaks at half threshold.
    if (!qrs.empty() && recent_rr.size() >= 2) {
      const double rr_avg = std::accumulate(recent_rr.begin(), recent_rr.end(), 0.0) / static_cast<double>(recent_rr.size());
      if (static_cast<double>(p - qrs.back()) > 1.66 * rr_avg) {
        std::size_t best = 0;
        double best_v = 0.0;
        for (std::size_t s : skipped) {
          if (s > qrs.back() + refractory && s + refractory < p && mwi[s] > 0.5 * threshold && mwi[s] > best_v) {
            best = s;
            best_v = mwi[s];
          }
        }
        if (best_v > 0.0) {
          recent_rr.push_back(static_cast<double>(best - qrs.back()));
          qrs.push_back(best);
          spki = 0.25 * best_v + 0.75 * spki;
          threshold = npki + 0.25 * (spki - npki);
        }
      }
      skipped.clear();
    }

    if (v <= threshold) {
      npki = 0.125 * v + 0.875 * npki;
      skipped.push_back(p);
      continue;
    }
    if (!qrs.empty()) {
      const std::size_t gap = p - qrs.back();
      if (gap < refractory) {
        if (v > mwi[qrs.back()]) qrs.back() = p;
        continue;
      }
      if (gap < t_window && max_slope_before(p) < 0.5 * max_slope_before(qrs.back())) {
        npki = 0.125 * v + 0.875 * npki;
        continue;
      }
      recent_rr.push_back(static_cast<double>(gap));
      if (recent_rr.size() > 8) recent_rr.erase(recent_rr.begin());
    }
    qrs.push_back(p);
    spki = 0.125 * v + 0.875 * spki;
  }

  return annotate(refine_peaks(signal, qrs, fs), fs);
}

BeatAnnotations detect_r_peaks_matched(std::span<const double> signal, double fs) {
  if (!(fs > 0.0)) throw InvalidArgument("detect_r_peaks_matched: sampling rate must be positive");
  const std::size_t n = signal.size();
  if (n < kMinFilterLength) return annotate({}, fs);

  // Zero-mean Ricker template matched to a ~50 ms QRS.
  const double sigma = 0.012 * fs;
  const auto half = static_cast<std::ptrdiff_t>(std::ceil(4.0 * sigma));
  std::vector<double> kernel;
  for (std::ptrdiff_t k = -half; k <= half; ++k) {
    const double t = static_cast<double>(k) / sigma;
    kernel.push_back((1.0 - t * t) * std::exp(-0.5 * t * t));
  }
  const double mean = std::accumulate(kernel.begin(), kernel.end(), 0.0) / static_cast<double>(kernel.size());
  for (double& k : kernel) k -= mean;

  std::vector<double> response(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::ptrdiff_t k = -half; k <= half; ++k) {
      const auto j = static_cast<std::ptrdiff_t>(i) + k;
      if (j < 0 || j >= static_cast<std::ptrdiff_t>(n)) continue;
      acc += kernel[static_cast<std::size_t>(k + half)] * signal[static_cast<std::size_t>(j)];
    }
    response[i] = std::abs(acc);
  }

  std::vector<double> sorted = response;
  const std::size_t q = std::min(n - 1, static_cast<std::size_t>(0.995 * static_cast<double>(n)));
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(q), sorted.end());
  const double threshold = 0.4 * sorted[q];
  if (!(threshold > 0.0)) return annotate({}, fs);

  std::vector<std::size_t> candidates;
  for (std::size_t i = 1; i + 1 < n; ++i)
    if (response[i] > threshold && response[i] > response[i - 1] && response[i] >= response[i + 1])
      candidates.push_back(i);

  // Strongest-first acceptance with a 250 ms dead zone.
  std::vector<std::size_t> order = candidates;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return response[a] > response[b]; });
  const std::size_t dead = seconds_to_samples(0.250, fs);
  std::vector<std::size_t> accepted;
  for (std::size_t c : order) {
    const bool clear = std::none_of(accepted.begin(), accepted.end(), [&](std::size_t a) {
      return (a > c ? a - c : c - a) < dead;
    });
    if (clear) accepted.push_back(c);
  }
  std::sort(accepted.begin(), accepted.end());
  return annotate(refine_peaks(signal, accepted, fs), fs);
}

} // namespace ecgfe::dsp

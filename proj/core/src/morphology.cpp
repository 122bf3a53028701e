#include <algorithm>
#include <cmath>
#include <numeric>

#include "ecgfe/features.hpp"

namespace ecgfe::features {

namespace {

constexpr double kPreS = 0.40;
constexpr double kPostS = 0.55;
// Relative level at which a wave is considered ended; 2 SD for a Gaussian.
constexpr double kWaveEdge = 0.135;
constexpr double kQrsEdge = 0.03;
constexpr double kQrsFlatLevel = 0.15;
constexpr double kQrsFlatSlope = 0.05;
constexpr int kQrsQuietRun = 4;
constexpr double kMinWaveMv = 0.03;
constexpr double kRWindowMs = 50.0;

struct Fiducials {
  std::ptrdiff_t qrs_on = -1, qrs_off = -1;
};

class Template {
public:
  Template(const BeatTemplate& t) : x_(t.samples), r_(static_cast<std::ptrdiff_t>(t.r_index)), fs_(t.fs) {}

  std::ptrdiff_t size() const { return static_cast<std::ptrdiff_t>(x_.size()); }
  double operator[](std::ptrdiff_t i) const { return x_[static_cast<std::size_t>(i)]; }
  std::ptrdiff_t r() const { return r_; }
  std::ptrdiff_t samples(double ms) const { return static_cast<std::ptrdiff_t>(std::llround(ms * fs_ / 1000.0)); }
  double ms(std::ptrdiff_t n) const { return static_cast<double>(n) * 1000.0 / fs_; }
  std::ptrdiff_t clamp(std::ptrdiff_t i) const { return std::clamp<std::ptrdiff_t>(i, 0, size() - 1); }
  void shift(double b) {
    for (double& v : x_) v -= b;
  }
  double mean(std::ptrdiff_t lo, std::ptrdiff_t hi) const {
    lo = clamp(lo);
    hi = clamp(hi);
    if (hi < lo) return 0.0;
    double s = 0.0;
    for (std::ptrdiff_t i = lo; i <= hi; ++i) s += (*this)[i];
    return s / static_cast<double>(hi - lo + 1);
  }
  std::ptrdiff_t argmax_abs(std::ptrdiff_t lo, std::ptrdiff_t hi) const {
    std::ptrdiff_t best = lo;
    for (std::ptrdiff_t i = lo; i <= hi; ++i)
      if (std::abs((*this)[i]) > std::abs((*this)[best])) best = i;
    return best;
  }
  /// Walks from `from` in direction `step` until a run of samples sits below
  /// `level` in magnitude; returns the first sample of that run.
  std::ptrdiff_t edge(std::ptrdiff_t from, int step, double level, std::ptrdiff_t limit, int run = 3) const {
    int below = 0;
    for (std::ptrdiff_t i = from; step < 0 ? i >= limit : i <= limit; i += step) {
      if (std::abs((*this)[i]) < level) {
        if (++below == run) return i - step * (run - 1);
      } else {
        below = 0;
      }
    }
    return -1;
  }
  double integral(std::ptrdiff_t lo, std::ptrdiff_t hi, int power, bool absolute) const {
    double s = 0.0;
    for (std::ptrdiff_t i = lo; i <= hi; ++i) {
      double v = (*this)[i];
      if (absolute) v = std::abs(v);
      s += power == 2 ? v * v : v;
    }
    return s * 1000.0 / fs_;
  }

private:
  std::vector<double> x_;
  std::ptrdiff_t r_;
  double fs_;
};

// A sample is quiet when it is near baseline, or when it is both small and
// flat; the second clause finds the J point when the T wave follows closely.
Fiducials find_qrs(const Template& t) {
  const std::ptrdiff_t lo = t.clamp(t.r() - t.samples(200.0));
  const std::ptrdiff_t hi = t.clamp(t.r() + t.samples(200.0));
  const std::ptrdiff_t near_lo = t.clamp(t.r() - t.samples(60.0));
  const std::ptrdiff_t near_hi = t.clamp(t.r() + t.samples(60.0));
  const double peak = std::abs(t[t.argmax_abs(near_lo, near_hi)]);
  if (!(peak > 1e-6)) return {};
  auto slope = [&](std::ptrdiff_t i) { return 0.5 * std::abs(t[t.clamp(i + 1)] - t[t.clamp(i - 1)]); };
  double max_slope = 0.0;
  for (std::ptrdiff_t i = near_lo; i <= near_hi; ++i) max_slope = std::max(max_slope, slope(i));
  auto quiet = [&](std::ptrdiff_t i) {
    const double a = std::abs(t[i]);
    return a < kQrsEdge * peak || (a < kQrsFlatLevel * peak && slope(i) < kQrsFlatSlope * max_slope);
  };
  auto walk = [&](int step, std::ptrdiff_t limit) -> std::ptrdiff_t {
    int run = 0;
    for (std::ptrdiff_t i = t.r(); step < 0 ? i >= limit : i <= limit; i += step) {
      run = quiet(i) ? run + 1 : 0;
      if (run == kQrsQuietRun) return i - step * (kQrsQuietRun - 1);
    }
    return -1;
  };
  return {walk(-1, lo), walk(+1, hi)};
}

} // namespace

std::optional<BeatTemplate> median_beat(std::span<const double> signal, std::span<const std::size_t> r_peaks,
                                        double fs) {
  const auto pre = static_cast<std::size_t>(std::llround(kPreS * fs));
  const auto post = static_cast<std::size_t>(std::llround(kPostS * fs));
  std::vector<std::size_t> usable;
  for (std::size_t r : r_peaks)
    if (r >= pre && r + post < signal.size()) usable.push_back(r);
  if (usable.empty()) return std::nullopt;

  BeatTemplate out;
  out.fs = fs;
  out.r_index = pre;
  out.beats_used = usable.size();
  out.samples.resize(pre + post + 1);
  std::vector<double> column(usable.size());
  for (std::size_t k = 0; k < out.samples.size(); ++k) {
    for (std::size_t b = 0; b < usable.size(); ++b) column[b] = signal[usable[b] - pre + k];
    const std::size_t mid = column.size() / 2;
    std::nth_element(column.begin(), column.begin() + static_cast<std::ptrdiff_t>(mid), column.end());
    double m = column[mid];
    if (column.size() % 2 == 0) {
      const double below = *std::max_element(column.begin(), column.begin() + static_cast<std::ptrdiff_t>(mid));
      m = 0.5 * (m + below);
    }
    out.samples[k] = m;
  }
  // Coarse baseline: the template median.
  std::vector<double> sorted = out.samples;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
  const double base = sorted[sorted.size() / 2];
  for (double& v : out.samples) v -= base;
  return out;
}

std::array<MaybeValue, kMorCount> compute_morphology(std::span<const double> signal, const dsp::BeatAnnotations& ann,
                                                     double fs) {
  std::array<MaybeValue, kMorCount> f{};
  const auto beat = median_beat(signal, ann.r_peaks, fs);
  if (!beat) return f;
  Template t(*beat);

  std::optional<double> rr_ms;
  if (!ann.rr_ms.empty())
    rr_ms = std::accumulate(ann.rr_ms.begin(), ann.rr_ms.end(), 0.0) / static_cast<double>(ann.rr_ms.size());
  const double rr_for_limits = rr_ms.value_or(1000.0);

  const std::ptrdiff_t r = t.r();
  const std::ptrdiff_t rw_lo = t.clamp(r - t.samples(kRWindowMs));
  const std::ptrdiff_t rw_hi = t.clamp(r + t.samples(kRWindowMs));

  Fiducials q = find_qrs(t);
  if (q.qrs_on >= 0) {
    // Refine the baseline on the PR segment, then re-delineate.
    t.shift(t.mean(q.qrs_on - t.samples(30.0), q.qrs_on - t.samples(10.0)));
    const Fiducials refined = find_qrs(t);
    if (refined.qrs_on >= 0 && refined.qrs_off >= 0) q = refined;
  }

  double r_amp = t[rw_lo];
  for (std::ptrdiff_t i = rw_lo; i <= rw_hi; ++i) r_amp = std::max(r_amp, t[i]);
  f[mor::kRAmp] = r_amp;
  double lo_v = t[0], hi_v = t[0];
  for (std::ptrdiff_t i = 0; i < t.size(); ++i) {
    lo_v = std::min(lo_v, t[i]);
    hi_v = std::max(hi_v, t[i]);
  }
  f[mor::kPeakToPeak] = hi_v - lo_v;

  if (q.qrs_on < 0 || q.qrs_off < 0 || q.qrs_off <= q.qrs_on) return f;
  const std::ptrdiff_t on = q.qrs_on, off = q.qrs_off;
  f[mor::kQrsDuration] = t.ms(off - on);

  std::ptrdiff_t r_pos = on;
  for (std::ptrdiff_t i = on; i <= off; ++i)
    if (t[i] > t[r_pos]) r_pos = i;
  double q_amp = 0.0, s_amp = 0.0;
  for (std::ptrdiff_t i = on; i <= r_pos; ++i) q_amp = std::min(q_amp, t[i]);
  for (std::ptrdiff_t i = r_pos; i <= off; ++i) s_amp = std::min(s_amp, t[i]);
  f[mor::kQAmp] = q_amp;
  f[mor::kSAmp] = s_amp;
  f[mor::kVat] = t.ms(r_pos - on);
  f[mor::kQrsArea] = t.integral(on, off, 1, false);
  f[mor::kQrsAbsArea] = t.integral(on, off, 1, true);
  f[mor::kQrsEnergy] = t.integral(on, off, 2, false);
  if (std::abs(s_amp) > 1e-3) f[mor::kRsRatio] = t[r_pos] / std::abs(s_amp);

  const std::ptrdiff_t st = off + t.samples(60.0);
  const std::ptrdiff_t st_end = off + t.samples(80.0);
  if (st_end < t.size()) {
    f[mor::kStLevel] = t[st];
    f[mor::kStSlope] = (t[st_end] - t[off]) / 0.080;
  }

  // T wave: after the ST segment, bounded by the beat spacing.
  const std::ptrdiff_t t_lo = off + t.samples(60.0);
  const std::ptrdiff_t t_hi = std::min({off + t.samples(450.0), r + t.samples(0.7 * rr_for_limits), t.size() - 1});
  if (t_lo < t_hi) {
    const std::ptrdiff_t peak = t.argmax_abs(t_lo, t_hi);
    const double amp = t[peak];
    if (std::abs(amp) >= kMinWaveMv) {
      f[mor::kTAmp] = amp;
      const double level = kWaveEdge * std::abs(amp);
      const std::ptrdiff_t t_off = t.edge(peak, +1, level, t.size() - 1, 1);
      const std::ptrdiff_t t_on = t.edge(peak, -1, level, off, 1);
      if (t_off >= 0) {
        f[mor::kQt] = t.ms(t_off - on);
        f[mor::kTpe] = t.ms(t_off - peak);
        if (rr_ms) f[mor::kQtc] = *f[mor::kQt] / std::sqrt(*rr_ms / 1000.0);
      }
      if (t_on >= 0 && t_off >= 0) {
        f[mor::kTDuration] = t.ms(t_off - t_on);
        f[mor::kTArea] = t.integral(t_on, t_off, 1, false);
      }
    }
  }

  // P wave: before the QRS, bounded by the beat spacing.
  const std::ptrdiff_t p_lo = t.clamp(std::max(on - t.samples(320.0), r - t.samples(0.55 * rr_for_limits)));
  const std::ptrdiff_t p_hi = on - t.samples(20.0);
  if (p_lo < p_hi) {
    const std::ptrdiff_t peak = t.argmax_abs(p_lo, p_hi);
    const double amp = t[peak];
    if (std::abs(amp) >= kMinWaveMv && peak > p_lo) {
      f[mor::kPAmp] = amp;
      const double level = kWaveEdge * std::abs(amp);
      const std::ptrdiff_t p_on = t.edge(peak, -1, level, 0, 1);
      const std::ptrdiff_t p_off = t.edge(peak, +1, level, on, 1);
      if (p_on >= 0) f[mor::kPr] = t.ms(on - p_on);
      if (p_on >= 0 && p_off >= 0) {
        f[mor::kPDuration] = t.ms(p_off - p_on);
        f[mor::kPArea] = t.integral(p_on, p_off, 1, false);
      }
    }
  }

  for (auto& v : f)
    if (v && !std::isfinite(*v)) v.reset();
  return f;
}

} // namespace ecgfe::features

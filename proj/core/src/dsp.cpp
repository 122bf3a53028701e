#include "ecgfe/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "ecgfe/error.hpp"

namespace ecgfe::dsp {

namespace {

constexpr double kKaiserBeta = 8.0;
constexpr double kZeroCrossings = 32.0;
constexpr std::int64_t kMaxPhaseTable = 4096;

double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

double kaiser(double r, double i0_beta) {
  if (std::abs(r) >= 1.0) return 0.0;
  return std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(1.0 - r * r)) / i0_beta;
}

// Rates are reduced to a ratio of integers at millihertz resolution.
std::pair<std::int64_t, std::int64_t> reduce_ratio(double fs_in, double fs_out) {
  const auto in = static_cast<std::int64_t>(std::llround(fs_in * 1000.0));
  const auto out = static_cast<std::int64_t>(std::llround(fs_out * 1000.0));
  const std::int64_t g = std::gcd(in, out);
  return {out / g, in / g};
}

} // namespace

std::vector<double> resample(std::span<const double> signal, double fs_in, double fs_out) {
  if (!(fs_in > 0.0) || !(fs_out > 0.0)) throw InvalidArgument("sampling rates must be positive");
  if (signal.empty()) throw InvalidArgument("cannot resample an empty signal");
  if (!std::all_of(signal.begin(), signal.end(), [](double v) { return std::isfinite(v); }))
    throw InvalidArgument("resample: non-finite input sample");
  if (fs_in == fs_out) return {signal.begin(), signal.end()};

  const auto [up, down] = reduce_ratio(fs_in, fs_out);
  const auto n_in = static_cast<std::int64_t>(signal.size());
  const auto n_out = static_cast<std::int64_t>(
      std::llround(static_cast<double>(signal.size()) * fs_out / fs_in));
  const double fc = std::min(1.0, static_cast<double>(up) / static_cast<double>(down));
  const double half_width = kZeroCrossings / fc;
  const auto reach = static_cast<std::int64_t>(std::ceil(half_width));
  const double i0_beta = std::cyl_bessel_i(0.0, kKaiserBeta);

  auto kernel = [&](double tau) { return fc * sinc(fc * tau) * kaiser(tau / half_width, i0_beta); };

  // taps[p][j] is the weight of input sample base - reach + j for output phase p.
  const std::int64_t span_len = 2 * reach + 2;
  std::vector<double> table;
  const bool tabulate = up <= kMaxPhaseTable;
  if (tabulate) {
    table.resize(static_cast<std::size_t>(up * span_len));
    for (std::int64_t p = 0; p < up; ++p) {
      const double frac = static_cast<double>(p) / static_cast<double>(up);
      for (std::int64_t j = 0; j < span_len; ++j) {
        const double tau = static_cast<double>(reach - j) + frac;
        table[static_cast<std::size_t>(p * span_len + j)] = kernel(tau);
      }
    }
  }

  std::vector<double> out(static_cast<std::size_t>(n_out));
  for (std::int64_t m = 0; m < n_out; ++m) {
    const std::int64_t num = m * down;
    const std::int64_t base = num / up;
    const std::int64_t phase = num % up;
    const double frac = static_cast<double>(phase) / static_cast<double>(up);
    double acc = 0.0;
    const std::int64_t first = base - reach;
    const std::int64_t lo = std::max<std::int64_t>(0, first);
    const std::int64_t hi = std::min<std::int64_t>(n_in - 1, first + span_len - 1);
    for (std::int64_t k = lo; k <= hi; ++k) {
      const double w = tabulate ? table[static_cast<std::size_t>(phase * span_len + (k - first))]
                                : kernel(static_cast<double>(base - k) + frac);
      acc += w * signal[static_cast<std::size_t>(k)];
    }
    out[static_cast<std::size_t>(m)] = acc;
  }
  return out;
}

// RBJ audio-EQ cookbook designs; Q = 1/sqrt(2) gives second-order Butterworth.
Biquad Biquad::lowpass(double cutoff_hz, double fs) {
  const double w0 = 2.0 * std::numbers::pi * cutoff_hz / fs;
  const double alpha = std::sin(w0) / std::numbers::sqrt2;
  const double c = std::cos(w0);
  const double a0 = 1.0 + alpha;
  return {(1.0 - c) / 2.0 / a0, (1.0 - c) / a0, (1.0 - c) / 2.0 / a0, -2.0 * c / a0,
          (1.0 - alpha) / a0};
}

Biquad Biquad::highpass(double cutoff_hz, double fs) {
  const double w0 = 2.0 * std::numbers::pi * cutoff_hz / fs;
  const double alpha = std::sin(w0) / std::numbers::sqrt2;
  const double c = std::cos(w0);
  const double a0 = 1.0 + alpha;
  return {(1.0 + c) / 2.0 / a0, -(1.0 + c) / a0, (1.0 + c) / 2.0 / a0, -2.0 * c / a0,
          (1.0 - alpha) / a0};
}

Biquad Biquad::notch(double center_hz, double fs, double q) {
  const double w0 = 2.0 * std::numbers::pi * center_hz / fs;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double c = std::cos(w0);
  const double a0 = 1.0 + alpha;
  return {1.0 / a0, -2.0 * c / a0, 1.0 / a0, -2.0 * c / a0, (1.0 - alpha) / a0};
}

namespace {

void run_section(const Biquad& s, std::vector<double>& x) {
  if (x.empty()) return;
  // Steady state for a constant input equal to the first sample.
  const double x0 = x.front();
  const double y_ss = x0 * s.dc_gain();
  double z2 = s.b2 * x0 - s.a2 * y_ss;
  double z1 = y_ss - s.b0 * x0;
  for (double& v : x) {
    const double in = v;
    const double y = s.b0 * in + z1;
    z1 = s.b1 * in - s.a1 * y + z2;
    z2 = s.b2 * in - s.a2 * y;
    v = y;
  }
}

} // namespace

std::vector<double> filtfilt(std::span<const Biquad> sections, std::span<const double> signal,
                             std::size_t pad_length) {
  const std::size_t n = signal.size();
  if (n == 0) return {};
  const std::size_t pad = std::min(pad_length, n - 1);
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  const double first = signal.front();
  const double last = signal.back();
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * first - signal[i]);
  ext.insert(ext.end(), signal.begin(), signal.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * last - signal[n - 1 - i]);

  for (const auto& s : sections) run_section(s, ext);
  std::reverse(ext.begin(), ext.end());
  for (const auto& s : sections) run_section(s, ext);
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(pad),
          ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

FilteredSignal denoise(std::span<const double> signal, double fs, const DenoiseOptions& options) {
  if (!(fs > 0.0)) throw InvalidArgument("denoise: sampling rate must be positive");
  if (signal.size() < kMinFilterLength) return {{signal.begin(), signal.end()}, true};
  std::vector<Biquad> sections;
  const double nyquist = fs / 2.0;
  if (options.highpass_hz > 0.0) sections.push_back(Biquad::highpass(options.highpass_hz, fs));
  if (options.lowpass_hz > 0.0 && options.lowpass_hz < 0.95 * nyquist)
    sections.push_back(Biquad::lowpass(options.lowpass_hz, fs));
  for (double f : options.notch_hz)
    if (f > 0.0 && f < 0.95 * nyquist) sections.push_back(Biquad::notch(f, fs));
  const auto pad = static_cast<std::size_t>(std::llround(fs));
  return {filtfilt(sections, signal, pad), false};
}

BeatAnnotations annotate(std::vector<std::size_t> peaks, double fs) {
  BeatAnnotations ann;
  ann.fs = fs;
  ann.r_peaks = std::move(peaks);
  ann.insufficient = ann.r_peaks.size() < 2;
  for (std::size_t i = 1; i < ann.r_peaks.size(); ++i) {
    const double rr = static_cast<double>(ann.r_peaks[i] - ann.r_peaks[i - 1]) * 1000.0 / fs;
    if (rr > kMinRrMs && rr < kMaxRrMs) ann.rr_ms.push_back(rr);
  }
  return ann;
}

double compute_bsqi(std::span<const std::size_t> a, std::span<const std::size_t> b, double fs,
                    double tol_ms) {
  if (a.empty() && b.empty()) return 0.0;
  const double tol = tol_ms * fs / 1000.0;
  std::size_t i = 0, j = 0, matched = 0;
  while (i < a.size() && j < b.size()) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[j]);
    if (std::abs(d) <= tol) {
      ++matched;
      ++i;
      ++j;
    } else if (d < 0) {
      ++i;
    } else {
      ++j;
    }
  }
  return static_cast<double>(matched) / static_cast<double>(a.size() + b.size() - matched);
}

QualityIndex make_quality_index(std::vector<double> per_lead) {
  QualityIndex q;
  q.bsqi_per_lead = std::move(per_lead);
  if (!q.bsqi_per_lead.empty())
    q.bsqi_mean = std::accumulate(q.bsqi_per_lead.begin(), q.bsqi_per_lead.end(), 0.0) /
                  static_cast<double>(q.bsqi_per_lead.size());
  return q;
}

nlohmann::json annotations_to_json(const BeatAnnotations& ann) {
  return {{"fs", ann.fs},
          {"r_peaks", ann.r_peaks},
          {"rr_ms", ann.rr_ms},
          {"insufficient", ann.insufficient}};
}

} // namespace ecgfe::dsp

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

namespace ecgfe::dsp {

/// Polyphase windowed-sinc resampler (Kaiser window, beta = 8) over the reduced
/// rational ratio fs_out / fs_in. Output length is round(n * fs_out / fs_in).
std::vector<double> resample(std::span<const double> signal, double fs_in, double fs_out);

/// Second-order section in transposed direct form II, a0 normalised to 1.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;

  static Biquad lowpass(double cutoff_hz, double fs);
  static Biquad highpass(double cutoff_hz, double fs);
  static Biquad notch(double center_hz, double fs, double q = 30.0);

  /// Gain at DC, H(z = 1).
  double dc_gain() const { return (b0 + b1 + b2) / (1.0 + a1 + a2); }
};

/// Zero-phase forward-backward filtering with odd-reflection padding and
/// steady-state initial conditions per section.
std::vector<double> filtfilt(std::span<const Biquad> sections, std::span<const double> signal,
                             std::size_t pad_length);

struct DenoiseOptions {
  double highpass_hz = 0.5;
  double lowpass_hz = 100.0;
  std::vector<double> notch_hz{50.0, 60.0};
};

struct FilteredSignal {
  std::vector<double> samples;
  /// Input too short to filter; samples are the unmodified input.
  bool passthrough = false;
};

inline constexpr std::size_t kMinFilterLength = 16;

/// Zero-phase band-pass plus mains notches. Length preserving.
FilteredSignal denoise(std::span<const double> signal, double fs, const DenoiseOptions& options = {});

inline constexpr double kMinRrMs = 200.0;
inline constexpr double kMaxRrMs = 3000.0;

struct BeatAnnotations {
  double fs = 0.0;
  std::vector<std::size_t> r_peaks;
  /// Successive peak spacing in ms, with intervals outside [200, 3000] ms dropped.
  std::vector<double> rr_ms;
  /// Fewer than two beats detected; RR-based features are missing.
  bool insufficient = true;
};

BeatAnnotations annotate(std::vector<std::size_t> peaks, double fs);

/// Pan-Tompkins style detector: 5-15 Hz band-pass, derivative, squaring,
/// 150 ms moving-window integration, adaptive thresholds with search-back.
BeatAnnotations detect_r_peaks(std::span<const double> signal, double fs);

/// Independent detector used for bSQI: amplitude threshold on a Ricker
/// matched-filter output.
BeatAnnotations detect_r_peaks_matched(std::span<const double> signal, double fs);

inline constexpr double kBsqiToleranceMs = 150.0;

/// Agreement between two detections: matched / (n_a + n_b - matched), where
/// beats are paired one-to-one greedily within +/- tol_ms. 0 when both are empty.
double compute_bsqi(std::span<const std::size_t> a, std::span<const std::size_t> b, double fs,
                    double tol_ms = kBsqiToleranceMs);

struct QualityIndex {
  std::vector<double> bsqi_per_lead;
  double bsqi_mean = 0.0;
};

QualityIndex make_quality_index(std::vector<double> per_lead);

nlohmann::json annotations_to_json(const BeatAnnotations& ann);

} // namespace ecgfe::dsp

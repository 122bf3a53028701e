#include "doctest.h"

#include <cmath>
#include <numbers>
#include <numeric>

#include "ecgfe/dsp.hpp"
#include "ecgfe/synth.hpp"

using namespace ecgfe;
using namespace ecgfe::dsp;

namespace {

std::vector<double> sine(double f, double fs, std::size_t n, double amp = 1.0) {
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = amp * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) / fs);
  return s;
}

double correlation(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n, mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

double rms(std::span<const double> s) {
  double acc = 0;
  for (double v : s) acc += v * v;
  return std::sqrt(acc / static_cast<double>(s.size()));
}

synth::GeneratedRecord clean_record(double hr, double duration, std::array<bool, kArrhythmiaCount> arr = {}) {
  synth::GenSpec spec;
  spec.arrhythmia = arr;
  spec.heart_rate_bpm = hr;
  spec.rr_sd_ms = 0.0;
  spec.noise_sd_mv = 0.0;
  spec.baseline_wander_mv = 0.0;
  spec.duration_s = duration;
  spec.seed = 5;
  spec.record_id = "clean";
  return synth::generate_record(spec);
}

std::vector<double> lead_ii(const EcgRecord& r) {
  const auto l = r.lead(1);
  return {l.begin(), l.end()};
}

} // namespace

TEST_CASE("resample lengths and identity") {
  const auto x = sine(3.0, 500.0, 5000);
  CHECK(resample(x, 500.0, 400.0).size() == 4000);
  CHECK(resample(x, 400.0, 400.0) == std::vector<double>(x.begin(), x.end()));
}

TEST_CASE("resampled sine matches the analytic sine") {
  const auto x = sine(5.0, 1000.0, 4000);
  const auto y = resample(x, 1000.0, 400.0);
  REQUIRE(y.size() == 1600);
  CHECK(correlation(y, sine(5.0, 400.0, 1600)) >= 0.999);
}

TEST_CASE("denoise rejects DC and keeps in-band content") {
  const double fs = 400.0;
  std::vector<double> dc(4000, 2.0);
  const auto out = denoise(dc, fs).samples;
  double mean_abs = 0;
  for (double v : out) mean_abs += std::abs(v);
  CHECK(mean_abs / static_cast<double>(out.size()) < 0.01 * 2.0);

  const auto s = sine(10.0, fs, 4000);
  const auto f = denoise(s, fs).samples;
  const std::span<const double> mid_in(s.data() + 1000, 2000), mid_out(f.data() + 1000, 2000);
  CHECK(std::abs(rms(mid_out) / rms(mid_in) - 1.0) < 0.05);

  std::vector<double> zero(4000, 0.0);
  for (double v : denoise(zero, fs).samples) CHECK(v == 0.0);
}

TEST_CASE("short input passes through") {
  std::vector<double> x{1, 2, 3};
  const auto r = denoise(x, 400.0);
  CHECK(r.passthrough);
  CHECK(r.samples == x);
}

TEST_CASE("R peaks on a clean 60 bpm record") {
  const auto g = clean_record(60.0, 10.0);
  const auto ann = detect_r_peaks(lead_ii(g.record), g.truth.fs);
  CHECK(std::abs(static_cast<long>(ann.r_peaks.size()) - 10) <= 1);
  const double tol = 0.020 * g.truth.fs;
  for (std::size_t p : ann.r_peaks) {
    double best = 1e9;
    for (std::size_t t : g.truth.r_peaks) best = std::min(best, std::abs(static_cast<double>(p) - static_cast<double>(t)));
    CHECK(best <= tol);
  }
}

TEST_CASE("R peaks at 150 bpm") {
  std::array<bool, kArrhythmiaCount> st{};
  st[index_of(Arrhythmia::ST)] = true;
  const auto g = clean_record(150.0, 8.0, st);
  const auto ann = detect_r_peaks(lead_ii(g.record), g.truth.fs);
  CHECK(std::abs(static_cast<long>(ann.r_peaks.size()) - 20) <= 1);
}

TEST_CASE("flat signal has insufficient beats") {
  std::vector<double> flat(4000, 0.0);
  CHECK(detect_r_peaks(flat, 400.0).insufficient);
  CHECK(detect_r_peaks_matched(flat, 400.0).insufficient);
}

TEST_CASE("annotate drops implausible intervals") {
  const auto ann = annotate({0, 40, 440, 840, 2400}, 400.0);  // 100 ms, 1000, 1000, 3900 ms
  CHECK(ann.rr_ms == std::vector<double>{1000.0, 1000.0});
  CHECK_FALSE(ann.insufficient);
}

TEST_CASE("bSQI set matching") {
  std::vector<std::size_t> a;
  for (std::size_t i = 0; i < 10; ++i) a.push_back(400 * i + 100);
  CHECK(compute_bsqi(a, a, 400.0) == doctest::Approx(1.0));
  std::vector<std::size_t> b(a.begin(), a.begin() + 8);
  CHECK(compute_bsqi(a, b, 400.0) == doctest::Approx(0.8));
  std::vector<std::size_t> far;
  for (std::size_t p : a) far.push_back(p + 200);  // 500 ms away
  CHECK(compute_bsqi(a, far, 400.0) == 0.0);
  CHECK(compute_bsqi({}, {}, 400.0) == 0.0);
}

TEST_CASE("filter design gains") {
  CHECK(Biquad::lowpass(40.0, 400.0).dc_gain() == doctest::Approx(1.0));
  CHECK(std::abs(Biquad::highpass(0.5, 400.0).dc_gain()) < 1e-9);
  CHECK(Biquad::notch(50.0, 400.0).dc_gain() == doctest::Approx(1.0));
}

#include "doctest.h"

#include <cmath>
#include <numbers>

#include <unistd.h>

#include "ecgfe/features.hpp"
#include "ecgfe/synth.hpp"

using namespace ecgfe;
using namespace ecgfe::features;

namespace {

std::optional<double> hrv_of(std::vector<double> rr, std::size_t k) { return compute_hrv(rr)[k]; }

std::array<MaybeValue, kMorCount> morphology_of(const EcgRecord& rec, std::size_t lead = 1) {
  const auto raw = rec.lead(lead);
  const std::vector<double> x(raw.begin(), raw.end());
  const auto clean = dsp::denoise(x, kTargetRateHz).samples;
  return compute_morphology(clean, dsp::detect_r_peaks(clean, kTargetRateHz), kTargetRateHz);
}

synth::GenSpec quiet_spec(std::string id) {
  synth::GenSpec s;
  s.heart_rate_bpm = 70.0;
  s.noise_sd_mv = 0.005;
  s.seed = 21;
  s.record_id = std::move(id);
  return s;
}

} // namespace

TEST_CASE("time-domain HRV formulas") {
  CHECK(*hrv_of({800, 1000, 800}, hrv::kRmssd) == doctest::Approx(200.0));
  CHECK(*hrv_of({800, 1000}, hrv::kSdnn) == doctest::Approx(100.0));
  CHECK(*hrv_of({800, 1000, 800}, hrv::kPnn50) == doctest::Approx(100.0));
  const std::vector<double> flat(20, 900.0);
  CHECK(*hrv_of(flat, hrv::kRmssd) == 0.0);
  CHECK(*hrv_of(flat, hrv::kSdnn) == 0.0);
  CHECK(*hrv_of(flat, hrv::kPnn50) == 0.0);
  CHECK(*hrv_of(flat, hrv::kHrMean) == doctest::Approx(60000.0 / 900.0));
}

TEST_CASE("HRV of too few beats is missing") {
  dsp::BeatAnnotations ann;
  ann.fs = 400.0;
  const auto h = compute_hrv(ann);
  CHECK_FALSE(h[hrv::kAvnn].has_value());
  CHECK_FALSE(h[hrv::kRmssd].has_value());
}

TEST_CASE("QRS duration follows the generator") {
  auto spec = quiet_spec("qrs");
  spec.qrs_base_width_ms = 80.0;
  const auto g = synth::generate_record(spec);
  REQUIRE(g.truth.beat.qrs_width_ms() == doctest::Approx(80.0));
  const auto m = morphology_of(g.record);
  REQUIRE(m[mor::kQrsDuration].has_value());
  CHECK(std::abs(*m[mor::kQrsDuration] - 80.0) <= 15.0);
}

TEST_CASE("PR interval of a first-degree block") {
  auto spec = quiet_spec("avb");
  spec.arrhythmia[index_of(Arrhythmia::AVB1)] = true;
  spec.pr_interval_ms = 240.0;
  const auto m = morphology_of(synth::generate_record(spec).record);
  REQUIRE(m[mor::kPr].has_value());
  CHECK(std::abs(*m[mor::kPr] - 240.0) <= 25.0);
}

TEST_CASE("R amplitude is the template maximum") {
  const double fs = 400.0;
  std::vector<double> x(4000, 0.0);
  std::vector<std::size_t> peaks;
  for (std::size_t r = 200; r + 200 < x.size(); r += 400) {
    peaks.push_back(r);
    for (std::size_t i = r - 40; i <= r + 40; ++i) {
      const double d = (static_cast<double>(i) - static_cast<double>(r)) / 4.0;
      x[i] += 1.3 * std::exp(-0.5 * d * d);
    }
    for (std::size_t i = r + 60; i <= r + 160; ++i) {
      const double d = (static_cast<double>(i) - static_cast<double>(r + 110)) / 16.0;
      x[i] += 0.3 * std::exp(-0.5 * d * d);
    }
  }
  const auto tmpl = median_beat(x, peaks, fs);
  REQUIRE(tmpl.has_value());
  const double top = *std::max_element(tmpl->samples.begin(), tmpl->samples.end());
  const auto m = compute_morphology(x, dsp::annotate(peaks, fs), fs);
  REQUIRE(m[mor::kRAmp].has_value());
  CHECK(top == doctest::Approx(1.3).epsilon(1e-6));
  // Measured from the PR-segment level, which the T-wave tail lifts a hair.
  CHECK(std::abs(*m[mor::kRAmp] - top) < 1e-3);
}

TEST_CASE("registry and view widths") {
  const auto& reg = FeatureRegistry::canonical();
  CHECK(reg.column_count() == 568);
  CHECK(view_columns(TaskView::Risk).size() == 568);
  CHECK(view_columns(TaskView::Diagnosis).size() == 566);
  CHECK(view_columns(TaskView::Age).size() == 567);
  CHECK(reg.find_column(reg.columns()[100].name) == std::size_t{100});
}

TEST_CASE("identical records give identical rows") {
  auto a = synth::generate_record(quiet_spec("same")).record;
  auto b = a;
  b.record_id = "same2";
  const auto fa = extract_features(a), fb = extract_features(b);
  CHECK(fa.values == fb.values);
  CHECK(fa.missing == fb.missing);
}

TEST_CASE("impute and normalize") {
  FeatureMatrix m;
  m.columns = {0, 1, 2};
  m.record_ids = {"a", "b"};
  m.values = {14, 5, 0, 3, 5, 0};
  m.missing = {0, 0, 1, 0, 0, 0};
  m.stats = {{10.0, 2.0, 9.0, 2}, {5.0, 0.0, 5.0, 2}, {3.0, 2.0, 7.0, 1}};
  const auto d = impute_and_normalize(m);
  CHECK(d.at(0, 0) == doctest::Approx(2.0));
  CHECK(d.at(0, 1) == 0.0);
  CHECK(d.at(1, 1) == 0.0);
  CHECK(d.at(0, 2) == doctest::Approx((7.0 - 3.0) / 2.0));  // imputed with the median first
}

TEST_CASE("matrix statistics come from train rows only") {
  std::vector<FeatureVector> v(3);
  for (std::size_t i = 0; i < 3; ++i) {
    v[i].record_id = "r" + std::to_string(i);
    v[i].values.assign(kColumnCount, 0.0);
    v[i].missing.assign(kColumnCount, 0);
    v[i].values[0] = i == 2 ? 1000.0 : static_cast<double>(i);
  }
  const std::vector<std::string> train{"r0", "r1"};
  auto m = build_matrix(v, TaskView::Risk, train);
  CHECK(m.stats[0].mean == doctest::Approx(0.5));
  CHECK(m.stats[0].sd == doctest::Approx(0.5));
  const std::vector<std::string> all{"r0", "r1", "r2"};
  refit_stats(m, all);
  CHECK(m.stats[0].mean == doctest::Approx(1001.0 / 3.0));
  CHECK(m.train_ids == all);
}

TEST_CASE("feature matrix round trip") {
  std::vector<FeatureVector> v{extract_features(synth::generate_record(quiet_spec("x")).record)};
  const std::vector<std::string> train{"x"};
  const auto m = build_matrix(v, TaskView::Diagnosis, train);
  const auto dir = std::filesystem::temp_directory_path() / ("ecgfe_fm_" + std::to_string(::getpid()));
  write_feature_matrix(m, dir);
  const auto back = read_feature_matrix(dir);
  std::filesystem::remove_all(dir);
  // Values are stored as float32.
  REQUIRE(back.values.size() == m.values.size());
  for (std::size_t i = 0; i < m.values.size(); ++i)
    CHECK(back.values[i] == static_cast<double>(static_cast<float>(m.values[i])));
  CHECK(back.missing == m.missing);
  CHECK(back.columns == m.columns);
  CHECK(back.train_ids == m.train_ids);
}

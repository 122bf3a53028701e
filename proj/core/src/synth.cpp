#include "ecgfe/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "ecgfe/error.hpp"
#include "ecgfe/random.hpp"

namespace ecgfe::synth {

namespace {

using Vec3 = std::array<double, 3>;

// Lead axes: x lateral (left), y inferior, z anterior.
constexpr double kDeg = std::numbers::pi / 180.0;

std::array<Vec3, kLeadCount> lead_axes() {
  std::array<Vec3, kLeadCount> axes{};
  const double frontal[6] = {0.0, 60.0, 120.0, -150.0, -30.0, 90.0};
  for (std::size_t i = 0; i < 6; ++i)
    axes[i] = {std::cos(frontal[i] * kDeg), std::sin(frontal[i] * kDeg), 0.0};
  const double horizontal[6] = {115.0, 95.0, 75.0, 50.0, 25.0, 0.0};
  for (std::size_t i = 0; i < 6; ++i) {
    const double a = horizontal[i] * kDeg;
    axes[6 + i] = {std::cos(a), 0.15, std::sin(a)};
  }
  return axes;
}

std::array<double, kLeadCount> project(const Vec3& dipole) {
  static const auto axes = lead_axes();
  const double norm = std::sqrt(dipole[0] * dipole[0] + dipole[1] * dipole[1] + dipole[2] * dipole[2]);
  std::array<double, kLeadCount> w{};
  for (std::size_t l = 0; l < kLeadCount; ++l) {
    const auto& a = axes[l];
    const double an = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
    w[l] = (a[0] * dipole[0] + a[1] * dipole[1] + a[2] * dipole[2]) / (norm * an);
  }
  return w;
}

double bazett_qt_ms(double hr_bpm) { return 400.0 * std::sqrt(60.0 / hr_bpm); }

std::size_t count_true(const std::array<bool, kArrhythmiaCount>& a) {
  return static_cast<std::size_t>(std::count(a.begin(), a.end(), true));
}

} // namespace

double BeatTemplateParams::p_onset_ms() const {
  const auto& p = wave(Wave::P);
  return p.center_ms - 2.0 * p.width_ms;
}

void RhythmParams::validate() const {
  if (!(mean_hr_bpm >= 30.0 && mean_hr_bpm <= 220.0)) throw InvalidArgument("heart rate outside [30, 220] bpm");
  if (!(rr_sd_ms >= 0.0)) throw InvalidArgument("negative RR variability");
  if (rhythm == Rhythm::AfLike && rr_sd_ms < 150.0)
    throw InvalidArgument("AF-like rhythm requires RR SD >= 150 ms");
}

void GenSpec::validate() const {
  auto has = [&](Arrhythmia a) { return arrhythmia[index_of(a)]; };
  if (has(Arrhythmia::SB) && has(Arrhythmia::ST)) throw InvalidArgument("contradictory spec: SB and ST");
  if (has(Arrhythmia::RBBB) && has(Arrhythmia::LBBB)) throw InvalidArgument("contradictory spec: RBBB and LBBB");
  if (has(Arrhythmia::AF) && (has(Arrhythmia::SB) || has(Arrhythmia::ST) || has(Arrhythmia::AVB1)))
    throw InvalidArgument("contradictory spec: AF with a sinus-rhythm or PR label");
  if (task != Task::Diagnosis && count_true(arrhythmia) > 0)
    throw InvalidArgument("arrhythmia labels only apply to the diagnosis task");
  if (future_af && task != Task::Risk) throw InvalidArgument("future_af only applies to the risk task");
  if (!(duration_s >= 7.0 && duration_s <= 10.0)) throw InvalidArgument("duration outside [7, 10] s");
  if (!(noise_sd_mv >= 0.0) || !(baseline_wander_mv >= 0.0)) throw InvalidArgument("negative noise level");
  if (!(age_years >= 16.0 && age_years <= 85.0)) throw InvalidArgument("age outside [16, 85]");
  if (heart_rate_bpm) {
    const double hr = *heart_rate_bpm;
    if (has(Arrhythmia::SB) && hr >= 50.0) throw InvalidArgument("contradictory spec: SB with HR >= 50");
    if (has(Arrhythmia::ST) && hr <= 100.0) throw InvalidArgument("contradictory spec: ST with HR <= 100");
    if (!has(Arrhythmia::SB) && !has(Arrhythmia::ST) && task == Task::Diagnosis && (hr < 50.0 || hr > 100.0))
      throw InvalidArgument("contradictory spec: HR outside [50, 100] without SB/ST");
  }
  if (pr_interval_ms) {
    if (has(Arrhythmia::AVB1) != (*pr_interval_ms >= 220.0))
      throw InvalidArgument("contradictory spec: PR override disagrees with 1dAVb label");
  }
}

GeneratedRecord generate_record(const GenSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  auto has = [&](Arrhythmia a) { return spec.arrhythmia[index_of(a)]; };
  const bool af = has(Arrhythmia::AF);

  RhythmParams rhythm;
  rhythm.rhythm = af ? Rhythm::AfLike : Rhythm::Sinus;
  if (spec.task == Task::Age) {
    rhythm.mean_hr_bpm = 75.0 - 0.15 * (spec.age_years - 40.0) + rng.normal(0.0, 1.5);
  } else if (has(Arrhythmia::SB)) {
    rhythm.mean_hr_bpm = rng.uniform(38.0, 48.0);
  } else if (has(Arrhythmia::ST)) {
    rhythm.mean_hr_bpm = rng.uniform(108.0, 150.0);
  } else if (af) {
    rhythm.mean_hr_bpm = rng.uniform(65.0, 95.0);
  } else {
    rhythm.mean_hr_bpm = rng.uniform(58.0, 95.0);
  }
  if (af) {
    rhythm.rr_sd_ms = rng.uniform(160.0, 220.0);
  } else if (spec.future_af) {
    rhythm.rr_sd_ms = rng.uniform(30.0, 80.0);
  } else {
    rhythm.rr_sd_ms = rng.uniform(12.0, 45.0);
  }
  if (spec.heart_rate_bpm) rhythm.mean_hr_bpm = *spec.heart_rate_bpm;
  if (spec.rr_sd_ms) rhythm.rr_sd_ms = *spec.rr_sd_ms;
  rhythm.validate();

  BeatTemplateParams beat;
  beat.qrs_base_width_ms = spec.qrs_base_width_ms ? *spec.qrs_base_width_ms : rng.uniform(80.0, 100.0);
  if (has(Arrhythmia::RBBB)) {
    beat.conduction = Conduction::RightBundleBlock;
    beat.qrs_width_scale = rng.uniform(1.5, 1.7);
  } else if (has(Arrhythmia::LBBB)) {
    beat.conduction = Conduction::LeftBundleBlock;
    beat.qrs_width_scale = rng.uniform(1.5, 1.7);
  }
  if (spec.pr_interval_ms) {
    beat.pr_interval_ms = *spec.pr_interval_ms;
  } else if (has(Arrhythmia::AVB1)) {
    beat.pr_interval_ms = rng.uniform(230.0, 300.0);
  } else if (has(Arrhythmia::ST)) {
    beat.pr_interval_ms = rng.uniform(120.0, 160.0);
  } else {
    beat.pr_interval_ms = rng.uniform(130.0, 190.0);
  }

  const double width = beat.qrs_width_ms();
  const double qrs_on = beat.qrs_onset_ms();
  const double sigma = width / 10.0;
  const double r_amp = rng.uniform(1.0, 1.4);

  auto& p = beat.wave(Wave::P);
  p.width_ms = spec.future_af ? rng.uniform(15.0, 20.0) : rng.uniform(18.0, 23.0);
  p.amplitude_mv = af ? 0.0 : rng.uniform(0.12, 0.18);
  p.center_ms = qrs_on - beat.pr_interval_ms + 2.0 * p.width_ms;
  p.projection = project({0.5, 0.85, 0.2});

  auto& q = beat.wave(Wave::Q);
  q.amplitude_mv = 0.12 * r_amp;
  q.width_ms = sigma;
  q.center_ms = qrs_on + 2.0 * sigma;
  q.projection = project({-0.6, -0.2, 0.5});

  auto& r = beat.wave(Wave::R);
  r.amplitude_mv = r_amp;
  r.width_ms = sigma;
  r.center_ms = 0.0;
  r.projection = project({0.6, 0.6, -0.5});

  auto& s = beat.wave(Wave::S);
  s.amplitude_mv = 0.35 * r_amp;
  s.width_ms = sigma;
  s.center_ms = -qrs_on - 2.0 * sigma;
  s.projection = project({-0.3, -0.3, -0.8});

  if (beat.conduction == Conduction::RightBundleBlock) {
    // Late rightward-anterior forces: R' in V1, broad S in I and V6.
    s.amplitude_mv = 0.6 * r_amp;
    s.width_ms = 1.6 * sigma;
    s.center_ms = -qrs_on - 2.0 * s.width_ms;
    s.projection = project({-0.7, 0.0, 0.7});
  } else if (beat.conduction == Conduction::LeftBundleBlock) {
    // Septal forces reversed, broad leftward-posterior R: QS in V1, broad R in I/V6.
    q.amplitude_mv = 0.0;
    r.width_ms = 2.0 * sigma;
    r.projection = project({0.8, 0.2, -0.6});
    s.amplitude_mv = 0.15 * r_amp;
  }

  auto& t = beat.wave(Wave::T);
  if (spec.task == Task::Age) {
    t.amplitude_mv = 0.3 * (1.0 - 0.005 * (spec.age_years - 40.0) + rng.normal(0.0, 0.04));
  } else {
    t.amplitude_mv = rng.uniform(0.22, 0.38);
  }
  t.width_ms = rng.uniform(35.0, 45.0);
  const double qt = std::clamp(bazett_qt_ms(rhythm.mean_hr_bpm), 250.0, 480.0);
  t.center_ms = qrs_on + qt - 2.0 * t.width_ms;
  t.projection = project({0.6, 0.7, 0.2});
  if (beat.conduction != Conduction::Normal) {
    // Secondary repolarisation changes: T discordant to the terminal QRS forces.
    for (double& w : t.projection) w = -0.6 * w;
  }

  // Beat times on the sample grid.
  const double fs = kTargetRateHz;
  const auto n = static_cast<std::size_t>(std::llround(spec.duration_s * fs));
  const double mean_rr = 60.0 / rhythm.mean_hr_bpm;
  const double rr_sd = rhythm.rr_sd_ms / 1000.0;
  std::vector<std::int64_t> beats;
  double innovation = 0.0;
  auto next_rr = [&]() {
    if (rr_sd == 0.0) return mean_rr;
    double rr = mean_rr;
    for (int attempt = 0; attempt < 32; ++attempt) {
      if (rhythm.rhythm == Rhythm::Sinus) {
        innovation = 0.5 * innovation + std::sqrt(0.75) * rng.normal();
        rr = mean_rr + rr_sd * innovation;
      } else {
        rr = mean_rr + rr_sd * rng.normal();
      }
      if (rr >= 0.33 && rr <= 2.0) return rr;
    }
    return std::clamp(rr, 0.33, 2.0);
  };
  double tb = rng.uniform(0.05, 0.05 + mean_rr) - mean_rr;
  while (tb < spec.duration_s + 1.0) {
    beats.push_back(static_cast<std::int64_t>(std::llround(tb * fs)));
    tb = static_cast<double>(beats.back()) / fs + next_rr();
  }

  EcgRecord rec;
  rec.record_id = spec.record_id.empty() ? "syn_" + std::to_string(spec.seed) : spec.record_id;
  rec.spec = SignalSpec{fs, kLeadCount, n};
  std::vector<double> acc(kLeadCount * n, 0.0);
  for (std::int64_t b : beats) {
    for (const auto& w : beat.waves) {
      if (w.amplitude_mv == 0.0) continue;
      const double c = w.center_ms * fs / 1000.0;
      const double sd = w.width_ms * fs / 1000.0;
      const auto lo = std::max<std::int64_t>(0, b + static_cast<std::int64_t>(std::floor(c - 5.0 * sd)));
      const auto hi = std::min<std::int64_t>(static_cast<std::int64_t>(n) - 1,
                                             b + static_cast<std::int64_t>(std::ceil(c + 5.0 * sd)));
      for (std::int64_t i = lo; i <= hi; ++i) {
        const double x = (static_cast<double>(i - b) - c) / sd;
        const double g = w.amplitude_mv * std::exp(-0.5 * x * x);
        for (std::size_t l = 0; l < kLeadCount; ++l) acc[l * n + static_cast<std::size_t>(i)] += g * w.projection[l];
      }
    }
  }
  if (spec.noise_sd_mv > 0.0 || spec.baseline_wander_mv > 0.0) {
    for (std::size_t l = 0; l < kLeadCount; ++l) {
      const double f = rng.uniform(0.15, 0.35);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      for (std::size_t i = 0; i < n; ++i) {
        double v = spec.baseline_wander_mv * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(i) / fs + phase);
        if (spec.noise_sd_mv > 0.0) v += rng.normal(0.0, spec.noise_sd_mv);
        acc[l * n + i] += v;
      }
    }
  }
  rec.samples.assign(acc.begin(), acc.end());

  GroundTruth truth;
  truth.record_id = rec.record_id;
  truth.task = spec.task;
  truth.beat = beat;
  truth.rhythm = rhythm;
  truth.age_years = spec.age_years;
  truth.future_af = spec.future_af;
  truth.noise_sd_mv = spec.noise_sd_mv;
  truth.fs = fs;
  for (std::int64_t b : beats)
    if (b >= 0 && b < static_cast<std::int64_t>(n)) truth.r_peaks.push_back(static_cast<std::size_t>(b));

  rec.labels = derive_labels(truth);
  rec.meta.values[MetaFields::kAgeSlot] = spec.age_years;
  rec.meta.values[MetaFields::kSexSlot] = rng.bernoulli(0.5) ? 1.0 : 0.0;
  for (std::size_t i = 2; i < MetaFields::kSlotCount; ++i)
    rec.meta.values[i] = rng.bernoulli(0.05 + 0.02 * static_cast<double>(i)) ? 1.0 : 0.0;
  return {std::move(rec), std::move(truth)};
}

TaskLabels derive_labels(const GroundTruth& truth) {
  TaskLabels labels;
  switch (truth.task) {
  case Task::Diagnosis: {
    std::array<bool, kArrhythmiaCount> a{};
    const bool af = truth.rhythm.rhythm == Rhythm::AfLike;
    a[index_of(Arrhythmia::AVB1)] = !af && truth.beat.pr_interval_ms >= 220.0;
    a[index_of(Arrhythmia::RBBB)] =
        truth.beat.conduction == Conduction::RightBundleBlock && truth.beat.qrs_width_scale >= 1.5;
    a[index_of(Arrhythmia::LBBB)] =
        truth.beat.conduction == Conduction::LeftBundleBlock && truth.beat.qrs_width_scale >= 1.5;
    a[index_of(Arrhythmia::SB)] = !af && truth.rhythm.mean_hr_bpm < 50.0;
    a[index_of(Arrhythmia::AF)] = af;
    a[index_of(Arrhythmia::ST)] = !af && truth.rhythm.mean_hr_bpm > 100.0;
    labels.arrhythmia = a;
    break;
  }
  case Task::Risk: labels.af_risk = truth.future_af; break;
  case Task::Age: labels.age_years = truth.age_years; break;
  }
  return labels;
}

nlohmann::json truth_to_json(const GroundTruth& truth) {
  nlohmann::json waves = nlohmann::json::array();
  const char* names[kWaveCount] = {"P", "Q", "R", "S", "T"};
  for (std::size_t i = 0; i < kWaveCount; ++i) {
    const auto& w = truth.beat.waves[i];
    waves.push_back({{"wave", names[i]},
                     {"amplitude_mv", w.amplitude_mv},
                     {"center_ms", w.center_ms},
                     {"width_ms", w.width_ms},
                     {"projection", w.projection}});
  }
  const char* conduction[] = {"normal", "rbbb", "lbbb"};
  return {{"id", truth.record_id},
          {"task", to_string(truth.task)},
          {"waves", waves},
          {"pr_interval_ms", truth.beat.pr_interval_ms},
          {"qrs_width_ms", truth.beat.qrs_width_ms()},
          {"qrs_width_scale", truth.beat.qrs_width_scale},
          {"conduction", conduction[static_cast<int>(truth.beat.conduction)]},
          {"mean_hr_bpm", truth.rhythm.mean_hr_bpm},
          {"rr_sd_ms", truth.rhythm.rr_sd_ms},
          {"rhythm", truth.rhythm.rhythm == Rhythm::AfLike ? "af_like" : "sinus"},
          {"age_years", truth.age_years},
          {"future_af", truth.future_af},
          {"noise_sd_mv", truth.noise_sd_mv},
          {"fs", truth.fs},
          {"r_peaks", truth.r_peaks}};
}

std::vector<GenSpec> plan_dataset(const DatasetSpec& spec) {
  Rng rng(derive_seed(spec.seed, 0xda7a));
  std::vector<GenSpec> plan;
  auto make = [&](std::size_t i) {
    GenSpec g;
    g.task = spec.task;
    g.noise_sd_mv = spec.noise_sd_mv;
    g.duration_s = rng.uniform(spec.min_duration_s, spec.max_duration_s);
    g.seed = derive_seed(spec.seed, i + 1);
    char id[32];
    std::snprintf(id, sizeof id, "_%06zu", i);
    g.record_id = spec.id_prefix + id;
    g.age_years = rng.uniform(spec.age_min, spec.age_max);
    return g;
  };
  switch (spec.task) {
  case Task::Diagnosis: {
    if (spec.n_per_class == 0) throw InvalidArgument("n_per_class must be >= 1");
    std::size_t i = 0;
    for (std::size_t cls = 0; cls <= kArrhythmiaCount; ++cls) {
      for (std::size_t k = 0; k < spec.n_per_class; ++k) {
        GenSpec g = make(i++);
        if (cls > 0) g.arrhythmia[cls - 1] = true;
        plan.push_back(std::move(g));
      }
    }
    break;
  }
  case Task::Risk: {
    if (spec.n_total == 0) throw InvalidArgument("n_total must be >= 1");
    const auto n_pos = static_cast<std::size_t>(std::llround(static_cast<double>(spec.n_total) * spec.positive_fraction));
    std::vector<char> flags(spec.n_total, 0);
    std::fill_n(flags.begin(), std::min(n_pos, spec.n_total), 1);
    rng.shuffle(std::span<char>(flags));
    for (std::size_t i = 0; i < spec.n_total; ++i) {
      GenSpec g = make(i);
      g.future_af = flags[i] != 0;
      plan.push_back(std::move(g));
    }
    break;
  }
  case Task::Age: {
    if (spec.n_total == 0) throw InvalidArgument("n_total must be >= 1");
    for (std::size_t i = 0; i < spec.n_total; ++i) plan.push_back(make(i));
    break;
  }
  }
  return plan;
}

GeneratedDataset generate_dataset(const DatasetSpec& spec) {
  GeneratedDataset ds;
  for (const GenSpec& g : plan_dataset(spec)) {
    auto gen = generate_record(g);
    ds.records.push_back(std::move(gen.record));
    ds.truths.push_back(std::move(gen.truth));
  }
  return ds;
}

std::filesystem::path write_generated(const GeneratedDataset& ds, const std::filesystem::path& dir) {
  const auto manifest = write_dataset(ds.records, dir);
  std::ofstream out(dir / "ground_truth.jsonl", std::ios::trunc);
  if (!out) throw Error("cannot write ground truth sidecar in " + dir.string());
  for (const auto& t : ds.truths) out << truth_to_json(t).dump() << '\n';
  return manifest;
}

std::filesystem::path generate_to(const DatasetSpec& spec, const std::filesystem::path& dir) {
  DatasetWriter writer(dir);
  std::ofstream truth(dir / "ground_truth.jsonl", std::ios::trunc);
  if (!truth) throw Error("cannot write ground truth sidecar in " + dir.string());
  for (const GenSpec& g : plan_dataset(spec)) {
    const auto gen = generate_record(g);
    writer.add(gen.record);
    truth << truth_to_json(gen.truth).dump() << '\n';
  }
  return writer.finish();
}

} // namespace ecgfe::synth

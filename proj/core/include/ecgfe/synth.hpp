#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgfe/data.hpp"

namespace ecgfe::synth {

enum class Wave : std::uint8_t { P = 0, Q, R, S, T };
inline constexpr std::size_t kWaveCount = 5;

struct WaveParams {
  double amplitude_mv = 0.0;
  /// Center relative to the R peak.
  double center_ms = 0.0;
  /// Gaussian standard deviation.
  double width_ms = 1.0;
  std::array<double, kLeadCount> projection{};
};

enum class Conduction : std::uint8_t { Normal, RightBundleBlock, LeftBundleBlock };

struct BeatTemplateParams {
  std::array<WaveParams, kWaveCount> waves{};
  double pr_interval_ms = 160.0;
  /// QRS duration before scaling; the realised duration is base * scale.
  double qrs_base_width_ms = 90.0;
  double qrs_width_scale = 1.0;
  Conduction conduction = Conduction::Normal;

  const WaveParams& wave(Wave w) const { return waves[static_cast<std::size_t>(w)]; }
  WaveParams& wave(Wave w) { return waves[static_cast<std::size_t>(w)]; }
  double qrs_width_ms() const { return qrs_base_width_ms * qrs_width_scale; }
  /// Onset of the P wave relative to the R peak (center - 2 sd).
  double p_onset_ms() const;
  /// QRS onset relative to the R peak (-width / 2).
  double qrs_onset_ms() const { return -0.5 * qrs_width_ms(); }
};

enum class Rhythm : std::uint8_t { Sinus, AfLike };

struct RhythmParams {
  double mean_hr_bpm = 70.0;
  double rr_sd_ms = 30.0;
  Rhythm rhythm = Rhythm::Sinus;

  void validate() const;
};

/// Full description of one synthetic record.
struct GenSpec {
  Task task = Task::Diagnosis;
  /// Diagnosis task: planted arrhythmias; all false is normal sinus rhythm.
  std::array<bool, kArrhythmiaCount> arrhythmia{};
  /// Risk task: true plants the latent future-AF signature.
  bool future_af = false;
  /// Age task (and META age slot for every task).
  double age_years = 40.0;
  double noise_sd_mv = 0.015;
  double baseline_wander_mv = 0.05;
  double duration_s = 10.0;
  std::uint64_t seed = 0;
  std::string record_id;

  std::optional<double> heart_rate_bpm;
  std::optional<double> rr_sd_ms;
  std::optional<double> pr_interval_ms;
  std::optional<double> qrs_base_width_ms;

  void validate() const;
};

struct GroundTruth {
  std::string record_id;
  Task task = Task::Diagnosis;
  BeatTemplateParams beat;
  RhythmParams rhythm;
  double age_years = 40.0;
  bool future_af = false;
  double noise_sd_mv = 0.0;
  double fs = kTargetRateHz;
  /// R-peak sample indices of every beat whose R falls inside the record.
  std::vector<std::size_t> r_peaks;
};

struct GeneratedRecord {
  EcgRecord record;
  GroundTruth truth;
};

GeneratedRecord generate_record(const GenSpec& spec);

/// Labels implied by the generating parameters; equals the emitted labels.
TaskLabels derive_labels(const GroundTruth& truth);

nlohmann::json truth_to_json(const GroundTruth& truth);

struct DatasetSpec {
  Task task = Task::Diagnosis;
  /// Diagnosis: records per arrhythmia class and for normal sinus rhythm.
  std::size_t n_per_class = 10;
  /// Risk and age: total record count.
  std::size_t n_total = 100;
  /// Risk: fraction of future-AF records (rounded to an exact count).
  double positive_fraction = 0.05;
  double age_min = 16.0;
  double age_max = 85.0;
  double noise_sd_mv = 0.015;
  double min_duration_s = 7.0;
  double max_duration_s = 10.0;
  std::uint64_t seed = 0;
  std::string id_prefix = "syn";
};

/// Deterministic per-record specs; generate lazily with generate_record.
std::vector<GenSpec> plan_dataset(const DatasetSpec& spec);

struct GeneratedDataset {
  std::vector<EcgRecord> records;
  std::vector<GroundTruth> truths;
};

GeneratedDataset generate_dataset(const DatasetSpec& spec);

/// Generates and writes record by record, so memory stays flat; same files as
/// write_generated(generate_dataset(spec), dir). Returns the manifest path.
std::filesystem::path generate_to(const DatasetSpec& spec, const std::filesystem::path& dir);

/// Writes the dataset plus a ground_truth.jsonl sidecar; returns the manifest path.
std::filesystem::path write_generated(const GeneratedDataset& ds, const std::filesystem::path& dir);

} // namespace ecgfe::synth

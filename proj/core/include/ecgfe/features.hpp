#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgfe/data.hpp"
#include "ecgfe/dsp.hpp"

namespace ecgfe::features {

enum class Scope : std::uint8_t { PerLead, Global };
enum class Group : std::uint8_t { HRV, EPPSM, SQI, MOR, META };

std::string_view to_string(Group group);

struct FeatureDef {
  std::uint32_t id = 0;
  std::string name;
  std::string unit;
  Scope scope = Scope::PerLead;
  Group group = Group::HRV;
  std::string description;
};

struct Column {
  std::uint32_t feature_id = 0;
  std::optional<std::size_t> lead;
  std::string name;
};

inline constexpr std::size_t kHrvCount = 23;
inline constexpr std::size_t kMorCount = 22;
inline constexpr std::size_t kPerLeadCount = kHrvCount + 1 + kMorCount;
inline constexpr std::size_t kColumnCount = kPerLeadCount * kLeadCount + MetaFields::kSlotCount;

/// Canonical feature catalogue. Per-lead entries expand lead-major: all 46
/// features of lead I, then lead II, ..., followed by the 16 META columns.
class FeatureRegistry {
public:
  static const FeatureRegistry& canonical();

  std::string_view version() const { return version_; }
  std::span<const FeatureDef> entries() const { return entries_; }
  std::span<const Column> columns() const { return columns_; }
  std::size_t column_count() const { return columns_.size(); }
  std::optional<std::size_t> find_column(std::string_view name) const;
  /// Column index of per-lead feature `local` (0..45) in lead `lead`.
  static std::size_t per_lead_column(std::size_t lead, std::size_t local) { return lead * kPerLeadCount + local; }
  static std::size_t meta_column(std::size_t slot) { return kLeadCount * kPerLeadCount + slot; }

  nlohmann::json to_json() const;

private:
  FeatureRegistry();

  std::string version_;
  std::vector<FeatureDef> entries_;
  std::vector<Column> columns_;
};

using MaybeValue = std::optional<double>;

/// HRV block order: avnn, sdnn, rmssd, pnn50, sem, cv_rr, rr_min, rr_max,
/// rr_median, hr_mean, lf_power, hf_power, lf_hf, total_power, lf_norm,
/// hf_norm, sd1, sd2, sd1_sd2, sampen, eppsm_upper, eppsm_lower, eppsm_ratio.
std::array<MaybeValue, kHrvCount> compute_hrv(const dsp::BeatAnnotations& ann);
std::array<MaybeValue, kHrvCount> compute_hrv(std::span<const double> rr_ms);

/// Local HRV feature indices used by tests and downstream code.
namespace hrv {
inline constexpr std::size_t kAvnn = 0, kSdnn = 1, kRmssd = 2, kPnn50 = 3, kSem = 4, kCvRr = 5, kRrMin = 6,
                             kRrMax = 7, kRrMedian = 8, kHrMean = 9, kLf = 10, kHf = 11, kLfHf = 12, kTotal = 13,
                             kLfNorm = 14, kHfNorm = 15, kSd1 = 16, kSd2 = 17, kSd1Sd2 = 18, kSampEn = 19,
                             kEppsmUpper = 20, kEppsmLower = 21, kEppsmRatio = 22;
}

namespace mor {
inline constexpr std::size_t kQrsDuration = 0, kQt = 1, kQtc = 2, kPr = 3, kPDuration = 4, kPAmp = 5, kQAmp = 6,
                             kRAmp = 7, kSAmp = 8, kTAmp = 9, kStLevel = 10, kStSlope = 11, kTDuration = 12,
                             kTpe = 13, kQrsArea = 14, kQrsAbsArea = 15, kQrsEnergy = 16, kRsRatio = 17,
                             kTArea = 18, kPArea = 19, kVat = 20, kPeakToPeak = 21;
}

/// Median-beat template around detected R peaks, baseline corrected.
struct BeatTemplate {
  std::vector<double> samples;
  /// Index of the R peak within samples.
  std::size_t r_index = 0;
  double fs = 0.0;
  std::size_t beats_used = 0;
};

std::optional<BeatTemplate> median_beat(std::span<const double> signal, std::span<const std::size_t> r_peaks, double fs);

std::array<MaybeValue, kMorCount> compute_morphology(std::span<const double> signal, const dsp::BeatAnnotations& ann,
                                                     double fs);

struct FeatureVector {
  std::string record_id;
  std::vector<double> values;
  std::vector<std::uint8_t> missing;

  bool is_missing(std::size_t c) const { return missing[c] != 0; }
};

/// Per-lead preprocessing and features for one record (full registry width).
FeatureVector extract_features(const EcgRecord& record);

enum class TaskView : std::uint8_t { Diagnosis, Risk, Age };

TaskView view_for(Task task);
std::string_view to_string(TaskView view);
TaskView parse_view(std::string_view name);

/// Registry columns kept by a view: diagnosis drops age and sex, age drops age.
std::vector<std::size_t> view_columns(TaskView view);

struct ColumnStats {
  double mean = 0.0;
  double sd = 0.0;
  double median = 0.0;
  std::size_t observed = 0;
};

struct FeatureMatrix {
  TaskView view = TaskView::Risk;
  /// Registry column index of each matrix column.
  std::vector<std::size_t> columns;
  std::vector<std::string> record_ids;
  /// Row-major; missing cells hold 0 and are flagged in `missing`.
  std::vector<double> values;
  std::vector<std::uint8_t> missing;
  std::vector<ColumnStats> stats;
  std::vector<std::string> train_ids;
  /// Records whose every column is missing (kept, imputed downstream).
  std::vector<std::string> flagged;

  std::size_t rows() const { return record_ids.size(); }
  std::size_t cols() const { return columns.size(); }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
  bool is_missing(std::size_t r, std::size_t c) const { return missing[r * cols() + c] != 0; }
  std::optional<std::size_t> row_of(std::string_view record_id) const;
  std::vector<std::string> column_names() const;
};

/// Builds a matrix from already extracted vectors; statistics use train_ids only.
FeatureMatrix build_matrix(std::span<const FeatureVector> vectors, TaskView view,
                           std::span<const std::string> train_ids);

/// Replaces the train ids and recomputes the per-column statistics from them.
void refit_stats(FeatureMatrix& matrix, std::span<const std::string> train_ids);

/// Extracts features of every record in the split (parallel across records).
FeatureMatrix assemble_matrix(const Dataset& dataset, const DatasetSplit& split, TaskView view);

/// Rectangular, imputed and z-scored design matrix.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  std::vector<std::string> record_ids;
  std::vector<std::size_t> columns;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
  /// Copy restricted to the given rows and matrix-local column positions.
  DenseMatrix subset(std::span<const std::size_t> row_idx, std::span<const std::size_t> col_pos) const;
  std::optional<std::size_t> row_of(std::string_view record_id) const;
};

/// Missing -> train median, then (v - train mean) / train SD; SD == 0 maps to 0.
DenseMatrix impute_and_normalize(const FeatureMatrix& matrix);

void write_feature_matrix(const FeatureMatrix& matrix, const std::filesystem::path& dir);
FeatureMatrix read_feature_matrix(const std::filesystem::path& dir);

} // namespace ecgfe::features

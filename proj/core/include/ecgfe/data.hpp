#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

namespace ecgfe {

inline constexpr std::size_t kLeadCount = 12;
inline constexpr double kTargetRateHz = 400.0;
inline constexpr std::size_t kMinProcessedSamples = 2800;
inline constexpr std::size_t kMaxProcessedSamples = 4000;

inline constexpr std::array<std::string_view, kLeadCount> kLeadNames{
    "I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"};

inline constexpr std::size_t kArrhythmiaCount = 6;
inline constexpr std::array<std::string_view, kArrhythmiaCount> kArrhythmiaNames{
    "1dAVb", "RBBB", "LBBB", "SB", "AF", "ST"};

enum class Arrhythmia : std::uint8_t { AVB1 = 0, RBBB, LBBB, SB, AF, ST };

constexpr std::size_t index_of(Arrhythmia a) { return static_cast<std::size_t>(a); }

enum class Task : std::uint8_t { Diagnosis, Risk, Age };

std::string_view to_string(Task task);
Task parse_task(std::string_view name);

struct SignalSpec {
  double sampling_rate_hz = kTargetRateHz;
  std::size_t n_leads = kLeadCount;
  std::size_t n_samples = 0;

  /// Throws FormatError unless n_leads == 12, the rate is positive and samples exist.
  void validate() const;
  /// 400 Hz and 7-10 s long.
  bool is_processed() const;
};

struct TaskLabels {
  std::optional<std::array<bool, kArrhythmiaCount>> arrhythmia;
  /// true = future AF (C2), false = non-AF (C1).
  std::optional<bool> af_risk;
  std::optional<double> age_years;

  void validate() const;
  bool has(Arrhythmia a) const { return arrhythmia && (*arrhythmia)[index_of(a)]; }
  friend bool operator==(const TaskLabels&, const TaskLabels&) = default;
};

/// Sixteen self-reported clinical slots: age, sex, meta_01 ... meta_14.
struct MetaFields {
  static constexpr std::size_t kSlotCount = 16;
  static constexpr std::size_t kAgeSlot = 0;
  static constexpr std::size_t kSexSlot = 1;

  std::array<std::optional<double>, kSlotCount> values{};

  static const std::array<std::string, kSlotCount>& slot_names();
  friend bool operator==(const MetaFields&, const MetaFields&) = default;
};

struct EcgRecord {
  std::string record_id;
  SignalSpec spec;
  /// Planar millivolt samples: lead 0 fully, then lead 1, ...
  std::vector<float> samples;
  TaskLabels labels;
  MetaFields meta;

  std::span<const float> lead(std::size_t index) const;
  std::span<float> lead(std::size_t index);
  void validate() const;
};

/// Raw contents of a planar float32 container file.
struct PlanarBlock {
  std::uint32_t n_blocks = 0;
  std::uint32_t block_length = 0;
  float rate = 0.0f;
  std::vector<float> data;
};

inline constexpr std::size_t kPlanarHeaderBytes = 16;

/// Writes the "ECG1" container: magic, u32 block count, u32 block length, f32 rate,
/// then planar little-endian float32 payload.
void write_planar_file(const std::filesystem::path& path, const PlanarBlock& block);
PlanarBlock read_planar_file(const std::filesystem::path& path);
/// Reads the 16-byte header only; data stays empty.
PlanarBlock read_planar_header(const std::filesystem::path& path);

void write_signal_file(const std::filesystem::path& path, const EcgRecord& record);

/// Manifest-level view of a record; samples are loaded on demand.
struct RecordHeader {
  std::string record_id;
  std::filesystem::path signal_path;
  SignalSpec spec;
  TaskLabels labels;
  MetaFields meta;
};

nlohmann::json labels_to_json(const TaskLabels& labels);
TaskLabels labels_from_json(const nlohmann::json& j);
nlohmann::json meta_to_json(const MetaFields& meta);
MetaFields meta_from_json(const nlohmann::json& j);

/// A lazily loaded collection of records, either backed by a manifest on disk or
/// held in memory. Read-only access is safe from several threads.
class Dataset {
public:
  Dataset() = default;

  static Dataset in_memory(std::vector<EcgRecord> records);

  std::size_t size() const { return headers_.size(); }
  bool empty() const { return headers_.empty(); }
  const RecordHeader& header(std::size_t i) const { return headers_.at(i); }
  std::span<const RecordHeader> headers() const { return headers_; }

  /// Loads (or copies) record i including samples.
  EcgRecord record(std::size_t i) const;
  std::optional<std::size_t> find(std::string_view record_id) const;

private:
  friend Dataset read_dataset(const std::filesystem::path& manifest_path);

  void add_header(RecordHeader header);

  std::vector<RecordHeader> headers_;
  std::vector<EcgRecord> resident_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline constexpr std::string_view kManifestFormat = "ecg-manifest";
inline constexpr int kManifestVersion = 1;
inline constexpr std::string_view kManifestFileName = "manifest.jsonl";

Dataset read_dataset(const std::filesystem::path& manifest_path);

/// Appends records one at a time: signals/<id>.ecg plus a manifest line each.
class DatasetWriter {
public:
  explicit DatasetWriter(const std::filesystem::path& dir);
  void add(const EcgRecord& record);
  /// Flushes the manifest and returns its path.
  std::filesystem::path finish();
  std::size_t size() const { return seen_.size(); }

private:
  std::filesystem::path dir_;
  std::ofstream out_;
  std::unordered_set<std::string> seen_;
};

/// Writes signals/<id>.ecg for every record and a manifest.jsonl in dir.
std::filesystem::path write_dataset(std::span<const EcgRecord> records,
                                    const std::filesystem::path& dir);

enum class StratifyKey : std::uint8_t { None, Arrhythmia, AfRisk };

std::string_view to_string(StratifyKey key);
StratifyKey parse_stratify_key(std::string_view name);

struct SplitPolicy {
  double train = 0.8;
  double validation = 0.0;
  double test = 0.2;
  StratifyKey stratify = StratifyKey::None;
};

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
  SplitPolicy policy;
  std::uint64_t seed = 0;

  friend bool operator==(const DatasetSplit& a, const DatasetSplit& b) {
    return a.train == b.train && a.validation == b.validation && a.test == b.test &&
           a.seed == b.seed;
  }
};

DatasetSplit make_split(std::span<const std::string> record_ids,
                        std::span<const TaskLabels> labels, const SplitPolicy& policy,
                        std::uint64_t seed);
DatasetSplit make_split(const Dataset& dataset, const SplitPolicy& policy, std::uint64_t seed);

nlohmann::json split_to_json(const DatasetSplit& split);
DatasetSplit split_from_json(const nlohmann::json& j);

} // namespace ecgfe

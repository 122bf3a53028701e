#include "ecgfe/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "ecgfe/error.hpp"
#include "ecgfe/random.hpp"

namespace ecgfe {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Task task) {
  switch (task) {
  case Task::Diagnosis: return "diagnosis";
  case Task::Risk: return "risk";
  case Task::Age: return "age";
  }
  return "?";
}

Task parse_task(std::string_view name) {
  if (name == "diagnosis") return Task::Diagnosis;
  if (name == "risk") return Task::Risk;
  if (name == "age") return Task::Age;
  throw InvalidArgument("unknown task '" + std::string(name) + "'");
}

void SignalSpec::validate() const {
  if (n_leads != kLeadCount)
    throw FormatError("expected 12 leads, got " + std::to_string(n_leads));
  if (!(sampling_rate_hz > 0.0) || !std::isfinite(sampling_rate_hz))
    throw FormatError("sampling rate must be positive");
  if (n_samples == 0) throw FormatError("record has no samples");
}

bool SignalSpec::is_processed() const {
  return n_leads == kLeadCount && sampling_rate_hz == kTargetRateHz &&
         n_samples >= kMinProcessedSamples && n_samples <= kMaxProcessedSamples;
}

void TaskLabels::validate() const {
  if (!arrhythmia && !af_risk && !age_years)
    throw FormatError("record carries no task label");
  if (age_years && !(*age_years >= 16.0 && *age_years <= 85.0))
    throw FormatError("age label outside [16, 85]");
}

const std::array<std::string, MetaFields::kSlotCount>& MetaFields::slot_names() {
  static const std::array<std::string, kSlotCount> names = [] {
    std::array<std::string, kSlotCount> n;
    n[kAgeSlot] = "age";
    n[kSexSlot] = "sex";
    for (std::size_t i = 2; i < kSlotCount; ++i) {
      const std::size_t k = i - 1;
      n[i] = std::string("meta_") + (k < 10 ? "0" : "") + std::to_string(k);
    }
    return n;
  }();
  return names;
}

std::span<const float> EcgRecord::lead(std::size_t index) const {
  if (index >= spec.n_leads) throw InvalidArgument("lead index out of range");
  return std::span<const float>(samples).subspan(index * spec.n_samples, spec.n_samples);
}

std::span<float> EcgRecord::lead(std::size_t index) {
  if (index >= spec.n_leads) throw InvalidArgument("lead index out of range");
  return std::span<float>(samples).subspan(index * spec.n_samples, spec.n_samples);
}

void EcgRecord::validate() const {
  spec.validate();
  if (samples.size() != spec.n_leads * spec.n_samples)
    throw FormatError("record '" + record_id + "': sample count does not match spec");
  if (!std::all_of(samples.begin(), samples.end(), [](float v) { return std::isfinite(v); }))
    throw FormatError("record '" + record_id + "': non-finite sample");
  labels.validate();
}

// ---------------------------------------------------------------------------
// planar float32 container

namespace {

constexpr char kMagic[4] = {'E', 'C', 'G', '1'};

void put_u32(char* out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
}

std::uint32_t get_u32(const char* in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(in[i])) << (8 * i);
  return v;
}

void put_f32(char* out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }
float get_f32(const char* in) { return std::bit_cast<float>(get_u32(in)); }

PlanarBlock parse_header(const char* header, const fs::path& path) {
  if (std::memcmp(header, kMagic, 4) != 0)
    throw FormatError(path.string() + ": bad magic, expected ECG1");
  PlanarBlock block;
  block.n_blocks = get_u32(header + 4);
  block.block_length = get_u32(header + 8);
  block.rate = get_f32(header + 12);
  return block;
}

} // namespace

void write_planar_file(const fs::path& path, const PlanarBlock& block) {
  const std::size_t count = std::size_t(block.n_blocks) * block.block_length;
  if (block.data.size() != count) throw InvalidArgument("planar block size mismatch");
  std::vector<char> bytes(kPlanarHeaderBytes + 4 * count);
  std::memcpy(bytes.data(), kMagic, 4);
  put_u32(bytes.data() + 4, block.n_blocks);
  put_u32(bytes.data() + 8, block.block_length);
  put_f32(bytes.data() + 12, block.rate);
  char* payload = bytes.data() + kPlanarHeaderBytes;
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(payload, block.data.data(), 4 * count);
  } else {
    for (std::size_t i = 0; i < count; ++i) put_f32(payload + 4 * i, block.data[i]);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

PlanarBlock read_planar_header(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  char header[kPlanarHeaderBytes];
  in.read(header, kPlanarHeaderBytes);
  if (in.gcount() != static_cast<std::streamsize>(kPlanarHeaderBytes))
    throw FormatError(path.string() + ": truncated header");
  return parse_header(header, path);
}

PlanarBlock read_planar_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  char header[kPlanarHeaderBytes];
  in.read(header, kPlanarHeaderBytes);
  if (in.gcount() != static_cast<std::streamsize>(kPlanarHeaderBytes))
    throw FormatError(path.string() + ": truncated header");
  PlanarBlock block = parse_header(header, path);
  const std::size_t count = std::size_t(block.n_blocks) * block.block_length;
  std::vector<char> payload(4 * count);
  in.read(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (in.gcount() != static_cast<std::streamsize>(payload.size()))
    throw FormatError(path.string() + ": truncated payload");
  block.data.resize(count);
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(block.data.data(), payload.data(), payload.size());
  } else {
    for (std::size_t i = 0; i < count; ++i) block.data[i] = get_f32(payload.data() + 4 * i);
  }
  return block;
}

void write_signal_file(const fs::path& path, const EcgRecord& record) {
  PlanarBlock block;
  block.n_blocks = static_cast<std::uint32_t>(record.spec.n_leads);
  block.block_length = static_cast<std::uint32_t>(record.spec.n_samples);
  block.rate = static_cast<float>(record.spec.sampling_rate_hz);
  block.data = record.samples;
  write_planar_file(path, block);
}

// ---------------------------------------------------------------------------
// manifest

json labels_to_json(const TaskLabels& labels) {
  json j;
  if (labels.arrhythmia) {
    json arr = json::object();
    for (std::size_t i = 0; i < kArrhythmiaCount; ++i)
      arr[std::string(kArrhythmiaNames[i])] = (*labels.arrhythmia)[i];
    j["arrhythmia"] = arr;
  } else {
    j["arrhythmia"] = nullptr;
  }
  j["af_risk"] = labels.af_risk ? json(*labels.af_risk) : json(nullptr);
  j["age_years"] = labels.age_years ? json(*labels.age_years) : json(nullptr);
  return j;
}

TaskLabels labels_from_json(const json& j) {
  TaskLabels labels;
  const auto& arr = j.at("arrhythmia");
  if (!arr.is_null()) {
    std::array<bool, kArrhythmiaCount> flags{};
    for (std::size_t i = 0; i < kArrhythmiaCount; ++i)
      flags[i] = arr.at(std::string(kArrhythmiaNames[i])).get<bool>();
    labels.arrhythmia = flags;
  }
  if (const auto& r = j.at("af_risk"); !r.is_null()) labels.af_risk = r.get<bool>();
  if (const auto& a = j.at("age_years"); !a.is_null()) labels.age_years = a.get<double>();
  return labels;
}

json meta_to_json(const MetaFields& meta) {
  json j = json::object();
  const auto& names = MetaFields::slot_names();
  for (std::size_t i = 0; i < MetaFields::kSlotCount; ++i)
    j[names[i]] = meta.values[i] ? json(*meta.values[i]) : json(nullptr);
  return j;
}

MetaFields meta_from_json(const json& j) {
  MetaFields meta;
  const auto& names = MetaFields::slot_names();
  if (j.size() != MetaFields::kSlotCount) throw FormatError("meta must declare exactly 16 slots");
  for (std::size_t i = 0; i < MetaFields::kSlotCount; ++i) {
    const auto& v = j.at(names[i]);
    if (!v.is_null()) meta.values[i] = v.get<double>();
  }
  return meta;
}

namespace {

void check_record_id(const std::string& id) {
  if (id.empty()) throw InvalidArgument("empty record id");
  for (char c : id) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
    if (!ok) throw InvalidArgument("record id '" + id + "' contains characters outside [A-Za-z0-9._-]");
  }
  if (id == "." || id == "..") throw InvalidArgument("record id '" + id + "' is reserved");
}

} // namespace

Dataset Dataset::in_memory(std::vector<EcgRecord> records) {
  Dataset ds;
  ds.resident_ = std::move(records);
  for (const auto& r : ds.resident_) {
    RecordHeader h{r.record_id, {}, r.spec, r.labels, r.meta};
    ds.add_header(std::move(h));
  }
  return ds;
}

void Dataset::add_header(RecordHeader header) {
  auto [it, inserted] = index_.emplace(header.record_id, headers_.size());
  if (!inserted) throw FormatError("duplicate record_id '" + header.record_id + "'");
  headers_.push_back(std::move(header));
}

EcgRecord Dataset::record(std::size_t i) const {
  if (i >= headers_.size()) throw InvalidArgument("record index out of range");
  if (!resident_.empty()) return resident_[i];
  const RecordHeader& h = headers_[i];
  PlanarBlock block = read_planar_file(h.signal_path);
  if (block.n_blocks != h.spec.n_leads || block.block_length != h.spec.n_samples)
    throw FormatError(h.signal_path.string() + ": header does not match manifest");
  EcgRecord r;
  r.record_id = h.record_id;
  r.spec = h.spec;
  r.samples = std::move(block.data);
  r.labels = h.labels;
  r.meta = h.meta;
  return r;
}

std::optional<std::size_t> Dataset::find(std::string_view record_id) const {
  auto it = index_.find(std::string(record_id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

Dataset read_dataset(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw FormatError("cannot open manifest " + manifest_path.string());
  const fs::path root = manifest_path.parent_path();
  Dataset ds;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = manifest_path.string() + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(where + ": malformed manifest line: " + e.what());
    }
    if (!header_seen) {
      if (!j.is_object() || j.value("format", "") != kManifestFormat)
        throw FormatError(where + ": missing manifest header line");
      if (j.value("version", 0) != kManifestVersion)
        throw FormatError(where + ": unsupported manifest version");
      header_seen = true;
      continue;
    }
    RecordHeader h;
    try {
      h.record_id = j.at("id").get<std::string>();
      h.signal_path = root / j.at("signal").get<std::string>();
      h.spec.n_leads = j.at("n_leads").get<std::size_t>();
      h.spec.n_samples = j.at("n_samples").get<std::size_t>();
      h.spec.sampling_rate_hz = j.at("sampling_rate_hz").get<double>();
      h.labels = labels_from_json(j.at("labels"));
      h.meta = meta_from_json(j.at("meta"));
      h.spec.validate();
      h.labels.validate();
    } catch (const json::exception& e) {
      throw FormatError(where + ": malformed manifest line: " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(where + ": " + e.what());
    }
    if (!fs::exists(h.signal_path))
      throw FormatError(where + ": signal file " + h.signal_path.string() + " does not exist");
    const PlanarBlock hdr = read_planar_header(h.signal_path);
    if (hdr.n_blocks != h.spec.n_leads || hdr.block_length != h.spec.n_samples ||
        hdr.rate != static_cast<float>(h.spec.sampling_rate_hz))
      throw FormatError(where + ": signal-file header mismatch for '" + h.record_id + "'");
    try {
      ds.add_header(std::move(h));
    } catch (const FormatError& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  if (!header_seen && line_no > 0) throw FormatError(manifest_path.string() + ": no header line");
  return ds;
}

DatasetWriter::DatasetWriter(const fs::path& dir) : dir_(dir) {
  fs::create_directories(dir_ / "signals");
  const fs::path manifest = dir_ / std::string(kManifestFileName);
  out_.open(manifest, std::ios::trunc);
  if (!out_) throw Error("cannot write " + manifest.string());
  json header = {{"format", kManifestFormat}, {"version", kManifestVersion}};
  header["lead_order"] = json::array();
  for (auto name : kLeadNames) header["lead_order"].push_back(name);
  out_ << header.dump() << '\n';
}

void DatasetWriter::add(const EcgRecord& r) {
  check_record_id(r.record_id);
  if (!seen_.insert(r.record_id).second) throw InvalidArgument("duplicate record_id '" + r.record_id + "'");
  r.validate();
  const std::string rel = "signals/" + r.record_id + ".ecg";
  write_signal_file(dir_ / rel, r);
  json line = {{"id", r.record_id},
               {"signal", rel},
               {"n_leads", r.spec.n_leads},
               {"n_samples", r.spec.n_samples},
               {"sampling_rate_hz", static_cast<double>(static_cast<float>(r.spec.sampling_rate_hz))},
               {"labels", labels_to_json(r.labels)},
               {"meta", meta_to_json(r.meta)}};
  out_ << line.dump() << '\n';
}

fs::path DatasetWriter::finish() {
  out_.flush();
  if (!out_) throw Error("write failed: " + (dir_ / std::string(kManifestFileName)).string());
  out_.close();
  return dir_ / std::string(kManifestFileName);
}

fs::path write_dataset(std::span<const EcgRecord> records, const fs::path& dir) {
  {
    std::unordered_map<std::string, int> seen;
    for (const auto& r : records) {
      check_record_id(r.record_id);
      if (seen[r.record_id]++) throw InvalidArgument("duplicate record_id '" + r.record_id + "'");
    }
  }
  DatasetWriter w(dir);
  for (const auto& r : records) w.add(r);
  return w.finish();
}

// ---------------------------------------------------------------------------
// splits

std::string_view to_string(StratifyKey key) {
  switch (key) {
  case StratifyKey::None: return "none";
  case StratifyKey::Arrhythmia: return "arrhythmia";
  case StratifyKey::AfRisk: return "af_risk";
  }
  return "?";
}

StratifyKey parse_stratify_key(std::string_view name) {
  if (name == "none") return StratifyKey::None;
  if (name == "arrhythmia") return StratifyKey::Arrhythmia;
  if (name == "af_risk") return StratifyKey::AfRisk;
  throw InvalidArgument("unknown stratification key '" + std::string(name) + "'");
}

namespace {

std::string stratum_of(const TaskLabels& labels, StratifyKey key, const std::string& id) {
  switch (key) {
  case StratifyKey::None: return {};
  case StratifyKey::Arrhythmia: {
    if (!labels.arrhythmia) throw InvalidArgument("record '" + id + "' lacks arrhythmia labels");
    std::string s;
    for (bool b : *labels.arrhythmia) s.push_back(b ? '1' : '0');
    return s;
  }
  case StratifyKey::AfRisk:
    if (!labels.af_risk) throw InvalidArgument("record '" + id + "' lacks af_risk label");
    return *labels.af_risk ? "1" : "0";
  }
  return {};
}

} // namespace

DatasetSplit make_split(std::span<const std::string> record_ids, std::span<const TaskLabels> labels,
                        const SplitPolicy& policy, std::uint64_t seed) {
  if (record_ids.size() != labels.size()) throw InvalidArgument("ids and labels differ in length");
  const double ratios[3] = {policy.train, policy.validation, policy.test};
  for (double r : ratios)
    if (!(r >= 0.0)) throw InvalidArgument("split ratios must be non-negative");
  const double total = policy.train + policy.validation + policy.test;
  if (total > 1.0 + 1e-9) throw InvalidArgument("split ratios sum to more than 1");
  const bool exhaustive = total > 1.0 - 1e-9;
  const std::size_t parts = std::count_if(std::begin(ratios), std::end(ratios), [](double r) { return r > 0; });

  // std::map keeps strata in a stable order so the RNG stream is reproducible.
  std::map<std::string, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < record_ids.size(); ++i)
    strata[stratum_of(labels[i], policy.stratify, record_ids[i])].push_back(i);

  DatasetSplit split;
  split.policy = policy;
  split.seed = seed;
  Rng rng(seed);
  for (auto& [key, members] : strata) {
    const std::size_t n = members.size();
    if (policy.stratify != StratifyKey::None && n < parts)
      throw InvalidArgument("stratum '" + key + "' has " + std::to_string(n) +
                            " records, fewer than the " + std::to_string(parts) + " split parts");
    rng.shuffle(std::span<std::size_t>(members));
    const auto round_count = [n](double r) {
      return static_cast<std::size_t>(std::llround(static_cast<double>(n) * r));
    };
    std::size_t n_test = std::min(n, round_count(policy.test));
    std::size_t n_val = std::min(n - n_test, round_count(policy.validation));
    std::size_t n_train = exhaustive ? n - n_test - n_val
                                     : std::min(n - n_test - n_val, round_count(policy.train));
    std::size_t pos = 0;
    for (std::size_t k = 0; k < n_train; ++k) split.train.push_back(record_ids[members[pos++]]);
    for (std::size_t k = 0; k < n_val; ++k) split.validation.push_back(record_ids[members[pos++]]);
    for (std::size_t k = 0; k < n_test; ++k) split.test.push_back(record_ids[members[pos++]]);
  }
  return split;
}

DatasetSplit make_split(const Dataset& dataset, const SplitPolicy& policy, std::uint64_t seed) {
  std::vector<std::string> ids;
  std::vector<TaskLabels> labels;
  ids.reserve(dataset.size());
  labels.reserve(dataset.size());
  for (const auto& h : dataset.headers()) {
    ids.push_back(h.record_id);
    labels.push_back(h.labels);
  }
  return make_split(ids, labels, policy, seed);
}

json split_to_json(const DatasetSplit& split) {
  return {{"train", split.train},
          {"validation", split.validation},
          {"test", split.test},
          {"seed", split.seed},
          {"policy",
           {{"train", split.policy.train},
            {"validation", split.policy.validation},
            {"test", split.policy.test},
            {"stratify", to_string(split.policy.stratify)}}}};
}

DatasetSplit split_from_json(const json& j) {
  DatasetSplit s;
  s.train = j.at("train").get<std::vector<std::string>>();
  s.validation = j.at("validation").get<std::vector<std::string>>();
  s.test = j.at("test").get<std::vector<std::string>>();
  s.seed = j.at("seed").get<std::uint64_t>();
  const auto& p = j.at("policy");
  s.policy.train = p.at("train").get<double>();
  s.policy.validation = p.at("validation").get<double>();
  s.policy.test = p.at("test").get<double>();
  s.policy.stratify = parse_stratify_key(p.at("stratify").get<std::string>());
  return s;
}

} // namespace ecgfe

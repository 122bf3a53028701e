#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "ecgfe/error.hpp"
#include "ecgfe/features.hpp"
#include "ecgfe/parallel.hpp"

namespace ecgfe::features {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put(FeatureVector& v, std::size_t column, const MaybeValue& value) {
  if (value && std::isfinite(*value)) {
    v.values[column] = *value;
    v.missing[column] = 0;
  }
}

} // namespace

FeatureVector extract_features(const EcgRecord& record) {
  record.spec.validate();
  FeatureVector out;
  out.record_id = record.record_id;
  out.values.assign(kColumnCount, 0.0);
  out.missing.assign(kColumnCount, 1);

  const double fs = kTargetRateHz;
  for (std::size_t lead = 0; lead < kLeadCount; ++lead) {
    const auto raw = record.lead(lead);
    std::vector<double> x(raw.begin(), raw.end());
    if (!std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); })) continue;
    if (record.spec.sampling_rate_hz != fs) x = dsp::resample(x, record.spec.sampling_rate_hz, fs);
    const auto clean = dsp::denoise(x, fs);
    const auto ann = dsp::detect_r_peaks(clean.samples, fs);
    const auto alt = dsp::detect_r_peaks_matched(clean.samples, fs);

    const std::size_t base = FeatureRegistry::per_lead_column(lead, 0);
    const auto h = compute_hrv(ann);
    for (std::size_t k = 0; k < kHrvCount; ++k) put(out, base + k, h[k]);
    put(out, base + kHrvCount, dsp::compute_bsqi(ann.r_peaks, alt.r_peaks, fs));
    const auto m = compute_morphology(clean.samples, ann, fs);
    for (std::size_t k = 0; k < kMorCount; ++k) put(out, base + kHrvCount + 1 + k, m[k]);
  }
  for (std::size_t s = 0; s < MetaFields::kSlotCount; ++s)
    put(out, FeatureRegistry::meta_column(s), record.meta.values[s]);
  return out;
}

TaskView view_for(Task task) {
  switch (task) {
    case Task::Diagnosis: return TaskView::Diagnosis;
    case Task::Risk: return TaskView::Risk;
    case Task::Age: return TaskView::Age;
  }
  return TaskView::Risk;
}

std::string_view to_string(TaskView view) { return to_string(static_cast<Task>(view)); }

TaskView parse_view(std::string_view name) { return view_for(parse_task(name)); }

std::vector<std::size_t> view_columns(TaskView view) {
  const std::size_t age = FeatureRegistry::meta_column(MetaFields::kAgeSlot);
  const std::size_t sex = FeatureRegistry::meta_column(MetaFields::kSexSlot);
  std::vector<std::size_t> cols;
  for (std::size_t c = 0; c < kColumnCount; ++c) {
    if (view == TaskView::Diagnosis && (c == age || c == sex)) continue;
    if (view == TaskView::Age && c == age) continue;
    cols.push_back(c);
  }
  return cols;
}

std::optional<std::size_t> FeatureMatrix::row_of(std::string_view record_id) const {
  for (std::size_t r = 0; r < record_ids.size(); ++r)
    if (record_ids[r] == record_id) return r;
  return std::nullopt;
}

std::vector<std::string> FeatureMatrix::column_names() const {
  const auto reg = FeatureRegistry::canonical().columns();
  std::vector<std::string> names;
  for (std::size_t c : columns) names.push_back(reg[c].name);
  return names;
}

namespace {

std::vector<ColumnStats> train_stats(const FeatureMatrix& m) {
  std::unordered_set<std::string> train(m.train_ids.begin(), m.train_ids.end());
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < m.rows(); ++r)
    if (train.count(m.record_ids[r])) rows.push_back(r);

  std::vector<ColumnStats> stats(m.cols());
  std::vector<double> seen;
  for (std::size_t c = 0; c < m.cols(); ++c) {
    seen.clear();
    for (std::size_t r : rows)
      if (!m.is_missing(r, c)) seen.push_back(m.at(r, c));
    ColumnStats& s = stats[c];
    s.observed = seen.size();
    if (seen.empty()) continue;
    double sum = 0.0;
    for (double v : seen) sum += v;
    s.mean = sum / static_cast<double>(seen.size());
    double ss = 0.0;
    for (double v : seen) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(seen.size()));
    std::sort(seen.begin(), seen.end());
    const std::size_t n = seen.size();
    s.median = n % 2 ? seen[n / 2] : 0.5 * (seen[n / 2 - 1] + seen[n / 2]);
  }
  return stats;
}

} // namespace

FeatureMatrix build_matrix(std::span<const FeatureVector> vectors, TaskView view,
                           std::span<const std::string> train_ids) {
  FeatureMatrix m;
  m.view = view;
  m.columns = view_columns(view);
  m.train_ids.assign(train_ids.begin(), train_ids.end());
  const std::size_t cols = m.columns.size();
  m.values.reserve(vectors.size() * cols);
  m.missing.reserve(vectors.size() * cols);
  for (const FeatureVector& v : vectors) {
    if (v.values.size() != kColumnCount || v.missing.size() != kColumnCount)
      throw InvalidArgument("feature vector " + v.record_id + " does not match the registry width");
    m.record_ids.push_back(v.record_id);
    bool any = false;
    for (std::size_t c : m.columns) {
      const bool miss = v.missing[c] != 0 || !std::isfinite(v.values[c]);
      m.values.push_back(miss ? 0.0 : v.values[c]);
      m.missing.push_back(miss ? 1 : 0);
      any = any || !miss;
    }
    if (!any) m.flagged.push_back(v.record_id);
  }
  m.stats = train_stats(m);
  return m;
}

void refit_stats(FeatureMatrix& m, std::span<const std::string> train_ids) {
  m.train_ids.assign(train_ids.begin(), train_ids.end());
  m.stats = train_stats(m);
}

FeatureMatrix assemble_matrix(const Dataset& dataset, const DatasetSplit& split, TaskView view) {
  std::vector<std::size_t> rows;
  for (const auto* part : {&split.train, &split.validation, &split.test})
    for (const std::string& id : *part) {
      const auto idx = dataset.find(id);
      if (!idx) throw InvalidArgument("split names unknown record " + id);
      rows.push_back(*idx);
    }
  std::vector<FeatureVector> vectors(rows.size());
  parallel_for(rows.size(), [&](std::size_t i) { vectors[i] = extract_features(dataset.record(rows[i])); });
  return build_matrix(vectors, view, split.train);
}

DenseMatrix impute_and_normalize(const FeatureMatrix& m) {
  if (m.stats.size() != m.cols()) throw InvalidArgument("feature matrix lacks train statistics");
  DenseMatrix d;
  d.rows = m.rows();
  d.cols = m.cols();
  d.record_ids = m.record_ids;
  d.columns = m.columns;
  d.values.resize(d.rows * d.cols);
  for (std::size_t r = 0; r < d.rows; ++r)
    for (std::size_t c = 0; c < d.cols; ++c) {
      const ColumnStats& s = m.stats[c];
      const double v = m.is_missing(r, c) ? s.median : m.at(r, c);
      d.values[r * d.cols + c] = s.sd > 0.0 ? (v - s.mean) / s.sd : 0.0;
    }
  return d;
}

DenseMatrix DenseMatrix::subset(std::span<const std::size_t> row_idx, std::span<const std::size_t> col_pos) const {
  DenseMatrix out;
  out.rows = row_idx.size();
  out.cols = col_pos.size();
  out.values.reserve(out.rows * out.cols);
  for (std::size_t r : row_idx) {
    out.record_ids.push_back(record_ids.at(r));
    for (std::size_t c : col_pos) out.values.push_back(at(r, c));
  }
  for (std::size_t c : col_pos) out.columns.push_back(columns.at(c));
  return out;
}

std::optional<std::size_t> DenseMatrix::row_of(std::string_view record_id) const {
  for (std::size_t r = 0; r < record_ids.size(); ++r)
    if (record_ids[r] == record_id) return r;
  return std::nullopt;
}

namespace {

constexpr const char* kRegistryFile = "registry.json";
constexpr const char* kValuesFile = "values.ecg";
constexpr const char* kMaskFile = "mask.bin";

} // namespace

// Values are stored column-planar (one block per column); the mask is a packed
// bitset in the same order, least significant bit first.
void write_feature_matrix(const FeatureMatrix& m, const fs::path& dir) {
  fs::create_directories(dir);
  json stats = json::array();
  for (const ColumnStats& s : m.stats)
    stats.push_back({{"mean", s.mean}, {"sd", s.sd}, {"median", s.median}, {"observed", s.observed}});
  json j = {{"format", "ecg-features"},
            {"registry", FeatureRegistry::canonical().to_json()},
            {"view", to_string(m.view)},
            {"columns", m.columns},
            {"column_names", m.column_names()},
            {"record_ids", m.record_ids},
            {"train_ids", m.train_ids},
            {"flagged", m.flagged},
            {"stats", stats}};
  std::ofstream(dir / kRegistryFile) << j.dump(1) << '\n';

  PlanarBlock block;
  block.n_blocks = static_cast<std::uint32_t>(m.cols());
  block.block_length = static_cast<std::uint32_t>(m.rows());
  block.data.resize(m.cols() * m.rows());
  std::vector<std::uint8_t> bits((m.cols() * m.rows() + 7) / 8, 0);
  for (std::size_t c = 0; c < m.cols(); ++c)
    for (std::size_t r = 0; r < m.rows(); ++r) {
      const std::size_t k = c * m.rows() + r;
      block.data[k] = static_cast<float>(m.at(r, c));
      if (m.is_missing(r, c)) bits[k / 8] |= static_cast<std::uint8_t>(1u << (k % 8));
    }
  write_planar_file(dir / kValuesFile, block);
  std::ofstream mask(dir / kMaskFile, std::ios::binary);
  mask.write(reinterpret_cast<const char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
  if (!mask) throw Error("cannot write " + (dir / kMaskFile).string());
}

FeatureMatrix read_feature_matrix(const fs::path& dir) {
  std::ifstream in(dir / kRegistryFile);
  if (!in) throw FormatError("missing " + (dir / kRegistryFile).string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError(std::string("feature registry: ") + e.what());
  }
  FeatureMatrix m;
  try {
    if (j.at("format") != "ecg-features") throw FormatError("not a feature matrix directory");
    if (j.at("registry").at("version") != FeatureRegistry::canonical().version())
      throw FormatError("feature registry version mismatch");
    m.view = parse_view(j.at("view").get<std::string>());
    m.columns = j.at("columns").get<std::vector<std::size_t>>();
    m.record_ids = j.at("record_ids").get<std::vector<std::string>>();
    m.train_ids = j.at("train_ids").get<std::vector<std::string>>();
    m.flagged = j.at("flagged").get<std::vector<std::string>>();
    for (const auto& s : j.at("stats"))
      m.stats.push_back({s.at("mean").get<double>(), s.at("sd").get<double>(), s.at("median").get<double>(),
                         s.at("observed").get<std::size_t>()});
  } catch (const json::exception& e) {
    throw FormatError(std::string("feature registry: ") + e.what());
  }
  const PlanarBlock block = read_planar_file(dir / kValuesFile);
  if (block.n_blocks != m.cols() || block.block_length != m.rows() || m.stats.size() != m.cols())
    throw FormatError("feature matrix shape disagrees with its registry");
  std::ifstream mask(dir / kMaskFile, std::ios::binary);
  std::vector<std::uint8_t> bits((m.cols() * m.rows() + 7) / 8);
  mask.read(reinterpret_cast<char*>(bits.data()), static_cast<std::streamsize>(bits.size()));
  if (!mask) throw FormatError("truncated feature mask");

  m.values.resize(m.rows() * m.cols());
  m.missing.resize(m.rows() * m.cols());
  for (std::size_t c = 0; c < m.cols(); ++c)
    for (std::size_t r = 0; r < m.rows(); ++r) {
      const std::size_t k = c * m.rows() + r;
      m.values[r * m.cols() + c] = block.data[k];
      m.missing[r * m.cols() + c] = (bits[k / 8] >> (k % 8)) & 1u;
    }
  return m;
}

} // namespace ecgfe::features

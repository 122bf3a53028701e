#include <unordered_map>

#include "ecgfe/error.hpp"
#include "ecgfe/features.hpp"

namespace ecgfe::features {

namespace {

struct Spec {
  const char* name;
  const char* unit;
  Group group;
  const char* description;
};

// Order matters: position within the per-lead block is the local feature index.
constexpr Spec kPerLead[] = {
    {"avnn", "ms", Group::HRV, "mean RR interval"},
    {"sdnn", "ms", Group::HRV, "population SD of RR"},
    {"rmssd", "ms", Group::HRV, "root mean square of successive RR differences"},
    {"pnn50", "%", Group::HRV, "share of successive differences above 50 ms"},
    {"sem", "ms", Group::HRV, "SDNN / sqrt(n)"},
    {"cv_rr", "1", Group::HRV, "SDNN / AVNN"},
    {"rr_min", "ms", Group::HRV, "shortest RR"},
    {"rr_max", "ms", Group::HRV, "longest RR"},
    {"rr_median", "ms", Group::HRV, "median RR"},
    {"hr_mean", "bpm", Group::HRV, "mean of 60000 / RR"},
    {"lf_power", "ms^2", Group::HRV, "Lomb-Scargle power, 0.04-0.15 Hz"},
    {"hf_power", "ms^2", Group::HRV, "Lomb-Scargle power, 0.15-0.40 Hz"},
    {"lf_hf", "1", Group::HRV, "LF / HF"},
    {"total_power", "ms^2", Group::HRV, "Lomb-Scargle power, 0.005-0.40 Hz"},
    {"lf_norm", "1", Group::HRV, "LF / (LF + HF)"},
    {"hf_norm", "1", Group::HRV, "HF / (LF + HF)"},
    {"sd1", "ms", Group::HRV, "Poincare short-axis SD, SDSD / sqrt(2)"},
    {"sd2", "ms", Group::HRV, "Poincare long-axis SD, sqrt(2 SDNN^2 - SDSD^2 / 2)"},
    {"sd1_sd2", "1", Group::HRV, "SD1 / SD2"},
    {"sampen", "1", Group::HRV, "sample entropy, m = 2, r = 0.2 SDNN"},
    {"eppsm_upper", "ms/s^2", Group::EPPSM,
     "alpha of |dRR| = alpha (RR - mean)^2 fitted on accelerating beats (dRR > 0)"},
    {"eppsm_lower", "ms/s^2", Group::EPPSM, "same fit on decelerating beats (dRR < 0)"},
    {"eppsm_ratio", "1", Group::EPPSM, "eppsm_upper / eppsm_lower"},
    {"bsqi", "1", Group::SQI, "agreement of two R-peak detectors within 150 ms"},
    {"qrs_dur", "ms", Group::MOR, "QRS onset to offset on the median beat"},
    {"qt", "ms", Group::MOR, "QRS onset to T offset"},
    {"qtc", "ms", Group::MOR, "Bazett QT / sqrt(RR in s)"},
    {"pr", "ms", Group::MOR, "P onset to QRS onset"},
    {"p_dur", "ms", Group::MOR, "P onset to P offset"},
    {"p_amp", "mV", Group::MOR, "signed P peak"},
    {"q_amp", "mV", Group::MOR, "most negative sample between QRS onset and R"},
    {"r_amp", "mV", Group::MOR, "largest sample within 50 ms of the R peak"},
    {"s_amp", "mV", Group::MOR, "most negative sample between R and QRS offset"},
    {"t_amp", "mV", Group::MOR, "signed T peak"},
    {"st_level", "mV", Group::MOR, "level 60 ms after QRS offset"},
    {"st_slope", "mV/s", Group::MOR, "slope over the first 80 ms after QRS offset"},
    {"t_dur", "ms", Group::MOR, "T onset to T offset"},
    {"tpe", "ms", Group::MOR, "T peak to T offset"},
    {"qrs_area", "mV*ms", Group::MOR, "signed QRS area"},
    {"qrs_abs_area", "mV*ms", Group::MOR, "rectified QRS area"},
    {"qrs_energy", "mV^2*ms", Group::MOR, "QRS energy"},
    {"rs_ratio", "1", Group::MOR, "R / |S|"},
    {"t_area", "mV*ms", Group::MOR, "signed T area"},
    {"p_area", "mV*ms", Group::MOR, "signed P area"},
    {"vat", "ms", Group::MOR, "QRS onset to R peak"},
    {"p2p", "mV", Group::MOR, "template peak to peak"},
};

static_assert(std::size(kPerLead) == kPerLeadCount);

} // namespace

std::string_view to_string(Group group) {
  switch (group) {
    case Group::HRV: return "HRV";
    case Group::EPPSM: return "EPPSM";
    case Group::SQI: return "SQI";
    case Group::MOR: return "MOR";
    case Group::META: return "META";
  }
  return "?";
}

FeatureRegistry::FeatureRegistry() : version_("1.0.0") {
  std::uint32_t id = 1;
  for (const Spec& s : kPerLead) entries_.push_back({id++, s.name, s.unit, Scope::PerLead, s.group, s.description});
  for (const std::string& name : MetaFields::slot_names())
    entries_.push_back({id++, name, name == "age" ? "years" : "1", Scope::Global, Group::META, "self-reported"});

  for (std::size_t lead = 0; lead < kLeadCount; ++lead)
    for (std::size_t k = 0; k < kPerLeadCount; ++k)
      columns_.push_back({entries_[k].id, lead, std::string(kLeadNames[lead]) + "." + entries_[k].name});
  for (std::size_t k = kPerLeadCount; k < entries_.size(); ++k)
    columns_.push_back({entries_[k].id, std::nullopt, "meta." + entries_[k].name});
}

const FeatureRegistry& FeatureRegistry::canonical() {
  static const FeatureRegistry registry;
  return registry;
}

std::optional<std::size_t> FeatureRegistry::find_column(std::string_view name) const {
  static const auto index = [this] {
    std::unordered_map<std::string, std::size_t> m;
    for (std::size_t i = 0; i < columns_.size(); ++i) m.emplace(columns_[i].name, i);
    return m;
  }();
  const auto it = index.find(std::string(name));
  if (it == index.end()) return std::nullopt;
  return it->second;
}

nlohmann::json FeatureRegistry::to_json() const {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : entries_)
    entries.push_back({{"feature_id", e.id},
                       {"name", e.name},
                       {"unit", e.unit},
                       {"scope", e.scope == Scope::PerLead ? "per-lead" : "global"},
                       {"group", to_string(e.group)},
                       {"description", e.description}});
  return {{"version", version_}, {"entries", entries}, {"column_count", columns_.size()}};
}

} // namespace ecgfe::features

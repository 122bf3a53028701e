#include "ecgfe/cli/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "ecgfe/forest.hpp"
#include "ecgfe/random.hpp"

namespace ecgfe::cli {

namespace fs = std::filesystem;

std::string_view to_string(Experiment e) {
  switch (e) {
    case Experiment::FE: return "FE";
    case Experiment::DL: return "DL";
    case Experiment::Merged: return "FE+DL";
  }
  return "FE";
}

Experiment parse_experiment(std::string_view name) {
  if (name == "FE") return Experiment::FE;
  if (name == "DL") return Experiment::DL;
  if (name == "FE+DL") return Experiment::Merged;
  throw InvalidArgument("unknown experiment: " + std::string(name));
}

namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

std::string unquote(const std::string& s) {
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) return s.substr(1, s.size() - 2);
  return s;
}

/// Drops a trailing comment that is not inside quotes.
std::string strip_comment(std::string_view line) {
  char quote = 0;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quote) {
      if (c == quote) quote = 0;
    } else if (c == '"' || c == '\'') {
      quote = c;
    } else if (c == '#') {
      return std::string(line.substr(0, i));
    }
  }
  return std::string(line);
}

std::vector<std::string> split_list(const std::string& raw) {
  std::string s = trim(raw);
  if (s.size() >= 2 && s.front() == '[' && s.back() == ']') s = s.substr(1, s.size() - 2);
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(unquote(trim(item)));
  return out;
}

std::uint64_t to_uint(const std::string& raw, const std::string& field) {
  const std::string s = unquote(trim(raw));
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty())
    throw ConfigError(field, "expected a non-negative integer, got '" + s + "'");
  return v;
}

double to_double(const std::string& raw, const std::string& field) {
  const std::string s = unquote(trim(raw));
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(field, "expected a number, got '" + s + "'");
  }
}

bool to_bool(const std::string& raw, const std::string& field) {
  const std::string s = unquote(trim(raw));
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(field, "expected true or false, got '" + s + "'");
}

std::vector<std::size_t> to_uint_list(const std::string& raw, const std::string& field) {
  std::vector<std::size_t> out;
  const auto items = split_list(raw);
  for (std::size_t i = 0; i < items.size(); ++i)
    out.push_back(static_cast<std::size_t>(to_uint(items[i], field + "[" + std::to_string(i) + "]")));
  return out;
}

void require(bool ok, const std::string& field, const std::string& message) {
  if (!ok) throw ConfigError(field, message);
}

using Setter = std::function<void(ExperimentConfig&, const std::string& raw, const std::string& key)>;

struct KeySpec {
  std::string key;
  std::string type;
  std::string fallback;
  std::string doc;
  Setter set;
};

Setter uint_field(std::size_t ExperimentConfig::*member, std::size_t min = 0) {
  return [member, min](ExperimentConfig& c, const std::string& raw, const std::string& key) {
    const auto v = static_cast<std::size_t>(to_uint(raw, key));
    require(v >= min, key, "must be at least " + std::to_string(min));
    c.*member = v;
  };
}

Setter double_field(double ExperimentConfig::*member, double lo, double hi) {
  return [member, lo, hi](ExperimentConfig& c, const std::string& raw, const std::string& key) {
    const double v = to_double(raw, key);
    require(v >= lo && v <= hi, key, "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    c.*member = v;
  };
}

Setter seed_field(std::optional<std::uint64_t> ExperimentConfig::*member) {
  return [member](ExperimentConfig& c, const std::string& raw, const std::string& key) { c.*member = to_uint(raw, key); };
}

Setter uint_list_field(std::vector<std::size_t> ExperimentConfig::*member, bool allow_empty, std::size_t min = 0) {
  return [=](ExperimentConfig& c, const std::string& raw, const std::string& key) {
    auto v = to_uint_list(raw, key);
    require(allow_empty || !v.empty(), key, "list must not be empty");
    for (std::size_t i = 0; i < v.size(); ++i)
      require(v[i] >= min, key + "[" + std::to_string(i) + "]", "must be at least " + std::to_string(min));
    c.*member = std::move(v);
  };
}

const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> keys = {
      {"task", "string", "(required)", "diagnosis | risk | age",
       [](ExperimentConfig& c, const std::string& raw, const std::string& key) {
         try {
           c.task = parse_task(unquote(trim(raw)));
         } catch (const Error&) {
           throw ConfigError(key, "expected diagnosis, risk or age");
         }
       }},
      {"data", "path", "<out>/<task>/data/synth/manifest.jsonl", "dataset manifest",
       [](ExperimentConfig& c, const std::string& raw, const std::string&) { c.data = unquote(trim(raw)); }},
      {"out", "path", "out", "output root",
       [](ExperimentConfig& c, const std::string& raw, const std::string& key) {
         c.out = unquote(trim(raw));
         require(!c.out.empty(), key, "must not be empty");
       }},
      {"seed", "uint", "0", "base seed; per-experiment seeds derive from it",
       [](ExperimentConfig& c, const std::string& raw, const std::string& key) { c.seed = to_uint(raw, key); }},
      {"seed.fe", "uint", "derived", "explicit seed of the FE experiment", seed_field(&ExperimentConfig::seed_fe)},
      {"seed.dl", "uint", "derived", "explicit seed of the DL experiment", seed_field(&ExperimentConfig::seed_dl)},
      {"seed.merged", "uint", "derived", "explicit seed of the FE+DL experiment",
       seed_field(&ExperimentConfig::seed_merged)},
      {"split.train", "double", "0.7", "train fraction",
       [](ExperimentConfig& c, const std::string& raw, const std::string& key) { c.split.train = to_double(raw, key); }},
      {"split.validation", "double", "0.1", "validation fraction",
       [](ExperimentConfig& c, const std::string& raw, const std::string& key) {
         c.split.validation = to_double(raw, key);
       }},
      {"split.test", "double", "0.2", "test fraction",
       [](ExperimentConfig& c, const std::string& raw, const std::string& key) { c.split.test = to_double(raw, key); }},
      {"split.stratify", "string", "auto", "auto | none | arrhythmia | af_risk",
       [](ExperimentConfig& c, const std::string& raw, const std::string& key) {
         const std::string s = unquote(trim(raw));
         if (s == "auto") return;
         try {
           c.split.stratify = parse_stratify_key(s);
         } catch (const Error&) {
           throw ConfigError(key, "expected auto, none, arrhythmia or af_risk");
         }
       }},
      {"select.k", "uint list", "10, 25, 50, 100", "mRMR feature counts offered to the tuner",
       uint_list_field(&ExperimentConfig::select_k, false, 1)},
      {"select.limit", "uint", "0", "greedy mRMR steps (0 = largest select.k)", uint_field(&ExperimentConfig::select_limit)},
      {"tune.budget", "uint", "30", "tuner trials (0 = fixed rf.* settings)", uint_field(&ExperimentConfig::tune_budget)},
      {"tune.warmup", "uint", "10", "random trials before the surrogate", uint_field(&ExperimentConfig::tune_warmup)},
      {"tune.candidates", "uint", "600", "candidates scored per proposal",
       uint_field(&ExperimentConfig::tune_candidates, 1)},
      {"rf.balanced", "bool", "true", "balanced class weights",
       [](ExperimentConfig& c, const std::string& raw, const std::string& key) { c.rf_balanced = to_bool(raw, key); }},
      {"rf.n_trees", "uint", "200", "trees when not tuned", uint_field(&ExperimentConfig::rf_trees, 1)},
      {"rf.max_depth", "uint", "0", "depth when not tuned (0 = unlimited)", uint_field(&ExperimentConfig::rf_max_depth)},
      {"rf.min_leaf", "uint", "1", "minimum samples per leaf when not tuned",
       uint_field(&ExperimentConfig::rf_min_leaf, 1)},
      {"rf.criterion", "string", "gini | squared_error", "split criterion when not tuned",
       [](ExperimentConfig& c, const std::string& raw, const std::string& key) {
         const std::string s = unquote(trim(raw));
         try {
           (void)forest::parse_criterion(s);
         } catch (const Error&) {
           throw ConfigError(key, "unknown criterion '" + s + "'");
         }
         c.rf_criterion = s;
       }},
      {"net.profile", "string", "tiny", "tiny | full",
       [](ExperimentConfig& c, const std::string& raw, const std::string& key) {
         c.net_profile = unquote(trim(raw));
         require(c.net_profile == "tiny" || c.net_profile == "full", key, "expected tiny or full");
       }},
      {"net.epochs", "uint", "30", "training epochs", uint_field(&ExperimentConfig::net_epochs)},
      {"net.batch", "uint", "256", "mini-batch size", uint_field(&ExperimentConfig::net_batch, 1)},
      {"net.lr", "double", "0.001", "initial learning rate", double_field(&ExperimentConfig::net_lr, 0.0, 1.0)},
      {"net.patience", "uint", "5", "flat epochs before the rate drops tenfold",
       uint_field(&ExperimentConfig::net_patience, 1)},
      {"net.early_stop", "uint", "0", "stop after this many flat epochs (0 = never)",
       uint_field(&ExperimentConfig::net_early_stop)},
      {"net.dropout", "double", "0.2", "dropout rate", double_field(&ExperimentConfig::net_dropout, 0.0, 0.95)},
      {"merge.hidden", "uint list", "0", "merge heads tried: 0 = none, n = one hidden layer of n",
       uint_list_field(&ExperimentConfig::merge_hidden, false)},
      {"eval.bootstrap", "uint", "1000", "bootstrap iterations", uint_field(&ExperimentConfig::eval_bootstrap, 2)},
      {"eval.fraction", "double", "0.8", "bootstrap subsample fraction",
       double_field(&ExperimentConfig::eval_fraction, 0.01, 1.0)},
      {"curve.sizes", "uint list", "250, 1000, 4000, 16000", "learning-curve train sizes",
       uint_list_field(&ExperimentConfig::curve_sizes, false, 1)},
      {"curve.seeds", "uint list", "0, 1, 2", "learning-curve seeds",
       [](ExperimentConfig& c, const std::string& raw, const std::string& key) {
         const auto v = to_uint_list(raw, key);
         require(!v.empty(), key, "list must not be empty");
         c.curve_seeds.assign(v.begin(), v.end());
       }},
      {"curve.experiments", "string list", "FE, DL", "arms of the learning curve (FE, DL)",
       [](ExperimentConfig& c, const std::string& raw, const std::string& key) {
         c.curve_experiments = split_list(raw);
         require(!c.curve_experiments.empty(), key, "list must not be empty");
         for (std::size_t i = 0; i < c.curve_experiments.size(); ++i)
           require(c.curve_experiments[i] == "FE" || c.curve_experiments[i] == "DL",
                   key + "[" + std::to_string(i) + "]", "expected FE or DL");
       }},
      {"curve.dl_sizes", "uint list", "250", "sizes at which network arms run (empty = all)",
       uint_list_field(&ExperimentConfig::curve_dl_sizes, true, 1)},
      {"synth.n_per_class", "uint", "10", "diagnosis: records per class and for NSR",
       uint_field(&ExperimentConfig::synth_n_per_class, 1)},
      {"synth.n_total", "uint", "1000", "risk and age: record count", uint_field(&ExperimentConfig::synth_n_total, 1)},
      {"synth.positive_fraction", "double", "0.05", "risk: future-AF share",
       double_field(&ExperimentConfig::synth_positive_fraction, 0.0, 1.0)},
      {"synth.noise", "double", "0.015", "noise SD in mV", double_field(&ExperimentConfig::synth_noise, 0.0, 1.0)},
      {"synth.age_min", "double", "16", "age task: lower age", double_field(&ExperimentConfig::synth_age_min, 0.0, 120.0)},
      {"synth.age_max", "double", "85", "age task: upper age", double_field(&ExperimentConfig::synth_age_max, 0.0, 120.0)},
      {"workers", "uint", "0", "worker threads (0 = ECGFE_WORKERS or all cores)", uint_field(&ExperimentConfig::workers)},
  };
  return keys;
}

} // namespace

RawConfig parse_config_text(std::string_view text, std::string_view source) {
  RawConfig raw;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string s = trim(strip_comment(line));
    const std::string where = std::string(source) + ":" + std::to_string(lineno);
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw ConfigError(where, "unterminated section header");
      section = trim(std::string_view(s).substr(1, s.size() - 2));
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(where, "expected key = value");
    const std::string key = trim(std::string_view(s).substr(0, eq));
    if (key.empty()) throw ConfigError(where, "empty key");
    raw[section.empty() ? key : section + "." + key] = trim(std::string_view(s).substr(eq + 1));
  }
  return raw;
}

RawConfig read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot read config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

void apply_override(RawConfig& raw, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError(std::string(assignment), "override must look like key=value");
  const std::string key = trim(assignment.substr(0, eq));
  if (key.empty()) throw ConfigError(std::string(assignment), "empty key");
  raw[key] = trim(assignment.substr(eq + 1));
}

ExperimentConfig resolve(const RawConfig& raw) {
  ExperimentConfig c;
  c.split.train = 0.7;
  c.split.validation = 0.1;
  c.split.test = 0.2;
  if (!raw.count("task")) throw ConfigError("task", "required key missing");
  for (const auto& [key, value] : raw) {
    const auto& keys = schema();
    const auto it = std::find_if(keys.begin(), keys.end(), [&](const KeySpec& k) { return k.key == key; });
    if (it == keys.end()) throw ConfigError(key, "unknown key");
    it->set(c, value, key);
  }
  // The task decides the default stratification.
  if (!raw.count("split.stratify") || unquote(trim(raw.at("split.stratify"))) == "auto")
    c.split.stratify = c.task == Task::Diagnosis ? StratifyKey::Arrhythmia
                       : c.task == Task::Risk    ? StratifyKey::AfRisk
                                                 : StratifyKey::None;
  const double total = c.split.train + c.split.validation + c.split.test;
  require(c.split.train > 0.0 && c.split.validation >= 0.0 && c.split.test > 0.0, "split",
          "train and test fractions must be positive");
  require(std::abs(total - 1.0) < 1e-9, "split", "fractions must sum to 1");
  require(c.synth_age_min < c.synth_age_max, "synth.age_min", "must be below synth.age_max");
  if (c.tune_budget > 0) require(c.split.validation > 0.0, "split.validation", "tuning needs a validation split");
  return c;
}

std::string schema_text() {
  std::ostringstream os;
  for (const KeySpec& k : schema()) {
    os << "  " << k.key;
    for (std::size_t i = k.key.size(); i < 24; ++i) os << ' ';
    os << k.type << " (default " << k.fallback << "): " << k.doc << '\n';
  }
  return os.str();
}

std::uint64_t ExperimentConfig::seed_for(Experiment e) const {
  switch (e) {
    case Experiment::FE: return seed_fe.value_or(derive_seed(seed, 1));
    case Experiment::DL: return seed_dl.value_or(derive_seed(seed, 2));
    case Experiment::Merged: return seed_merged.value_or(derive_seed(seed, 3));
  }
  return seed;
}

std::vector<std::string> ExperimentConfig::seed_collisions() const {
  std::vector<std::string> out;
  const Experiment all[] = {Experiment::FE, Experiment::DL, Experiment::Merged};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = i + 1; j < 3; ++j)
      if (seed_for(all[i]) == seed_for(all[j]))
        out.push_back(std::string(to_string(all[i])) + " and " + std::string(to_string(all[j])) + " share seed " +
                      std::to_string(seed_for(all[i])));
  return out;
}

fs::path ExperimentConfig::task_dir() const { return out / std::string(to_string(task)); }

fs::path ExperimentConfig::data_manifest() const {
  if (!data.empty()) return data;
  return task_dir() / "data" / "synth" / std::string(kManifestFileName);
}

fs::path ExperimentConfig::stage_dir(std::string_view experiment, std::string_view stage) const {
  return task_dir() / std::string(experiment) / std::string(stage);
}

nlohmann::json ExperimentConfig::snapshot() const {
  auto opt = [](const std::optional<std::uint64_t>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"task", to_string(task)},
          {"data", data_manifest().string()},
          {"out", out.string()},
          {"seed", seed},
          {"seed.fe", opt(seed_fe)},
          {"seed.dl", opt(seed_dl)},
          {"seed.merged", opt(seed_merged)},
          {"split", {{"train", split.train}, {"validation", split.validation}, {"test", split.test},
                     {"stratify", to_string(split.stratify)}}},
          {"select", {{"k", select_k}, {"limit", select_limit}}},
          {"tune", {{"budget", tune_budget}, {"warmup", tune_warmup}, {"candidates", tune_candidates}}},
          {"rf", {{"balanced", rf_balanced}, {"n_trees", rf_trees}, {"max_depth", rf_max_depth},
                  {"min_leaf", rf_min_leaf}, {"criterion", rf_criterion ? nlohmann::json(*rf_criterion) : nlohmann::json(nullptr)}}},
          {"net", {{"profile", net_profile}, {"epochs", net_epochs}, {"batch", net_batch}, {"lr", net_lr},
                   {"patience", net_patience}, {"early_stop", net_early_stop}, {"dropout", net_dropout}}},
          {"merge", {{"hidden", merge_hidden}}},
          {"eval", {{"bootstrap", eval_bootstrap}, {"fraction", eval_fraction}}},
          {"curve", {{"sizes", curve_sizes}, {"seeds", curve_seeds}, {"experiments", curve_experiments},
                     {"dl_sizes", curve_dl_sizes}}},
          {"synth", {{"n_per_class", synth_n_per_class}, {"n_total", synth_n_total},
                     {"positive_fraction", synth_positive_fraction}, {"noise", synth_noise},
                     {"age_min", synth_age_min}, {"age_max", synth_age_max}}},
          {"workers", workers}};
}

} // namespace ecgfe::cli

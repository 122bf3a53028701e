#include "ecgfe/cli/commands.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "ecgfe/cli/hash.hpp"
#include "ecgfe/cli/pipeline.hpp"
#include "ecgfe/random.hpp"
#include "ecgfe/stats.hpp"
#include "ecgfe/synth.hpp"

namespace ecgfe::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kFE = "FE";
constexpr std::string_view kDL = "DL";
constexpr std::string_view kMerged = "FE+DL";
constexpr std::string_view kReport = "report";

// ---- files ---------------------------------------------------------------

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& p, std::string_view text) {
  fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + p.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error("write failed: " + p.string());
  }
  fs::rename(tmp, p);
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

json read_json(const fs::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

double parse_num(std::string_view s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw FormatError("bad number '" + std::string(s) + "'");
  return v;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

// ---- predictions ------------------------------------------------------------

struct Predictions {
  std::vector<std::string> labels;
  std::vector<std::string> ids;
  std::vector<double> scores;  // item-major
  std::vector<double> truths;
};

void write_predictions(const fs::path& p, const Predictions& pr) {
  std::string s = "record_id";
  for (const auto& l : pr.labels) s += ",score:" + l;
  for (const auto& l : pr.labels) s += ",truth:" + l;
  s += '\n';
  const std::size_t k = pr.labels.size();
  for (std::size_t i = 0; i < pr.ids.size(); ++i) {
    s += pr.ids[i];
    for (std::size_t j = 0; j < k; ++j) s += ',' + num(pr.scores[i * k + j]);
    for (std::size_t j = 0; j < k; ++j) s += ',' + num(pr.truths[i * k + j]);
    s += '\n';
  }
  write_text(p, s);
}

Predictions read_predictions(const fs::path& p) {
  std::istringstream in(read_text(p));
  std::string line;
  if (!std::getline(in, line)) throw FormatError(p.string() + ": empty predictions file");
  const auto head = split_csv(line);
  if (head.size() < 3 || head[0] != "record_id" || (head.size() - 1) % 2 != 0)
    throw FormatError(p.string() + ": bad header");
  Predictions pr;
  const std::size_t k = (head.size() - 1) / 2;
  for (std::size_t j = 0; j < k; ++j) {
    const auto h = head[1 + j];
    if (h.substr(0, 6) != "score:") throw FormatError(p.string() + ": bad header");
    pr.labels.emplace_back(h.substr(6));
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != head.size()) throw FormatError(p.string() + ": ragged row");
    pr.ids.emplace_back(cells[0]);
    for (std::size_t j = 0; j < k; ++j) pr.scores.push_back(parse_num(cells[1 + j]));
    for (std::size_t j = 0; j < k; ++j) pr.truths.push_back(parse_num(cells[1 + k + j]));
  }
  return pr;
}

// ---- stage records ----------------------------------------------------------

std::map<std::string, std::string> hash_outputs(const fs::path& dir) {
  std::map<std::string, std::string> out;
  if (!fs::exists(dir)) return out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), dir).generic_string();
    if (rel == kStageFile) continue;
    out[rel] = sha256_file(e.path());
  }
  return out;
}

struct StageRecord {
  std::string fingerprint;
  std::map<std::string, std::string> outputs;
  json summary;
};

std::optional<StageRecord> read_stage(const fs::path& dir) {
  const fs::path p = dir / kStageFile;
  if (!fs::exists(p)) return std::nullopt;
  try {
    const json j = read_json(p);
    StageRecord r;
    r.fingerprint = j.at("fingerprint").get<std::string>();
    r.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    r.summary = j.value("summary", json::object());
    return r;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

bool verify(const fs::path& dir, const StageRecord& r) { return hash_outputs(dir) == r.outputs; }

/// Fingerprint of a completed, intact upstream stage.
std::string require_stage(const fs::path& dir, const std::string& stage) {
  const auto r = read_stage(dir);
  if (!r) throw DependencyError(stage, "stage '" + stage + "' has not been run (no artifacts in " + dir.string() +
                                           "); run `ecgfe " + stage + "` first");
  if (!verify(dir, *r))
    throw DependencyError(stage, "artifacts of stage '" + stage + "' in " + dir.string() +
                                     " do not match their recorded hashes; rerun `ecgfe " + stage + "`");
  return r->fingerprint;
}

bool stage_present(const fs::path& dir) {
  const auto r = read_stage(dir);
  return r && verify(dir, *r);
}

std::string fingerprint(std::string_view stage, const json& params, std::initializer_list<std::string> upstream) {
  Sha256 h;
  h.add(stage).add(kToolVersion).add(params.dump());
  for (const auto& u : upstream) h.add(u);
  return h.hex();
}

void update_manifest(const ExperimentConfig& cfg, const StageResult& r, const std::map<std::string, std::string>& outputs,
                     const std::vector<std::string>& warnings) {
  const fs::path path = cfg.out / kRunManifestFile;
  json m = fs::exists(path) ? read_json(path) : json::object();
  m["format"] = "ecgfe-run-manifest";
  m["tool_version"] = kToolVersion;
  m["config"] = cfg.snapshot();
  json& stages = m["stages"];
  if (!stages.is_object()) stages = json::object();

  const std::string rel_dir = fs::relative(r.dir, cfg.out).generic_string();
  json files = json::object();
  for (const auto& [name, hash] : outputs) files[rel_dir + "/" + name] = hash;
  files[rel_dir + "/" + std::string(kStageFile)] = sha256_file(r.dir / kStageFile);
  stages[rel_dir] = {{"stage", r.stage},     {"fingerprint", r.fingerprint}, {"cache_hit", r.cache_hit},
                     {"seconds", r.seconds}, {"outputs", files},             {"warnings", warnings}};
  write_json(path, m);
}

using Body = std::function<json(const fs::path& dir)>;

StageResult run_stage(const ExperimentConfig& cfg, std::string stage, const fs::path& dir, std::string fp,
                      const Body& body, std::vector<std::string> warnings = {}) {
  const auto start = std::chrono::steady_clock::now();
  StageResult r{std::move(stage), dir, std::move(fp), false, 0.0};
  for (const auto& w : warnings) std::cerr << "[" << r.stage << "] warning: " << w << "\n";

  const auto previous = read_stage(dir);
  std::map<std::string, std::string> outputs;
  if (previous && previous->fingerprint == r.fingerprint && verify(dir, *previous)) {
    r.cache_hit = true;
    outputs = previous->outputs;
    std::cerr << "[" << r.stage << "] cache hit (" << dir.string() << ")\n";
  } else {
    std::error_code ec;
    fs::remove_all(dir, ec);
    fs::create_directories(dir);
    std::cerr << "[" << r.stage << "] running\n";
    const json summary = body(dir);
    outputs = hash_outputs(dir);
    write_json(dir / kStageFile, {{"stage", r.stage},
                                  {"tool_version", kToolVersion},
                                  {"fingerprint", r.fingerprint},
                                  {"outputs", outputs},
                                  {"summary", summary}});
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  update_manifest(cfg, r, outputs, warnings);
  std::cerr << "[" << r.stage << "] done in " << num(std::round(r.seconds * 100.0) / 100.0) << " s\n";
  return r;
}

// ---- shared inputs ----------------------------------------------------------

fs::path synth_dir(const ExperimentConfig& cfg) { return cfg.task_dir() / "data" / "synth"; }

Dataset load_dataset(const ExperimentConfig& cfg) {
  const fs::path manifest = cfg.data_manifest();
  if (!fs::exists(manifest)) {
    if (cfg.data.empty())
      throw DependencyError("synth", "no dataset at " + manifest.string() + "; run `ecgfe synth` or set data");
    throw ConfigError("data", "path does not exist: " + manifest.string());
  }
  return read_dataset(manifest);
}

/// Content digest of the manifest and every signal file it references.
std::string dataset_digest(const ExperimentConfig& cfg, const Dataset& ds) {
  Sha256 h;
  h.add(sha256_file(cfg.data_manifest()));
  for (const auto& rec : ds.headers()) h.add(rec.record_id).add(sha256_file(rec.signal_path));
  return h.hex();
}

DatasetSplit split_for(const ExperimentConfig& cfg, const Dataset& ds) {
  return make_split(ds, cfg.split, derive_seed(cfg.seed, 0));
}

json split_params(const ExperimentConfig& cfg) {
  return {{"train", cfg.split.train},
          {"validation", cfg.split.validation},
          {"test", cfg.split.test},
          {"stratify", to_string(cfg.split.stratify)},
          {"seed", cfg.seed}};
}

json net_params(const ExperimentConfig& cfg) {
  return {{"profile", cfg.net_profile}, {"epochs", cfg.net_epochs},       {"batch", cfg.net_batch},
          {"lr", cfg.net_lr},           {"patience", cfg.net_patience},   {"early_stop", cfg.net_early_stop},
          {"dropout", cfg.net_dropout}};
}

json rf_params(const ExperimentConfig& cfg) {
  return {{"balanced", cfg.rf_balanced},
          {"trees", cfg.rf_trees},
          {"max_depth", cfg.rf_max_depth},
          {"min_leaf", cfg.rf_min_leaf},
          {"criterion", cfg.rf_criterion ? json(*cfg.rf_criterion) : json(nullptr)}};
}

forest::ForestConfig forest_base(const ExperimentConfig& cfg) {
  forest::ForestConfig c;
  c.n_trees = cfg.rf_trees;
  if (cfg.rf_max_depth > 0) c.max_depth = cfg.rf_max_depth;
  c.min_samples_leaf = cfg.rf_min_leaf;
  c.balanced = cfg.rf_balanced && cfg.task != Task::Age;
  if (cfg.rf_criterion) c.criterion = forest::parse_criterion(*cfg.rf_criterion);
  else if (cfg.task == Task::Age) c.criterion = forest::Criterion::SquaredError;
  c.seed = cfg.seed_for(Experiment::FE);
  return c;
}

nn::NetConfig net_config(const ExperimentConfig& cfg) {
  nn::NetConfig c = net_profile(cfg.net_profile, cfg.task);
  c.dropout = cfg.net_dropout;
  return c;
}

nn::Schedule schedule_for(const ExperimentConfig& cfg, std::uint64_t seed) {
  nn::Schedule s;
  s.epochs = cfg.net_epochs;
  s.batch_size = cfg.net_batch;
  s.learning_rate = cfg.net_lr;
  s.patience = cfg.net_patience;
  s.early_stop = cfg.net_early_stop;
  s.seed = seed;
  return s;
}

std::size_t max_k(const ExperimentConfig& cfg) { return *std::max_element(cfg.select_k.begin(), cfg.select_k.end()); }

std::vector<mrmr::FeatureRanking> read_rankings(const fs::path& p) {
  std::vector<mrmr::FeatureRanking> out;
  const json j = read_json(p);
  for (const auto& r : j.at("rankings")) out.push_back(mrmr::ranking_from_json(r));
  return out;
}

Predictions make_predictions(Task task, const Dataset& ds, std::span<const std::string> ids,
                             std::vector<double> scores) {
  Predictions p;
  p.labels = label_names(task);
  p.ids.assign(ids.begin(), ids.end());
  p.scores = std::move(scores);
  p.truths = truths_for(ds, task, ids);
  return p;
}

json history_summary(const nn::TrainState& s) {
  return {{"metric", s.metric_name},         {"best_metric", s.best_metric}, {"best_epoch", s.best_epoch},
          {"epochs_run", s.history.size()},  {"diverged", s.diverged},       {"final_lr", s.lr}};
}

} // namespace

// ---- commands ---------------------------------------------------------------

StageResult cmd_synth(const ExperimentConfig& cfg) {
  const json params = {{"task", to_string(cfg.task)},
                       {"seed", cfg.seed},
                       {"n_per_class", cfg.synth_n_per_class},
                       {"n_total", cfg.synth_n_total},
                       {"positive_fraction", cfg.synth_positive_fraction},
                       {"noise", cfg.synth_noise},
                       {"age_min", cfg.synth_age_min},
                       {"age_max", cfg.synth_age_max}};
  return run_stage(cfg, "synth", synth_dir(cfg), fingerprint("synth", params, {}), [&](const fs::path& dir) {
    synth::DatasetSpec spec;
    spec.task = cfg.task;
    spec.n_per_class = cfg.synth_n_per_class;
    spec.n_total = cfg.synth_n_total;
    spec.positive_fraction = cfg.synth_positive_fraction;
    spec.noise_sd_mv = cfg.synth_noise;
    spec.age_min = cfg.synth_age_min;
    spec.age_max = cfg.synth_age_max;
    spec.seed = derive_seed(cfg.seed, 4);
    synth::generate_to(spec, dir);
    return json{{"records", synth::plan_dataset(spec).size()}};
  });
}

StageResult cmd_extract(const ExperimentConfig& cfg) {
  const Dataset ds = load_dataset(cfg);
  const json params = {{"task", to_string(cfg.task)}, {"split", split_params(cfg)}};
  const std::string fp = fingerprint("extract", params, {dataset_digest(cfg, ds)});
  return run_stage(cfg, "extract", cfg.stage_dir(kFE, "extract"), fp, [&](const fs::path& dir) {
    const DatasetSplit split = split_for(cfg, ds);
    const auto matrix = features::assemble_matrix(ds, split, features::view_for(cfg.task));
    features::write_feature_matrix(matrix, dir / "matrix");
    write_json(dir / "split.json", split_to_json(split));
    return json{{"records", matrix.rows()}, {"columns", matrix.cols()}, {"flagged", matrix.flagged.size()}};
  });
}

StageResult cmd_select(const ExperimentConfig& cfg) {
  const fs::path extract = cfg.stage_dir(kFE, "extract");
  const std::string up = require_stage(extract, "extract");
  const std::size_t limit = cfg.select_limit > 0 ? cfg.select_limit : max_k(cfg);
  const json params = {{"k", cfg.select_k}, {"limit", limit}};
  return run_stage(cfg, "select", cfg.stage_dir(kFE, "select"), fingerprint("select", params, {up}),
                   [&](const fs::path& dir) {
                     const Dataset ds = load_dataset(cfg);
                     const auto matrix = features::read_feature_matrix(extract / "matrix");
                     const auto rankings = rank_features(matrix, ds, cfg.task, limit);
                     json rj = json::array();
                     for (const auto& r : rankings) rj.push_back(mrmr::ranking_to_json(r));
                     write_json(dir / "rankings.json", {{"limit", limit}, {"rankings", rj}});
                     json sets = json::object();
                     for (std::size_t k : cfg.select_k) {
                       if (cfg.task == Task::Diagnosis)
                         sets[std::to_string(k)] = mrmr::union_to_json(mrmr::union_select(rankings, k));
                       else
                         sets[std::to_string(k)] = {{"selected", feature_set(cfg.task, rankings, k)}};
                     }
                     write_json(dir / "selection.json", sets);
                     return json{{"labels", rankings.size()}, {"limit", limit}};
                   });
}

StageResult cmd_train_rf(const ExperimentConfig& cfg) {
  const fs::path extract = cfg.stage_dir(kFE, "extract"), select = cfg.stage_dir(kFE, "select");
  const std::string up_select = require_stage(select, "select");
  const std::string up_extract = require_stage(extract, "extract");
  const json params = {{"k", cfg.select_k},
                       {"rf", rf_params(cfg)},
                       {"tune", {{"budget", cfg.tune_budget}, {"warmup", cfg.tune_warmup},
                                 {"candidates", cfg.tune_candidates}}},
                       {"seed", cfg.seed_for(Experiment::FE)}};
  return run_stage(
      cfg, "train-rf", cfg.stage_dir(kFE, "train"), fingerprint("train-rf", params, {up_extract, up_select}),
      [&](const fs::path& dir) {
        const Dataset ds = load_dataset(cfg);
        const auto matrix = features::read_feature_matrix(extract / "matrix");
        const auto split = split_from_json(read_json(extract / "split.json"));
        const auto dense = features::impute_and_normalize(matrix);
        const auto rankings = read_rankings(select / "rankings.json");
        FeOptions opt;
        opt.ks = cfg.select_k;
        opt.base = forest_base(cfg);
        opt.tune.budget = cfg.tune_budget;
        opt.tune.warmup = cfg.tune_warmup;
        opt.tune.candidates = cfg.tune_candidates;
        opt.tune.seed = derive_seed(cfg.seed_for(Experiment::FE), 1);
        const FeModel model = train_fe(matrix, dense, ds, split, cfg.task, rankings, opt);
        write_json(dir / "model.json", fe_model_to_json(model));
        if (model.trace) write_json(dir / "tuning.json", tune::trace_to_json(*model.trace));
        auto scores = predict_fe(model, dense, rows_of(matrix, split.test));
        write_predictions(dir / "predictions.csv", make_predictions(cfg.task, ds, split.test, std::move(scores)));
        json summary{{"k", model.k}, {"features", model.feature_ids.size()},
                     {"config", forest::config_to_json(model.config)}};
        if (model.trace) summary["validation_score"] = *model.trace->best_trial().score;
        return summary;
      },
      cfg.seed_collisions());
}

StageResult cmd_train_dl(const ExperimentConfig& cfg) {
  const Dataset ds = load_dataset(cfg);
  const json params = {{"task", to_string(cfg.task)},
                       {"split", split_params(cfg)},
                       {"net", net_params(cfg)},
                       {"seed", cfg.seed_for(Experiment::DL)}};
  const std::string fp = fingerprint("train-dl", params, {dataset_digest(cfg, ds)});
  return run_stage(
      cfg, "train-dl", cfg.stage_dir(kDL, "train"), fp,
      [&](const fs::path& dir) {
        const DatasetSplit split = split_for(cfg, ds);
        auto r = train_dl(ds, split, cfg.task, net_config(cfg), schedule_for(cfg, cfg.seed_for(Experiment::DL)),
                          split.test);
        nn::write_checkpoint(dir / "model.ecgn", r.net, {{"task", to_string(cfg.task)}});
        write_text(dir / "history.csv", nn::history_csv(r.state.history));
        write_predictions(dir / "predictions.csv", make_predictions(cfg.task, ds, split.test, std::move(r.predictions)));
        return history_summary(r.state);
      },
      cfg.seed_collisions());
}

StageResult cmd_train_merged(const ExperimentConfig& cfg) {
  const fs::path extract = cfg.stage_dir(kFE, "extract"), select = cfg.stage_dir(kFE, "select"),
                 fe_train = cfg.stage_dir(kFE, "train");
  // Selection is the step the merged model builds on, so it is checked first.
  const std::string up_select = require_stage(select, "select");
  const std::string up_extract = require_stage(extract, "extract");
  const std::string up_rf = require_stage(fe_train, "train-rf");
  const json params = {{"net", net_params(cfg)},
                       {"merge_hidden", cfg.merge_hidden},
                       {"seed", cfg.seed_for(Experiment::Merged)}};
  return run_stage(
      cfg, "train-merged", cfg.stage_dir(kMerged, "train"),
      fingerprint("train-merged", params, {up_extract, up_select, up_rf}),
      [&](const fs::path& dir) {
        const Dataset ds = load_dataset(cfg);
        const auto matrix = features::read_feature_matrix(extract / "matrix");
        const auto split = split_from_json(read_json(extract / "split.json"));
        const FeModel fe = fe_model_from_json(read_json(fe_train / "model.json"));
        const auto dense = features::impute_and_normalize(matrix);
        std::vector<std::size_t> all_rows(dense.rows), pos;
        std::iota(all_rows.begin(), all_rows.end(), std::size_t{0});
        for (std::size_t id : fe.feature_ids) {
          const auto it = std::find(dense.columns.begin(), dense.columns.end(), id);
          if (it == dense.columns.end()) throw FormatError("FE model uses a column missing from the matrix");
          pos.push_back(static_cast<std::size_t>(it - dense.columns.begin()));
        }
        const auto fe_inputs = dense.subset(all_rows, pos);

        std::optional<DlResult> best;
        std::size_t best_hidden = 0;
        json sweep = json::array();
        for (std::size_t h : cfg.merge_hidden) {
          nn::NetConfig c = net_config(cfg);
          c.hidden = h == 0 ? std::vector<std::size_t>{} : std::vector<std::size_t>{h};
          auto r = train_dl(ds, split, cfg.task, c, schedule_for(cfg, cfg.seed_for(Experiment::Merged)), split.test,
                            &fe_inputs);
          sweep.push_back({{"hidden", h}, {"validation_metric", r.state.best_metric}});
          const bool better = !best || (r.state.higher_is_better ? r.state.best_metric > best->state.best_metric
                                                                 : r.state.best_metric < best->state.best_metric);
          if (better) {
            best = std::move(r);
            best_hidden = h;
          }
        }
        nn::write_checkpoint(dir / "model.ecgn", best->net,
                             {{"task", to_string(cfg.task)}, {"fe_feature_ids", fe.feature_ids}});
        write_text(dir / "history.csv", nn::history_csv(best->state.history));
        write_json(dir / "merge.json", {{"sweep", sweep}, {"chosen_hidden", best_hidden},
                                        {"fe_feature_ids", fe.feature_ids}});
        write_predictions(dir / "predictions.csv",
                          make_predictions(cfg.task, ds, split.test, std::move(best->predictions)));
        json summary = history_summary(best->state);
        summary["hidden"] = best_hidden;
        summary["fe_inputs"] = fe.feature_ids.size();
        return summary;
      },
      cfg.seed_collisions());
}

StageResult cmd_evaluate(const ExperimentConfig& cfg) {
  struct Arm {
    std::string name;
    fs::path dir;
    std::string fp;
  };
  std::vector<Arm> arms;
  for (std::string_view e : {kFE, kDL, kMerged}) {
    const fs::path d = cfg.stage_dir(e, "train");
    if (stage_present(d)) arms.push_back({std::string(e), d, read_stage(d)->fingerprint});
  }
  if (arms.empty())
    throw DependencyError("train-rf", "no trained experiment found under " + cfg.task_dir().string() +
                                          "; run train-rf, train-dl or train-merged first");
  json params = {{"bootstrap", cfg.eval_bootstrap}, {"fraction", cfg.eval_fraction}, {"seed", cfg.seed}};
  Sha256 up;
  for (const auto& a : arms) up.add(a.name).add(a.fp);
  const std::string fp = fingerprint("evaluate", params, {up.hex()});

  return run_stage(cfg, "evaluate", cfg.stage_dir(kReport, "evaluate"), fp, [&](const fs::path& dir) {
    const Task task = cfg.task;
    std::vector<Predictions> preds;
    for (const auto& a : arms) {
      preds.push_back(read_predictions(a.dir / "predictions.csv"));
      if (preds.back().ids != preds.front().ids || preds.back().labels != preds.front().labels)
        throw Error("experiments " + arms.front().name + " and " + a.name + " were scored on different test sets");
    }
    const std::size_t k = preds.front().labels.size();
    const std::size_t n = preds.front().ids.size();
    eval::BootstrapOptions bo;
    bo.iterations = cfg.eval_bootstrap;
    bo.fraction = cfg.eval_fraction;
    bo.seed = derive_seed(cfg.seed, 5);

    json experiments = json::object();
    std::vector<eval::BootstrapResult> headline;
    for (std::size_t e = 0; e < arms.size(); ++e) {
      const Predictions& p = preds[e];
      const std::string tag = arms[e].name == kMerged ? "FE_DL" : arms[e].name;
      json ej;
      ej["metrics"] = to_json(score_all(task, p.scores, p.truths));
      const auto boot = eval::bootstrap_rows(
          [&](std::span<const std::size_t> rows) {
            std::vector<double> s, t;
            for (std::size_t r : rows)
              for (std::size_t j = 0; j < k; ++j) {
                s.push_back(p.scores[r * k + j]);
                t.push_back(p.truths[r * k + j]);
              }
            return task_score(task, s, t, k);
          },
          n, bo);
      ej["headline"] = {{"metric", task == Task::Diagnosis ? "mean_AUPRC" : eval::to_string(task_metric(task))},
                        {"bootstrap", eval::to_json(boot)}};
      headline.push_back(boot);

      if (task != Task::Age) {
        json per_label = json::object();
        for (std::size_t j = 0; j < k; ++j) {
          std::vector<double> s, t;
          for (std::size_t i = 0; i < n; ++i) {
            s.push_back(p.scores[i * k + j]);
            t.push_back(p.truths[i * k + j]);
          }
          const std::string& label = p.labels[j];
          try {
            const auto pr = eval::pr_curve(s, t);
            std::string csv = "recall,precision\n";
            for (std::size_t g = 0; g < pr.recall_grid.size(); ++g)
              csv += num(pr.recall_grid[g]) + ',' + num(pr.precision[g]) + '\n';
            write_text(dir / ("pr_" + tag + "_" + label + ".csv"), csv);
            csv = "threshold,fpr,tpr\n";
            for (const auto& r : eval::roc_curve(s, t))
              csv += num(r.threshold) + ',' + num(r.fpr) + ',' + num(r.tpr) + '\n';
            write_text(dir / ("roc_" + tag + "_" + label + ".csv"), csv);
            const auto b = eval::bootstrap([](auto sc, auto lb) { return eval::auprc(sc, lb); }, s, t, bo);
            per_label[label] = {{"AUPRC", eval::to_json(b)}, {"smoothed_auprc", pr.auprc}, {"raw_auprc", pr.raw_auprc}};
          } catch (const UndefinedMetric& ex) {
            per_label[label] = {{"error", ex.what()}};
          }
        }
        ej["per_label_bootstrap"] = per_label;
      }
      experiments[arms[e].name] = ej;
    }

    json significance = json::array();
    for (std::size_t a = 0; a < arms.size(); ++a)
      for (std::size_t b = a + 1; b < arms.size(); ++b)
        significance.push_back(eval::to_json(eval::compare(headline[a], headline[b], arms[a].name, arms[b].name)));

    write_json(dir / "report.json", {{"format", "ecgfe-evaluation"},
                                     {"task", to_string(task)},
                                     {"test_records", n},
                                     {"labels", preds.front().labels},
                                     {"experiments", experiments},
                                     {"significance", significance}});
    json summary = json::object();
    for (std::size_t e = 0; e < arms.size(); ++e) summary[arms[e].name] = headline[e].mean;
    return summary;
  });
}

StageResult cmd_learning_curve(const ExperimentConfig& cfg) {
  const fs::path extract = cfg.stage_dir(kFE, "extract");
  const std::string up = require_stage(extract, "extract");
  const json params = {{"sizes", cfg.curve_sizes},     {"seeds", cfg.curve_seeds},  {"experiments", cfg.curve_experiments},
                       {"dl_sizes", cfg.curve_dl_sizes}, {"k", max_k(cfg)},         {"rf", rf_params(cfg)},
                       {"net", net_params(cfg)}};
  return run_stage(cfg, "learning-curve", cfg.stage_dir(kReport, "learning-curve"),
                   fingerprint("learning-curve", params, {up}), [&](const fs::path& dir) {
                     const Dataset ds = load_dataset(cfg);
                     const auto matrix = features::read_feature_matrix(extract / "matrix");
                     CurveSetup setup;
                     setup.task = cfg.task;
                     setup.dataset = &ds;
                     setup.matrix = &matrix;
                     setup.split = split_from_json(read_json(extract / "split.json"));
                     setup.k = max_k(cfg);
                     setup.forest = forest_base(cfg);
                     setup.net = net_config(cfg);
                     setup.schedule = schedule_for(cfg, 0);
                     std::vector<eval::CurveArm> arms;
                     for (const auto& e : cfg.curve_experiments) {
                       if (e != "FE" && e != "DL")
                         throw ConfigError("curve.experiments", "only FE and DL arms are supported, got " + e);
                       arms.push_back({e, e == "DL" && !cfg.curve_dl_sizes.empty() ? cfg.curve_dl_sizes
                                                                                     : cfg.curve_sizes});
                     }
                     const auto points = run_learning_curve(setup, arms, cfg.curve_seeds);
                     json pj = json::array();
                     for (const auto& p : points) pj.push_back(eval::to_json(p));
                     write_json(dir / "curve.json", {{"task", to_string(cfg.task)}, {"points", pj}});
                     write_text(dir / "curve.csv", eval::curve_csv(points));
                     std::size_t failed = 0;
                     for (const auto& p : points) failed += p.metric ? 0 : 1;
                     return json{{"points", points.size()}, {"failed", failed}};
                   });
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"synth",    "extract",      "select",   "train-rf",
                                              "train-dl", "train-merged", "evaluate", "learning-curve"};
  return names;
}

StageResult run_command(std::string_view name, const ExperimentConfig& cfg) {
  if (name == "synth") return cmd_synth(cfg);
  if (name == "extract") return cmd_extract(cfg);
  if (name == "select") return cmd_select(cfg);
  if (name == "train-rf") return cmd_train_rf(cfg);
  if (name == "train-dl") return cmd_train_dl(cfg);
  if (name == "train-merged") return cmd_train_merged(cfg);
  if (name == "evaluate") return cmd_evaluate(cfg);
  if (name == "learning-curve") return cmd_learning_curve(cfg);
  throw InvalidArgument("unknown command '" + std::string(name) + "'");
}

std::vector<StageResult> run_all(const ExperimentConfig& cfg) {
  std::vector<StageResult> out;
  if (cfg.data.empty()) out.push_back(cmd_synth(cfg));
  for (auto* f : {&cmd_extract, &cmd_select, &cmd_train_rf, &cmd_train_dl, &cmd_train_merged, &cmd_evaluate})
    out.push_back(f(cfg));
  return out;
}

} // namespace ecgfe::cli

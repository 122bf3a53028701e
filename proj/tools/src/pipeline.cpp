#include "ecgfe/cli/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <unordered_map>

#include "ecgfe/error.hpp"

namespace ecgfe::cli {

using nlohmann::json;

std::vector<std::string> label_names(Task task) {
  switch (task) {
    case Task::Diagnosis: return {kArrhythmiaNames.begin(), kArrhythmiaNames.end()};
    case Task::Risk: return {"future_AF"};
    case Task::Age: return {"age"};
  }
  return {};
}

namespace {

double label_of(Task task, std::size_t label, const TaskLabels& l, const std::string& id) {
  switch (task) {
    case Task::Diagnosis:
      if (!l.arrhythmia) break;
      return (*l.arrhythmia)[label] ? 1.0 : 0.0;
    case Task::Risk:
      if (!l.af_risk) break;
      return *l.af_risk ? 1.0 : 0.0;
    case Task::Age:
      if (!l.age_years) break;
      return *l.age_years;
  }
  throw InvalidArgument("record " + id + " has no " + std::string(to_string(task)) + " label");
}

forest::TaskKind kind_of(Task task) {
  return task == Task::Age ? forest::TaskKind::Regression : forest::TaskKind::Classification;
}

std::vector<double> column(std::span<const double> v, std::size_t k, std::size_t j) {
  std::vector<double> c;
  for (std::size_t i = j; i < v.size(); i += k) c.push_back(v[i]);
  return c;
}

bool has_positive(std::span<const double> y) {
  return std::any_of(y.begin(), y.end(), [](double v) { return v > 0.5; });
}

} // namespace

std::vector<double> label_values(Task task, std::size_t label, std::span<const RecordHeader* const> headers) {
  std::vector<double> y;
  y.reserve(headers.size());
  for (const RecordHeader* h : headers) y.push_back(label_of(task, label, h->labels, h->record_id));
  return y;
}

std::vector<double> truths_for(const Dataset& dataset, Task task, std::span<const std::string> ids) {
  const std::size_t k = label_names(task).size();
  std::vector<double> out;
  out.reserve(ids.size() * k);
  for (const std::string& id : ids) {
    const auto r = dataset.find(id);
    if (!r) throw InvalidArgument("unknown record " + id);
    for (std::size_t j = 0; j < k; ++j) out.push_back(label_of(task, j, dataset.header(*r).labels, id));
  }
  return out;
}

std::vector<std::size_t> rows_of(const features::FeatureMatrix& m, std::span<const std::string> ids) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t r = 0; r < m.rows(); ++r) index.emplace(m.record_ids[r], r);
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (const std::string& id : ids) {
    const auto it = index.find(id);
    if (it == index.end()) throw InvalidArgument("feature matrix has no row for " + id);
    rows.push_back(it->second);
  }
  return rows;
}

std::vector<mrmr::FeatureRanking> rank_features(const features::FeatureMatrix& m, const Dataset& dataset, Task task,
                                                std::size_t limit) {
  const auto rows = rows_of(m, m.train_ids);
  const mrmr::Table table = mrmr::table_from(m, rows);
  const auto truths = truths_for(dataset, task, m.train_ids);
  const auto names = label_names(task);
  std::vector<mrmr::FeatureRanking> out;
  for (std::size_t j = 0; j < names.size(); ++j) {
    const auto y = column(truths, names.size(), j);
    const auto kind = task == Task::Age ? mrmr::TargetKind::Continuous : mrmr::TargetKind::Binary;
    out.push_back(mrmr::rank_mrmr(table, y, kind, names[j], {limit}));
  }
  return out;
}

std::vector<std::size_t> feature_set(Task task, std::span<const mrmr::FeatureRanking> rankings, std::size_t k) {
  if (rankings.empty()) throw InvalidArgument("feature_set: no rankings");
  if (task == Task::Diagnosis) return mrmr::union_select(rankings, k).selected;
  const auto& order = rankings.front().ordered;
  std::vector<std::size_t> ids(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(k, order.size())));
  std::sort(ids.begin(), ids.end());
  return ids;
}

eval::MetricKind task_metric(Task task) {
  switch (task) {
    case Task::Diagnosis: return eval::MetricKind::AUPRC;
    case Task::Risk: return eval::MetricKind::AUROC;
    case Task::Age: return eval::MetricKind::R2;
  }
  return eval::MetricKind::AUROC;
}

double task_score(Task task, std::span<const double> scores, std::span<const double> truths, std::size_t n_labels) {
  if (task != Task::Diagnosis) return eval::compute(task_metric(task), scores, truths);
  double acc = 0.0;
  std::size_t used = 0;
  for (std::size_t j = 0; j < n_labels; ++j) {
    const auto y = column(truths, n_labels, j);
    if (!has_positive(y)) continue;
    acc += eval::auprc(column(scores, n_labels, j), y);
    ++used;
  }
  if (used == 0) throw UndefinedMetric("macro AUPRC: no label has positives");
  return acc / static_cast<double>(used);
}

namespace {

std::vector<std::size_t> positions_of(const features::DenseMatrix& dense, std::span<const std::size_t> ids) {
  std::unordered_map<std::size_t, std::size_t> pos;
  for (std::size_t c = 0; c < dense.cols; ++c) pos.emplace(dense.columns[c], c);
  std::vector<std::size_t> out;
  for (std::size_t id : ids) {
    const auto it = pos.find(id);
    if (it == pos.end()) throw InvalidArgument("feature column " + std::to_string(id) + " is not in the matrix");
    out.push_back(it->second);
  }
  return out;
}

std::vector<double> predict_label(const forest::ForestModel& m, const features::DenseMatrix& x) {
  return m.kind == forest::TaskKind::Classification ? forest::predict_positive(m, x) : forest::predict(m, x);
}

} // namespace

FeModel train_fe(const features::FeatureMatrix& matrix, const features::DenseMatrix& dense, const Dataset& dataset,
                 const DatasetSplit& split, Task task, std::span<const mrmr::FeatureRanking> rankings,
                 const FeOptions& options) {
  if (options.ks.empty()) throw InvalidArgument("train_fe: at least one feature count required");
  const auto names = label_names(task);
  const std::size_t n_labels = names.size();
  const auto train_rows = rows_of(matrix, split.train);
  const auto val_rows = rows_of(matrix, split.validation);
  const auto y_train = truths_for(dataset, task, split.train);
  const auto y_val = truths_for(dataset, task, split.validation);
  const auto kind = kind_of(task);

  struct Design {
    std::vector<std::size_t> ids;
    features::DenseMatrix train, val;
  };
  std::map<std::size_t, Design> designs;
  auto design = [&](std::size_t k) -> const Design& {
    auto it = designs.find(k);
    if (it != designs.end()) return it->second;
    Design d;
    d.ids = feature_set(task, rankings, k);
    const auto pos = positions_of(dense, d.ids);
    d.train = dense.subset(train_rows, pos);
    d.val = dense.subset(val_rows, pos);
    return designs.emplace(k, std::move(d)).first->second;
  };

  auto fit_all = [&](const forest::ForestConfig& cfg, const Design& d) {
    std::vector<forest::ForestModel> models;
    for (std::size_t j = 0; j < n_labels; ++j) {
      forest::ForestConfig c = cfg;
      c.seed = derive_seed(cfg.seed, j);
      models.push_back(forest::fit_forest(d.train, column(y_train, n_labels, j), kind, c));
    }
    return models;
  };

  FeModel out;
  out.task = task;
  forest::ForestConfig chosen = options.base;
  if (options.tune.budget > 0) {
    if (val_rows.empty()) throw InvalidArgument("train_fe: tuning needs validation records");
    const auto space = tune::forest_space(options.ks);
    const auto objective = [&](const tune::Params& p) {
      const auto cfg = tune::decode_forest(p, kind, options.base, options.ks);
      const Design& d = design(cfg.n_features_selected);
      const auto models = fit_all(cfg, d);
      std::vector<double> scores(d.val.rows * n_labels);
      for (std::size_t j = 0; j < n_labels; ++j) {
        const auto s = predict_label(models[j], d.val);
        for (std::size_t i = 0; i < s.size(); ++i) scores[i * n_labels + j] = s[i];
      }
      return task_score(task, scores, y_val, n_labels);
    };
    out.trace = tune::tune(space, objective, options.tune);
    if (!out.trace->best) throw Error("train_fe: every tuning trial failed (" + out.trace->trials.front().error + ")");
    chosen = tune::decode_forest(out.trace->best_trial().params, kind, options.base, options.ks);
  } else if (chosen.n_features_selected == 0) {
    chosen.n_features_selected = options.ks.back();
  }
  const Design& d = design(chosen.n_features_selected);
  out.k = chosen.n_features_selected;
  out.feature_ids = d.ids;
  out.config = chosen;
  out.models = fit_all(chosen, d);
  return out;
}

std::vector<double> predict_fe(const FeModel& model, const features::DenseMatrix& dense,
                               std::span<const std::size_t> rows) {
  const auto x = dense.subset(rows, positions_of(dense, model.feature_ids));
  const std::size_t k = model.models.size();
  std::vector<double> out(rows.size() * k);
  for (std::size_t j = 0; j < k; ++j) {
    const auto s = predict_label(model.models[j], x);
    for (std::size_t i = 0; i < s.size(); ++i) out[i * k + j] = s[i];
  }
  return out;
}

json fe_model_to_json(const FeModel& model) {
  json forests = json::array();
  for (const auto& m : model.models) forests.push_back(forest::model_to_json(m));
  return {{"format", "ecgfe-fe-model"},
          {"version", 1},
          {"task", to_string(model.task)},
          {"k", model.k},
          {"feature_ids", model.feature_ids},
          {"config", forest::config_to_json(model.config)},
          {"labels", label_names(model.task)},
          {"forests", forests}};
}

FeModel fe_model_from_json(const json& j) {
  try {
    if (j.at("format") != "ecgfe-fe-model") throw FormatError("not an FE model file");
    FeModel m;
    m.task = parse_task(j.at("task").get<std::string>());
    m.k = j.at("k").get<std::size_t>();
    m.feature_ids = j.at("feature_ids").get<std::vector<std::size_t>>();
    m.config = forest::config_from_json(j.at("config"));
    for (const auto& f : j.at("forests")) m.models.push_back(forest::model_from_json(f));
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("FE model: ") + e.what());
  }
}

MetricTable score_all(Task task, std::span<const double> scores, std::span<const double> truths) {
  const auto names = label_names(task);
  const std::size_t k = names.size();
  MetricTable t;
  for (std::size_t j = 0; j < k; ++j) {
    const auto s = column(scores, k, j), y = column(truths, k, j);
    std::map<std::string, double> m;
    auto put = [&](eval::MetricKind kind) {
      try {
        m[std::string(eval::to_string(kind))] = eval::compute(kind, s, y);
      } catch (const UndefinedMetric&) {
      }
    };
    if (task == Task::Age) {
      put(eval::MetricKind::R2);
      put(eval::MetricKind::MAE);
    } else {
      put(eval::MetricKind::AUPRC);
      put(eval::MetricKind::F1max);
      put(eval::MetricKind::AUROC);
    }
    t.per_label.emplace_back(names[j], std::move(m));
  }
  t.headline = task_score(task, scores, truths, k);
  return t;
}

json to_json(const MetricTable& t) {
  json labels = json::object();
  for (const auto& [name, m] : t.per_label) labels[name] = m;
  return {{"headline", t.headline}, {"labels", labels}};
}

nn::NetConfig net_profile(std::string_view name, Task task) {
  const nn::Head head = nn::head_for(task);
  if (name == "tiny") return nn::NetConfig::tiny(head);
  if (name == "full") return nn::NetConfig::full(head);
  throw InvalidArgument("unknown network profile '" + std::string(name) + "'");
}

namespace {

std::pair<nn::Network, nn::TrainState> fit_network(const nn::NetConfig& config, const nn::Schedule& schedule,
                                                   const nn::TrainSet& train, const nn::TrainSet& validation) {
  nn::Network net(config, derive_seed(schedule.seed, std::uint64_t{1} << 32));
  if (config.head == nn::Head::Age && train.size > 0) {
    std::vector<double> ages = train.targets;
    std::nth_element(ages.begin(), ages.begin() + static_cast<std::ptrdiff_t>(ages.size() / 2), ages.end());
    net.set_output_bias(ages[ages.size() / 2]);
  }
  auto state = nn::train(net, train, validation, schedule, nn::default_metric(config.head));
  return {std::move(net), std::move(state)};
}

} // namespace

DlResult train_dl(const Dataset& dataset, const DatasetSplit& split, Task task, nn::NetConfig config,
                  const nn::Schedule& schedule, std::span<const std::string> predict_ids,
                  const features::DenseMatrix* fe) {
  config.head = nn::head_for(task);
  config.n_fe = fe ? fe->cols : 0;
  config.validate();
  const auto train = nn::make_train_set(dataset, split.train, config, fe);
  const auto val = nn::make_train_set(dataset, split.validation, config, fe);
  auto [net, state] = fit_network(config, schedule, train, val);
  DlResult r{std::move(net), std::move(state), {}};
  const auto pred = nn::make_train_set(dataset, predict_ids, config, fe);
  r.predictions = nn::predict(r.net, pred);
  return r;
}

std::vector<int> strata_for(const Dataset& dataset, Task task, std::span<const std::string> ids) {
  std::vector<int> out;
  out.reserve(ids.size());
  for (const std::string& id : ids) {
    const auto r = dataset.find(id);
    if (!r) throw InvalidArgument("unknown record " + id);
    const TaskLabels& l = dataset.header(*r).labels;
    int s = 0;
    if (task == Task::Diagnosis && l.arrhythmia) {
      for (std::size_t j = 0; j < kArrhythmiaCount; ++j)
        if ((*l.arrhythmia)[j]) {
          s = static_cast<int>(j) + 1;
          break;
        }
    } else if (task == Task::Risk && l.af_risk) {
      s = *l.af_risk ? 1 : 0;
    }
    out.push_back(s);
  }
  return out;
}

std::vector<eval::CurvePoint> run_learning_curve(const CurveSetup& setup, std::span<const eval::CurveArm> arms,
                                                 std::span<const std::uint64_t> seeds) {
  if (!setup.dataset) throw InvalidArgument("learning curve: dataset required");
  const Task task = setup.task;
  const Dataset& dataset = *setup.dataset;
  const auto& pool = setup.split.train;
  const auto& test_ids = setup.split.test;
  const std::size_t n_labels = label_names(task).size();
  const auto y_test = truths_for(dataset, task, test_ids);
  const auto y_pool = truths_for(dataset, task, pool);
  const auto kind = kind_of(task);

  std::optional<nn::TrainSet> dl_val, dl_test;
  nn::NetConfig net = setup.net;
  net.head = nn::head_for(task);
  net.n_fe = 0;

  const eval::CurvePipeline pipeline = [&](std::span<const std::size_t> idx, const std::string& experiment,
                                           std::uint64_t seed) {
    std::vector<double> scores;
    if (experiment == "FE") {
      if (!setup.matrix) throw InvalidArgument("learning curve: FE arm needs a feature matrix");
      std::vector<std::string> ids;
      for (std::size_t i : idx) ids.push_back(pool[i]);
      features::FeatureMatrix m = *setup.matrix;
      features::refit_stats(m, ids);
      const auto rankings = rank_features(m, dataset, task, setup.k);
      const auto chosen = feature_set(task, rankings, setup.k);
      const auto dense = features::impute_and_normalize(m);
      const auto pos = positions_of(dense, chosen);
      const auto x_train = dense.subset(rows_of(m, ids), pos);
      const auto x_test = dense.subset(rows_of(m, test_ids), pos);
      scores.assign(test_ids.size() * n_labels, 0.0);
      for (std::size_t j = 0; j < n_labels; ++j) {
        std::vector<double> y;
        for (std::size_t i : idx) y.push_back(y_pool[i * n_labels + j]);
        forest::ForestConfig c = setup.forest;
        c.seed = derive_seed(seed, 100 + j);
        const auto model = forest::fit_forest(x_train, y, kind, c);
        const auto s = predict_label(model, x_test);
        for (std::size_t i = 0; i < s.size(); ++i) scores[i * n_labels + j] = s[i];
      }
    } else if (experiment == "DL") {
      if (!dl_test) {
        dl_val = nn::make_train_set(dataset, setup.split.validation, net);
        dl_test = nn::make_train_set(dataset, test_ids, net);
      }
      // Waveforms of the subset only; the pool can be far larger than memory.
      std::vector<std::string> ids;
      for (std::size_t i : idx) ids.push_back(pool[i]);
      nn::Schedule schedule = setup.schedule;
      schedule.seed = derive_seed(seed, 200);
      auto [model, state] = fit_network(net, schedule, nn::make_train_set(dataset, ids, net), *dl_val);
      scores = nn::predict(model, *dl_test);
    } else {
      throw InvalidArgument("learning curve: unsupported experiment '" + experiment + "'");
    }
    return eval::MetricValue{task_metric(task), task_score(task, scores, y_test, n_labels), test_ids.size()};
  };
  return eval::learning_curve(pipeline, strata_for(dataset, task, pool), arms, seeds);
}

} // namespace ecgfe::cli

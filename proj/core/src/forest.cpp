#include "ecgfe/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ecgfe/error.hpp"
#include "ecgfe/parallel.hpp"
#include "ecgfe/random.hpp"

namespace ecgfe::forest {

using nlohmann::json;

namespace {

constexpr std::size_t kAbsCandidates = 16;

} // namespace

std::string_view to_string(Criterion c) {
  switch (c) {
    case Criterion::Gini: return "gini";
    case Criterion::Entropy: return "entropy";
    case Criterion::SquaredError: return "squared_error";
    case Criterion::AbsoluteError: return "absolute_error";
  }
  return "?";
}

Criterion parse_criterion(std::string_view name) {
  for (Criterion c : {Criterion::Gini, Criterion::Entropy, Criterion::SquaredError, Criterion::AbsoluteError})
    if (to_string(c) == name) return c;
  throw InvalidArgument("unknown split criterion '" + std::string(name) + "'");
}

void ForestConfig::validate(TaskKind kind) const {
  if (n_trees == 0) throw InvalidArgument("n_trees must be at least 1");
  if (max_depth && *max_depth == 0) throw InvalidArgument("max_depth must be at least 1");
  if (min_samples_leaf == 0) throw InvalidArgument("min_samples_leaf must be at least 1");
  if (max_features && *max_features == 0) throw InvalidArgument("max_features must be at least 1");
  const bool classifier = criterion == Criterion::Gini || criterion == Criterion::Entropy;
  if (classifier != (kind == TaskKind::Classification))
    throw InvalidArgument("criterion " + std::string(to_string(criterion)) + " does not fit the task");
  for (double w : class_weights)
    if (!(w > 0.0) || !std::isfinite(w)) throw InvalidArgument("class weights must be strictly positive");
}

json config_to_json(const ForestConfig& c) {
  return {{"n_trees", c.n_trees},
          {"max_depth", c.max_depth ? json(*c.max_depth) : json(nullptr)},
          {"criterion", to_string(c.criterion)},
          {"min_samples_leaf", c.min_samples_leaf},
          {"n_features_selected", c.n_features_selected},
          {"balanced", c.balanced},
          {"class_weights", c.class_weights},
          {"seed", c.seed},
          {"max_features", c.max_features ? json(*c.max_features) : json(nullptr)},
          {"bootstrap", c.bootstrap}};
}

ForestConfig config_from_json(const json& j) {
  ForestConfig c;
  try {
    c.n_trees = j.at("n_trees").get<std::size_t>();
    if (!j.at("max_depth").is_null()) c.max_depth = j.at("max_depth").get<std::size_t>();
    c.criterion = parse_criterion(j.at("criterion").get<std::string>());
    c.min_samples_leaf = j.at("min_samples_leaf").get<std::size_t>();
    c.n_features_selected = j.at("n_features_selected").get<std::size_t>();
    c.balanced = j.at("balanced").get<bool>();
    c.class_weights = j.at("class_weights").get<std::vector<double>>();
    c.seed = j.at("seed").get<std::uint64_t>();
    if (!j.at("max_features").is_null()) c.max_features = j.at("max_features").get<std::size_t>();
    c.bootstrap = j.at("bootstrap").get<bool>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("forest config: ") + e.what());
  }
  return c;
}

std::vector<double> balanced_weights(std::span<const double> labels, std::size_t n_classes) {
  std::vector<double> counts(n_classes, 0.0);
  for (double v : labels) counts.at(static_cast<std::size_t>(v)) += 1.0;
  const double present = static_cast<double>(std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0; }));
  std::vector<double> w(n_classes, 1.0);
  for (std::size_t k = 0; k < n_classes; ++k)
    if (counts[k] > 0) w[k] = static_cast<double>(labels.size()) / (present * counts[k]);
  return w;
}

std::span<const double> Tree::leaf(std::span<const double> row) const {
  std::size_t i = 0;
  while (nodes[i].feature >= 0) {
    const Node& n = nodes[i];
    i = static_cast<std::size_t>(row[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
  }
  return nodes[i].value;
}

std::size_t Tree::depth() const {
  std::vector<std::size_t> d(nodes.size(), 0);
  std::size_t best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    best = std::max(best, d[i]);
    if (nodes[i].feature >= 0) {
      d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
      d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
    }
  }
  return best;
}

namespace {

struct Problem {
  const features::DenseMatrix& x;
  std::span<const double> y;
  TaskKind kind;
  std::size_t n_classes;
  const ForestConfig& config;
  std::vector<double> weights;
  std::size_t mtry;
};

double impurity(std::span<const double> counts, double total, Criterion c) {
  if (total <= 0.0) return 0.0;
  double acc = 0.0;
  if (c == Criterion::Gini) {
    for (double v : counts) acc += (v / total) * (v / total);
    return 1.0 - acc;
  }
  for (double v : counts)
    if (v > 0.0) acc -= (v / total) * std::log(v / total);
  return acc;
}

double median_of(std::vector<double>& v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
  return m;
}

double abs_dev(std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double m = median_of(v);
  double s = 0.0;
  for (double a : v) s += std::abs(a - m);
  return s;
}

struct Split {
  std::int32_t feature = -1;
  double threshold = 0.0;
  double score = std::numeric_limits<double>::infinity();
};

class Builder {
public:
  Builder(const Problem& p, Rng& rng) : p_(p), rng_(rng) {
    order_.resize(p.x.cols);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
  }

  Tree build(std::vector<std::uint32_t> samples) {
    Tree tree;
    struct Work {
      std::size_t node;
      std::vector<std::uint32_t> samples;
      std::size_t depth;
    };
    tree.nodes.emplace_back();
    std::vector<Work> stack;
    stack.push_back({0, std::move(samples), 0});
    while (!stack.empty()) {
      Work w = std::move(stack.back());
      stack.pop_back();
      const Split s = should_stop(w.samples, w.depth) ? Split{} : best_split(w.samples);
      if (s.feature < 0) {
        tree.nodes[w.node].value = leaf_value(w.samples);
        continue;
      }
      std::vector<std::uint32_t> left, right;
      for (std::uint32_t i : w.samples)
        (p_.x.at(i, static_cast<std::size_t>(s.feature)) <= s.threshold ? left : right).push_back(i);
      const auto li = static_cast<std::int32_t>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      Node& n = tree.nodes[w.node];
      n.feature = s.feature;
      n.threshold = s.threshold;
      n.left = li;
      n.right = li + 1;
      stack.push_back({static_cast<std::size_t>(li + 1), std::move(right), w.depth + 1});
      stack.push_back({static_cast<std::size_t>(li), std::move(left), w.depth + 1});
    }
    return tree;
  }

private:
  bool classification() const { return p_.kind == TaskKind::Classification; }

  bool should_stop(const std::vector<std::uint32_t>& s, std::size_t depth) const {
    if (p_.config.max_depth && depth >= *p_.config.max_depth) return true;
    if (s.size() < 2 * p_.config.min_samples_leaf) return true;
    const double first = p_.y[s.front()];
    return std::all_of(s.begin(), s.end(), [&](std::uint32_t i) { return p_.y[i] == first; });
  }

  std::vector<double> leaf_value(const std::vector<std::uint32_t>& s) const {
    if (classification()) {
      std::vector<double> dist(p_.n_classes, 0.0);
      for (std::uint32_t i : s) dist[static_cast<std::size_t>(p_.y[i])] += p_.weights[static_cast<std::size_t>(p_.y[i])];
      const double total = std::accumulate(dist.begin(), dist.end(), 0.0);
      for (double& d : dist) d /= total;
      return dist;
    }
    std::vector<double> v;
    for (std::uint32_t i : s) v.push_back(p_.y[i]);
    if (p_.config.criterion == Criterion::AbsoluteError) return {median_of(v)};
    return {std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size())};
  }

  Split best_split(const std::vector<std::uint32_t>& s) {
    // Partial Fisher-Yates draw of mtry candidate features.
    const std::size_t p = order_.size();
    const std::size_t m = std::min(p_.mtry, p);
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t j = k + static_cast<std::size_t>(rng_.index(p - k));
      std::swap(order_[k], order_[j]);
    }
    Split best;
    for (std::size_t k = 0; k < m; ++k) consider(s, order_[k], best);
    return best;
  }

  void consider(const std::vector<std::uint32_t>& s, std::size_t f, Split& best) {
    const std::size_t n = s.size();
    sorted_.resize(n);
    for (std::size_t k = 0; k < n; ++k) sorted_[k] = {p_.x.at(s[k], f), s[k]};
    std::sort(sorted_.begin(), sorted_.end());
    if (sorted_.front().first == sorted_.back().first) return;
    const std::size_t leaf = p_.config.min_samples_leaf;

    auto take = [&](double score, std::size_t k) {
      // Split between sorted_[k - 1] and sorted_[k].
      if (score < best.score - 1e-12) {
        best.score = score;
        best.feature = static_cast<std::int32_t>(f);
        const double a = sorted_[k - 1].first, b = sorted_[k].first;
        best.threshold = a + 0.5 * (b - a);
        if (!(best.threshold < b)) best.threshold = a;
      }
    };

    if (classification()) {
      const std::size_t kc = p_.n_classes;
      std::vector<double> total(kc, 0.0), left(kc, 0.0), right(kc);
      for (const auto& [v, i] : sorted_) total[static_cast<std::size_t>(p_.y[i])] += p_.weights[static_cast<std::size_t>(p_.y[i])];
      const double wt = std::accumulate(total.begin(), total.end(), 0.0);
      double wl = 0.0;
      for (std::size_t k = 1; k < n; ++k) {
        const auto c = static_cast<std::size_t>(p_.y[sorted_[k - 1].second]);
        left[c] += p_.weights[c];
        wl += p_.weights[c];
        if (sorted_[k].first == sorted_[k - 1].first || k < leaf || n - k < leaf) continue;
        for (std::size_t j = 0; j < kc; ++j) right[j] = total[j] - left[j];
        const double wr = wt - wl;
        take(wl * impurity(left, wl, p_.config.criterion) + wr * impurity(right, wr, p_.config.criterion), k);
      }
      return;
    }

    if (p_.config.criterion == Criterion::SquaredError) {
      double sum = 0.0, sq = 0.0;
      for (const auto& [v, i] : sorted_) {
        sum += p_.y[i];
        sq += p_.y[i] * p_.y[i];
      }
      double ls = 0.0, lq = 0.0;
      for (std::size_t k = 1; k < n; ++k) {
        const double yv = p_.y[sorted_[k - 1].second];
        ls += yv;
        lq += yv * yv;
        if (sorted_[k].first == sorted_[k - 1].first || k < leaf || n - k < leaf) continue;
        const double nl = static_cast<double>(k), nr = static_cast<double>(n - k);
        const double sse = (lq - ls * ls / nl) + ((sq - lq) - (sum - ls) * (sum - ls) / nr);
        take(sse, k);
      }
      return;
    }

    // Absolute error: a fixed number of quantile cut candidates.
    std::vector<std::size_t> cuts;
    for (std::size_t q = 1; q <= kAbsCandidates; ++q) {
      std::size_t k = q * n / (kAbsCandidates + 1);
      while (k < n && k > 0 && sorted_[k].first == sorted_[k - 1].first) ++k;
      if (k == 0 || k >= n || k < leaf || n - k < leaf) continue;
      if (cuts.empty() || cuts.back() != k) cuts.push_back(k);
    }
    std::vector<double> l, r;
    for (std::size_t k : cuts) {
      l.clear();
      r.clear();
      for (std::size_t j = 0; j < k; ++j) l.push_back(p_.y[sorted_[j].second]);
      for (std::size_t j = k; j < n; ++j) r.push_back(p_.y[sorted_[j].second]);
      take(abs_dev(l) + abs_dev(r), k);
    }
  }

  const Problem& p_;
  Rng& rng_;
  std::vector<std::size_t> order_;
  std::vector<std::pair<double, std::uint32_t>> sorted_;
};

} // namespace

ForestModel fit_forest(const features::DenseMatrix& x, std::span<const double> y, TaskKind kind,
                       const ForestConfig& config) {
  config.validate(kind);
  if (x.rows == 0 || x.cols == 0) throw InvalidArgument("fit_forest: empty matrix");
  if (y.size() != x.rows) throw InvalidArgument("fit_forest: targets do not align with rows");
  if (!std::all_of(x.values.begin(), x.values.end(), [](double v) { return std::isfinite(v); }))
    throw InvalidArgument("fit_forest: matrix must be imputed (non-finite cell found)");

  ForestModel model;
  model.kind = kind;
  model.feature_ids = x.columns;
  model.config = config;
  if (kind == TaskKind::Classification) {
    double top = 0.0;
    for (double v : y) {
      if (v < 0.0 || v != std::floor(v)) throw InvalidArgument("fit_forest: class labels must be 0..K-1");
      top = std::max(top, v);
    }
    model.n_classes = std::max<std::size_t>(2, static_cast<std::size_t>(top) + 1);
    if (std::all_of(y.begin(), y.end(), [&](double v) { return v == y.front(); }))
      throw InvalidArgument("fit_forest: single-class target");
    if (config.balanced) {
      model.class_weights = balanced_weights(y, model.n_classes);
    } else if (!config.class_weights.empty()) {
      if (config.class_weights.size() != model.n_classes)
        throw InvalidArgument("fit_forest: one class weight per class required");
      model.class_weights = config.class_weights;
    } else {
      model.class_weights.assign(model.n_classes, 1.0);
    }
  } else {
    model.n_classes = 1;
    model.class_weights = {1.0};
  }

  const std::size_t p = x.cols;
  std::size_t mtry = kind == TaskKind::Classification
                         ? static_cast<std::size_t>(std::sqrt(static_cast<double>(p)))
                         : p / 3;
  if (config.max_features) mtry = *config.max_features;
  mtry = std::clamp<std::size_t>(mtry, 1, p);

  const Problem problem{x, y, kind, model.n_classes, config, model.class_weights, mtry};
  model.trees.resize(config.n_trees);
  parallel_for(config.n_trees, [&](std::size_t t) {
    Rng rng(derive_seed(config.seed, t));
    std::vector<std::uint32_t> samples(x.rows);
    if (config.bootstrap) {
      for (auto& s : samples) s = static_cast<std::uint32_t>(rng.index(x.rows));
      std::sort(samples.begin(), samples.end());
    } else {
      std::iota(samples.begin(), samples.end(), 0u);
    }
    Builder builder(problem, rng);
    model.trees[t] = builder.build(std::move(samples));
  });
  return model;
}

std::vector<double> predict_row(const ForestModel& model, std::span<const double> row) {
  if (row.size() != model.n_features()) throw InvalidArgument("predict: row width does not match the model");
  std::vector<double> out(model.n_outputs(), 0.0);
  for (const Tree& t : model.trees) {
    const auto v = t.leaf(row);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += v[k];
  }
  for (double& v : out) v /= static_cast<double>(model.trees.size());
  return out;
}

std::vector<double> predict(const ForestModel& model, const features::DenseMatrix& x) {
  if (x.cols != model.n_features()) throw InvalidArgument("predict: matrix width does not match the model");
  const std::size_t k = model.n_outputs();
  std::vector<double> out(x.rows * k);
  parallel_for(x.rows, [&](std::size_t r) {
    const auto v = predict_row(model, x.row(r));
    std::copy(v.begin(), v.end(), out.begin() + static_cast<std::ptrdiff_t>(r * k));
  });
  return out;
}

std::vector<double> predict_positive(const ForestModel& model, const features::DenseMatrix& x) {
  if (model.kind != TaskKind::Classification || model.n_classes != 2)
    throw InvalidArgument("predict_positive: binary classifier required");
  const auto all = predict(model, x);
  std::vector<double> out(x.rows);
  for (std::size_t r = 0; r < x.rows; ++r) out[r] = all[2 * r + 1];
  return out;
}

json model_to_json(const ForestModel& m) {
  json trees = json::array();
  for (const Tree& t : m.trees) {
    json feature = json::array(), threshold = json::array(), left = json::array(), right = json::array(),
         value = json::array();
    for (const Node& n : t.nodes) {
      feature.push_back(n.feature);
      threshold.push_back(n.threshold);
      left.push_back(n.left);
      right.push_back(n.right);
      value.push_back(n.value);
    }
    trees.push_back({{"feature", feature}, {"threshold", threshold}, {"left", left}, {"right", right}, {"value", value}});
  }
  return {{"format", "ecgfe-forest"},
          {"version", 1},
          {"kind", m.kind == TaskKind::Classification ? "classification" : "regression"},
          {"n_classes", m.n_classes},
          {"feature_ids", m.feature_ids},
          {"config", config_to_json(m.config)},
          {"class_weights", m.class_weights},
          {"trees", trees}};
}

ForestModel model_from_json(const json& j) {
  ForestModel m;
  try {
    if (j.at("format") != "ecgfe-forest" || j.at("version") != 1) throw FormatError("not a forest model (v1)");
    m.kind = j.at("kind") == "classification" ? TaskKind::Classification : TaskKind::Regression;
    m.n_classes = j.at("n_classes").get<std::size_t>();
    m.feature_ids = j.at("feature_ids").get<std::vector<std::size_t>>();
    m.config = config_from_json(j.at("config"));
    m.class_weights = j.at("class_weights").get<std::vector<double>>();
    for (const auto& jt : j.at("trees")) {
      Tree t;
      const auto feature = jt.at("feature").get<std::vector<std::int32_t>>();
      const auto threshold = jt.at("threshold").get<std::vector<double>>();
      const auto left = jt.at("left").get<std::vector<std::int32_t>>();
      const auto right = jt.at("right").get<std::vector<std::int32_t>>();
      const auto value = jt.at("value").get<std::vector<std::vector<double>>>();
      const std::size_t n = feature.size();
      if (threshold.size() != n || left.size() != n || right.size() != n || value.size() != n)
        throw FormatError("forest tree arrays differ in length");
      for (std::size_t i = 0; i < n; ++i) {
        if (feature[i] >= 0 && (left[i] <= static_cast<std::int32_t>(i) || right[i] <= static_cast<std::int32_t>(i) ||
                                static_cast<std::size_t>(std::max(left[i], right[i])) >= n ||
                                static_cast<std::size_t>(feature[i]) >= m.feature_ids.size()))
          throw FormatError("forest node references out of range");
        t.nodes.push_back({feature[i], threshold[i], left[i], right[i], value[i]});
      }
      m.trees.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("forest model: ") + e.what());
  }
  return m;
}

} // namespace ecgfe::forest

#include "ecgfe/tuner.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "ecgfe/error.hpp"

namespace ecgfe::tune {

using nlohmann::json;

namespace {

double log_uniform_int(Rng& rng, double lo, double hi) {
  const double v = std::exp(rng.uniform(std::log(lo), std::log(hi + 1.0)));
  return std::clamp(std::floor(v), lo, hi);
}

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

} // namespace

Params SearchSpace::sample(Rng& rng) const {
  Params p;
  for (const ParamSpec& s : params) {
    switch (s.kind) {
      case ParamKind::Integer:
        p[s.name] = s.lo + static_cast<double>(rng.index(static_cast<std::uint64_t>(s.hi - s.lo) + 1));
        break;
      case ParamKind::LogInteger: p[s.name] = log_uniform_int(rng, s.lo, s.hi); break;
      case ParamKind::Categorical: p[s.name] = static_cast<double>(rng.index(s.choices.size())); break;
    }
  }
  return p;
}

bool SearchSpace::contains(const Params& p) const {
  if (p.size() != params.size()) return false;
  for (const ParamSpec& s : params) {
    const auto it = p.find(s.name);
    if (it == p.end() || it->second != std::floor(it->second)) return false;
    const double v = it->second;
    if (s.kind == ParamKind::Categorical ? (v < 0 || v >= static_cast<double>(s.choices.size())) : (v < s.lo || v > s.hi))
      return false;
  }
  return true;
}

std::vector<double> SearchSpace::encode(const Params& p) const {
  std::vector<double> x;
  for (const ParamSpec& s : params) {
    const double v = p.at(s.name);
    x.push_back(s.kind == ParamKind::LogInteger ? std::log(v) : v);
  }
  return x;
}

std::uint64_t SearchSpace::cardinality() const {
  constexpr std::uint64_t cap = std::uint64_t{1} << 62;
  std::uint64_t n = 1;
  for (const ParamSpec& s : params) {
    const auto k = s.kind == ParamKind::Categorical ? static_cast<std::uint64_t>(s.choices.size())
                                                    : static_cast<std::uint64_t>(s.hi - s.lo) + 1;
    if (k != 0 && n > cap / k) return cap;
    n *= k;
  }
  return n;
}

SearchTrace tune(const SearchSpace& space, const Objective& objective, const TuneOptions& options) {
  if (options.budget == 0) throw InvalidArgument("tune: budget must be at least 1");
  for (const ParamSpec& s : space.params) {
    if (s.kind == ParamKind::Categorical ? s.choices.empty() : s.hi < s.lo)
      throw InvalidArgument("tune: empty range for " + s.name);
    if (s.kind == ParamKind::LogInteger && !(s.lo >= 1.0)) throw InvalidArgument("tune: log range must start at 1");
  }
  Rng rng(options.seed);
  SearchTrace trace;
  trace.budget = options.budget;
  std::set<std::vector<double>> seen;
  const std::uint64_t space_size = space.cardinality();

  auto evaluate = [&](const Params& p) {
    Trial t;
    t.params = p;
    try {
      const double s = objective(p);
      if (std::isfinite(s)) t.score = s;
      else t.error = "non-finite score";
    } catch (const std::exception& e) {
      t.error = e.what();
    }
    seen.insert(space.encode(p));
    trace.trials.push_back(std::move(t));
    const std::size_t i = trace.trials.size() - 1;
    if (trace.trials[i].score && (!trace.best || *trace.trials[i].score > *trace.trials[*trace.best].score))
      trace.best = i;
  };

  auto fresh = [&](std::size_t attempts) -> std::optional<Params> {
    for (std::size_t a = 0; a < attempts; ++a) {
      Params p = space.sample(rng);
      if (!seen.count(space.encode(p))) return p;
    }
    return std::nullopt;
  };

  const std::size_t warm = std::min(options.warmup, options.budget);
  while (trace.trials.size() < warm && seen.size() < space_size) {
    const auto p = fresh(1000);
    if (!p) break;
    evaluate(*p);
  }

  while (trace.trials.size() < options.budget && seen.size() < space_size) {
    std::vector<std::size_t> ok;
    for (std::size_t i = 0; i < trace.trials.size(); ++i)
      if (trace.trials[i].score) ok.push_back(i);

    std::optional<Params> proposal;
    const bool varied = ok.size() >= 2 && std::any_of(ok.begin(), ok.end(), [&](std::size_t i) {
      return *trace.trials[i].score != *trace.trials[ok.front()].score;
    });
    if (varied) {
      features::DenseMatrix x;
      x.rows = ok.size();
      x.cols = space.params.size();
      for (std::size_t c = 0; c < x.cols; ++c) x.columns.push_back(c);
      std::vector<double> y;
      for (std::size_t i : ok) {
        const auto e = space.encode(trace.trials[i].params);
        x.values.insert(x.values.end(), e.begin(), e.end());
        y.push_back(*trace.trials[i].score);
      }
      forest::ForestConfig cfg;
      cfg.n_trees = options.surrogate_trees;
      cfg.criterion = forest::Criterion::SquaredError;
      cfg.min_samples_leaf = 1;
      cfg.max_features = x.cols;
      cfg.seed = derive_seed(options.seed, trace.trials.size());
      const auto surrogate = forest::fit_forest(x, y, forest::TaskKind::Regression, cfg);
      const double best = *trace.trials[*trace.best].score;

      double best_ei = -1.0;
      for (std::size_t c = 0; c < options.candidates; ++c) {
        Params p = space.sample(rng);
        const auto e = space.encode(p);
        if (seen.count(e)) continue;
        double mean = 0.0, sq = 0.0;
        for (const auto& t : surrogate.trees) {
          const double v = t.leaf(e)[0];
          mean += v;
          sq += v * v;
        }
        const double nt = static_cast<double>(surrogate.trees.size());
        mean /= nt;
        const double sd = std::sqrt(std::max(0.0, sq / nt - mean * mean));
        double ei;
        if (sd > 1e-12) {
          const double z = (mean - best) / sd;
          ei = (mean - best) * normal_cdf(z) + sd * normal_pdf(z);
        } else {
          ei = std::max(0.0, mean - best);
        }
        if (ei > best_ei) {
          best_ei = ei;
          proposal = std::move(p);
        }
      }
    }
    if (!proposal) proposal = fresh(1000);
    if (!proposal) break;
    evaluate(*proposal);
  }
  return trace;
}

SearchSpace forest_space(const std::vector<std::size_t>& feature_counts) {
  if (feature_counts.empty()) throw InvalidArgument("forest_space: at least one feature count required");
  SearchSpace s;
  s.params.push_back({"n_trees", ParamKind::Integer, 50, 500, {}});
  s.params.push_back({"max_depth", ParamKind::Integer, 4, kUnlimitedDepth, {}});
  s.params.push_back({"min_samples_leaf", ParamKind::LogInteger, 1, 100, {}});
  s.params.push_back({"criterion", ParamKind::Categorical, 0, 0, {0, 1}});
  std::vector<double> counts(feature_counts.begin(), feature_counts.end());
  s.params.push_back({"n_features", ParamKind::Categorical, 0, 0, counts});
  return s;
}

forest::ForestConfig decode_forest(const Params& p, forest::TaskKind kind, const forest::ForestConfig& base,
                                   const std::vector<std::size_t>& feature_counts) {
  forest::ForestConfig c = base;
  c.n_trees = static_cast<std::size_t>(p.at("n_trees"));
  const double depth = p.at("max_depth");
  c.max_depth = depth >= kUnlimitedDepth ? std::nullopt : std::optional<std::size_t>(static_cast<std::size_t>(depth));
  c.min_samples_leaf = static_cast<std::size_t>(p.at("min_samples_leaf"));
  const bool second = p.at("criterion") != 0.0;
  if (kind == forest::TaskKind::Classification)
    c.criterion = second ? forest::Criterion::Entropy : forest::Criterion::Gini;
  else
    c.criterion = second ? forest::Criterion::AbsoluteError : forest::Criterion::SquaredError;
  c.n_features_selected = feature_counts.at(static_cast<std::size_t>(p.at("n_features")));
  return c;
}

json trace_to_json(const SearchTrace& trace) {
  json trials = json::array();
  for (const Trial& t : trace.trials)
    trials.push_back({{"params", t.params},
                      {"score", t.score ? json(*t.score) : json(nullptr)},
                      {"status", t.score ? "ok" : "failed"},
                      {"error", t.error}});
  return {{"budget", trace.budget},
          {"used", trace.trials.size()},
          {"best", trace.best ? json(*trace.best) : json(nullptr)},
          {"best_score", trace.best ? json(*trace.trials[*trace.best].score) : json(nullptr)},
          {"trials", trials}};
}

} // namespace ecgfe::tune

#include "ecgfe/stats.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "ecgfe/error.hpp"
#include "ecgfe/parallel.hpp"
#include "ecgfe/random.hpp"

namespace ecgfe::eval {

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw InvalidArgument("quantile: empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (values[hi] - values[lo]) * (pos - static_cast<double>(lo));
}

BootstrapResult bootstrap_rows(const RowMetricFn& metric, std::size_t n, const BootstrapOptions& options) {
  if (options.iterations == 0) throw InvalidArgument("bootstrap: iterations must be positive");
  if (!(options.fraction > 0.0 && options.fraction <= 1.0)) throw InvalidArgument("bootstrap: fraction in (0, 1]");
  const auto m = static_cast<std::size_t>(std::llround(options.fraction * static_cast<double>(n)));
  if (m == 0) throw InvalidArgument("bootstrap: subsample would be empty");

  // Failures beyond this count already exceed the allowed share of attempts.
  const double rate = std::min(options.max_failure_rate, 0.99);
  const auto retry_cap =
      static_cast<std::size_t>(std::ceil(rate / (1.0 - rate) * static_cast<double>(options.iterations))) + 1;
  BootstrapResult r;
  r.seed = options.seed;
  r.values.assign(options.iterations, 0.0);
  std::vector<std::size_t> failures(options.iterations, 0);
  std::atomic<std::size_t> total_failed{0};

  parallel_for(options.iterations, [&](std::size_t it) {
    Rng rng(derive_seed(options.seed, it));
    std::vector<std::size_t> idx(n);
    for (;;) {
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      for (std::size_t i = 0; i < m; ++i) std::swap(idx[i], idx[i + rng.index(n - i)]);
      try {
        r.values[it] = metric(std::span<const std::size_t>(idx.data(), m));
        return;
      } catch (const UndefinedMetric&) {
        ++failures[it];
        if (++total_failed > retry_cap) throw UndefinedMetric("bootstrap: metric undefined on too many subsamples");
      }
    }
  });

  r.failed_draws = std::accumulate(failures.begin(), failures.end(), std::size_t{0});
  const double attempts = static_cast<double>(options.iterations + r.failed_draws);
  if (static_cast<double>(r.failed_draws) > options.max_failure_rate * attempts)
    throw UndefinedMetric("bootstrap: metric undefined on " + std::to_string(r.failed_draws) + " of " +
                          std::to_string(static_cast<std::size_t>(attempts)) + " subsamples");
  r.mean = std::accumulate(r.values.begin(), r.values.end(), 0.0) / static_cast<double>(r.values.size());
  r.ci_low = quantile(r.values, 0.025);
  r.ci_high = quantile(r.values, 0.975);
  return r;
}

BootstrapResult bootstrap(const MetricFn& metric, std::span<const double> scores, std::span<const double> labels,
                          const BootstrapOptions& options) {
  if (scores.size() != labels.size()) throw InvalidArgument("bootstrap: length mismatch");
  return bootstrap_rows(
      [&](std::span<const std::size_t> rows) {
        std::vector<double> s(rows.size()), l(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
          s[i] = scores[rows[i]];
          l[i] = labels[rows[i]];
        }
        return metric(s, l);
      },
      scores.size(), options);
}

SignificanceReport compare(const BootstrapResult& a, const BootstrapResult& b, std::string first, std::string second) {
  const std::size_t na = a.values.size(), nb = b.values.size();
  if (na < 2 || nb < 2) throw InvalidArgument("compare: at least two values per sample");
  if (na != nb) throw InvalidArgument("compare: iteration counts differ");
  auto moments = [](const std::vector<double>& v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::pair{mean, ss};
  };
  const auto [ma, ssa] = moments(a.values);
  const auto [mb, ssb] = moments(b.values);
  const double dof = static_cast<double>(na + nb - 2);
  const double pooled = (ssa + ssb) / dof;

  // Summation leaves residue in the sums of squares of constant samples, so
  // test constancy on the values themselves.
  auto constant = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
  };
  SignificanceReport rep{std::move(first), std::move(second), 0.0, 1.0, false};
  if (pooled == 0.0 || (constant(a.values) && constant(b.values))) {
    if (a.values.front() != b.values.front() || ma != mb) {
      rep.t = a.values.front() > b.values.front() ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      rep.p_value = 0.0;
    }
  } else {
    rep.t = (ma - mb) / std::sqrt(pooled * (1.0 / static_cast<double>(na) + 1.0 / static_cast<double>(nb)));
    const boost::math::students_t dist(dof);
    rep.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(rep.t))));
  }
  rep.significant = rep.p_value < kSignificanceLevel;
  return rep;
}

nlohmann::json to_json(const BootstrapResult& r, bool with_values) {
  nlohmann::json j{{"iterations", r.values.size()}, {"mean", r.mean},     {"ci_low", r.ci_low},
                   {"ci_high", r.ci_high},          {"seed", r.seed},     {"failed_draws", r.failed_draws}};
  if (with_values) j["values"] = r.values;
  return j;
}

nlohmann::json to_json(const SignificanceReport& r) {
  nlohmann::json t = std::isfinite(r.t) ? nlohmann::json(r.t) : nlohmann::json(r.t > 0 ? "inf" : "-inf");
  return {{"pair", {r.first, r.second}}, {"t", t}, {"p_value", r.p_value}, {"significant", r.significant}};
}

std::vector<std::size_t> stratified_subsample(std::span<const int> strata, std::size_t size, std::uint64_t seed) {
  const std::size_t n = strata.size();
  if (size >= n) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[strata[i]].push_back(i);

  struct Share {
    int key;
    std::size_t take;
    double remainder;
  };
  std::vector<Share> shares;
  std::size_t taken = 0;
  for (const auto& [key, members] : groups) {
    const double exact = static_cast<double>(size) * static_cast<double>(members.size()) / static_cast<double>(n);
    const auto base = static_cast<std::size_t>(std::floor(exact));
    shares.push_back({key, base, exact - static_cast<double>(base)});
    taken += base;
  }
  std::vector<std::size_t> order(shares.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return shares[a].remainder > shares[b].remainder; });
  for (std::size_t i = 0; taken < size; i = (i + 1) % order.size()) {
    Share& s = shares[order[i]];
    if (s.take < groups[s.key].size()) {
      ++s.take;
      ++taken;
    }
  }

  Rng rng(seed);
  std::vector<std::size_t> out;
  for (const Share& s : shares) {
    std::vector<std::size_t> members = groups[s.key];
    rng.shuffle(std::span<std::size_t>(members));
    out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(s.take));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<CurvePoint> learning_curve(const CurvePipeline& pipeline, std::span<const int> strata,
                                       std::span<const CurveArm> arms, std::span<const std::uint64_t> seeds) {
  std::vector<CurvePoint> points;
  for (const CurveArm& arm : arms)
    for (std::size_t size : arm.sizes)
      for (std::uint64_t seed : seeds) {
        CurvePoint p;
        p.requested_size = size;
        p.clipped = size > strata.size();
        p.experiment = arm.experiment;
        p.seed = seed;
        const auto idx = stratified_subsample(strata, size, derive_seed(seed, size));
        p.train_size = idx.size();
        try {
          p.metric = pipeline(idx, arm.experiment, seed);
        } catch (const std::exception& e) {
          p.error = e.what();
        }
        points.push_back(std::move(p));
      }
  return points;
}

nlohmann::json to_json(const CurvePoint& p) {
  nlohmann::json j{{"train_size", p.train_size}, {"requested_size", p.requested_size}, {"clipped", p.clipped},
                   {"experiment", p.experiment},  {"seed", p.seed},
                   {"status", p.metric ? "ok" : "failed"}};
  j["metric"] = p.metric ? to_json(*p.metric) : nlohmann::json(nullptr);
  if (!p.error.empty()) j["error"] = p.error;
  return j;
}

std::string curve_csv(std::span<const CurvePoint> points) {
  std::ostringstream os;
  os.precision(10);
  os << "experiment,train_size,requested_size,clipped,seed,metric,value,status\n";
  for (const CurvePoint& p : points) {
    os << p.experiment << ',' << p.train_size << ',' << p.requested_size << ',' << (p.clipped ? 1 : 0) << ','
       << p.seed << ',';
    if (p.metric) os << to_string(p.metric->kind) << ',' << p.metric->value << ",ok\n";
    else os << ",,failed\n";
  }
  return os.str();
}

} // namespace ecgfe::eval

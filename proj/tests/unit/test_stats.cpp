#include "doctest.h"

#include <cmath>
#include <numeric>
#include <set>

#include "ecgfe/error.hpp"
#include "ecgfe/random.hpp"
#include "ecgfe/stats.hpp"

using namespace ecgfe;
using namespace ecgfe::eval;

namespace {

MetricFn auroc_fn() {
  return [](std::span<const double> s, std::span<const double> y) { return auroc(s, y); };
}

void risk_scores(std::uint64_t seed, std::vector<double>& s, std::vector<double>& y) {
  Rng rng(seed);
  s.clear();
  y.clear();
  for (int i = 0; i < 1000; ++i) {
    y.push_back(i < 50 ? 1.0 : 0.0);
    s.push_back(rng.normal(y.back(), 1.0));
  }
}

BootstrapResult sample(double mean, double sd, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  BootstrapResult r;
  for (std::size_t i = 0; i < n; ++i) r.values.push_back(rng.normal(mean, sd));
  return r;
}

} // namespace

TEST_CASE("bootstrap is deterministic under its seed") {
  std::vector<double> s, y;
  risk_scores(1, s, y);
  BootstrapOptions o;
  o.iterations = 200;
  o.seed = 5;
  const auto a = bootstrap(auroc_fn(), s, y, o), b = bootstrap(auroc_fn(), s, y, o);
  CHECK(a.ci_low == b.ci_low);
  CHECK(a.ci_high == b.ci_high);
  CHECK(a.values == b.values);
  o.seed = 6;
  CHECK(bootstrap(auroc_fn(), s, y, o).values != a.values);
}

TEST_CASE("constant metric has a zero-width interval") {
  std::vector<double> s(50, 0.1), y(50, 0.0);
  const auto r = bootstrap([](auto, auto) { return 0.42; }, s, y, {100, 0.8, 1, 0.1});
  CHECK(r.ci_low == 0.42);
  CHECK(r.ci_high == 0.42);
  CHECK(r.mean == doctest::Approx(0.42));
}

TEST_CASE("interval covers the full-set estimate") {
  int covered = 0;
  for (std::uint64_t rep = 0; rep < 100; ++rep) {
    std::vector<double> s, y;
    risk_scores(100 + rep, s, y);
    const double full = auroc(s, y);
    BootstrapOptions o;
    o.seed = rep;
    const auto r = bootstrap(auroc_fn(), s, y, o);
    covered += r.ci_low <= full && full <= r.ci_high;
  }
  CHECK(covered >= 93);
}

TEST_CASE("undefined draws are redrawn, then give up") {
  // Two positives in 100 rows: an 80% draw misses both with probability ~4%.
  std::vector<double> s(100), y(100, 0.0);
  std::iota(s.begin(), s.end(), 0.0);
  y[0] = y[1] = 1.0;
  BootstrapOptions o;
  o.iterations = 300;
  const auto r = bootstrap(auroc_fn(), s, y, o);
  CHECK(r.failed_draws > 0);
  CHECK(r.values.size() == 300);

  std::vector<double> none(100, 0.0);
  CHECK_THROWS_AS(bootstrap(auroc_fn(), s, none, o), UndefinedMetric);
}

TEST_CASE("row bootstrap sees the same subsets") {
  std::vector<double> s, y;
  risk_scores(2, s, y);
  BootstrapOptions o;
  o.iterations = 50;
  const auto a = bootstrap(auroc_fn(), s, y, o);
  const auto b = bootstrap_rows(
      [&](std::span<const std::size_t> rows) {
        std::vector<double> ss, yy;
        for (std::size_t r : rows) {
          ss.push_back(s[r]);
          yy.push_back(y[r]);
        }
        return auroc(ss, yy);
      },
      s.size(), o);
  CHECK(a.values == b.values);
}

TEST_CASE("significance") {
  const auto a = sample(0.7, 0.02, 1000, 1);
  const auto same = compare(a, a, "A", "A");
  CHECK(same.p_value == 1.0);
  CHECK_FALSE(same.significant);

  const auto far = compare(sample(0.85, 0.01, 1000, 2), sample(0.60, 0.01, 1000, 3));
  CHECK(far.p_value < 1e-12);
  CHECK(far.significant);

  auto shifted = a;
  for (double& v : shifted.values) v += 1e-9;
  CHECK_FALSE(compare(a, shifted).significant);

  BootstrapResult c1, c2;
  c1.values.assign(10, 0.5);
  c2.values.assign(10, 0.6);
  const auto degenerate = compare(c1, c2);
  CHECK(degenerate.p_value == 0.0);
  CHECK(std::isinf(degenerate.t));
  CHECK(compare(c1, c1).p_value == 1.0);
}

TEST_CASE("pooled t statistic by hand") {
  BootstrapResult a, b;
  a.values = {1, 2, 3};
  b.values = {2, 3, 4};
  // means 2 and 3, pooled variance 1, se = sqrt(2/3)
  CHECK(compare(a, b).t == doctest::Approx(-1.0 / std::sqrt(2.0 / 3.0)));
}

TEST_CASE("quantile interpolation") {
  CHECK(quantile({1, 2, 3, 4}, 0.5) == doctest::Approx(2.5));
  CHECK(quantile({5, 1, 3}, 0.0) == 1.0);
  CHECK(quantile({5, 1, 3}, 1.0) == 5.0);
}

TEST_CASE("stratified subsampling") {
  std::vector<int> strata(100, 0);
  for (int i = 0; i < 20; ++i) strata[i] = 1;
  auto all = stratified_subsample(strata, 100, 3);
  std::sort(all.begin(), all.end());
  CHECK(all.size() == 100);
  CHECK(all.back() == 99);
  CHECK(std::set<std::size_t>(all.begin(), all.end()).size() == 100);

  const auto half = stratified_subsample(strata, 50, 3);
  int ones = 0;
  for (std::size_t i : half) ones += strata[i];
  CHECK(half.size() == 50);
  CHECK(ones == 10);
  CHECK(half == stratified_subsample(strata, 50, 3));
  CHECK(half != stratified_subsample(strata, 50, 4));
}

TEST_CASE("learning curve bookkeeping") {
  std::vector<int> strata(100, 0);
  std::vector<std::vector<std::size_t>> seen;
  const CurvePipeline pipe = [&](std::span<const std::size_t> idx, const std::string& exp, std::uint64_t) {
    if (exp == "broken") throw Error("boom");
    seen.emplace_back(idx.begin(), idx.end());
    return MetricValue{MetricKind::AUROC, static_cast<double>(idx.size()) / 100.0, 10};
  };
  const std::vector<CurveArm> arms{{"FE", {100, 40}}, {"broken", {10}}};
  const std::vector<std::uint64_t> seeds{0, 1};
  const auto pts = learning_curve(pipe, strata, arms, seeds);
  REQUIRE(pts.size() == 6);
  CHECK(pts[0].train_size == 100);
  CHECK(pts[0].metric->value == 1.0);
  CHECK(pts[2].train_size == 40);
  CHECK(seen[2] != seen[3]);  // two seeds, same size
  CHECK_FALSE(pts[4].metric.has_value());
  CHECK(pts[4].error == "boom");
  CHECK(curve_csv(pts).find("broken,10,10,0,0,,,failed") != std::string::npos);

  const std::vector<CurveArm> big{{"FE", {500}}};
  const auto clipped = learning_curve(pipe, strata, big, seeds);
  CHECK(clipped[0].clipped);
  CHECK(clipped[0].train_size == 100);
}

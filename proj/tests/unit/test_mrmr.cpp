#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "ecgfe/error.hpp"
#include "ecgfe/mrmr.hpp"
#include "ecgfe/random.hpp"

using namespace ecgfe;
using namespace ecgfe::mrmr;

namespace {

Table planted(std::size_t n, std::uint64_t seed, std::vector<double>& y) {
  Rng rng(seed);
  Table t;
  t.rows = n;
  t.cols = 3;
  t.ids = {0, 1, 2};
  y.assign(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    y[r] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    t.values.insert(t.values.end(), {y[r], y[r], rng.normal()});
  }
  return t;
}

// Direct plug-in MI over the joint histogram.
double brute_mi(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> pa, pb;
  const double n = static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0 / n;
    pa[a[i]] += 1.0 / n;
    pb[b[i]] += 1.0 / n;
  }
  double mi = 0.0;
  for (const auto& [k, p] : joint) mi += p * std::log(p / (pa[k.first] * pb[k.second]));
  return mi;
}

FeatureRanking ranking(std::vector<std::size_t> order, std::string label = "y") {
  FeatureRanking r;
  r.target_label = std::move(label);
  r.ordered = std::move(order);
  r.scores.assign(r.ordered.size(), 0.0);
  return r;
}

} // namespace

TEST_CASE("planted duplicate is ranked last") {
  std::vector<double> y;
  const Table t = planted(1000, 1, y);
  const auto r = rank_mrmr(t, y, TargetKind::Binary, "y");
  CHECK(r.ordered == std::vector<std::size_t>{0, 2, 1});
}

TEST_CASE("single feature") {
  Table t;
  t.rows = 4;
  t.cols = 1;
  t.ids = {42};
  t.values = {1, 2, 3, 4};
  const std::vector<double> y{0, 0, 1, 1};
  CHECK(rank_mrmr(t, y, TargetKind::Binary, "y").ordered == std::vector<std::size_t>{42});
}

TEST_CASE("independent target scores far below its self-information") {
  Rng rng(9);
  Table t;
  t.rows = 1000;
  t.cols = 5;
  for (std::size_t c = 0; c < 5; ++c) t.ids.push_back(c);
  std::vector<double> y(1000);
  for (std::size_t r = 0; r < 1000; ++r) {
    y[r] = rng.bernoulli(0.5);
    for (std::size_t c = 0; c < 5; ++c) t.values.push_back(rng.normal());
  }
  const auto r = rank_mrmr(t, y, TargetKind::Binary, "y");
  const auto dy = discretize_target(y, TargetKind::Binary);
  CHECK(r.scores.front() * 10.0 <= mutual_information(dy, dy));
}

TEST_CASE("mutual information matches the histogram formula") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> a(300), b(300);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = rng.normal();
      b[i] = a[i] + rng.normal(0.0, 0.5 + trial * 0.1);
    }
    const auto da = discretize(a, {}, default_bins(a.size()));
    const auto db = discretize(b, {}, default_bins(b.size()));
    CHECK(mutual_information(da, db) == doctest::Approx(brute_mi(da.codes, db.codes)).epsilon(1e-12));
  }
}

TEST_CASE("missing cells take their own code") {
  const std::vector<double> v{1, 2, 3, 4};
  const std::vector<std::uint8_t> miss{0, 1, 0, 0};
  const auto d = discretize(v, miss, 2);
  CHECK(d.codes[1] == 2);
}

TEST_CASE("union of per-label top k") {
  const std::vector<FeatureRanking> rs{ranking({1, 2, 5, 3}, "a"), ranking({2, 3, 1, 5}, "b")};
  CHECK(union_select(rs, 2).selected == std::vector<std::size_t>{1, 2, 3});
  CHECK(union_select(rs, 3).selected == std::vector<std::size_t>{1, 2, 3, 5});
  const std::vector<FeatureRanking> mismatched{ranking({1, 2}, "a"), ranking({1, 3}, "b")};
  CHECK_THROWS_AS(union_select(mismatched, 1), InvalidArgument);
}

TEST_CASE("union property: monotone and equal to the set union") {
  Rng rng(12);
  for (int c = 0; c < 1000; ++c) {
    const std::size_t universe = 5 + rng.index(40), labels = 1 + rng.index(6);
    std::vector<FeatureRanking> rs;
    for (std::size_t l = 0; l < labels; ++l) {
      std::vector<std::size_t> order(universe);
      std::iota(order.begin(), order.end(), std::size_t{0});
      rng.shuffle(std::span<std::size_t>(order));
      rs.push_back(ranking(order, "l" + std::to_string(l)));
    }
    std::size_t prev = 0;
    for (std::size_t k = 1; k <= universe; ++k) {
      const auto sel = union_select(rs, k).selected;
      std::set<std::size_t> expect;
      for (const auto& r : rs) expect.insert(r.ordered.begin(), r.ordered.begin() + static_cast<std::ptrdiff_t>(k));
      REQUIRE(sel == std::vector<std::size_t>(expect.begin(), expect.end()));
      REQUIRE(sel.size() >= prev);
      prev = sel.size();
    }
    CHECK(prev == universe);
  }
}

TEST_CASE("plateau rule") {
  const auto p = plateau_pick({{10, 0.80}, {50, 0.86}, {100, 0.86}, {200, 0.861}}, 0.005);
  CHECK(p.k == 50);
  CHECK(p.plateau);
  const auto q = plateau_pick({{10, 0.5}, {20, 0.6}, {40, 0.7}}, 0.005);
  CHECK(q.k == 40);
  CHECK_FALSE(q.plateau);
}

TEST_CASE("ranking json round trip") {
  std::vector<double> y;
  const Table t = planted(200, 2, y);
  const auto r = rank_mrmr(t, y, TargetKind::Binary, "lbl");
  const auto back = ranking_from_json(ranking_to_json(r));
  CHECK(back.ordered == r.ordered);
  CHECK(back.target_label == "lbl");
}

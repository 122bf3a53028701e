#include "doctest.h"

#include <cmath>

#include "ecgfe/error.hpp"
#include "ecgfe/forest.hpp"
#include "ecgfe/random.hpp"

using namespace ecgfe;
using namespace ecgfe::forest;
using features::DenseMatrix;

namespace {

DenseMatrix matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  DenseMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.values = std::move(values);
  for (std::size_t r = 0; r < rows; ++r) m.record_ids.push_back("r" + std::to_string(r));
  for (std::size_t c = 0; c < cols; ++c) m.columns.push_back(c);
  return m;
}

double accuracy(const ForestModel& m, const DenseMatrix& x, std::span<const double> y) {
  const auto p = predict_positive(m, x);
  double ok = 0;
  for (std::size_t i = 0; i < y.size(); ++i) ok += (p[i] > 0.5) == (y[i] > 0.5);
  return ok / static_cast<double>(y.size());
}

} // namespace

TEST_CASE("separable threshold concept is learnt exactly") {
  Rng rng(1);
  std::vector<double> v, y;
  for (int i = 0; i < 500; ++i) {
    const double x = rng.normal();
    v.insert(v.end(), {x, rng.normal()});
    y.push_back(x > 0 ? 1.0 : 0.0);
  }
  const auto x = matrix(500, 2, v);
  ForestConfig c;
  c.n_trees = 25;
  c.seed = 3;
  CHECK(accuracy(fit_forest(x, y, TaskKind::Classification, c), x, y) == 1.0);
}

TEST_CASE("a single stump cannot solve XOR") {
  std::vector<double> v, y;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int rep = 0; rep < 25; ++rep) {
        v.insert(v.end(), {double(a), double(b)});
        y.push_back(double(a ^ b));
      }
  const auto x = matrix(100, 2, v);
  ForestConfig c;
  c.n_trees = 1;
  c.max_depth = 1;
  c.bootstrap = false;
  c.max_features = 2;
  CHECK(accuracy(fit_forest(x, y, TaskKind::Classification, c), x, y) <= 0.75);
}

TEST_CASE("balanced class weights") {
  std::vector<double> y(1000, 0.0);
  for (int i = 0; i < 100; ++i) y[i] = 1.0;
  const auto w = balanced_weights(y, 2);
  CHECK(w[0] == doctest::Approx(1000.0 / 1800.0));
  CHECK(w[1] == doctest::Approx(5.0));
}

TEST_CASE("fully grown tree memorises its training rows") {
  Rng rng(2);
  std::vector<double> v, y;
  for (int i = 0; i < 80; ++i) {
    v.insert(v.end(), {rng.normal(), rng.normal(), rng.normal()});
    y.push_back(rng.bernoulli(0.4));
  }
  const auto x = matrix(80, 3, v);
  ForestConfig c;
  c.n_trees = 1;
  c.bootstrap = false;
  c.max_features = 3;
  const auto m = fit_forest(x, y, TaskKind::Classification, c);
  const auto p = predict_positive(m, x);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(p[i] == (y[i] > 0.5 ? 1.0 : 0.0));
}

TEST_CASE("forest output is the mean of its trees") {
  Rng rng(5);
  std::vector<double> v, y;
  for (int i = 0; i < 60; ++i) {
    v.insert(v.end(), {rng.normal(), rng.normal()});
    y.push_back(rng.bernoulli(0.5));
  }
  const auto x = matrix(60, 2, v);
  ForestConfig c;
  c.n_trees = 2;
  c.max_depth = 3;
  c.seed = 8;
  const auto m = fit_forest(x, y, TaskKind::Classification, c);
  auto one = m, two = m;
  one.trees = {m.trees[0]};
  two.trees = {m.trees[1]};
  const auto p = predict(m, x), p1 = predict(one, x), p2 = predict(two, x);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == doctest::Approx(0.5 * (p1[i] + p2[i])).epsilon(1e-15));
}

TEST_CASE("regression on a constant target") {
  Rng rng(6);
  std::vector<double> v;
  for (int i = 0; i < 50; ++i) v.push_back(rng.normal());
  const std::vector<double> y(50, 42.5);
  const auto x = matrix(50, 1, v);
  for (Criterion crit : {Criterion::SquaredError, Criterion::AbsoluteError}) {
    ForestConfig c;
    c.criterion = crit;
    c.n_trees = 5;
    for (double p : predict(fit_forest(x, y, TaskKind::Regression, c), x)) CHECK(p == 42.5);
  }
}

TEST_CASE("model json round trip predicts identically") {
  Rng rng(7);
  std::vector<double> v, y;
  for (int i = 0; i < 100; ++i) {
    v.insert(v.end(), {rng.normal(), rng.normal()});
    y.push_back(v[v.size() - 2] + 0.1 * rng.normal());
  }
  const auto x = matrix(100, 2, v);
  ForestConfig c;
  c.n_trees = 10;
  c.criterion = Criterion::SquaredError;
  const auto m = fit_forest(x, y, TaskKind::Regression, c);
  CHECK(predict(model_from_json(model_to_json(m)), x) == predict(m, x));
  CHECK(config_from_json(config_to_json(c)).n_trees == 10);
}

TEST_CASE("invalid configurations") {
  const auto x = matrix(2, 1, {0.0, 1.0});
  const std::vector<double> y{0, 1};
  ForestConfig c;
  c.n_trees = 0;
  CHECK_THROWS_AS(fit_forest(x, y, TaskKind::Classification, c), InvalidArgument);
  ForestConfig r;
  r.criterion = Criterion::Gini;
  CHECK_THROWS_AS(fit_forest(x, y, TaskKind::Regression, r), InvalidArgument);
}

#include "doctest.h"

#include <cmath>

#include "ecgfe/error.hpp"
#include "ecgfe/metrics.hpp"
#include "ecgfe/random.hpp"
#include "oracles.hpp"

using namespace ecgfe;
using namespace ecgfe::eval;

namespace {

struct Instance {
  std::vector<double> s, y;
};

Instance random_instance(Rng& rng, std::size_t n) {
  Instance in;
  for (;;) {
    in.s.clear();
    in.y.clear();
    double pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      in.y.push_back(rng.bernoulli(0.4));
      pos += in.y.back();
      in.s.push_back(std::round(rng.uniform() * 10.0) / 10.0 + 0.3 * in.y.back());
    }
    if (pos > 0 && pos < static_cast<double>(n)) return in;
  }
}

} // namespace

TEST_CASE("AUROC examples") {
  const std::vector<double> y{0, 0, 1, 1};
  CHECK(auroc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, y) == doctest::Approx(0.75));
  CHECK(auroc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, y) == 1.0);
  CHECK(auroc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, y) == 0.5);
  CHECK_THROWS_AS(auroc(std::vector<double>{0.1, 0.2}, std::vector<double>{1, 1}), UndefinedMetric);
}

TEST_CASE("AUROC and F1max agree with brute force") {
  Rng rng(17);
  for (int t = 0; t < 300; ++t) {
    const auto in = random_instance(rng, 2 + rng.index(49));
    CHECK(auroc(in.s, in.y) == doctest::Approx(oracle::pairwise_auroc(in.s, in.y)).epsilon(1e-12));
    CHECK(std::abs(f1_max(in.s, in.y) - oracle::threshold_f1_max(in.s, in.y)) <= 1e-12);
  }
}

TEST_CASE("ROC curve endpoints") {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8}, y{0, 0, 1, 1};
  const auto roc = roc_curve(s, y);
  CHECK(std::isinf(roc.front().threshold));
  CHECK(roc.front().fpr == 0.0);
  CHECK(roc.front().tpr == 0.0);
  CHECK(roc.back().fpr == 1.0);
  CHECK(roc.back().tpr == 1.0);
}

TEST_CASE("AUPRC contract") {
  const std::vector<double> y{0, 0, 0, 1, 1, 0, 1, 0, 0, 0};
  std::vector<double> perfect;
  for (double v : y) perfect.push_back(v);
  CHECK(auprc(perfect, y) >= 0.99);
  CHECK(auprc(perfect, y) <= 1.0 + 1e-12);
  const std::vector<double> flat(y.size(), 0.3);
  CHECK(auprc(flat, y) == doctest::Approx(0.3).epsilon(1e-6));
}

TEST_CASE("raw PR area matches a threshold sweep") {
  const std::vector<double> s{0.9, 0.8, 0.1}, y{1, 0, 1};
  const auto pr = pr_curve(s, y);
  CHECK(std::abs(pr.raw_auprc - oracle::threshold_ap(s, y)) <= 0.02);
  CHECK(pr.recall_grid.size() == kPrGridPoints);
  CHECK(pr.raw.size() == 3);
}

TEST_CASE("F1max examples") {
  CHECK(f1_max(std::vector<double>{0.9, 0.8, 0.1}, std::vector<double>{1, 0, 1}) == doctest::Approx(0.8));
  CHECK(f1_max(std::vector<double>{0.9, 0.1}, std::vector<double>{1, 0}) == 1.0);
}

TEST_CASE("confusion at a threshold") {
  const std::vector<double> s{0.9, 0.6, 0.4, 0.2}, y{1, 0, 1, 0};
  const auto c = confusion_at(s, y, 0.5);
  CHECK(c.tp == 1);
  CHECK(c.fp == 1);
  CHECK(c.tn == 1);
  CHECK(c.fn == 1);
  CHECK(c.sensitivity() == 0.5);
  CHECK(c.specificity() == 0.5);
  CHECK(c.ppv() == 0.5);
  CHECK(compute(MetricKind::Se, s, y) == 0.5);
}

TEST_CASE("R2 and MAE") {
  const std::vector<double> t{10, 20, 30};
  const auto exact = r2_mae(t, t);
  CHECK(*exact.r2 == 1.0);
  CHECK(exact.mae == 0.0);
  CHECK(*r2_mae(std::vector<double>{20, 20, 20}, t).r2 == 0.0);
  const auto r = r2_mae(std::vector<double>{12, 18, 33}, t);
  CHECK(*r.r2 == doctest::Approx(0.915));
  CHECK(r.mae == doctest::Approx(7.0 / 3.0));
  CHECK_FALSE(r2_mae(t, std::vector<double>{5, 5, 5}).r2.has_value());
  CHECK_THROWS_AS(compute(MetricKind::R2, t, std::vector<double>{5, 5, 5}), UndefinedMetric);
}

TEST_CASE("metric names") {
  for (MetricKind k : {MetricKind::AUPRC, MetricKind::F1max, MetricKind::AUROC, MetricKind::R2, MetricKind::MAE,
                       MetricKind::Se, MetricKind::Sp, MetricKind::PPV})
    CHECK(parse_metric(to_string(k)) == k);
  CHECK_FALSE(higher_is_better(MetricKind::MAE));
  CHECK(higher_is_better(MetricKind::AUROC));
}

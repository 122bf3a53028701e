#include <benchmark/benchmark.h>

#include "ecgfe/features.hpp"
#include "ecgfe/forest.hpp"
#include "ecgfe/mrmr.hpp"
#include "ecgfe/nn.hpp"
#include "ecgfe/random.hpp"
#include "ecgfe/synth.hpp"

using namespace ecgfe;

namespace {

synth::GenSpec record_spec(std::uint64_t seed) {
  synth::GenSpec g;
  g.task = Task::Diagnosis;
  g.seed = seed;
  g.record_id = "bench";
  return g;
}

features::DenseMatrix random_design(std::size_t rows, std::size_t cols, std::vector<double>& y) {
  Rng rng(5);
  features::DenseMatrix x;
  x.rows = rows;
  x.cols = cols;
  y.assign(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    y[r] = rng.bernoulli(0.3) ? 1.0 : 0.0;
    for (std::size_t c = 0; c < cols; ++c) x.values.push_back(rng.normal(c < 5 ? y[r] : 0.0, 1.0));
  }
  return x;
}

} // namespace

static void BM_FeatureExtraction(benchmark::State& state) {
  const auto rec = synth::generate_record(record_spec(1)).record;
  for (auto _ : state) benchmark::DoNotOptimize(features::extract_features(rec));
}
BENCHMARK(BM_FeatureExtraction)->Unit(benchmark::kMillisecond);

static void BM_ForestFit(benchmark::State& state) {
  std::vector<double> y;
  const auto x = random_design(static_cast<std::size_t>(state.range(0)), 50, y);
  forest::ForestConfig c;
  c.n_trees = 50;
  for (auto _ : state) benchmark::DoNotOptimize(forest::fit_forest(x, y, forest::TaskKind::Classification, c));
}
BENCHMARK(BM_ForestFit)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);

static void BM_ConvForward(benchmark::State& state) {
  nn::Network net(nn::NetConfig::tiny(nn::Head::Diagnosis), 3);
  Rng rng(4);
  nn::Batch b;
  b.size = static_cast<std::size_t>(state.range(0));
  b.wave.resize(b.size * net.config().n_leads * net.config().input_length);
  for (double& v : b.wave) v = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(net.forward(b, nn::Mode::Eval));
}
BENCHMARK(BM_ConvForward)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);

static void BM_Mrmr(benchmark::State& state) {
  std::vector<double> y;
  const auto x = random_design(2000, static_cast<std::size_t>(state.range(0)), y);
  mrmr::Table t;
  t.rows = x.rows;
  t.cols = x.cols;
  t.values = x.values;
  for (std::size_t c = 0; c < t.cols; ++c) t.ids.push_back(c);
  mrmr::RankOptions o;
  o.limit = 50;
  for (auto _ : state) benchmark::DoNotOptimize(mrmr::rank_mrmr(t, y, mrmr::TargetKind::Binary, "y", o));
}
BENCHMARK(BM_Mrmr)->Arg(100)->Arg(568)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();

#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "ecgfe/error.hpp"
#include "ecgfe/nn.hpp"
#include "ecgfe/nn_train.hpp"
#include "ecgfe/synth.hpp"

using namespace ecgfe;
using namespace ecgfe::nn;

namespace {

NetConfig check_net(Head head) {
  NetConfig c = NetConfig::tiny(head);
  c.input_length = 64;
  c.stem_filters = 8;
  c.stem_kernel = 5;
  c.kernel = 5;
  c.block_filters = {8, 12};
  c.block_subsample = {4, 4};
  c.dropout = 0.0;
  return c;
}

Batch random_batch(const NetConfig& c, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Batch b;
  b.size = n;
  for (std::size_t i = 0; i < n * c.n_leads * c.input_length; ++i) b.wave.push_back(rng.normal());
  for (std::size_t i = 0; i < n * c.n_fe; ++i) b.fe.push_back(rng.normal());
  return b;
}

double max_rel_error(Network& net, const Batch& batch, const std::vector<double>& targets) {
  std::vector<Matrix> grads;
  net.loss_and_gradients(batch, targets, {}, {}, nullptr, false, grads);
  auto params = net.parameters();
  const double h = 1e-6;
  double worst = 0.0;
  std::vector<Matrix> scratch;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (Eigen::Index i = 0; i < params[p].value->size(); ++i) {
      double& w = params[p].value->data()[i];
      const double keep = w;
      w = keep + h;
      const double up = net.loss_and_gradients(batch, targets, {}, {}, nullptr, false, scratch);
      w = keep - h;
      const double down = net.loss_and_gradients(batch, targets, {}, {}, nullptr, false, scratch);
      w = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = grads[p].data()[i];
      const double err = std::abs(numeric - analytic) / std::max(std::abs(numeric) + std::abs(analytic), 1e-6);
      worst = std::max(worst, err);
    }
  return worst;
}

} // namespace

TEST_CASE("diagnosis head: shape and range") {
  Network net(NetConfig::tiny(Head::Diagnosis), 1);
  const auto b = random_batch(net.config(), 2, 5);
  const auto f = net.forward(b, Mode::Eval);
  CHECK(f.outputs.rows() == 6);
  CHECK(f.outputs.cols() == 2);
  CHECK((f.outputs.array() > 0.0).all());
  CHECK((f.outputs.array() < 1.0).all());
}

TEST_CASE("zero parameters give sigmoid(0)") {
  Network net(NetConfig::tiny(Head::Risk), 1);
  std::vector<double> zeros(net.parameter_count(), 0.0);
  net.set_flat_parameters(zeros);
  const auto f = net.forward(random_batch(net.config(), 3, 2), Mode::Eval);
  for (Eigen::Index i = 0; i < f.outputs.size(); ++i) CHECK(f.outputs.data()[i] == 0.5);
}

TEST_CASE("merged width is deep width plus engineered inputs") {
  NetConfig c = NetConfig::full(Head::Risk);
  c.n_fe = 100;
  CHECK(c.merge_width() == 420);
  NetConfig t = NetConfig::tiny(Head::Risk);
  t.n_fe = 7;
  t.hidden = {5};
  Network net(t, 3);
  const auto f = net.forward(random_batch(t, 2, 1), Mode::Eval);
  CHECK(f.penultimate.rows() == 23);
}

TEST_CASE("config validation") {
  NetConfig c = NetConfig::tiny(Head::Age);
  c.hidden = {0};
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = NetConfig::tiny(Head::Age);
  c.input_length = 100;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  Network net(NetConfig::tiny(Head::Age), 1);
  Batch bad = random_batch(net.config(), 2, 1);
  bad.wave.pop_back();
  CHECK_THROWS_AS(net.forward(bad, Mode::Eval), InvalidArgument);
}

TEST_CASE("non-finite parameter is reported") {
  Network net(NetConfig::tiny(Head::Risk), 1);
  net.parameters().front().value->data()[0] = std::nan("");
  CHECK_THROWS_AS(net.forward(random_batch(net.config(), 1, 1), Mode::Eval), Error);
}

TEST_CASE("losses") {
  Matrix half = Matrix::Constant(1, 1, 0.5);
  std::vector<double> one{1.0};
  CHECK(bce_loss(half, one) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  Matrix two(1, 2);
  two << 0.9, 0.2;
  std::vector<double> t{1.0, 0.0};
  CHECK(bce_loss(two, t) == doctest::Approx(-(std::log(0.9) + std::log(0.8)) / 2.0).epsilon(1e-12));
  CHECK(bce_loss(two, t) == doctest::Approx(0.1643).epsilon(1e-3));
  Matrix sure(1, 1);
  sure << 0.0;
  CHECK(std::isfinite(bce_loss(sure, one)));
  Matrix pred(1, 3);
  pred << 1.0, 2.0, 3.0;
  std::vector<double> truth{1.0, 2.0, 3.0};
  CHECK(mae_loss(pred, truth) == 0.0);
}

TEST_CASE("gradients match central differences") {
  for (Head head : {Head::Diagnosis, Head::Risk}) {
    NetConfig c = check_net(head);
    c.n_fe = 3;
    c.hidden = {4};
    Network net(c, 11);
    const auto b = random_batch(c, 3, 7);
    std::vector<double> targets;
    Rng rng(3);
    for (std::size_t i = 0; i < 3 * c.n_outputs(); ++i) targets.push_back(rng.bernoulli(0.5) ? 1.0 : 0.0);
    CHECK(max_rel_error(net, b, targets) < 1e-4);
  }
}

TEST_CASE("gradient linearity and zero gradient at a perfect fit") {
  NetConfig c = check_net(Head::Age);
  Network net(c, 4);
  const auto b = random_batch(c, 4, 8);
  // Constant output: zero every weight that feeds the output, then set the bias.
  auto& out = *net.parameters()[net.parameters().size() - 2].value;
  out.setZero();
  net.set_output_bias(50.0);
  std::vector<Matrix> g;
  const double loss = net.loss_and_gradients(b, std::vector<double>(4, 50.0), {}, {}, nullptr, false, g);
  CHECK(loss == 0.0);
  for (const auto& m : g) CHECK(m.cwiseAbs().maxCoeff() == 0.0);

  NetConfig r = check_net(Head::Risk);
  Network a(r, 9);
  const auto rb = random_batch(r, 4, 2);
  const std::vector<double> tgt{1, 0, 1, 0};
  const std::vector<double> w1(1, 1.0), w3(1, 3.0);
  std::vector<Matrix> g1, g3;
  a.loss_and_gradients(rb, tgt, w1, w1, nullptr, false, g1);
  a.loss_and_gradients(rb, tgt, w3, w3, nullptr, false, g3);
  for (std::size_t i = 0; i < g1.size(); ++i) CHECK((g3[i] - 3.0 * g1[i]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("merge neutrality is exact") {
  NetConfig dl = NetConfig::tiny(Head::Risk);
  dl.hidden = {6};
  NetConfig merged = dl;
  merged.n_fe = 5;
  Network a(dl, 21), b(merged, 21);
  // Copy the deep trunk and the deep part of the first merge layer.
  auto pa = a.parameters(), pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].value->cols() == pb[i].value->cols()) *pb[i].value = *pa[i].value;
    else pb[i].value->leftCols(pa[i].value->cols()) = *pa[i].value;
  }
  for (auto [m, col] : b.fe_weight_columns()) m->col(col).setZero();
  for (int trial = 0; trial < 10; ++trial) {
    Batch x = random_batch(merged, 3, 100 + static_cast<std::uint64_t>(trial));
    Batch y = x;
    y.fe.clear();
    const auto fa = a.forward(y, Mode::Eval);
    const auto fb = b.forward(x, Mode::Eval);
    CHECK((fa.outputs.array() == fb.outputs.array()).all());
  }
}

TEST_CASE("inference is deterministic") {
  Network net(NetConfig::tiny(Head::Diagnosis), 3);
  const auto b = random_batch(net.config(), 2, 4);
  const auto f1 = net.forward(b, Mode::Eval);
  const auto f2 = net.forward(b, Mode::Eval);
  CHECK((f1.outputs.array() == f2.outputs.array()).all());
}

namespace {

TrainSet random_set(const NetConfig& c, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  TrainSet s;
  s.size = n;
  s.wave_stride = c.n_leads * c.input_length;
  s.n_fe = c.n_fe;
  s.n_targets = c.n_outputs();
  for (std::size_t i = 0; i < n * s.wave_stride; ++i) s.wave.push_back(static_cast<float>(rng.normal()));
  for (std::size_t i = 0; i < n * s.n_targets; ++i) s.targets.push_back(i % 2 == 0 ? 1.0 : 0.0);
  return s;
}

} // namespace

TEST_CASE("zero learning rate leaves parameters unchanged") {
  NetConfig c = check_net(Head::Risk);
  Network net(c, 2);
  const auto before = net.flat_parameters();
  Schedule s;
  s.learning_rate = 0.0;
  s.epochs = 3;
  s.batch_size = 4;
  const auto set = random_set(c, 8, 1);
  train(net, set, set, s, default_metric(Head::Risk));
  CHECK(net.flat_parameters() == before);
}

TEST_CASE("plateau rule divides the rate by ten after five flat epochs") {
  NetConfig c = check_net(Head::Risk);
  Network net(c, 2);
  Schedule s;
  s.epochs = 12;
  s.batch_size = 4;
  const auto set = random_set(c, 8, 1);
  ValidationMetric frozen{"frozen", true, [](std::span<const double>, std::span<const double>, std::size_t) { return 0.5; }};
  const auto st = train(net, set, set, s, frozen);
  REQUIRE(st.history.size() == 13);
  for (std::size_t e = 0; e <= 5; ++e) CHECK(st.history[e].lr == 1e-3);
  for (std::size_t e = 6; e <= 10; ++e) CHECK(st.history[e].lr == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(st.history[11].lr == doctest::Approx(1e-5).epsilon(1e-15));
  for (std::size_t e = 1; e < st.history.size(); ++e) {
    const double ratio = st.history[e].lr / st.history[e - 1].lr;
    CHECK((ratio == 1.0 || std::abs(ratio - 0.1) < 1e-12));
  }
}

TEST_CASE("best checkpoint matches the best validation entry") {
  NetConfig c = check_net(Head::Age);
  Network net(c, 2);
  auto set = random_set(c, 16, 3);
  for (std::size_t i = 0; i < set.size; ++i) set.targets[i] = 40.0 + static_cast<double>(i);
  Schedule s;
  s.epochs = 6;
  s.batch_size = 8;
  s.learning_rate = 1e-2;
  const auto st = train(net, set, set, s, default_metric(Head::Age));
  double best = st.history.front().metric;
  for (const auto& h : st.history) best = std::min(best, h.metric);
  CHECK(st.best_metric == best);
  const auto out = predict(net, set);
  CHECK(default_metric(Head::Age).fn(out, set.targets, 1) == best);
}

TEST_CASE("checkpoint round trip") {
  NetConfig c = NetConfig::tiny(Head::Diagnosis);
  c.n_fe = 4;
  c.hidden = {3};
  Network net(c, 8);
  const auto path = std::filesystem::temp_directory_path() / "ecgfe_test_ckpt.bin";
  write_checkpoint(path, net, {{"epoch", 3}});
  auto cp = read_checkpoint(path);
  CHECK(cp.header.at("epoch") == 3);
  const auto a = net.flat_parameters(), b = cp.net.flat_parameters();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == static_cast<double>(static_cast<float>(a[i])));
  // A second write of the loaded model is byte-identical.
  const auto path2 = std::filesystem::temp_directory_path() / "ecgfe_test_ckpt2.bin";
  write_checkpoint(path2, cp.net, {{"epoch", 3}});
  CHECK(std::filesystem::file_size(path) == std::filesystem::file_size(path2));
  std::filesystem::remove(path);
  std::filesystem::remove(path2);
}

TEST_CASE("waveform preparation pads symmetrically") {
  synth::GenSpec g;
  g.duration_s = 8.0;
  g.seed = 4;
  const auto rec = synth::generate_record(g).record;
  NetConfig c = NetConfig::full(Head::Risk);
  const auto w = prepare_waveform(rec, c);
  REQUIRE(w.size() == 12 * 4096);
  // 3200 samples centred in 4096: 448 zeros on each side.
  CHECK(w[447] == 0.0f);
  CHECK(w[448] == rec.samples[0]);
  CHECK(w[448 + 3199] == rec.samples[3199]);
  CHECK(w[448 + 3200] == 0.0f);
}

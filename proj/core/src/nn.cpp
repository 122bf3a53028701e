#include "ecgfe/nn.hpp"

#include <algorithm>
#include <cmath>

#include "ecgfe/dsp.hpp"
#include "ecgfe/error.hpp"

namespace ecgfe::nn {

using nlohmann::json;

Head head_for(Task task) {
  switch (task) {
    case Task::Diagnosis: return Head::Diagnosis;
    case Task::Risk: return Head::Risk;
    case Task::Age: return Head::Age;
  }
  return Head::Risk;
}

NetConfig NetConfig::full(Head head) {
  NetConfig c;
  c.head = head;
  return c;
}

NetConfig NetConfig::tiny(Head head) {
  NetConfig c;
  c.head = head;
  c.input_length = 512;
  c.input_rate_hz = 50.0;
  c.stem_filters = 8;
  c.stem_kernel = 9;
  c.kernel = 9;
  c.block_filters = {12, 16};
  c.block_subsample = {4, 4};
  return c;
}

void NetConfig::validate() const {
  if (n_leads == 0 || input_length == 0) throw InvalidArgument("net: empty input shape");
  if (!(input_rate_hz > 0.0)) throw InvalidArgument("net: input rate must be positive");
  if (stem_filters == 0 || stem_kernel == 0 || kernel == 0) throw InvalidArgument("net: zero-sized convolution");
  if (block_filters.empty() || block_filters.size() != block_subsample.size())
    throw InvalidArgument("net: one filter count and one subsampling factor per block");
  std::size_t len = input_length;
  for (std::size_t i = 0; i < block_filters.size(); ++i) {
    if (block_filters[i] == 0 || block_subsample[i] == 0) throw InvalidArgument("net: zero-sized block");
    if (len % block_subsample[i] != 0) throw InvalidArgument("net: input length not divisible by subsampling");
    len /= block_subsample[i];
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("net: dropout must lie in [0, 1)");
  for (std::size_t h : hidden)
    if (h == 0) throw InvalidArgument("net: merge hidden sizes must be at least 1");
}

json config_to_json(const NetConfig& c) {
  return {{"head", c.head == Head::Diagnosis ? "diagnosis" : c.head == Head::Risk ? "risk" : "age"},
          {"n_leads", c.n_leads},
          {"input_length", c.input_length},
          {"input_rate_hz", c.input_rate_hz},
          {"stem_filters", c.stem_filters},
          {"stem_kernel", c.stem_kernel},
          {"kernel", c.kernel},
          {"block_filters", c.block_filters},
          {"block_subsample", c.block_subsample},
          {"dropout", c.dropout},
          {"n_fe", c.n_fe},
          {"hidden", c.hidden}};
}

NetConfig config_from_json(const json& j) {
  NetConfig c;
  try {
    c.head = head_for(parse_task(j.at("head").get<std::string>()));
    c.n_leads = j.at("n_leads").get<std::size_t>();
    c.input_length = j.at("input_length").get<std::size_t>();
    c.input_rate_hz = j.at("input_rate_hz").get<double>();
    c.stem_filters = j.at("stem_filters").get<std::size_t>();
    c.stem_kernel = j.at("stem_kernel").get<std::size_t>();
    c.kernel = j.at("kernel").get<std::size_t>();
    c.block_filters = j.at("block_filters").get<std::vector<std::size_t>>();
    c.block_subsample = j.at("block_subsample").get<std::vector<std::size_t>>();
    c.dropout = j.at("dropout").get<double>();
    c.n_fe = j.at("n_fe").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("net config: ") + e.what());
  }
  c.validate();
  return c;
}

Network::Network(const NetConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  stem_ = Conv1d(config_.n_leads, config_.stem_filters, config_.stem_kernel, 1);
  stem_.init(rng);
  stem_bn_ = BatchNorm(config_.stem_filters);
  std::size_t cin = config_.stem_filters;
  for (std::size_t i = 0; i < config_.block_filters.size(); ++i) {
    const std::size_t cout = config_.block_filters[i];
    Block b;
    b.subsample = config_.block_subsample[i];
    b.conv1 = Conv1d(cin, cout, config_.kernel, 1);
    b.conv1.init(rng);
    b.bn1 = BatchNorm(cout);
    b.conv2 = Conv1d(cout, cout, config_.kernel, b.subsample);
    b.conv2.init(rng);
    b.has_skip_conv = cin != cout;
    if (b.has_skip_conv) {
      b.skip = Conv1d(cin, cout, 1, 1);
      b.skip.init(rng);
    }
    b.bn2 = BatchNorm(cout);
    blocks_.push_back(std::move(b));
    cin = cout;
  }
  std::size_t width = config_.merge_width();
  for (std::size_t h : config_.hidden) {
    dense_.emplace_back(width, h);
    dense_.back().init(rng);
    width = h;
  }
  dense_.emplace_back(width, config_.n_outputs());
  dense_.back().init(rng);
}

std::vector<ParamRef> Network::parameters() {
  std::vector<ParamRef> p;
  p.push_back({"stem.conv.weight", &stem_.weight});
  p.push_back({"stem.bn.gamma", &stem_bn_.gamma});
  p.push_back({"stem.bn.beta", &stem_bn_.beta});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    Block& b = blocks_[i];
    const std::string n = "block" + std::to_string(i) + ".";
    p.push_back({n + "conv1.weight", &b.conv1.weight});
    p.push_back({n + "bn1.gamma", &b.bn1.gamma});
    p.push_back({n + "bn1.beta", &b.bn1.beta});
    p.push_back({n + "conv2.weight", &b.conv2.weight});
    if (b.has_skip_conv) p.push_back({n + "skip.weight", &b.skip.weight});
    p.push_back({n + "bn2.gamma", &b.bn2.gamma});
    p.push_back({n + "bn2.beta", &b.bn2.beta});
  }
  for (std::size_t i = 0; i < dense_.size(); ++i) {
    const std::string n = "dense" + std::to_string(i) + ".";
    p.push_back({n + "weight", &dense_[i].weight});
    p.push_back({n + "bias", &dense_[i].bias});
  }
  return p;
}

std::vector<ParamRef> Network::buffers() {
  std::vector<ParamRef> p;
  p.push_back({"stem.bn.running_mean", &stem_bn_.running_mean});
  p.push_back({"stem.bn.running_var", &stem_bn_.running_var});
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string n = "block" + std::to_string(i) + ".";
    p.push_back({n + "bn1.running_mean", &blocks_[i].bn1.running_mean});
    p.push_back({n + "bn1.running_var", &blocks_[i].bn1.running_var});
    p.push_back({n + "bn2.running_mean", &blocks_[i].bn2.running_mean});
    p.push_back({n + "bn2.running_var", &blocks_[i].bn2.running_var});
  }
  return p;
}

std::size_t Network::parameter_count() {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += static_cast<std::size_t>(p.value->size());
  return n;
}

std::vector<double> Network::flat_parameters() {
  std::vector<double> v;
  for (const auto& p : parameters()) v.insert(v.end(), p.value->data(), p.value->data() + p.value->size());
  return v;
}

void Network::set_flat_parameters(std::span<const double> values) {
  if (values.size() != parameter_count()) throw InvalidArgument("set_flat_parameters: size mismatch");
  std::size_t k = 0;
  for (const auto& p : parameters())
    for (Eigen::Index i = 0; i < p.value->size(); ++i) p.value->data()[i] = values[k++];
}

void Network::set_output_bias(double value) { dense_.back().bias.setConstant(value); }

std::vector<std::pair<Matrix*, Eigen::Index>> Network::fe_weight_columns() {
  std::vector<std::pair<Matrix*, Eigen::Index>> cols;
  for (std::size_t i = config_.deep_width(); i < config_.merge_width(); ++i)
    cols.emplace_back(&dense_.front().weight, static_cast<Eigen::Index>(i));
  return cols;
}

bool Network::finite() {
  for (const auto& p : parameters())
    if (!p.value->allFinite()) return false;
  return true;
}

Forward Network::forward(const Batch& batch, Mode mode, Rng* dropout_rng, bool update_running) {
  return run(batch, mode, dropout_rng, update_running, nullptr);
}

Forward Network::run(const Batch& batch, Mode mode, Rng* rng, bool update_running, Cache* cache) {
  const std::size_t bsz = batch.size;
  const std::size_t leads = config_.n_leads, len = config_.input_length;
  if (bsz == 0) throw InvalidArgument("forward: empty batch");
  if (batch.wave.size() != bsz * leads * len) throw InvalidArgument("forward: waveform shape mismatch");
  if (batch.fe.size() != bsz * config_.n_fe) throw InvalidArgument("forward: engineered input shape mismatch");
  if (!finite()) throw Error("forward: non-finite parameter (training diverged)");
  const bool training = mode == Mode::Train;
  Rng* drop = training ? rng : nullptr;

  Cache local;
  Cache& c = cache ? *cache : local;
  c.batch = bsz;
  Matrix x0(static_cast<Eigen::Index>(leads), static_cast<Eigen::Index>(bsz * len));
  for (std::size_t b = 0; b < bsz; ++b)
    for (std::size_t l = 0; l < leads; ++l)
      for (std::size_t t = 0; t < len; ++t)
        x0(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(b * len + t)) = batch.wave[(b * leads + l) * len + t];

  Matrix h = stem_.forward(x0, bsz, c.stem);
  h = relu(stem_bn_.forward(h, training, update_running, c.stem_bn));
  c.stem_out = h;
  Matrix x = h, y = h;
  std::size_t length = len;
  c.blocks.resize(blocks_.size());
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    Block& blk = blocks_[i];
    BlockCache& bc = c.blocks[i];
    bc.length_in = length;
    Matrix skip = blk.subsample > 1 ? maxpool(y, bsz, blk.subsample, bc.pool) : y;
    if (blk.has_skip_conv) skip = blk.skip.forward(skip, bsz, bc.cs);
    Matrix m = blk.conv1.forward(x, bsz, bc.c1);
    bc.r1 = relu(blk.bn1.forward(m, training, update_running, bc.b1));
    m = dropout(bc.r1, config_.dropout, drop, bc.m1);
    m = blk.conv2.forward(m, bsz, bc.c2);
    y = m + skip;
    bc.r2 = relu(blk.bn2.forward(y, training, update_running, bc.b2));
    x = dropout(bc.r2, config_.dropout, drop, bc.m2);
    length /= blk.subsample;
  }
  c.final_length = length;

  Forward out;
  const Matrix deep = global_average(x, bsz);
  out.penultimate.resize(static_cast<Eigen::Index>(config_.merge_width()), static_cast<Eigen::Index>(bsz));
  out.penultimate.topRows(deep.rows()) = deep;
  for (std::size_t b = 0; b < bsz; ++b)
    for (std::size_t k = 0; k < config_.n_fe; ++k)
      out.penultimate(static_cast<Eigen::Index>(config_.deep_width() + k), static_cast<Eigen::Index>(b)) =
          batch.fe[b * config_.n_fe + k];

  c.dense_in.clear();
  c.dense_out.clear();
  Matrix z = out.penultimate;
  for (std::size_t i = 0; i < dense_.size(); ++i) {
    c.dense_in.push_back(z);
    z = dense_[i].forward(z);
    if (i + 1 < dense_.size()) z = relu(z);
    c.dense_out.push_back(z);
  }
  c.logits = z;
  out.outputs = config_.head == Head::Age ? z : Matrix((1.0 + (-z.array()).exp()).inverse());
  return out;
}

double Network::loss_and_gradients(const Batch& batch, std::span<const double> targets,
                                   std::span<const double> pos_weight, std::span<const double> neg_weight,
                                   Rng* dropout_rng, bool update_running, std::vector<Matrix>& grads) {
  Cache c;
  const Forward f = run(batch, Mode::Train, dropout_rng, update_running, &c);
  const std::size_t k = config_.n_outputs(), bsz = batch.size;
  if (targets.size() != k * bsz) throw InvalidArgument("loss: target shape mismatch");
  const double loss = task_loss(config_.head, f.outputs, targets, pos_weight, neg_weight);

  // dL/dlogits.
  Matrix d(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(bsz));
  for (std::size_t b = 0; b < bsz; ++b)
    for (std::size_t j = 0; j < k; ++j) {
      const double o = f.outputs(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(b));
      const double t = targets[b * k + j];
      double g;
      if (config_.head == Head::Age) {
        g = (o > t ? 1.0 : o < t ? -1.0 : 0.0) / static_cast<double>(bsz);
      } else {
        const double w = t > 0.5 ? (pos_weight.empty() ? 1.0 : pos_weight[j]) : (neg_weight.empty() ? 1.0 : neg_weight[j]);
        g = w * (o - t) / static_cast<double>(bsz * k);
      }
      d(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(b)) = g;
    }

  auto params = parameters();
  grads.clear();
  for (const auto& p : params) grads.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
  auto slot = [&](const Matrix* m) -> Matrix& {
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params[i].value == m) return grads[i];
    throw Error("gradient slot not found");
  };

  for (std::size_t i = dense_.size(); i-- > 0;) {
    if (i + 1 < dense_.size()) d = relu_backward(d, c.dense_out[i]);
    d = dense_[i].backward(d, c.dense_in[i], slot(&dense_[i].weight), slot(&dense_[i].bias));
  }
  Matrix dx = global_average_backward(d.topRows(static_cast<Eigen::Index>(config_.deep_width())), c.final_length);
  Matrix dy = Matrix::Zero(dx.rows(), dx.cols());
  for (std::size_t i = blocks_.size(); i-- > 0;) {
    Block& blk = blocks_[i];
    BlockCache& bc = c.blocks[i];
    Matrix g = bc.m2.size() ? Matrix(dx.cwiseProduct(bc.m2)) : dx;
    g = relu_backward(g, bc.r2);
    Matrix ds = blk.bn2.backward(g, bc.b2, slot(&blk.bn2.gamma), slot(&blk.bn2.beta)) + dy;
    Matrix dm = blk.conv2.backward(ds, bc.c2, slot(&blk.conv2.weight));
    if (bc.m1.size()) dm = dm.cwiseProduct(bc.m1);
    dm = relu_backward(dm, bc.r1);
    dm = blk.bn1.backward(dm, bc.b1, slot(&blk.bn1.gamma), slot(&blk.bn1.beta));
    dx = blk.conv1.backward(dm, bc.c1, slot(&blk.conv1.weight));
    Matrix dskip = ds;
    if (blk.has_skip_conv) dskip = blk.skip.backward(dskip, bc.cs, slot(&blk.skip.weight));
    dy = blk.subsample > 1 ? maxpool_backward(dskip, bc.pool) : dskip;
  }
  Matrix dstem = relu_backward(dx + dy, c.stem_out);
  dstem = stem_bn_.backward(dstem, c.stem_bn, slot(&stem_bn_.gamma), slot(&stem_bn_.beta));
  stem_.backward(dstem, c.stem, slot(&stem_.weight));
  return loss;
}

double bce_loss(const Matrix& probs, std::span<const double> targets, std::span<const double> pos_weight,
                std::span<const double> neg_weight) {
  const auto k = static_cast<std::size_t>(probs.rows()), bsz = static_cast<std::size_t>(probs.cols());
  if (targets.size() != k * bsz) throw InvalidArgument("bce: target shape mismatch");
  double acc = 0.0;
  for (std::size_t b = 0; b < bsz; ++b)
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::clamp(probs(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(b)), kProbEps,
                                  1.0 - kProbEps);
      const double t = targets[b * k + j];
      const double w = t > 0.5 ? (pos_weight.empty() ? 1.0 : pos_weight[j]) : (neg_weight.empty() ? 1.0 : neg_weight[j]);
      acc -= w * (t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
    }
  return acc / static_cast<double>(k * bsz);
}

double mae_loss(const Matrix& outputs, std::span<const double> targets) {
  const auto n = static_cast<std::size_t>(outputs.size());
  if (targets.size() != n) throw InvalidArgument("mae: target shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(outputs.data()[i] - targets[i]);
  return acc / static_cast<double>(n);
}

double task_loss(Head head, const Matrix& outputs, std::span<const double> targets, std::span<const double> pos_weight,
                 std::span<const double> neg_weight) {
  return head == Head::Age ? mae_loss(outputs, targets) : bce_loss(outputs, targets, pos_weight, neg_weight);
}

std::vector<float> prepare_waveform(const EcgRecord& record, const NetConfig& config) {
  record.spec.validate();
  if (record.spec.n_leads != config.n_leads) throw InvalidArgument("prepare_waveform: lead count mismatch");
  const std::size_t len = config.input_length;
  std::vector<float> out(config.n_leads * len, 0.0f);
  for (std::size_t l = 0; l < config.n_leads; ++l) {
    const auto raw = record.lead(l);
    std::vector<double> x(raw.begin(), raw.end());
    for (double& v : x)
      if (!std::isfinite(v)) v = 0.0;
    if (record.spec.sampling_rate_hz != config.input_rate_hz)
      x = dsp::resample(x, record.spec.sampling_rate_hz, config.input_rate_hz);
    // Centre crop or symmetric zero padding.
    const std::size_t m = x.size();
    const std::size_t skip = m > len ? (m - len) / 2 : 0;
    const std::size_t offset = m < len ? (len - m) / 2 : 0;
    const std::size_t n = std::min(m, len);
    for (std::size_t t = 0; t < n; ++t) out[l * len + offset + t] = static_cast<float>(x[skip + t]);
  }
  return out;
}

} // namespace ecgfe::nn

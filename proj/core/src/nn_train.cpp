#include "ecgfe/nn_train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "ecgfe/error.hpp"
#include "ecgfe/metrics.hpp"
#include "ecgfe/parallel.hpp"

namespace ecgfe::nn {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

Batch TrainSet::batch(std::span<const std::size_t> items) const {
  Batch b;
  b.size = items.size();
  b.wave.reserve(items.size() * wave_stride);
  b.fe.reserve(items.size() * n_fe);
  for (std::size_t i : items) {
    const float* w = wave.data() + i * wave_stride;
    b.wave.insert(b.wave.end(), w, w + wave_stride);
    const double* f = fe.data() + i * n_fe;
    b.fe.insert(b.fe.end(), f, f + n_fe);
  }
  return b;
}

std::vector<double> targets_for(Head head, const TaskLabels& labels) {
  switch (head) {
    case Head::Diagnosis: {
      if (!labels.arrhythmia) throw InvalidArgument("targets: record has no arrhythmia labels");
      std::vector<double> t;
      for (bool v : *labels.arrhythmia) t.push_back(v ? 1.0 : 0.0);
      return t;
    }
    case Head::Risk:
      if (!labels.af_risk) throw InvalidArgument("targets: record has no AF-risk label");
      return {*labels.af_risk ? 1.0 : 0.0};
    case Head::Age:
      if (!labels.age_years) throw InvalidArgument("targets: record has no age label");
      return {*labels.age_years};
  }
  return {};
}

TrainSet make_train_set(const Dataset& dataset, std::span<const std::string> record_ids, const NetConfig& config,
                        const features::DenseMatrix* fe) {
  config.validate();
  TrainSet s;
  s.size = record_ids.size();
  s.wave_stride = config.n_leads * config.input_length;
  s.n_fe = config.n_fe;
  s.n_targets = config.n_outputs();
  s.record_ids.assign(record_ids.begin(), record_ids.end());
  if (config.n_fe > 0 && (fe == nullptr || fe->cols != config.n_fe))
    throw InvalidArgument("make_train_set: engineered inputs do not match the network width");
  s.wave.resize(s.size * s.wave_stride);
  s.fe.resize(s.size * s.n_fe);
  s.targets.resize(s.size * s.n_targets);

  std::vector<std::size_t> rows(s.size);
  for (std::size_t i = 0; i < s.size; ++i) {
    const auto r = dataset.find(record_ids[i]);
    if (!r) throw InvalidArgument("make_train_set: unknown record " + record_ids[i]);
    rows[i] = *r;
    const auto t = targets_for(config.head, dataset.header(*r).labels);
    std::copy(t.begin(), t.end(), s.targets.begin() + static_cast<std::ptrdiff_t>(i * s.n_targets));
    if (s.n_fe > 0) {
      const auto fr = fe->row_of(record_ids[i]);
      if (!fr) throw InvalidArgument("make_train_set: no engineered features for " + record_ids[i]);
      const auto src = fe->row(*fr);
      std::copy(src.begin(), src.end(), s.fe.begin() + static_cast<std::ptrdiff_t>(i * s.n_fe));
    }
  }
  for (double v : s.fe)
    if (!std::isfinite(v)) throw InvalidArgument("make_train_set: engineered inputs must be finite");
  parallel_for(s.size, [&](std::size_t i) {
    const auto w = prepare_waveform(dataset.record(rows[i]), config);
    std::copy(w.begin(), w.end(), s.wave.begin() + static_cast<std::ptrdiff_t>(i * s.wave_stride));
  });
  return s;
}

ValidationMetric default_metric(Head head) {
  using Fn = decltype(ValidationMetric::fn);
  auto column = [](std::span<const double> v, std::size_t k, std::size_t j) {
    std::vector<double> c;
    for (std::size_t i = j; i < v.size(); i += k) c.push_back(v[i]);
    return c;
  };
  switch (head) {
    case Head::Diagnosis:
      return {"mean_auprc", true, Fn([column](std::span<const double> out, std::span<const double> tgt, std::size_t k) {
                double acc = 0.0;
                std::size_t used = 0;
                for (std::size_t j = 0; j < k; ++j) {
                  const auto y = column(tgt, k, j);
                  if (std::none_of(y.begin(), y.end(), [](double v) { return v > 0.5; })) continue;
                  acc += eval::auprc(column(out, k, j), y);
                  ++used;
                }
                if (used == 0) throw UndefinedMetric("mean_auprc: no label has positives");
                return acc / static_cast<double>(used);
              })};
    case Head::Risk:
      return {"auroc", true,
              Fn([](std::span<const double> out, std::span<const double> tgt, std::size_t) { return eval::auroc(out, tgt); })};
    case Head::Age:
      return {"mae", false, Fn([](std::span<const double> out, std::span<const double> tgt, std::size_t) {
                return eval::r2_mae(out, tgt).mae;
              })};
  }
  throw InvalidArgument("default_metric: unknown head");
}

std::vector<double> predict(Network& net, const TrainSet& set, std::size_t batch_size) {
  if (batch_size == 0) throw InvalidArgument("predict: batch size must be positive");
  const std::size_t k = net.config().n_outputs();
  std::vector<double> out(set.size * k);
  std::vector<std::size_t> items;
  for (std::size_t start = 0; start < set.size; start += batch_size) {
    const std::size_t end = std::min(set.size, start + batch_size);
    items.resize(end - start);
    std::iota(items.begin(), items.end(), start);
    const Forward f = net.forward(set.batch(items), Mode::Eval);
    for (std::size_t b = 0; b < items.size(); ++b)
      for (std::size_t j = 0; j < k; ++j)
        out[(start + b) * k + j] = f.outputs(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(b));
  }
  return out;
}

double evaluate_loss(Network& net, const TrainSet& set, std::span<const double> pos_weight,
                     std::span<const double> neg_weight, std::size_t batch_size) {
  if (set.size == 0) throw InvalidArgument("evaluate_loss: empty set");
  const auto out = predict(net, set, batch_size);
  const std::size_t k = net.config().n_outputs();
  const Matrix m = Eigen::Map<const Matrix>(out.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(set.size));
  return task_loss(net.config().head, m, set.targets, pos_weight, neg_weight);
}

namespace {

struct Snapshot {
  std::vector<Matrix> params, buffers;
};

Snapshot take(Network& net) {
  Snapshot s;
  for (const auto& p : net.parameters()) s.params.push_back(*p.value);
  for (const auto& p : net.buffers()) s.buffers.push_back(*p.value);
  return s;
}

void restore(Network& net, const Snapshot& s) {
  auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) *params[i].value = s.params[i];
  auto buffers = net.buffers();
  for (std::size_t i = 0; i < buffers.size(); ++i) *buffers[i].value = s.buffers[i];
}

} // namespace

TrainState train(Network& net, const TrainSet& train_set, const TrainSet& validation, const Schedule& schedule,
                 const ValidationMetric& metric, const EpochCallback& on_epoch) {
  const NetConfig& cfg = net.config();
  if (train_set.size == 0) throw InvalidArgument("train: empty training set");
  if (schedule.batch_size == 0) throw InvalidArgument("train: batch size must be positive");
  if (!(schedule.learning_rate >= 0.0) || !(schedule.lr_factor > 0.0 && schedule.lr_factor <= 1.0))
    throw InvalidArgument("train: invalid learning-rate schedule");
  if (schedule.patience == 0) throw InvalidArgument("train: patience must be at least 1");
  if (train_set.n_targets != cfg.n_outputs() || train_set.n_fe != cfg.n_fe ||
      train_set.wave_stride != cfg.n_leads * cfg.input_length)
    throw InvalidArgument("train: training set does not match the network");

  TrainState st;
  st.lr = schedule.learning_rate;
  const bool use_validation = validation.size > 0;
  st.metric_name = use_validation ? metric.name : "train_loss";
  st.higher_is_better = use_validation ? metric.higher_is_better : false;

  const std::size_t k = cfg.n_outputs();
  if (cfg.head != Head::Age && schedule.class_weights) {
    st.pos_weight.assign(k, 1.0);
    st.neg_weight.assign(k, 1.0);
    const double n = static_cast<double>(train_set.size);
    for (std::size_t j = 0; j < k; ++j) {
      double pos = 0.0;
      for (std::size_t i = 0; i < train_set.size; ++i) pos += train_set.targets[i * k + j] > 0.5 ? 1.0 : 0.0;
      if (pos > 0.0 && pos < n) {
        st.pos_weight[j] = n / (2.0 * pos);
        st.neg_weight[j] = n / (2.0 * (n - pos));
      }
    }
  }

  auto params = net.parameters();
  for (const auto& p : params) {
    st.m.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
    st.v.push_back(Matrix::Zero(p.value->rows(), p.value->cols()));
  }

  auto validate = [&]() {
    try {
      if (!use_validation) return evaluate_loss(net, train_set, st.pos_weight, st.neg_weight);
      const auto out = predict(net, validation);
      return metric.fn(out, validation.targets, k);
    } catch (const UndefinedMetric&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };
  auto better = [&](double a, double b) {
    if (std::isnan(a)) return false;
    if (std::isnan(b)) return true;
    return st.higher_is_better ? a > b : a < b;
  };

  st.best_metric = validate();
  st.history.push_back({0, std::numeric_limits<double>::quiet_NaN(), st.best_metric, st.lr});
  if (on_epoch) on_epoch(st.history.back());
  Snapshot best = take(net);
  Snapshot last = best;

  std::vector<std::size_t> order(train_set.size);
  std::vector<Matrix> grads;
  for (std::size_t epoch = 1; epoch <= schedule.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (schedule.shuffle) {
      Rng shuffle_rng(derive_seed(schedule.seed, 2 * epoch));
      shuffle_rng.shuffle(std::span<std::size_t>(order));
    }
    Rng drop_rng(derive_seed(schedule.seed, 2 * epoch + 1));
    double loss_sum = 0.0;
    std::size_t loss_items = 0;
    for (std::size_t start = 0; start < order.size() && !st.diverged; start += schedule.batch_size) {
      const std::size_t end = std::min(order.size(), start + schedule.batch_size);
      const std::span<const std::size_t> items(order.data() + start, end - start);
      const Batch batch = train_set.batch(items);
      std::vector<double> targets;
      for (std::size_t i : items) {
        const auto t = train_set.target_row(i);
        targets.insert(targets.end(), t.begin(), t.end());
      }
      double loss;
      try {
        loss = net.loss_and_gradients(batch, targets, st.pos_weight, st.neg_weight, &drop_rng, true, grads);
      } catch (const Error&) {
        if (net.finite()) throw;
        loss = std::numeric_limits<double>::quiet_NaN();
      }
      if (!std::isfinite(loss)) {
        st.diverged = true;
        break;
      }
      loss_sum += loss * static_cast<double>(items.size());
      loss_items += items.size();

      ++st.step;
      const double c1 = 1.0 - std::pow(schedule.beta1, static_cast<double>(st.step));
      const double c2 = 1.0 - std::pow(schedule.beta2, static_cast<double>(st.step));
      for (std::size_t p = 0; p < params.size(); ++p) {
        st.m[p] = schedule.beta1 * st.m[p] + (1.0 - schedule.beta1) * grads[p];
        st.v[p] = schedule.beta2 * st.v[p] + (1.0 - schedule.beta2) * grads[p].cwiseAbs2();
        *params[p].value -= (st.lr * (st.m[p] / c1).array() / ((st.v[p] / c2).array().sqrt() + schedule.adam_eps)).matrix();
      }
    }
    if (st.diverged || !net.finite()) {
      st.diverged = true;
      restore(net, last);
      break;
    }

    const double m = validate();
    st.epoch = epoch;
    st.history.push_back({epoch, loss_sum / static_cast<double>(loss_items), m, st.lr});
    if (better(m, st.best_metric)) {
      st.best_metric = m;
      st.best_epoch = epoch;
      st.since_improvement = 0;
      best = take(net);
    } else if (++st.since_improvement >= schedule.patience) {
      st.lr *= schedule.lr_factor;
      st.since_improvement = 0;
    }
    last = take(net);
    if (on_epoch) on_epoch(st.history.back());
    if (schedule.early_stop > 0 && epoch - st.best_epoch >= schedule.early_stop) break;
    if (schedule.target_loss && st.history.back().train_loss < *schedule.target_loss) break;
  }
  restore(net, best);
  return st;
}

void write_checkpoint(const std::filesystem::path& path, Network& net, const json& extra) {
  json header = extra.is_object() ? extra : json::object();
  header["format"] = "ecgfe-net";
  header["version"] = kCheckpointVersion;
  header["config"] = config_to_json(net.config());
  json tensors = json::array();
  std::vector<float> blob;
  auto add = [&](const std::vector<ParamRef>& refs, const char* group) {
    for (const auto& p : refs) {
      tensors.push_back({{"name", p.name}, {"group", group}, {"rows", p.value->rows()}, {"cols", p.value->cols()}});
      for (Eigen::Index i = 0; i < p.value->size(); ++i) blob.push_back(static_cast<float>(p.value->data()[i]));
    }
  };
  add(net.parameters(), "parameter");
  add(net.buffers(), "buffer");
  header["tensors"] = tensors;
  const std::string text = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write checkpoint " + path.string());
  os.write("ECGN", 4);
  const std::uint32_t version = kCheckpointVersion, length = static_cast<std::uint32_t>(text.size());
  os.write(reinterpret_cast<const char*>(&version), 4);
  os.write(reinterpret_cast<const char*>(&length), 4);
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  os.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size() * sizeof(float)));
  if (!os) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || bytes.compare(0, 4, "ECGN") != 0) throw FormatError("checkpoint: bad magic");
  std::uint32_t version = 0, length = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  std::memcpy(&length, bytes.data() + 8, 4);
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  if (bytes.size() < 12 + static_cast<std::size_t>(length)) throw FormatError("checkpoint: truncated header");

  Checkpoint cp;
  try {
    cp.header = json::parse(bytes.substr(12, length));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  cp.net = Network(config_from_json(cp.header.at("config")), 0);
  auto refs = cp.net.parameters();
  const auto buffers = cp.net.buffers();
  refs.insert(refs.end(), buffers.begin(), buffers.end());
  const json& tensors = cp.header.at("tensors");
  if (tensors.size() != refs.size()) throw FormatError("checkpoint: tensor count mismatch");
  std::size_t offset = 12 + length;
  for (std::size_t t = 0; t < refs.size(); ++t) {
    Matrix& m = *refs[t].value;
    if (tensors[t].at("name") != refs[t].name || tensors[t].at("rows") != m.rows() || tensors[t].at("cols") != m.cols())
      throw FormatError("checkpoint: unexpected tensor " + tensors[t].at("name").get<std::string>());
    const std::size_t n = static_cast<std::size_t>(m.size());
    if (offset + n * sizeof(float) > bytes.size()) throw FormatError("checkpoint: truncated parameters");
    for (std::size_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, bytes.data() + offset + i * sizeof(float), sizeof(float));
      m.data()[i] = f;
    }
    offset += n * sizeof(float);
  }
  if (offset != bytes.size()) throw FormatError("checkpoint: trailing bytes");
  return cp;
}

std::string history_csv(std::span<const EpochRecord> history) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,loss,metric,lr\n";
  for (const EpochRecord& r : history) os << r.epoch << ',' << r.train_loss << ',' << r.metric << ',' << r.lr << '\n';
  return os.str();
}

} // namespace ecgfe::nn

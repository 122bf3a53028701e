#include "ecgfe/nn_layers.hpp"

#include <cmath>

#include "ecgfe/error.hpp"

namespace ecgfe::nn {

namespace {

void he_uniform(Matrix& w, std::size_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-limit, limit);
}

} // namespace

Conv1d::Conv1d(std::size_t cin_, std::size_t cout_, std::size_t kernel_, std::size_t stride_)
    : cin(cin_), cout(cout_), kernel(kernel_), stride(stride_),
      weight(Matrix::Zero(static_cast<Eigen::Index>(cout_), static_cast<Eigen::Index>(cin_ * kernel_))) {}

void Conv1d::init(Rng& rng) { he_uniform(weight, cin * kernel, rng); }

Matrix Conv1d::forward(const Matrix& x, std::size_t batch, Cache& cache) const {
  if (static_cast<std::size_t>(x.rows()) != cin) throw InvalidArgument("conv: channel mismatch");
  const std::size_t lin = static_cast<std::size_t>(x.cols()) / batch;
  if (lin % stride != 0) throw InvalidArgument("conv: length not divisible by stride");
  const std::size_t lout = lin / stride;
  const auto pad = static_cast<std::ptrdiff_t>((kernel - 1) / 2);
  cache.batch = batch;
  cache.length_in = lin;
  cache.cols.setZero(static_cast<Eigen::Index>(cin * kernel), static_cast<Eigen::Index>(batch * lout));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < lout; ++t) {
      const auto col = static_cast<Eigen::Index>(b * lout + t);
      for (std::size_t j = 0; j < kernel; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + j) - pad;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(lin)) continue;
        const auto xc = static_cast<Eigen::Index>(b * lin + static_cast<std::size_t>(src));
        for (std::size_t ci = 0; ci < cin; ++ci)
          cache.cols(static_cast<Eigen::Index>(ci * kernel + j), col) = x(static_cast<Eigen::Index>(ci), xc);
      }
    }
  return weight * cache.cols;
}

Matrix Conv1d::backward(const Matrix& dy, const Cache& cache, Matrix& grad) const {
  grad.noalias() += dy * cache.cols.transpose();
  const Matrix dcols = weight.transpose() * dy;
  const std::size_t lin = cache.length_in, lout = lin / stride;
  const auto pad = static_cast<std::ptrdiff_t>((kernel - 1) / 2);
  Matrix dx = Matrix::Zero(static_cast<Eigen::Index>(cin), static_cast<Eigen::Index>(cache.batch * lin));
  for (std::size_t b = 0; b < cache.batch; ++b)
    for (std::size_t t = 0; t < lout; ++t) {
      const auto col = static_cast<Eigen::Index>(b * lout + t);
      for (std::size_t j = 0; j < kernel; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t * stride + j) - pad;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(lin)) continue;
        const auto xc = static_cast<Eigen::Index>(b * lin + static_cast<std::size_t>(src));
        for (std::size_t ci = 0; ci < cin; ++ci)
          dx(static_cast<Eigen::Index>(ci), xc) += dcols(static_cast<Eigen::Index>(ci * kernel + j), col);
      }
    }
  return dx;
}

BatchNorm::BatchNorm(std::size_t channels) {
  const auto c = static_cast<Eigen::Index>(channels);
  gamma = Matrix::Ones(c, 1);
  beta = Matrix::Zero(c, 1);
  running_mean = Matrix::Zero(c, 1);
  running_var = Matrix::Ones(c, 1);
}

Matrix BatchNorm::forward(const Matrix& x, bool training, bool update_running, Cache& cache) {
  const Eigen::Index n = x.cols();
  Vector mean, var;
  if (training) {
    mean = x.rowwise().mean();
    var = (x.colwise() - mean).array().square().rowwise().mean();
    if (update_running) {
      running_mean = kMomentum * running_mean + (1.0 - kMomentum) * mean;
      const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
      running_var = kMomentum * running_var + (1.0 - kMomentum) * unbias * var;
    }
  } else {
    mean = running_mean.col(0);
    var = running_var.col(0);
  }
  cache.inv_std = (var.array() + kEps).rsqrt();
  cache.xhat = (x.colwise() - mean).array().colwise() * cache.inv_std.array();
  return (cache.xhat.array().colwise() * gamma.col(0).array()).colwise() + beta.col(0).array();
}

Matrix BatchNorm::backward(const Matrix& dy, const Cache& cache, Matrix& dgamma, Matrix& dbeta) const {
  const double n = static_cast<double>(dy.cols());
  dbeta.col(0) += dy.rowwise().sum();
  dgamma.col(0) += (dy.array() * cache.xhat.array()).rowwise().sum().matrix();
  const Matrix dxhat = dy.array().colwise() * gamma.col(0).array();
  const Vector sum_dxhat = dxhat.rowwise().sum();
  const Vector sum_dxhat_xhat = (dxhat.array() * cache.xhat.array()).rowwise().sum();
  Matrix dx = (n * dxhat.array() - (cache.xhat.array().colwise() * sum_dxhat_xhat.array())).colwise() -
              sum_dxhat.array();
  return dx.array().colwise() * (cache.inv_std.array() / n);
}

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

Matrix relu_backward(const Matrix& dy, const Matrix& out) {
  return (out.array() > 0.0).select(dy, 0.0);
}

Matrix dropout(const Matrix& x, double p, Rng* rng, Matrix& mask) {
  if (p <= 0.0 || rng == nullptr) {
    mask.resize(0, 0);
    return x;
  }
  mask.resize(x.rows(), x.cols());
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng->uniform() < p ? 0.0 : keep;
  return x.cwiseProduct(mask);
}

Matrix maxpool(const Matrix& x, std::size_t batch, std::size_t pool, MaxPoolCache& cache) {
  const std::size_t lin = static_cast<std::size_t>(x.cols()) / batch;
  if (lin % pool != 0) throw InvalidArgument("maxpool: length not divisible by pool size");
  const std::size_t lout = lin / pool;
  cache.rows = static_cast<std::size_t>(x.rows());
  cache.cols_in = static_cast<std::size_t>(x.cols());
  cache.argmax.assign(cache.rows * batch * lout, 0);
  Matrix y(x.rows(), static_cast<Eigen::Index>(batch * lout));
  for (std::size_t c = 0; c < cache.rows; ++c)
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < lout; ++t) {
        std::size_t best = b * lin + t * pool;
        for (std::size_t q = 1; q < pool; ++q) {
          const std::size_t i = b * lin + t * pool + q;
          if (x(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(i)) >
              x(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(best)))
            best = i;
        }
        const std::size_t o = b * lout + t;
        cache.argmax[c * batch * lout + o] = best;
        y(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(o)) =
            x(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(best));
      }
  return y;
}

Matrix maxpool_backward(const Matrix& dy, const MaxPoolCache& cache) {
  Matrix dx = Matrix::Zero(static_cast<Eigen::Index>(cache.rows), static_cast<Eigen::Index>(cache.cols_in));
  const auto outs = static_cast<std::size_t>(dy.cols());
  for (std::size_t c = 0; c < cache.rows; ++c)
    for (std::size_t o = 0; o < outs; ++o)
      dx(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(cache.argmax[c * outs + o])) +=
          dy(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(o));
  return dx;
}

Matrix global_average(const Matrix& x, std::size_t batch) {
  const auto len = x.cols() / static_cast<Eigen::Index>(batch);
  Matrix y(x.rows(), static_cast<Eigen::Index>(batch));
  for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(batch); ++b)
    y.col(b) = x.middleCols(b * len, len).rowwise().mean();
  return y;
}

Matrix global_average_backward(const Matrix& dy, std::size_t length) {
  const auto len = static_cast<Eigen::Index>(length);
  Matrix dx(dy.rows(), dy.cols() * len);
  for (Eigen::Index b = 0; b < dy.cols(); ++b)
    dx.middleCols(b * len, len) = (dy.col(b) / static_cast<double>(length)).replicate(1, len);
  return dx;
}

Dense::Dense(std::size_t in, std::size_t out)
    : weight(Matrix::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in))),
      bias(Matrix::Zero(static_cast<Eigen::Index>(out), 1)) {}

void Dense::init(Rng& rng) {
  he_uniform(weight, static_cast<std::size_t>(weight.cols()), rng);
  bias.setZero();
}

Matrix Dense::forward(const Matrix& x) const {
  if (x.rows() != weight.cols()) throw InvalidArgument("dense: input width mismatch");
  Matrix y(weight.rows(), x.cols());
  for (Eigen::Index b = 0; b < x.cols(); ++b)
    for (Eigen::Index j = 0; j < weight.rows(); ++j) {
      double acc = bias(j, 0);
      for (Eigen::Index i = 0; i < weight.cols(); ++i) acc += weight(j, i) * x(i, b);
      y(j, b) = acc;
    }
  return y;
}

Matrix Dense::backward(const Matrix& dy, const Matrix& x, Matrix& dweight, Matrix& dbias) const {
  dweight.noalias() += dy * x.transpose();
  dbias.col(0) += dy.rowwise().sum();
  return weight.transpose() * dy;
}

} // namespace ecgfe::nn

#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "ecgfe/random.hpp"

// Building blocks of the 1-D residual network. Activations are channel-major
// matrices: rows are channels, column b * L + t is time step t of batch item b.
namespace ecgfe::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Bias-free convolution, "same"-style padding: output length is L / stride and
/// output t reads inputs t * stride + j - (k - 1) / 2 for j in [0, k).
struct Conv1d {
  std::size_t cin = 0, cout = 0, kernel = 1, stride = 1;
  /// cout x (cin * kernel); column ci * kernel + j.
  Matrix weight;

  struct Cache {
    Matrix cols;
    std::size_t batch = 0, length_in = 0;
  };

  Conv1d() = default;
  Conv1d(std::size_t cin, std::size_t cout, std::size_t kernel, std::size_t stride);
  void init(Rng& rng);
  Matrix forward(const Matrix& x, std::size_t batch, Cache& cache) const;
  /// Returns dL/dx; accumulates dL/dweight into grad.
  Matrix backward(const Matrix& dy, const Cache& cache, Matrix& grad) const;
};

struct BatchNorm {
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.9;

  Matrix gamma, beta;
  Matrix running_mean, running_var;

  struct Cache {
    Matrix xhat;
    Vector inv_std;
  };

  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels);
  /// training: batch statistics (and running-average update when update_running).
  Matrix forward(const Matrix& x, bool training, bool update_running, Cache& cache);
  Matrix backward(const Matrix& dy, const Cache& cache, Matrix& dgamma, Matrix& dbeta) const;
};

Matrix relu(const Matrix& x);
/// Gradient through a ReLU given its output.
Matrix relu_backward(const Matrix& dy, const Matrix& out);

/// Inverted dropout; mask holds 0 or 1 / (1 - p).
Matrix dropout(const Matrix& x, double p, Rng* rng, Matrix& mask);

struct MaxPoolCache {
  std::vector<std::size_t> argmax;
  std::size_t rows = 0, cols_in = 0;
};
Matrix maxpool(const Matrix& x, std::size_t batch, std::size_t pool, MaxPoolCache& cache);
Matrix maxpool_backward(const Matrix& dy, const MaxPoolCache& cache);

/// Mean over time: channels x batch.
Matrix global_average(const Matrix& x, std::size_t batch);
Matrix global_average_backward(const Matrix& dy, std::size_t length);

/// Fully connected layer evaluated with explicit loops so that the summation
/// order is fixed: y_j = b_j + sum_i w_ji x_i, i ascending.
struct Dense {
  Matrix weight;  // out x in
  Matrix bias;    // out x 1

  Dense() = default;
  Dense(std::size_t in, std::size_t out);
  void init(Rng& rng);
  /// x: in x batch.
  Matrix forward(const Matrix& x) const;
  Matrix backward(const Matrix& dy, const Matrix& x, Matrix& dweight, Matrix& dbias) const;
};

} // namespace ecgfe::nn

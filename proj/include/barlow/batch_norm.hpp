#ifndef BARLOW_BATCH_NORM_HPP_
#define BARLOW_BATCH_NORM_HPP_

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "barlow/error.hpp"
#include "barlow/matrix.hpp"

namespace barlow {

/**
 * Learnable affine batch normalization over the rows of a B x P batch.
 *
 * gamma/beta are 1 x P so the optimizer can treat them like any other
 * parameter tensor. Running statistics are only read in evaluation mode and are
 * updated explicitly by the trainer, never by the forward pass itself.
 */
template <typename T>
struct BatchNormState {
  Matrix<T> gamma;
  Matrix<T> beta;
  T eps = T(1e-5);
  T momentum = T(0.1);
  std::vector<T> running_mean;
  std::vector<T> running_var;

  BatchNormState() = default;

  explicit BatchNormState(std::size_t dim, T eps_ = T(1e-5))
      : gamma(1, dim, T(1)),
        beta(1, dim, T(0)),
        eps(eps_),
        running_mean(dim, T(0)),
        running_var(dim, T(1)) {
    if (!(eps_ >= T(0))) throw ConfigError("batch-norm eps must be non-negative");
  }

  std::size_t dim() const noexcept { return gamma.cols(); }
};

template <typename T>
struct BatchNormCache {
  Matrix<T> normalized;      // x_hat, B x P
  std::vector<T> inv_std;    // 1 / sqrt(var + eps)
  std::vector<T> mean;
  std::vector<T> var;        // biased (divide by B)
  Matrix<T> gamma;           // copy of the scale used in the forward pass
};

template <typename T>
struct BatchNormOutput {
  Matrix<T> y;
  BatchNormCache<T> cache;
};

template <typename T>
struct BatchNormGrads {
  Matrix<T> grad_x;
  Matrix<T> grad_gamma;
  Matrix<T> grad_beta;
};

/// Training-mode forward: normalizes each column with the current batch mean and
/// biased variance, then applies gamma/beta.
template <typename T>
BatchNormOutput<T> batch_normalize(const Matrix<T>& x, const BatchNormState<T>& state) {
  const std::size_t batch = x.rows();
  const std::size_t dim = x.cols();
  if (batch < 2) {
    throw ShapeError("batch_normalize: batch size must be >= 2, got " + std::to_string(batch));
  }
  if (state.dim() != dim) {
    throw ShapeError("batch_normalize: input " + x.shape() + " does not match state of dim " +
                     std::to_string(state.dim()));
  }
  if (!(state.eps >= T(0))) throw ConfigError("batch_normalize: eps must be non-negative");

  BatchNormOutput<T> out;
  auto& c = out.cache;
  c.mean.assign(dim, T(0));
  c.var.assign(dim, T(0));
  c.inv_std.assign(dim, T(0));
  c.gamma = state.gamma;

  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < dim; ++j) c.mean[j] += x(b, j);
  for (std::size_t j = 0; j < dim; ++j) c.mean[j] /= static_cast<T>(batch);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < dim; ++j) {
      const T d = x(b, j) - c.mean[j];
      c.var[j] += d * d;
    }
  for (std::size_t j = 0; j < dim; ++j) {
    c.var[j] /= static_cast<T>(batch);
    const T denom = std::sqrt(c.var[j] + state.eps);
    if (!(denom > T(0))) {
      throw NumericalError("batch_normalize: column " + std::to_string(j) +
                           " has zero variance and eps = 0");
    }
    c.inv_std[j] = T(1) / denom;
  }

  c.normalized = Matrix<T>(batch, dim);
  out.y = Matrix<T>(batch, dim);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < dim; ++j) {
      const T xh = (x(b, j) - c.mean[j]) * c.inv_std[j];
      c.normalized(b, j) = xh;
      out.y(b, j) = state.gamma(0, j) * xh + state.beta(0, j);
    }
  return out;
}

/// Evaluation-mode forward using the frozen running statistics. Rows are
/// processed independently, so results do not depend on batch composition.
template <typename T>
Matrix<T> batch_normalize_frozen(const Matrix<T>& x, const BatchNormState<T>& state) {
  if (state.dim() != x.cols()) {
    throw ShapeError("batch_normalize_frozen: input " + x.shape() + " does not match state of dim " +
                     std::to_string(state.dim()));
  }
  Matrix<T> y(x.rows(), x.cols());
  for (std::size_t j = 0; j < x.cols(); ++j) {
    const T inv = T(1) / std::sqrt(state.running_var[j] + state.eps);
    for (std::size_t b = 0; b < x.rows(); ++b) {
      y(b, j) = state.gamma(0, j) * (x(b, j) - state.running_mean[j]) * inv + state.beta(0, j);
    }
  }
  return y;
}

template <typename T>
BatchNormGrads<T> batch_normalize_backward(const Matrix<T>& grad_y, const BatchNormCache<T>& cache) {
  if (!grad_y.same_shape(cache.normalized)) {
    throw ShapeError("batch_normalize_backward: gradient " + grad_y.shape() +
                     " does not match cached batch " + cache.normalized.shape());
  }
  const std::size_t batch = grad_y.rows();
  const std::size_t dim = grad_y.cols();
  const T inv_batch = T(1) / static_cast<T>(batch);

  BatchNormGrads<T> g{Matrix<T>(batch, dim), Matrix<T>(1, dim), Matrix<T>(1, dim)};
  for (std::size_t j = 0; j < dim; ++j) {
    T sum_dxh = 0;
    T sum_dxh_xh = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      const T dy = grad_y(b, j);
      const T xh = cache.normalized(b, j);
      g.grad_gamma(0, j) += dy * xh;
      g.grad_beta(0, j) += dy;
      const T dxh = dy * cache.gamma(0, j);
      sum_dxh += dxh;
      sum_dxh_xh += dxh * xh;
    }
    for (std::size_t b = 0; b < batch; ++b) {
      const T dxh = grad_y(b, j) * cache.gamma(0, j);
      const T xh = cache.normalized(b, j);
      g.grad_x(b, j) = cache.inv_std[j] * (dxh - inv_batch * sum_dxh - inv_batch * xh * sum_dxh_xh);
    }
  }
  return g;
}

/// Exponential moving average of the batch statistics. The running variance is
/// the unbiased estimate (B / (B - 1) correction).
template <typename T>
void update_running_stats(BatchNormState<T>& state, const BatchNormCache<T>& cache) {
  const std::size_t batch = cache.normalized.rows();
  const T unbias = static_cast<T>(batch) / static_cast<T>(batch - 1);
  for (std::size_t j = 0; j < state.dim(); ++j) {
    state.running_mean[j] = (T(1) - state.momentum) * state.running_mean[j] + state.momentum * cache.mean[j];
    state.running_var[j] =
        (T(1) - state.momentum) * state.running_var[j] + state.momentum * cache.var[j] * unbias;
  }
}

}  // namespace barlow

#endif  // BARLOW_BATCH_NORM_HPP_

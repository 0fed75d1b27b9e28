#ifndef BARLOW_LOSSES_HPP_
#define BARLOW_LOSSES_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "barlow/correlation.hpp"
#include "barlow/error.hpp"
#include "barlow/matrix.hpp"

namespace barlow {

struct LossWeights {
  double lambda = 0.001;  // weight on the two alignment losses
  double mu = 0.0039;     // off-diagonal weight inside BFAL

  void validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be finite and >= 0");
    if (!(mu >= 0.0) || !std::isfinite(mu)) throw ConfigError("mu must be finite and >= 0");
  }
};

struct LossReport {
  double ce = 0.0;
  double coral = 0.0;
  double bfal = 0.0;
  double total = 0.0;
};

// ---------------------------------------------------------------------------
// Barlow feature alignment loss
// ---------------------------------------------------------------------------

template <typename T>
struct BfalCache {
  CrossCorrelation<T> corr;
  T mu;
};

template <typename T>
struct BfalResult {
  T loss;
  BfalCache<T> cache;
};

/**
 * sum_i (1 - C_ii)^2 + mu * sum_{i != j} C_ij^2 with C the normalized
 * cross-correlation of the two projection batches. The off-diagonal sum visits
 * both (i, j) and (j, i).
 */
template <typename T>
BfalResult<T> bfal_forward(const Matrix<T>& p_s, const Matrix<T>& p_t, T mu,
                           NormGuard guard = NormGuard::kClamp) {
  if (p_s.rows() < 2) {
    throw ShapeError("bfal_forward: batch size must be >= 2, got " + std::to_string(p_s.rows()));
  }
  BfalResult<T> r{T(0), {cross_correlation(p_s, p_t, guard), mu}};
  const Matrix<T>& c = r.cache.corr.values;
  T diag = 0;
  T off = 0;
  for (std::size_t i = 0; i < c.rows(); ++i) {
    const T d = T(1) - c(i, i);
    diag += d * d;
    for (std::size_t j = i + 1; j < c.cols(); ++j) off += c(i, j) * c(i, j) + c(j, i) * c(j, i);
  }
  r.loss = diag + mu * off;
  return r;
}

template <typename T>
CorrelationGrads<T> bfal_backward(const BfalCache<T>& cache) {
  const Matrix<T>& c = cache.corr.values;
  Matrix<T> grad_c(c.rows(), c.cols());
  for (std::size_t i = 0; i < c.rows(); ++i)
    for (std::size_t j = 0; j < c.cols(); ++j)
      grad_c(i, j) = i == j ? T(-2) * (T(1) - c(i, i)) : T(2) * cache.mu * c(i, j);
  return cross_correlation_backward(grad_c, cache.corr.cache);
}

// ---------------------------------------------------------------------------
// CORAL
// ---------------------------------------------------------------------------

template <typename T>
struct CoralCache {
  CovarianceCache<T> cov_s;
  CovarianceCache<T> cov_t;
  Matrix<T> diff;  // C_s - C_t
};

template <typename T>
struct CoralResult {
  T loss;
  CoralCache<T> cache;
};

/// ||C_s - C_t||_F^2 / (4 D^2).
template <typename T>
CoralResult<T> coral_forward(const Matrix<T>& f_s, const Matrix<T>& f_t) {
  if (f_s.cols() != f_t.cols()) {
    throw ShapeError("coral_forward: feature dims differ, source " + f_s.shape() + " target " +
                     f_t.shape());
  }
  auto cs = covariance(f_s);
  auto ct = covariance(f_t);
  const T d = static_cast<T>(f_s.cols());
  CoralResult<T> r{T(0), {std::move(cs.cache), std::move(ct.cache), cs.values - ct.values}};
  r.loss = frobenius_sq(r.cache.diff) / (T(4) * d * d);
  return r;
}

template <typename T>
struct CoralGrads {
  Matrix<T> grad_s;
  Matrix<T> grad_t;
};

template <typename T>
CoralGrads<T> coral_backward(const CoralCache<T>& cache) {
  const T d = static_cast<T>(cache.diff.rows());
  Matrix<T> grad_c = cache.diff * (T(1) / (T(2) * d * d));
  Matrix<T> gs = covariance_backward(grad_c, cache.cov_s);
  grad_c *= T(-1);
  Matrix<T> gt = covariance_backward(grad_c, cache.cov_t);
  return {std::move(gs), std::move(gt)};
}

// ---------------------------------------------------------------------------
// Cross entropy
// ---------------------------------------------------------------------------

template <typename T>
struct CrossEntropyCache {
  Matrix<T> probs;
  std::vector<int> labels;
};

template <typename T>
struct CrossEntropyResult {
  T loss;
  CrossEntropyCache<T> cache;
};

/// Mean negative log-likelihood of a row-wise softmax (row max subtracted first).
template <typename T>
CrossEntropyResult<T> cross_entropy_forward(const Matrix<T>& logits, std::span<const int> labels) {
  const std::size_t batch = logits.rows();
  const std::size_t classes = logits.cols();
  if (labels.size() != batch) {
    throw ShapeError("cross_entropy_forward: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(batch) + " rows");
  }
  CrossEntropyResult<T> r{T(0), {Matrix<T>(batch, classes), {labels.begin(), labels.end()}}};
  T total = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ConfigError("cross_entropy_forward: row " + std::to_string(b) + " has label " +
                        std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
    }
    auto row = logits.row(b);
    const T mx = *std::max_element(row.begin(), row.end());
    T z = 0;
    for (std::size_t m = 0; m < classes; ++m) z += std::exp(row[m] - mx);
    const T log_z = std::log(z);
    for (std::size_t m = 0; m < classes; ++m) r.cache.probs(b, m) = std::exp(row[m] - mx - log_z);
    total -= row[static_cast<std::size_t>(y)] - mx - log_z;
  }
  r.loss = total / static_cast<T>(batch);
  return r;
}

/// (softmax - one_hot) / B.
template <typename T>
Matrix<T> cross_entropy_backward(const CrossEntropyCache<T>& cache) {
  Matrix<T> g = cache.probs;
  const std::size_t batch = g.rows();
  if (cache.labels.size() != batch) throw ShapeError("cross_entropy_backward: stale cache");
  for (std::size_t b = 0; b < batch; ++b) g(b, static_cast<std::size_t>(cache.labels[b])) -= T(1);
  g *= T(1) / static_cast<T>(batch);
  return g;
}

// ---------------------------------------------------------------------------
// Combined objective
// ---------------------------------------------------------------------------

/// ce + lambda * (coral + bfal). Only lambda is read from the weights.
inline LossReport combined_loss(double ce, double coral, double bfal, const LossWeights& w) {
  const auto check = [](double v, const char* name) {
    if (!std::isfinite(v)) throw NumericalError(std::string("combined_loss: ") + name + " is not finite");
  };
  check(ce, "cross-entropy");
  check(coral, "coral");
  check(bfal, "bfal");
  check(w.lambda, "lambda");
  return {ce, coral, bfal, ce + w.lambda * (coral + bfal)};
}

}  // namespace barlow

#endif  // BARLOW_LOSSES_HPP_

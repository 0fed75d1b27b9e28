#ifndef BARLOW_CORRELATION_HPP_
#define BARLOW_CORRELATION_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "barlow/error.hpp"
#include "barlow/matrix.hpp"

namespace barlow {

/// Floor applied to column norms in the cross-correlation denominator.
inline constexpr double kColumnNormFloor = 1e-12;

enum class NormGuard {
  kClamp,   // denominator uses max(norm, kColumnNormFloor)
  kStrict,  // a zero-norm column is an error
};

template <typename T>
struct CrossCorrelationCache {
  Matrix<T> unit_s;           // p_s with each column divided by its (guarded) norm
  Matrix<T> unit_t;
  std::vector<T> norm_s;      // guarded norms
  std::vector<T> norm_t;
  std::vector<bool> clamped_s;
  std::vector<bool> clamped_t;
};

template <typename T>
struct CrossCorrelation {
  Matrix<T> values;  // P x P, entry (i, j) correlates source column i with target column j
  CrossCorrelationCache<T> cache;

  std::size_t dim() const noexcept { return values.rows(); }
};

namespace detail {

template <typename T>
std::vector<T> normalize_columns(const Matrix<T>& p, NormGuard guard, const char* which, Matrix<T>& unit,
                                 std::vector<T>& norms, std::vector<bool>& clamped) {
  const T floor = static_cast<T>(kColumnNormFloor);
  norms.assign(p.cols(), T(0));
  clamped.assign(p.cols(), false);
  for (std::size_t b = 0; b < p.rows(); ++b)
    for (std::size_t j = 0; j < p.cols(); ++j) norms[j] += p(b, j) * p(b, j);
  std::vector<T> squared = norms;
  for (std::size_t j = 0; j < p.cols(); ++j) {
    norms[j] = std::sqrt(norms[j]);
    if (norms[j] < floor) {
      if (guard == NormGuard::kStrict) {
        throw NumericalError(std::string("cross_correlation: column ") + std::to_string(j) + " of " +
                             which + " has zero norm");
      }
      norms[j] = floor;
      squared[j] = floor * floor;
      clamped[j] = true;
    }
  }
  unit = Matrix<T>(p.rows(), p.cols());
  for (std::size_t b = 0; b < p.rows(); ++b)
    for (std::size_t j = 0; j < p.cols(); ++j) unit(b, j) = p(b, j) / norms[j];
  return squared;
}

// Gradient of u = p / max(||p||, floor) per column, given du.
template <typename T>
Matrix<T> unit_columns_backward(const Matrix<T>& grad_unit, const Matrix<T>& unit,
                                const std::vector<T>& norms, const std::vector<bool>& clamped) {
  Matrix<T> grad(unit.rows(), unit.cols());
  for (std::size_t j = 0; j < unit.cols(); ++j) {
    T dot = 0;
    if (!clamped[j]) {
      for (std::size_t b = 0; b < unit.rows(); ++b) dot += unit(b, j) * grad_unit(b, j);
    }
    for (std::size_t b = 0; b < unit.rows(); ++b) {
      grad(b, j) = (grad_unit(b, j) - unit(b, j) * dot) / norms[j];
    }
  }
  return grad;
}

}  // namespace detail

/// Normalized cross-correlation between the columns of two equally shaped
/// batches: C(i, j) = <p_s[:, i], p_t[:, j]> / (||p_s[:, i]|| * ||p_t[:, j]||).
template <typename T>
CrossCorrelation<T> cross_correlation(const Matrix<T>& p_s, const Matrix<T>& p_t,
                                      NormGuard guard = NormGuard::kClamp) {
  if (!p_s.same_shape(p_t)) {
    throw ShapeError("cross_correlation: source " + p_s.shape() + " and target " + p_t.shape() +
                     " differ");
  }
  CrossCorrelation<T> out;
  auto& c = out.cache;
  const auto sq_s = detail::normalize_columns(p_s, guard, "source", c.unit_s, c.norm_s, c.clamped_s);
  const auto sq_t = detail::normalize_columns(p_t, guard, "target", c.unit_t, c.norm_t, c.clamped_t);
  // C(i, j) = dot / sqrt(|s_i|^2 |t_j|^2)
  out.values = matmul_tn(p_s, p_t);
  for (std::size_t i = 0; i < out.values.rows(); ++i)
    for (std::size_t j = 0; j < out.values.cols(); ++j) out.values(i, j) /= std::sqrt(sq_s[i] * sq_t[j]);
  return out;
}

template <typename T>
struct CorrelationGrads {
  Matrix<T> grad_s;
  Matrix<T> grad_t;
};

/// Backpropagates dL/dC through the column normalization (full quotient rule).
template <typename T>
CorrelationGrads<T> cross_correlation_backward(const Matrix<T>& grad_c,
                                               const CrossCorrelationCache<T>& cache) {
  const std::size_t dim = cache.unit_s.cols();
  if (grad_c.rows() != dim || grad_c.cols() != dim) {
    throw ShapeError("cross_correlation_backward: gradient " + grad_c.shape() +
                     " does not match correlation of dim " + std::to_string(dim));
  }
  // C = U^T V  =>  dU = V dC^T, dV = U dC
  const Matrix<T> grad_unit_s = matmul_nt(cache.unit_t, grad_c);
  const Matrix<T> grad_unit_t = matmul(cache.unit_s, grad_c);
  return {detail::unit_columns_backward(grad_unit_s, cache.unit_s, cache.norm_s, cache.clamped_s),
          detail::unit_columns_backward(grad_unit_t, cache.unit_t, cache.norm_t, cache.clamped_t)};
}

template <typename T>
struct CovarianceCache {
  Matrix<T> centered;  // f minus its column means
};

template <typename T>
struct Covariance {
  Matrix<T> values;  // D x D
  CovarianceCache<T> cache;
};

/// Unbiased feature covariance, (f^T f - (1/B)(1^T f)^T (1^T f)) / (B - 1),
/// evaluated in the centered form for accuracy.
template <typename T>
Covariance<T> covariance(const Matrix<T>& f) {
  const std::size_t batch = f.rows();
  if (batch < 2) {
    throw ShapeError("covariance: batch size must be >= 2, got " + std::to_string(batch));
  }
  Covariance<T> out;
  Matrix<T> means = column_sums(f);
  means *= T(1) / static_cast<T>(batch);
  out.cache.centered = f;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < f.cols(); ++j) out.cache.centered(b, j) -= means(0, j);
  out.values = matmul_tn(out.cache.centered, out.cache.centered);
  out.values *= T(1) / static_cast<T>(batch - 1);
  // exact symmetry regardless of summation order
  for (std::size_t i = 0; i < out.values.rows(); ++i)
    for (std::size_t j = i + 1; j < out.values.cols(); ++j) out.values(j, i) = out.values(i, j);
  return out;
}

/// dL/df given dL/dC. The centering term drops out because centered columns sum to zero.
template <typename T>
Matrix<T> covariance_backward(const Matrix<T>& grad_c, const CovarianceCache<T>& cache) {
  const std::size_t dim = cache.centered.cols();
  if (grad_c.rows() != dim || grad_c.cols() != dim) {
    throw ShapeError("covariance_backward: gradient " + grad_c.shape() +
                     " does not match covariance of dim " + std::to_string(dim));
  }
  Matrix<T> sym = grad_c + transpose(grad_c);
  Matrix<T> g = matmul(cache.centered, sym);
  g *= T(1) / static_cast<T>(cache.centered.rows() - 1);
  return g;
}

}  // namespace barlow

#endif  // BARLOW_CORRELATION_HPP_

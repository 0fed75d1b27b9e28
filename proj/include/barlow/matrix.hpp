#ifndef BARLOW_MATRIX_HPP_
#define BARLOW_MATRIX_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "barlow/error.hpp"

namespace barlow {

/**
 * Dense row-major matrix. This is deliberately tiny: the loss stack only needs
 * products, transposed products and elementwise arithmetic on small batches.
 *
 * A default-constructed matrix is empty (0x0) and only used as a placeholder;
 * every sized matrix has rows >= 1 and cols >= 1.
 */
template <typename T>
class Matrix {
  static_assert(std::is_floating_point_v<T>, "Matrix requires a floating-point scalar");

 public:
  using value_type = T;

  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, T fill = T(0)) : rows_(rows), cols_(cols) {
    if (rows == 0 || cols == 0) {
      throw ShapeError("matrix dimensions must be positive, got " + shape_string(rows, cols));
    }
    data_.assign(rows * cols, fill);
  }

  Matrix(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    if (rows_ == 0 || cols_ == 0) throw ShapeError("matrix literal must be non-empty");
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix from_columns(std::initializer_list<std::initializer_list<T>> columns) {
    const std::size_t ncols = columns.size();
    const std::size_t nrows = ncols == 0 ? 0 : columns.begin()->size();
    Matrix m(nrows, ncols);
    std::size_t j = 0;
    for (const auto& c : columns) {
      if (c.size() != nrows) throw ShapeError("ragged column literal");
      std::size_t i = 0;
      for (T v : c) m(i++, j) = v;
      ++j;
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  std::string shape() const { return shape_string(rows_, cols_); }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Matrix<U> cast() const {
    Matrix<U> out(rows_, cols_);
    auto dst = out.values();
    for (std::size_t i = 0; i < data_.size(); ++i) dst[i] = static_cast<U>(data_[i]);
    return out;
  }

  Matrix& operator+=(const Matrix& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  Matrix& operator-=(const Matrix& o) {
    require_same_shape(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }

  Matrix& operator*=(T s) {
    for (T& v : data_) v *= s;
    return *this;
  }

  /// Bitwise-style equality: same shape and identical values.
  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  void require_same_shape(const Matrix& o, const char* op) const {
    if (!same_shape(o)) {
      throw ShapeError(std::string("operator") + op + ": shapes " + shape() + " and " + o.shape() +
                       " differ");
    }
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

template <typename T>
Matrix<T> operator+(Matrix<T> a, const Matrix<T>& b) {
  a += b;
  return a;
}

template <typename T>
Matrix<T> operator-(Matrix<T> a, const Matrix<T>& b) {
  a -= b;
  return a;
}

template <typename T>
Matrix<T> operator*(Matrix<T> a, T s) {
  a *= s;
  return a;
}

/// a * b.
template <typename T>
Matrix<T> matmul(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: cannot multiply " + a.shape() + " by " + b.shape());
  }
  Matrix<T> out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const T aik = a(i, k);
      auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

/// a^T * b without materializing the transpose.
template <typename T>
Matrix<T> matmul_tn(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: cannot multiply transpose of " + a.shape() + " by " + b.shape());
  }
  Matrix<T> out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    auto arow = a.row(k);
    auto brow = b.row(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const T aki = arow[i];
      auto orow = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

/// a * b^T without materializing the transpose.
template <typename T>
Matrix<T> matmul_nt(const Matrix<T>& a, const Matrix<T>& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: cannot multiply " + a.shape() + " by transpose of " + b.shape());
  }
  Matrix<T> out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto arow = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto brow = b.row(j);
      T acc = 0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += arow[k] * brow[k];
      out(i, j) = acc;
    }
  }
  return out;
}

template <typename T>
Matrix<T> transpose(const Matrix<T>& a) {
  Matrix<T> out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

template <typename T>
bool all_finite(const Matrix<T>& m) {
  return std::all_of(m.values().begin(), m.values().end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
T frobenius_sq(const Matrix<T>& m) {
  T acc = 0;
  for (T v : m.values()) acc += v * v;
  return acc;
}

template <typename T>
T max_abs(const Matrix<T>& m) {
  T acc = 0;
  for (T v : m.values()) acc = std::max(acc, std::abs(v));
  return acc;
}

/// Column sums as a 1 x cols row vector.
template <typename T>
Matrix<T> column_sums(const Matrix<T>& m) {
  Matrix<T> out(1, m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < m.cols(); ++j) out(0, j) += r[j];
  }
  return out;
}

}  // namespace barlow

#endif  // BARLOW_MATRIX_HPP_

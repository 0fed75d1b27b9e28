#ifndef BARLOW_TESTS_SUPPORT_HPP_
#define BARLOW_TESTS_SUPPORT_HPP_

// Test-local oracles. Nothing here calls into the library's gradient checker.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "barlow/matrix.hpp"

namespace testing_support {

using barlow::Matrix;

inline Matrix<double> random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix<double> m(r, c);
  for (auto& v : m.values()) v = u(rng);
  return m;
}

/// Central differences of a scalar function, one coordinate at a time.
inline Matrix<double> finite_diff(const std::function<double(const Matrix<double>&)>& f, const Matrix<double>& x,
                                  double h = 1e-5) {
  Matrix<double> g(x.rows(), x.cols());
  Matrix<double> probe = x;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double keep = probe(i, j);
      probe(i, j) = keep + h;
      const double up = f(probe);
      probe(i, j) = keep - h;
      const double down = f(probe);
      probe(i, j) = keep;
      g(i, j) = (up - down) / (2.0 * h);
    }
  return g;
}

inline double max_rel_err(const Matrix<double>& a, const Matrix<double>& b) {
  double diff = 0.0, scale = 1e-8;
  for (std::size_t k = 0; k < a.size(); ++k) {
    diff = std::max(diff, std::abs(a.values()[k] - b.values()[k]));
    scale = std::max({scale, std::abs(a.values()[k]), std::abs(b.values()[k])});
  }
  return diff / scale;
}

/// sum_ij y_ij * w_ij, used to turn a matrix-valued map into a scalar.
inline double dot(const Matrix<double>& y, const Matrix<double>& w) {
  double s = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) s += y.values()[k] * w.values()[k];
  return s;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("barlow-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& leaf) const { return (path_ / leaf).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_support

#endif  // BARLOW_TESTS_SUPPORT_HPP_

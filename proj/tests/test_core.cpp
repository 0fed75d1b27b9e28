#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "barlow/batch_norm.hpp"
#include "barlow/correlation.hpp"
#include "barlow/matrix.hpp"
#include "support.hpp"

using barlow::Matrix;
using testing_support::finite_diff;
using testing_support::max_rel_err;
using testing_support::random_matrix;

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Matrix<double> id{{1, 0}, {0, 1}};
  const Matrix<double> b{{3, 4}, {5, 6}};
  EXPECT_EQ(barlow::matmul(id, b), b);
}

TEST(Matmul, RowTimesColumn) {
  const Matrix<double> a{{1, 2}};
  const Matrix<double> b{{3}, {4}};
  const auto c = barlow::matmul(a, b);
  ASSERT_EQ(c.rows(), 1u);
  ASSERT_EQ(c.cols(), 1u);
  EXPECT_EQ(c(0, 0), 11.0);
}

TEST(Matmul, MatchesTripleLoopOnRandomInputs) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_matrix(5, 4, rng);
    const auto b = random_matrix(4, 3, rng);
    const auto c = barlow::matmul(a, b);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < 4; ++k) s += a(i, k) * b(k, j);
        EXPECT_NEAR(c(i, j), s, 1e-12);
      }
  }
}

TEST(Matmul, TransposedVariantsAgreeWithExplicitTranspose) {
  std::mt19937_64 rng(2);
  const auto a = random_matrix(6, 3, rng);
  const auto b = random_matrix(6, 4, rng);
  const auto c = random_matrix(5, 3, rng);
  EXPECT_LT(barlow::max_abs(barlow::matmul_tn(a, b) - barlow::matmul(barlow::transpose(a), b)), 1e-12);
  EXPECT_LT(barlow::max_abs(barlow::matmul_nt(a, c) - barlow::matmul(a, barlow::transpose(c))), 1e-12);
}

TEST(Matmul, ShapeMismatchThrows) {
  const Matrix<double> a(2, 3);
  const Matrix<double> b(2, 3);
  EXPECT_THROW(barlow::matmul(a, b), barlow::ShapeError);
  EXPECT_THROW(Matrix<double>(0, 3), barlow::ShapeError);
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

TEST(BatchNorm, UnitColumnPassesThroughWithZeroEps) {
  barlow::BatchNormState<double> st(1, 0.0);
  const auto out = barlow::batch_normalize(Matrix<double>{{1}, {-1}}, st);
  EXPECT_DOUBLE_EQ(out.y(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(out.y(1, 0), -1.0);
}

TEST(BatchNorm, ConstantColumnCollapsesToBeta) {
  barlow::BatchNormState<double> st(1);
  auto out = barlow::batch_normalize(Matrix<double>{{3}, {3}}, st);
  EXPECT_EQ(out.y(0, 0), 0.0);
  EXPECT_EQ(out.y(1, 0), 0.0);
  st.beta(0, 0) = 0.25;
  out = barlow::batch_normalize(Matrix<double>{{3}, {3}}, st);
  EXPECT_EQ(out.y(0, 0), 0.25);
}

TEST(BatchNorm, MatchesDirectFormula) {
  barlow::BatchNormState<double> st(1);
  const auto out = barlow::batch_normalize(Matrix<double>{{0}, {2}, {4}}, st);
  const double mean = 2.0, var = 8.0 / 3.0;
  for (int b = 0; b < 3; ++b) {
    EXPECT_NEAR(out.y(b, 0), (2.0 * b - mean) / std::sqrt(var + 1e-5), 1e-7);
  }
}

TEST(BatchNorm, ColumnsAreCenteredForRandomInputs) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    barlow::BatchNormState<double> st(5);
    const auto x = random_matrix(7, 5, rng, -10.0, 10.0);
    const auto out = barlow::batch_normalize(x, st);
    const auto sums = barlow::column_sums(out.y);
    for (double s : sums.values()) EXPECT_LT(std::abs(s / 7.0), 1e-6);
  }
}

TEST(BatchNorm, RejectsSingleRowBatch) {
  barlow::BatchNormState<double> st(2);
  EXPECT_THROW(barlow::batch_normalize(Matrix<double>(1, 2), st), barlow::ShapeError);
}

TEST(BatchNorm, ZeroCotangentGivesZeroGradient) {
  std::mt19937_64 rng(4);
  barlow::BatchNormState<double> st(3);
  const auto out = barlow::batch_normalize(random_matrix(4, 3, rng), st);
  const auto g = barlow::batch_normalize_backward(Matrix<double>(4, 3), out.cache);
  EXPECT_EQ(barlow::max_abs(g.grad_x), 0.0);
  EXPECT_EQ(barlow::max_abs(g.grad_gamma), 0.0);
  EXPECT_EQ(barlow::max_abs(g.grad_beta), 0.0);
}

TEST(BatchNorm, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    barlow::BatchNormState<double> st(3);
    st.gamma = random_matrix(1, 3, rng, 0.5, 2.0);
    st.beta = random_matrix(1, 3, rng);
    const auto x = random_matrix(4, 3, rng);
    const auto w = random_matrix(4, 3, rng);
    const auto out = barlow::batch_normalize(x, st);
    const auto g = barlow::batch_normalize_backward(w, out.cache);

    const auto fx = [&](const Matrix<double>& xx) { return testing_support::dot(barlow::batch_normalize(xx, st).y, w); };
    EXPECT_LT(max_rel_err(g.grad_x, finite_diff(fx, x)), 1e-5);
    const auto fg = [&](const Matrix<double>& gg) {
      auto s = st;
      s.gamma = gg;
      return testing_support::dot(barlow::batch_normalize(x, s).y, w);
    };
    EXPECT_LT(max_rel_err(g.grad_gamma, finite_diff(fg, st.gamma)), 1e-5);
    const auto fb = [&](const Matrix<double>& bb) {
      auto s = st;
      s.beta = bb;
      return testing_support::dot(barlow::batch_normalize(x, s).y, w);
    };
    EXPECT_LT(max_rel_err(g.grad_beta, finite_diff(fb, st.beta)), 1e-5);
  }
}

TEST(BatchNorm, ConstantColumnHasFiniteGradient) {
  barlow::BatchNormState<double> st(2);
  const Matrix<double> x{{1, 5}, {2, 5}, {3, 5}};
  const auto out = barlow::batch_normalize(x, st);
  const auto g = barlow::batch_normalize_backward(Matrix<double>{{1, 1}, {-2, 3}, {0.5, -1}}, out.cache);
  EXPECT_TRUE(barlow::all_finite(g.grad_x));
}

TEST(BatchNorm, FrozenModeIsRowwise) {
  std::mt19937_64 rng(6);
  barlow::BatchNormState<double> st(3);
  st.running_mean = {0.5, -1.0, 2.0};
  st.running_var = {4.0, 0.25, 1.0};
  const auto x = random_matrix(5, 3, rng);
  const auto all = barlow::batch_normalize_frozen(x, st);
  for (std::size_t b = 0; b < 5; ++b) {
    Matrix<double> one(1, 3);
    for (std::size_t j = 0; j < 3; ++j) one(0, j) = x(b, j);
    const auto y = barlow::batch_normalize_frozen(one, st);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(y(0, j), all(b, j));
  }
}

TEST(BatchNorm, RunningStatsUseMomentumAndUnbiasedVariance) {
  barlow::BatchNormState<double> st(1);
  const auto out = barlow::batch_normalize(Matrix<double>{{0}, {2}}, st);
  barlow::update_running_stats(st, out.cache);
  EXPECT_NEAR(st.running_mean[0], 0.9 * 0.0 + 0.1 * 1.0, 1e-15);
  EXPECT_NEAR(st.running_var[0], 0.9 * 1.0 + 0.1 * 2.0, 1e-15);
}

// ---------------------------------------------------------------------------
// cross-correlation
// ---------------------------------------------------------------------------

TEST(CrossCorrelation, SelfCorrelationOfSingleColumnIsOne) {
  const Matrix<double> p{{1}, {-1}};
  EXPECT_DOUBLE_EQ(barlow::cross_correlation(p, p).values(0, 0), 1.0);
}

TEST(CrossCorrelation, HandExample) {
  const auto ps = Matrix<double>::from_columns({{1, 1}, {0, 2}});
  const auto pt = Matrix<double>::from_columns({{1, -1}, {2, 0}});
  const auto c = barlow::cross_correlation(ps, pt).values;
  EXPECT_NEAR(c(0, 0), 0.0, 1e-5);
  EXPECT_NEAR(c(0, 1), 0.70711, 1e-5);
  EXPECT_NEAR(c(1, 0), -0.70711, 1e-5);
  EXPECT_NEAR(c(1, 1), 0.0, 1e-5);
}

TEST(CrossCorrelation, AntiCorrelation) {
  const Matrix<double> ps{{1}, {-1}};
  const Matrix<double> pt{{-1}, {1}};
  EXPECT_DOUBLE_EQ(barlow::cross_correlation(ps, pt).values(0, 0), -1.0);
}

TEST(CrossCorrelation, ZeroColumnIsClampedOrRejected) {
  const Matrix<double> ps{{0, 1}, {0, 2}};
  const Matrix<double> pt{{1, 1}, {2, 1}};
  const auto c = barlow::cross_correlation(ps, pt);
  EXPECT_TRUE(barlow::all_finite(c.values));
  EXPECT_EQ(c.values(0, 0), 0.0);
  EXPECT_THROW(barlow::cross_correlation(ps, pt, barlow::NormGuard::kStrict), barlow::NumericalError);
}

TEST(CrossCorrelation, Properties) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> pos(0.1, 10.0);
  for (int trial = 0; trial < 100; ++trial) {
    const auto ps = random_matrix(6, 4, rng);
    const auto pt = random_matrix(6, 4, rng);
    const auto c = barlow::cross_correlation(ps, pt).values;

    const auto self = barlow::cross_correlation(ps, ps).values;
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(self(i, i), 1.0, 1e-6);

    EXPECT_LT(barlow::max_abs(barlow::cross_correlation(pt, ps).values - barlow::transpose(c)), 1e-15);

    auto scaled = ps;
    for (std::size_t j = 0; j < 4; ++j) {
      const double s = pos(rng);
      for (std::size_t b = 0; b < 6; ++b) scaled(b, j) *= s;
    }
    EXPECT_LT(barlow::max_abs(barlow::cross_correlation(scaled, pt).values - c), 1e-12);
  }
}

TEST(CrossCorrelation, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const auto ps = random_matrix(6, 4, rng);
    const auto pt = random_matrix(6, 4, rng);
    const auto w = random_matrix(4, 4, rng);
    const auto c = barlow::cross_correlation(ps, pt);
    const auto g = barlow::cross_correlation_backward(w, c.cache);
    const auto fs = [&](const Matrix<double>& x) { return testing_support::dot(barlow::cross_correlation(x, pt).values, w); };
    const auto ft = [&](const Matrix<double>& x) { return testing_support::dot(barlow::cross_correlation(ps, x).values, w); };
    EXPECT_LT(max_rel_err(g.grad_s, finite_diff(fs, ps)), 1e-5);
    EXPECT_LT(max_rel_err(g.grad_t, finite_diff(ft, pt)), 1e-5);
  }
}

// ---------------------------------------------------------------------------
// covariance
// ---------------------------------------------------------------------------

TEST(Covariance, IdenticalRowsGiveZero) {
  const Matrix<double> f{{1, 2, 3}, {1, 2, 3}};
  EXPECT_EQ(barlow::max_abs(barlow::covariance(f).values), 0.0);
}

TEST(Covariance, HandValue) {
  const auto c = barlow::covariance(Matrix<double>{{0}, {2}}).values;
  EXPECT_DOUBLE_EQ(c(0, 0), 2.0);
}

TEST(Covariance, MatchesExpandedFormAndIsTranslationInvariant) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    const auto f = random_matrix(5, 3, rng, -3.0, 3.0);
    const auto c = barlow::covariance(f).values;
    // (f^T f - (1/B)(1^T f)^T(1^T f)) / (B - 1), straight from the definition
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double ff = 0, si = 0, sj = 0;
        for (std::size_t b = 0; b < 5; ++b) {
          ff += f(b, i) * f(b, j);
          si += f(b, i);
          sj += f(b, j);
        }
        EXPECT_NEAR(c(i, j), (ff - si * sj / 5.0) / 4.0, 1e-12);
      }
    const auto shift = random_matrix(1, 3, rng, -100.0, 100.0);
    auto g = f;
    for (std::size_t b = 0; b < 5; ++b)
      for (std::size_t j = 0; j < 3; ++j) g(b, j) += shift(0, j);
    EXPECT_LT(barlow::max_abs(barlow::covariance(g).values - c), 1e-9);
  }
}

TEST(Covariance, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const auto f = random_matrix(5, 3, rng);
    const auto w = random_matrix(3, 3, rng);
    const auto cov = barlow::covariance(f);
    const auto g = barlow::covariance_backward(w, cov.cache);
    const auto fn = [&](const Matrix<double>& x) { return testing_support::dot(barlow::covariance(x).values, w); };
    EXPECT_LT(max_rel_err(g, finite_diff(fn, f)), 1e-5);
  }
}

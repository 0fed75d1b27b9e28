#ifndef BARLOW_GRADCHECK_HPP_
#define BARLOW_GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "barlow/batch_norm.hpp"
#include "barlow/correlation.hpp"
#include "barlow/losses.hpp"
#include "barlow/matrix.hpp"
#include "barlow/model.hpp"
#include "barlow/trainer.hpp"

namespace barlow::gradcheck {

inline constexpr double kStep = 1e-5;

/// max|a - n| / max(max|a|, max|n|, 1e-8): a norm-wise relative error that stays
/// meaningful when individual entries are near zero.
inline double relative_error(const Matrix<double>& analytic, const Matrix<double>& numeric) {
  if (!analytic.same_shape(numeric)) throw ShapeError("relative_error: shape mismatch");
  double diff = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    diff = std::max(diff, std::abs(analytic.values()[i] - numeric.values()[i]));
  const double scale = std::max({max_abs(analytic), max_abs(numeric), 1e-8});
  return diff / scale;
}

/// Central differences of a scalar function with respect to every entry of x.
inline Matrix<double> numeric_gradient(const std::function<double(const Matrix<double>&)>& f, Matrix<double> x,
                                       double h = kStep) {
  Matrix<double> g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x.values()[i];
    x.values()[i] = orig + h;
    const double up = f(x);
    x.values()[i] = orig - h;
    const double down = f(x);
    x.values()[i] = orig;
    g.values()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline Matrix<double> random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix<double> m(rows, cols);
  for (double& v : m.values()) v = n(rng);
  return m;
}

inline double weighted_sum(const Matrix<double>& y, const Matrix<double>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.values()[i] * w.values()[i];
  return s;
}

struct OpResult {
  std::string op;
  double worst = 0.0;
  double tolerance = 0.0;
  std::size_t instances = 0;
  bool passed() const { return worst < tolerance; }
};

inline double check_batch_norm(std::mt19937_64& rng, std::size_t batch, std::size_t dim) {
  const Matrix<double> x = random_matrix(batch, dim, rng);
  BatchNormState<double> state(dim);
  state.gamma = random_matrix(1, dim, rng);
  state.beta = random_matrix(1, dim, rng);
  const Matrix<double> w = random_matrix(batch, dim, rng);

  const auto fw = batch_normalize(x, state);
  const auto g = batch_normalize_backward(w, fw.cache);
  double worst = relative_error(
      g.grad_x, numeric_gradient([&](const Matrix<double>& xx) { return weighted_sum(batch_normalize(xx, state).y, w); }, x));
  worst = std::max(worst, relative_error(g.grad_gamma, numeric_gradient(
                                                           [&](const Matrix<double>& gm) {
                                                             auto s = state;
                                                             s.gamma = gm;
                                                             return weighted_sum(batch_normalize(x, s).y, w);
                                                           },
                                                           state.gamma)));
  worst = std::max(worst, relative_error(g.grad_beta, numeric_gradient(
                                                          [&](const Matrix<double>& bt) {
                                                            auto s = state;
                                                            s.beta = bt;
                                                            return weighted_sum(batch_normalize(x, s).y, w);
                                                          },
                                                          state.beta)));
  return worst;
}

inline double check_cross_correlation(std::mt19937_64& rng, std::size_t batch, std::size_t dim) {
  const Matrix<double> ps = random_matrix(batch, dim, rng);
  const Matrix<double> pt = random_matrix(batch, dim, rng);
  const Matrix<double> w = random_matrix(dim, dim, rng);
  const auto c = cross_correlation(ps, pt);
  const auto g = cross_correlation_backward(w, c.cache);
  const double es = relative_error(
      g.grad_s, numeric_gradient([&](const Matrix<double>& a) { return weighted_sum(cross_correlation(a, pt).values, w); }, ps));
  const double et = relative_error(
      g.grad_t, numeric_gradient([&](const Matrix<double>& b) { return weighted_sum(cross_correlation(ps, b).values, w); }, pt));
  return std::max(es, et);
}

inline double check_covariance(std::mt19937_64& rng, std::size_t batch, std::size_t dim) {
  const Matrix<double> f = random_matrix(batch, dim, rng);
  const Matrix<double> w = random_matrix(dim, dim, rng);
  const auto c = covariance(f);
  return relative_error(covariance_backward(w, c.cache),
                        numeric_gradient([&](const Matrix<double>& a) { return weighted_sum(covariance(a).values, w); }, f));
}

inline double check_bfal(std::mt19937_64& rng, std::size_t batch, std::size_t dim) {
  std::uniform_real_distribution<double> mu_dist(0.0, 1.0);
  const double mu = mu_dist(rng);
  const Matrix<double> ps = random_matrix(batch, dim, rng);
  const Matrix<double> pt = random_matrix(batch, dim, rng);
  const auto fw = bfal_forward(ps, pt, mu);
  const auto g = bfal_backward(fw.cache);
  const double es = relative_error(
      g.grad_s, numeric_gradient([&](const Matrix<double>& a) { return bfal_forward(a, pt, mu).loss; }, ps));
  const double et = relative_error(
      g.grad_t, numeric_gradient([&](const Matrix<double>& b) { return bfal_forward(ps, b, mu).loss; }, pt));
  return std::max(es, et);
}

inline double check_coral(std::mt19937_64& rng, std::size_t batch, std::size_t dim) {
  const Matrix<double> fs = random_matrix(batch, dim, rng);
  const Matrix<double> ft = random_matrix(batch, dim, rng, 2.0);
  const auto fw = coral_forward(fs, ft);
  const auto g = coral_backward(fw.cache);
  const double es =
      relative_error(g.grad_s, numeric_gradient([&](const Matrix<double>& a) { return coral_forward(a, ft).loss; }, fs));
  const double et =
      relative_error(g.grad_t, numeric_gradient([&](const Matrix<double>& b) { return coral_forward(fs, b).loss; }, ft));
  return std::max(es, et);
}

inline double check_cross_entropy(std::mt19937_64& rng, std::size_t batch, std::size_t classes) {
  const Matrix<double> logits = random_matrix(batch, classes, rng, 2.0);
  std::uniform_int_distribution<int> lab(0, static_cast<int>(classes) - 1);
  std::vector<int> labels(batch);
  for (int& l : labels) l = lab(rng);
  const auto fw = cross_entropy_forward(logits, labels);
  return relative_error(cross_entropy_backward(fw.cache),
                        numeric_gradient([&](const Matrix<double>& z) { return cross_entropy_forward(z, labels).loss; },
                                         logits));
}

/// End-to-end gradient of ce + lambda * (coral + bfal) with respect to every
/// model parameter, on a toy stack with a two-layer extractor.
inline double check_full_stack(std::mt19937_64& rng, std::size_t batch) {
  const std::size_t in = 5, hidden = 6, features = 5, projection = 4, classes = 3;
  Architecture arch = Architecture::make_default(in, classes, hidden, features, projection);
  auto params = init_params<double>(arch, rng());
  // non-trivial biases and batch-norm affine parameters
  for_each_tensor(params, [&](Matrix<double>& m) {
    if (m.rows() == 1) m = random_matrix(1, m.cols(), rng, 0.5);
  });
  TrainConfig cfg;
  cfg.variant = Variant::kFull;
  cfg.weights.lambda = 0.5;
  cfg.weights.mu = 0.3;
  const Matrix<double> xs = random_matrix(batch, in, rng);
  const Matrix<double> xt = random_matrix(batch, in, rng, 1.5);
  std::uniform_int_distribution<int> lab(0, static_cast<int>(classes) - 1);
  std::vector<int> ys(batch);
  for (int& l : ys) l = lab(rng);

  const auto step = compute_step(params, cfg, xs, ys, xt);
  std::vector<Matrix<double>> analytic;
  step.grads.for_each([&](const Matrix<double>& g) { analytic.push_back(g); });
  std::vector<Matrix<double>*> tensors;
  for_each_tensor(params, [&](Matrix<double>& m) { tensors.push_back(&m); });

  // flatten so the error is norm-wise over all parameters
  std::size_t total = 0;
  for (const auto* t : tensors) total += t->size();
  Matrix<double> a(1, total), n(1, total);
  std::size_t k = 0;
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    for (std::size_t i = 0; i < tensors[t]->size(); ++i, ++k) {
      a(0, k) = analytic[t].values()[i];
      double& theta = tensors[t]->values()[i];
      const double orig = theta;
      theta = orig + kStep;
      const double up = compute_step(params, cfg, xs, ys, xt).report.total;
      theta = orig - kStep;
      const double down = compute_step(params, cfg, xs, ys, xt).report.total;
      theta = orig;
      n(0, k) = (up - down) / (2.0 * kStep);
    }
  }
  return relative_error(a, n);
}

struct SuiteOptions {
  std::uint64_t seed = 7;
  std::size_t instances = 100;
  std::size_t batch = 6;
  std::size_t dim = 4;
  double op_tolerance = 1e-5;
  double stack_tolerance = 1e-4;
};

/// Runs every backward operation against central differences (float64).
inline std::vector<OpResult> run_suite(const SuiteOptions& opt) {
  struct Check {
    const char* name;
    std::function<double(std::mt19937_64&)> run;
    double tol;
  };
  const std::size_t b = opt.batch, d = opt.dim;
  const std::vector<Check> checks = {
      {"batch_norm", [&](auto& r) { return check_batch_norm(r, b, d); }, opt.op_tolerance},
      {"cross_correlation", [&](auto& r) { return check_cross_correlation(r, b, d); }, opt.op_tolerance},
      {"covariance", [&](auto& r) { return check_covariance(r, b, d); }, opt.op_tolerance},
      {"bfal", [&](auto& r) { return check_bfal(r, b, d); }, opt.op_tolerance},
      {"coral", [&](auto& r) { return check_coral(r, b, d); }, opt.op_tolerance},
      {"cross_entropy", [&](auto& r) { return check_cross_entropy(r, b, d); }, opt.op_tolerance},
      {"full_stack", [&](auto& r) { return check_full_stack(r, 4); }, opt.stack_tolerance},
  };
  std::vector<OpResult> out;
  for (std::size_t c = 0; c < checks.size(); ++c) {
    OpResult r{checks[c].name, 0.0, checks[c].tol, opt.instances};
    for (std::size_t i = 0; i < opt.instances; ++i) {
      std::mt19937_64 rng(derive_seed(opt.seed, c * 1000003ULL + i));
      r.worst = std::max(r.worst, checks[c].run(rng));
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace barlow::gradcheck

#endif  // BARLOW_GRADCHECK_HPP_

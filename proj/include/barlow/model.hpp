#ifndef BARLOW_MODEL_HPP_
#define BARLOW_MODEL_HPP_

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "barlow/batch_norm.hpp"
#include "barlow/error.hpp"
#include "barlow/matrix.hpp"

namespace barlow {

enum class LayerKind { kAffine, kRelu, kBatchNorm };

inline std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::kAffine: return "affine";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kBatchNorm: return "batch-norm";
  }
  return "?";
}

inline LayerKind parse_layer_kind(std::string_view s) {
  if (s == "affine") return LayerKind::kAffine;
  if (s == "relu") return LayerKind::kRelu;
  if (s == "batch-norm") return LayerKind::kBatchNorm;
  throw ConfigError("unknown layer kind '" + std::string(s) + "'");
}

struct LayerSpec {
  LayerKind kind = LayerKind::kAffine;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Feature extractor F, projector P and source classifier C as layer chains.
struct Architecture {
  std::size_t input_dim = 0;
  std::vector<LayerSpec> extractor;
  std::vector<LayerSpec> projector;
  std::vector<LayerSpec> classifier;

  friend bool operator==(const Architecture&, const Architecture&) = default;

  /// [affine(in->hidden), relu, affine(hidden->features)], projector
  /// [affine(features->projection), batch-norm], classifier [affine(features->classes)].
  static Architecture make_default(std::size_t input_dim, std::size_t classes, std::size_t hidden = 64,
                                   std::size_t features = 32, std::size_t projection = 0) {
    if (projection == 0) projection = features;
    Architecture a;
    a.input_dim = input_dim;
    a.extractor = {{LayerKind::kAffine, input_dim, hidden},
                   {LayerKind::kRelu, hidden, hidden},
                   {LayerKind::kAffine, hidden, features}};
    a.projector = {{LayerKind::kAffine, features, projection},
                   {LayerKind::kBatchNorm, projection, projection}};
    a.classifier = {{LayerKind::kAffine, features, classes}};
    return a;
  }

  std::size_t feature_dim() const { return extractor.empty() ? input_dim : extractor.back().out_dim; }
  std::size_t projection_dim() const { return projector.back().out_dim; }
  std::size_t num_classes() const { return classifier.back().out_dim; }

  void validate() const {
    if (input_dim == 0) throw ConfigError("architecture: input_dim must be positive");
    if (projector.empty()) throw ConfigError("architecture: projector must have at least one layer");
    if (classifier.empty()) throw ConfigError("architecture: classifier must have at least one layer");
    check_chain("extractor", extractor, input_dim);
    check_chain("projector", projector, feature_dim());
    check_chain("classifier", classifier, feature_dim());
  }

 private:
  static void check_chain(const char* name, const std::vector<LayerSpec>& chain, std::size_t in) {
    std::size_t expect = in;
    for (std::size_t i = 0; i < chain.size(); ++i) {
      const auto& l = chain[i];
      const std::string where = std::string("architecture: ") + name + " layer " + std::to_string(i);
      if (l.in_dim != expect) {
        throw ConfigError(where + " expects input dim " + std::to_string(l.in_dim) + " but receives " +
                          std::to_string(expect));
      }
      if (l.out_dim == 0) throw ConfigError(where + " has zero output dim");
      if (l.kind != LayerKind::kAffine && l.in_dim != l.out_dim) {
        throw ConfigError(where + " (" + std::string(to_string(l.kind)) + ") must preserve dimension");
      }
      expect = l.out_dim;
    }
  }
};

template <typename T>
struct AffineLayer {
  Matrix<T> weight;  // in x out, y = x W + b
  Matrix<T> bias;    // 1 x out
};

struct ReluLayer {
  std::size_t dim = 0;
};

template <typename T>
using Layer = std::variant<AffineLayer<T>, ReluLayer, BatchNormState<T>>;

enum class StackId { kExtractor, kProjector, kClassifier };

template <typename T>
struct Stack {
  std::vector<Layer<T>> layers;
};

template <typename T>
struct ModelParams {
  Architecture arch;
  std::uint64_t seed = 0;
  Stack<T> extractor;
  Stack<T> projector;
  Stack<T> classifier;
  // Bumped by every parameter update; caches remember the version they saw.
  std::uint64_t version = 0;

  Stack<T>& stack(StackId id) {
    return id == StackId::kExtractor ? extractor : id == StackId::kProjector ? projector : classifier;
  }
  const Stack<T>& stack(StackId id) const {
    return id == StackId::kExtractor ? extractor : id == StackId::kProjector ? projector : classifier;
  }
};

/// Learnable tensors of one stack, in canonical order (affine: W, b; batch-norm: gamma, beta).
template <typename T, typename Fn>
void for_each_tensor(Stack<T>& s, Fn&& fn) {
  for (auto& layer : s.layers) {
    if (auto* a = std::get_if<AffineLayer<T>>(&layer)) {
      fn(a->weight);
      fn(a->bias);
    } else if (auto* bn = std::get_if<BatchNormState<T>>(&layer)) {
      fn(bn->gamma);
      fn(bn->beta);
    }
  }
}

template <typename T, typename Fn>
void for_each_tensor(ModelParams<T>& p, Fn&& fn) {
  for_each_tensor(p.extractor, fn);
  for_each_tensor(p.projector, fn);
  for_each_tensor(p.classifier, fn);
}

template <typename T, typename Fn>
void for_each_tensor(const ModelParams<T>& p, Fn&& fn) {
  for_each_tensor(const_cast<ModelParams<T>&>(p), [&](Matrix<T>& m) { fn(static_cast<const Matrix<T>&>(m)); });
}

/// Gradients laid out like ModelParams' tensors, one vector per stack.
template <typename T>
struct ParamGrads {
  std::vector<Matrix<T>> extractor;
  std::vector<Matrix<T>> projector;
  std::vector<Matrix<T>> classifier;

  std::vector<Matrix<T>>& stack(StackId id) {
    return id == StackId::kExtractor ? extractor : id == StackId::kProjector ? projector : classifier;
  }

  template <typename Fn>
  void for_each(Fn&& fn) {
    for (auto& m : extractor) fn(m);
    for (auto& m : projector) fn(m);
    for (auto& m : classifier) fn(m);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (const auto& m : extractor) fn(m);
    for (const auto& m : projector) fn(m);
    for (const auto& m : classifier) fn(m);
  }
};

template <typename T>
ParamGrads<T> zero_grads(const ModelParams<T>& p) {
  ParamGrads<T> g;
  auto fill = [](const Stack<T>& s, std::vector<Matrix<T>>& out) {
    for_each_tensor(const_cast<Stack<T>&>(s), [&](Matrix<T>& m) { out.emplace_back(m.rows(), m.cols()); });
  };
  fill(p.extractor, g.extractor);
  fill(p.projector, g.projector);
  fill(p.classifier, g.classifier);
  return g;
}

namespace detail {

template <typename T>
Stack<T> init_stack(const std::vector<LayerSpec>& specs, std::mt19937_64& rng) {
  Stack<T> s;
  for (const auto& spec : specs) {
    switch (spec.kind) {
      case LayerKind::kAffine: {
        const double a = std::sqrt(6.0 / static_cast<double>(spec.in_dim + spec.out_dim));
        std::uniform_real_distribution<double> dist(-a, a);
        AffineLayer<T> layer{Matrix<T>(spec.in_dim, spec.out_dim), Matrix<T>(1, spec.out_dim)};
        for (T& w : layer.weight.values()) w = static_cast<T>(dist(rng));
        s.layers.emplace_back(std::move(layer));
        break;
      }
      case LayerKind::kRelu:
        s.layers.emplace_back(ReluLayer{spec.in_dim});
        break;
      case LayerKind::kBatchNorm:
        s.layers.emplace_back(BatchNormState<T>(spec.in_dim));
        break;
    }
  }
  return s;
}

}  // namespace detail

/// Glorot-uniform affine weights, zero biases, unit/zero batch-norm scale/shift.
template <typename T>
ModelParams<T> init_params(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  std::mt19937_64 rng(seed);
  ModelParams<T> p;
  p.arch = arch;
  p.seed = seed;
  p.extractor = detail::init_stack<T>(arch.extractor, rng);
  p.projector = detail::init_stack<T>(arch.projector, rng);
  p.classifier = detail::init_stack<T>(arch.classifier, rng);
  return p;
}

template <typename T>
ModelParams<T> cast_params(const ModelParams<double>& src) {
  if constexpr (std::is_same_v<T, double>) {
    return src;
  } else {
    ModelParams<T> out;
    out.arch = src.arch;
    out.seed = src.seed;
    out.version = src.version;
    auto convert = [](const Stack<double>& s) {
      Stack<T> d;
      for (const auto& layer : s.layers) {
        if (const auto* a = std::get_if<AffineLayer<double>>(&layer)) {
          d.layers.emplace_back(AffineLayer<T>{a->weight.template cast<T>(), a->bias.template cast<T>()});
        } else if (const auto* r = std::get_if<ReluLayer>(&layer)) {
          d.layers.emplace_back(*r);
        } else {
          const auto& bn = std::get<BatchNormState<double>>(layer);
          BatchNormState<T> b(bn.dim(), static_cast<T>(bn.eps));
          b.gamma = bn.gamma.template cast<T>();
          b.beta = bn.beta.template cast<T>();
          b.momentum = static_cast<T>(bn.momentum);
          b.running_mean.assign(bn.running_mean.begin(), bn.running_mean.end());
          b.running_var.assign(bn.running_var.begin(), bn.running_var.end());
          d.layers.emplace_back(std::move(b));
        }
      }
      return d;
    };
    out.extractor = convert(src.extractor);
    out.projector = convert(src.projector);
    out.classifier = convert(src.classifier);
    return out;
  }
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

enum class Mode { kTrain, kEval };

template <typename T>
struct AffineCache {
  Matrix<T> input;
};

template <typename T>
struct ReluCache {
  Matrix<T> mask;  // 1 where the input was strictly positive
};

template <typename T>
using LayerCache = std::variant<AffineCache<T>, ReluCache<T>, BatchNormCache<T>>;

template <typename T>
struct StackCache {
  StackId stack = StackId::kExtractor;
  Mode mode = Mode::kTrain;
  std::uint64_t version = 0;
  std::vector<LayerCache<T>> layers;
};

template <typename T>
struct Forward {
  Matrix<T> out;
  StackCache<T> cache;
};

template <typename T>
Forward<T> forward_stack(const ModelParams<T>& params, StackId id, const Matrix<T>& x, Mode mode) {
  const Stack<T>& s = params.stack(id);
  Forward<T> fw{x, {id, mode, params.version, {}}};
  fw.cache.layers.reserve(s.layers.size());
  for (const auto& layer : s.layers) {
    Matrix<T>& h = fw.out;
    if (const auto* a = std::get_if<AffineLayer<T>>(&layer)) {
      if (h.cols() != a->weight.rows()) {
        throw ShapeError("affine layer expects " + std::to_string(a->weight.rows()) + " inputs, got " + h.shape());
      }
      Matrix<T> y = matmul(h, a->weight);
      for (std::size_t b = 0; b < y.rows(); ++b)
        for (std::size_t j = 0; j < y.cols(); ++j) y(b, j) += a->bias(0, j);
      fw.cache.layers.emplace_back(AffineCache<T>{std::move(h)});
      h = std::move(y);
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      ReluCache<T> rc{Matrix<T>(h.rows(), h.cols())};
      for (std::size_t i = 0; i < h.size(); ++i) {
        const bool on = h.values()[i] > T(0);
        rc.mask.values()[i] = on ? T(1) : T(0);
        if (!on) h.values()[i] = T(0);
      }
      fw.cache.layers.emplace_back(std::move(rc));
    } else {
      const auto& bn = std::get<BatchNormState<T>>(layer);
      if (mode == Mode::kTrain) {
        auto r = batch_normalize(h, bn);
        h = std::move(r.y);
        fw.cache.layers.emplace_back(std::move(r.cache));
      } else {
        h = batch_normalize_frozen(h, bn);
        fw.cache.layers.emplace_back(BatchNormCache<T>{});
      }
    }
  }
  return fw;
}

template <typename T>
Forward<T> extract_features(const ModelParams<T>& params, const Matrix<T>& x, Mode mode = Mode::kTrain) {
  return forward_stack(params, StackId::kExtractor, x, mode);
}

template <typename T>
Forward<T> project(const ModelParams<T>& params, const Matrix<T>& f, Mode mode = Mode::kTrain) {
  return forward_stack(params, StackId::kProjector, f, mode);
}

template <typename T>
Forward<T> classify(const ModelParams<T>& params, const Matrix<T>& f, Mode mode = Mode::kTrain) {
  return forward_stack(params, StackId::kClassifier, f, mode);
}

/// Eval-mode logits for a batch of raw inputs.
template <typename T>
Matrix<T> infer_logits(const ModelParams<T>& params, const Matrix<T>& x) {
  return classify(params, extract_features(params, x, Mode::kEval).out, Mode::kEval).out;
}

/// Accumulates this stack's parameter gradients into `grads` and returns dL/d(input).
template <typename T>
Matrix<T> backward_stack(const ModelParams<T>& params, const StackCache<T>& cache, Matrix<T> grad_out,
                         std::vector<Matrix<T>>& grads) {
  if (cache.version != params.version) {
    throw Error("backward: stale cache (computed at parameter version " + std::to_string(cache.version) +
                ", parameters are at version " + std::to_string(params.version) + ")");
  }
  if (cache.mode != Mode::kTrain) throw Error("backward: cache comes from an evaluation-mode forward pass");
  const Stack<T>& s = params.stack(cache.stack);
  if (cache.layers.size() != s.layers.size()) throw ShapeError("backward: cache does not match stack");

  // tensor index of the first tensor of each layer
  std::vector<std::size_t> offset(s.layers.size(), 0);
  std::size_t n = 0;
  for (std::size_t i = 0; i < s.layers.size(); ++i) {
    offset[i] = n;
    if (!std::holds_alternative<ReluLayer>(s.layers[i])) n += 2;
  }
  if (grads.size() != n) throw ShapeError("backward: gradient buffer does not match stack");

  for (std::size_t k = s.layers.size(); k-- > 0;) {
    const auto& layer = s.layers[k];
    const auto& lc = cache.layers[k];
    if (const auto* a = std::get_if<AffineLayer<T>>(&layer)) {
      const auto& in = std::get<AffineCache<T>>(lc).input;
      grads[offset[k]] += matmul_tn(in, grad_out);
      grads[offset[k] + 1] += column_sums(grad_out);
      grad_out = matmul_nt(grad_out, a->weight);
    } else if (std::holds_alternative<ReluLayer>(layer)) {
      const auto& mask = std::get<ReluCache<T>>(lc).mask;
      if (!mask.same_shape(grad_out)) throw ShapeError("backward: relu mask mismatch");
      for (std::size_t i = 0; i < grad_out.size(); ++i) grad_out.values()[i] *= mask.values()[i];
    } else {
      auto g = batch_normalize_backward(grad_out, std::get<BatchNormCache<T>>(lc));
      grads[offset[k]] += g.grad_gamma;
      grads[offset[k] + 1] += g.grad_beta;
      grad_out = std::move(g.grad_x);
    }
  }
  return grad_out;
}

/// Caches from one coherent forward pass of a training step. The target
/// branch is absent for source-only training.
template <typename T>
struct StepCaches {
  StackCache<T> extractor_s;
  StackCache<T> classifier;
  std::optional<StackCache<T>> projector_s;
  std::optional<StackCache<T>> extractor_t;
  std::optional<StackCache<T>> projector_t;
};

/// Upstream gradients handed back by the losses (already weighted).
template <typename T>
struct UpstreamGrads {
  Matrix<T> logits;                      // from cross entropy
  std::optional<Matrix<T>> projection_s;  // from BFAL
  std::optional<Matrix<T>> projection_t;
  std::optional<Matrix<T>> features_s;    // from CORAL
  std::optional<Matrix<T>> features_t;
};

/**
 * Backpropagates a training step: the cross-entropy gradient flows through the
 * classifier into the source branch of the extractor; CORAL gradients enter
 * both extractor branches directly; BFAL gradients pass through the projector
 * into both branches.
 */
template <typename T>
ParamGrads<T> backward(const ModelParams<T>& params, const StepCaches<T>& caches, const UpstreamGrads<T>& up) {
  ParamGrads<T> g = zero_grads(params);
  Matrix<T> grad_fs = backward_stack(params, caches.classifier, up.logits, g.classifier);

  std::optional<Matrix<T>> grad_ft;
  auto add_t = [&](const Matrix<T>& m) {
    if (grad_ft) *grad_ft += m;
    else grad_ft = m;
  };

  if (up.projection_s) {
    if (!caches.projector_s) throw Error("backward: BFAL gradient without a source projector cache");
    grad_fs += backward_stack(params, *caches.projector_s, *up.projection_s, g.projector);
  }
  if (up.projection_t) {
    if (!caches.projector_t) throw Error("backward: BFAL gradient without a target projector cache");
    add_t(backward_stack(params, *caches.projector_t, *up.projection_t, g.projector));
  }
  if (up.features_s) grad_fs += *up.features_s;
  if (up.features_t) add_t(*up.features_t);

  backward_stack(params, caches.extractor_s, std::move(grad_fs), g.extractor);
  if (grad_ft) {
    if (!caches.extractor_t) throw Error("backward: target gradient without a target extractor cache");
    backward_stack(params, *caches.extractor_t, std::move(*grad_ft), g.extractor);
  }
  return g;
}

/// Folds the batch statistics of training-mode batch-norm layers into the running averages.
template <typename T>
void update_running_stats(ModelParams<T>& params, const StackCache<T>& cache) {
  if (cache.mode != Mode::kTrain) return;
  Stack<T>& s = params.stack(cache.stack);
  for (std::size_t k = 0; k < s.layers.size(); ++k) {
    if (auto* bn = std::get_if<BatchNormState<T>>(&s.layers[k])) {
      update_running_stats(*bn, std::get<BatchNormCache<T>>(cache.layers[k]));
    }
  }
}

template <typename T>
bool all_finite(const ModelParams<T>& p) {
  bool ok = true;
  for_each_tensor(p, [&](const Matrix<T>& m) { ok = ok && all_finite(m); });
  return ok;
}

}  // namespace barlow

#endif  // BARLOW_MODEL_HPP_

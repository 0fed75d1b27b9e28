#ifndef BARLOW_TRAINER_HPP_
#define BARLOW_TRAINER_HPP_

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "barlow/data.hpp"
#include "barlow/error.hpp"
#include "barlow/losses.hpp"
#include "barlow/metrics.hpp"
#include "barlow/model.hpp"

namespace barlow {

/// Which alignment terms are active (the ablation rows).
enum class Variant { kSourceOnly, kCoralOnly, kBfalOnly, kFull };

inline constexpr Variant kAllVariants[] = {Variant::kSourceOnly, Variant::kCoralOnly, Variant::kBfalOnly,
                                           Variant::kFull};

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kSourceOnly: return "source_only";
    case Variant::kCoralOnly: return "coral_only";
    case Variant::kBfalOnly: return "bfal_only";
    case Variant::kFull: return "full";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  for (Variant v : kAllVariants)
    if (to_string(v) == s) return v;
  throw ConfigError("unknown variant '" + std::string(s) + "' (expected source_only, coral_only, bfal_only, full)");
}

inline bool uses_coral(Variant v) { return v == Variant::kCoralOnly || v == Variant::kFull; }
inline bool uses_bfal(Variant v) { return v == Variant::kBfalOnly || v == Variant::kFull; }
inline bool uses_target(Variant v) { return v != Variant::kSourceOnly; }

struct TrainConfig {
  std::size_t batch_size = 16;
  double lr0 = 0.001;
  double momentum = 0.9;
  double lr_decay = 0.33;
  std::size_t decay_every_epochs = 20;
  std::size_t epochs = 60;
  LossWeights weights;
  std::uint64_t seed = 0;
  Variant variant = Variant::kFull;

  void validate() const {
    if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2");
    if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw ConfigError("train: lr0 must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train: momentum must be in [0, 1)");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("train: lr_decay must be in (0, 1]");
    if (decay_every_epochs == 0) throw ConfigError("train: decay_every_epochs must be positive");
    if (epochs == 0) throw ConfigError("train: epochs must be positive");
    weights.validate();
  }
};

/// Step schedule: lr0 * lr_decay^floor(epoch / decay_every_epochs).
inline double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  const auto steps = static_cast<double>(epoch / cfg.decay_every_epochs);
  return cfg.lr0 * std::pow(cfg.lr_decay, steps);
}

/// splitmix64 finalizer, used to derive independent RNG streams from one seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Paired batches
// ---------------------------------------------------------------------------

struct PairedBatch {
  std::vector<std::size_t> source;
  std::vector<std::size_t> target;
};

/**
 * Emits epochs of (source, target) index batches. An epoch has
 * floor(max(n_s, n_t) / B) batches; each domain is reshuffled at the start of
 * every epoch and the smaller one is reshuffled again whenever it wraps.
 * The two domains draw from independent streams.
 */
class PairedBatchSampler {
 public:
  PairedBatchSampler(std::size_t n_source, std::size_t n_target, std::size_t batch, std::uint64_t seed)
      : batch_(batch), source_(n_source, derive_seed(seed, 11)), target_(n_target, derive_seed(seed, 12)) {
    if (n_source == 0) throw ConfigError("paired batches: source dataset is empty");
    if (n_target == 0) throw ConfigError("paired batches: target dataset is empty");
    if (batch < 1) throw ConfigError("paired batches: batch size must be positive");
    if (batches_per_epoch() == 0) {
      throw ConfigError("paired batches: batch size " + std::to_string(batch) + " exceeds both datasets (" +
                        std::to_string(n_source) + ", " + std::to_string(n_target) + " rows)");
    }
  }

  std::size_t batches_per_epoch() const { return std::max(source_.size(), target_.size()) / batch_; }

  std::vector<PairedBatch> next_epoch() {
    source_.start_epoch();
    target_.start_epoch();
    std::vector<PairedBatch> out(batches_per_epoch());
    for (auto& b : out) {
      b.source = source_.take(batch_);
      b.target = target_.take(batch_);
    }
    return out;
  }

 private:
  class Stream {
   public:
    Stream(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
      std::iota(order_.begin(), order_.end(), std::size_t{0});
    }
    std::size_t size() const { return order_.size(); }
    void start_epoch() {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    std::vector<std::size_t> take(std::size_t k) {
      std::vector<std::size_t> out;
      out.reserve(k);
      while (out.size() < k) {
        if (cursor_ == order_.size()) start_epoch();
        out.push_back(order_[cursor_++]);
      }
      return out;
    }

   private:
    std::vector<std::size_t> order_;
    std::mt19937_64 rng_;
    std::size_t cursor_ = 0;
  };

  std::size_t batch_;
  Stream source_;
  Stream target_;
};

// ---------------------------------------------------------------------------
// SGD with heavy-ball momentum
// ---------------------------------------------------------------------------

template <typename T>
struct OptimizerState {
  ParamGrads<T> velocity;

  OptimizerState() = default;
  explicit OptimizerState(const ModelParams<T>& p) : velocity(zero_grads(p)) {}
};

/// v <- momentum * v + g; theta <- theta - lr * v.
template <typename T>
void sgd_momentum_step(ModelParams<T>& params, const ParamGrads<T>& grads, OptimizerState<T>& state, double lr,
                       double momentum) {
  std::vector<Matrix<T>*> theta;
  for_each_tensor(params, [&](Matrix<T>& m) { theta.push_back(&m); });
  std::vector<const Matrix<T>*> g;
  grads.for_each([&](const Matrix<T>& m) { g.push_back(&m); });
  std::vector<Matrix<T>*> v;
  state.velocity.for_each([&](Matrix<T>& m) { v.push_back(&m); });
  if (g.size() != theta.size() || v.size() != theta.size()) {
    throw ShapeError("sgd_momentum_step: " + std::to_string(theta.size()) + " parameter tensors but " +
                     std::to_string(g.size()) + " gradients and " + std::to_string(v.size()) + " velocities");
  }
  for (std::size_t k = 0; k < theta.size(); ++k) {
    if (!theta[k]->same_shape(*g[k]) || !theta[k]->same_shape(*v[k])) {
      throw ShapeError("sgd_momentum_step: tensor " + std::to_string(k) + " has shape " + theta[k]->shape() +
                       " but gradient " + g[k]->shape() + " and velocity " + v[k]->shape());
    }
  }
  const T m = static_cast<T>(momentum);
  const T step = static_cast<T>(lr);
  for (std::size_t k = 0; k < theta.size(); ++k) {
    auto tv = theta[k]->values();
    auto gv = g[k]->values();
    auto vv = v[k]->values();
    for (std::size_t i = 0; i < tv.size(); ++i) {
      vv[i] = m * vv[i] + gv[i];
      tv[i] -= step * vv[i];
    }
  }
  ++params.version;
}

// ---------------------------------------------------------------------------
// Training step and loop
// ---------------------------------------------------------------------------

/// Forward + backward of one paired batch. Does not touch the parameters.
template <typename T>
struct StepResult {
  LossReport report;
  ParamGrads<T> grads;
  StepCaches<T> caches;
};

/**
 * Computes the objective ce + lambda * (coral + bfal) restricted to the terms the
 * variant enables, and its parameter gradients. `x_t` may be empty for the
 * source-only variant, which never reads it.
 */
template <typename T>
StepResult<T> compute_step(const ModelParams<T>& params, const TrainConfig& cfg, const Matrix<T>& x_s,
                           std::span<const int> y_s, const Matrix<T>& x_t) {
  const Variant v = cfg.variant;
  const T lambda = static_cast<T>(cfg.weights.lambda);

  auto fs = extract_features(params, x_s, Mode::kTrain);
  auto logits = classify(params, fs.out, Mode::kTrain);
  auto ce = cross_entropy_forward(logits.out, y_s);

  StepResult<T> r;
  r.caches.extractor_s = std::move(fs.cache);
  r.caches.classifier = std::move(logits.cache);
  UpstreamGrads<T> up;
  up.logits = cross_entropy_backward(ce.cache);

  double coral_value = 0.0;
  double bfal_value = 0.0;
  if (uses_target(v)) {
    auto ft = extract_features(params, x_t, Mode::kTrain);
    if (uses_coral(v)) {
      auto coral = coral_forward(fs.out, ft.out);
      coral_value = static_cast<double>(coral.loss);
      auto g = coral_backward(coral.cache);
      up.features_s = g.grad_s * lambda;
      up.features_t = g.grad_t * lambda;
    }
    if (uses_bfal(v)) {
      auto ps = project(params, fs.out, Mode::kTrain);
      auto pt = project(params, ft.out, Mode::kTrain);
      auto bfal = bfal_forward(ps.out, pt.out, static_cast<T>(cfg.weights.mu));
      bfal_value = static_cast<double>(bfal.loss);
      auto g = bfal_backward(bfal.cache);
      up.projection_s = g.grad_s * lambda;
      up.projection_t = g.grad_t * lambda;
      r.caches.projector_s = std::move(ps.cache);
      r.caches.projector_t = std::move(pt.cache);
    }
    r.caches.extractor_t = std::move(ft.cache);
  }

  r.report = combined_loss(static_cast<double>(ce.loss), coral_value, bfal_value, cfg.weights);
  r.grads = backward(params, r.caches, up);
  return r;
}

/// Applies one SGD step for a paired batch and returns its loss report.
template <typename T>
LossReport train_step(ModelParams<T>& params, OptimizerState<T>& opt, const TrainConfig& cfg, const Matrix<T>& x_s,
                      std::span<const int> y_s, const Matrix<T>& x_t, double lr) {
  auto step = compute_step(params, cfg, x_s, y_s, x_t);
  bool grads_ok = true;
  step.grads.for_each([&](const Matrix<T>& m) { grads_ok = grads_ok && all_finite(m); });
  if (!grads_ok) throw NumericalError("train: non-finite gradient");
  for (const auto* c : {&step.caches.extractor_s, &step.caches.classifier}) update_running_stats(params, *c);
  for (const auto* c : {&step.caches.extractor_t, &step.caches.projector_s, &step.caches.projector_t})
    if (*c) update_running_stats(params, **c);
  sgd_momentum_step(params, step.grads, opt, lr, cfg.momentum);
  return step.report;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  LossReport mean;  // averaged over the epoch's steps
  std::optional<Accuracy> source_val;
  std::optional<Accuracy> target_val;  // reporting only, never used for selection
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::vector<LossReport> steps;
  std::size_t best_epoch = 0;

  friend bool operator==(const TrainHistory& a, const TrainHistory& b);
};

inline bool operator==(const LossReport& a, const LossReport& b) {
  return a.ce == b.ce && a.coral == b.coral && a.bfal == b.bfal && a.total == b.total;
}

inline bool operator==(const Accuracy& a, const Accuracy& b) { return a.macro == b.macro && a.micro == b.micro; }

inline bool operator==(const EpochRecord& a, const EpochRecord& b) {
  return a.epoch == b.epoch && a.lr == b.lr && a.mean == b.mean && a.source_val == b.source_val &&
         a.target_val == b.target_val;
}

inline bool operator==(const TrainHistory& a, const TrainHistory& b) {
  return a.epochs == b.epochs && a.steps == b.steps && a.best_epoch == b.best_epoch;
}

template <typename T>
struct TrainResult {
  ModelParams<T> model;  // best source-validation checkpoint (last epoch without a validation split)
  ModelParams<T> last;
  TrainHistory history;
};

/// Optional per-epoch reporting hook (e.g. target-validation accuracy). It sees
/// the parameters read-only and cannot influence model selection.
template <typename T>
using EpochReporter = std::function<std::optional<Accuracy>(const ModelParams<T>&)>;

/**
 * Paired source/target training. The target domain is accepted only as an
 * UnlabeledDataset, so target labels cannot reach training or selection.
 * Deterministic for a fixed config seed.
 */
template <typename T>
TrainResult<T> train(const TrainConfig& cfg, const LabeledDataset& source, const UnlabeledDataset& target,
                     ModelParams<T> model, const LabeledDataset* source_val = nullptr,
                     const EpochReporter<T>& report_target = {}) {
  cfg.validate();
  if (source.dim() != model.arch.input_dim || target.dim() != model.arch.input_dim) {
    throw ConfigError("train: data dims (source " + std::to_string(source.dim()) + ", target " +
                      std::to_string(target.dim()) + ") do not match model input dim " +
                      std::to_string(model.arch.input_dim));
  }
  if (static_cast<std::size_t>(source.num_classes()) != model.arch.num_classes()) {
    throw ConfigError("train: source has " + std::to_string(source.num_classes()) + " classes, model outputs " +
                      std::to_string(model.arch.num_classes()));
  }

  PairedBatchSampler sampler(source.rows(), target.rows(), cfg.batch_size, cfg.seed);
  OptimizerState<T> opt(model);
  TrainResult<T> result;
  std::optional<double> best_macro;
  const Matrix<T> no_target;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    const auto batches = sampler.next_epoch();
    for (const auto& b : batches) {
      const Matrix<T> x_s = source.gather<T>(b.source);
      const std::vector<int> y_s = source.gather_labels(b.source);
      const Matrix<T> x_t = uses_target(cfg.variant) ? target.gather<T>(b.target) : no_target;
      const LossReport rep = train_step(model, opt, cfg, x_s, y_s, x_t, lr);
      result.history.steps.push_back(rep);
      rec.mean.ce += rep.ce;
      rec.mean.coral += rep.coral;
      rec.mean.bfal += rep.bfal;
      rec.mean.total += rep.total;
    }
    const double n = static_cast<double>(batches.size());
    rec.mean.ce /= n;
    rec.mean.coral /= n;
    rec.mean.bfal /= n;
    rec.mean.total /= n;
    if (!all_finite(model)) throw NumericalError("train: parameters became non-finite in epoch " + std::to_string(epoch));

    if (source_val) {
      rec.source_val = evaluate(model, *source_val);
      if (!best_macro || rec.source_val->macro > *best_macro) {
        best_macro = rec.source_val->macro;
        result.history.best_epoch = epoch;
        result.model = model;
      }
    }
    if (report_target) rec.target_val = report_target(model);
    result.history.epochs.push_back(rec);
  }
  if (!source_val) {
    result.history.best_epoch = cfg.epochs - 1;
    result.model = model;
  }
  result.last = std::move(model);
  return result;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

}  // namespace detail

/// One row per epoch; accuracy columns are empty when not measured.
inline void write_history_csv(std::ostream& os, const TrainHistory& h) {
  using detail::format_double;
  os << "epoch,lr,ce,coral,bfal,total,src_val_macro,src_val_micro,tgt_val_macro,tgt_val_micro,best\n";
  for (const auto& e : h.epochs) {
    os << e.epoch << ',' << format_double(e.lr) << ',' << format_double(e.mean.ce) << ','
       << format_double(e.mean.coral) << ',' << format_double(e.mean.bfal) << ',' << format_double(e.mean.total);
    for (const auto* acc : {&e.source_val, &e.target_val}) {
      if (*acc) os << ',' << format_double((*acc)->macro) << ',' << format_double((*acc)->micro);
      else os << ",,";
    }
    os << ',' << (e.epoch == h.best_epoch ? 1 : 0) << '\n';
  }
}

}  // namespace barlow

#endif  // BARLOW_TRAINER_HPP_

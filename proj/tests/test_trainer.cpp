#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <vector>

#include "barlow/data.hpp"
#include "barlow/trainer.hpp"
#include "support.hpp"

using barlow::Architecture;
using barlow::Matrix;
using barlow::ModelParams;
using barlow::TrainConfig;
using barlow::Variant;

namespace {

template <typename T>
std::vector<Matrix<T>> flatten(const ModelParams<T>& p) {
  std::vector<Matrix<T>> out;
  barlow::for_each_tensor(p, [&](const Matrix<T>& m) { out.push_back(m); });
  return out;
}

template <typename T>
std::vector<std::vector<T>> running_stats(const ModelParams<T>& p) {
  std::vector<std::vector<T>> out;
  for (const auto* s : {&p.extractor, &p.projector, &p.classifier})
    for (const auto& l : s->layers)
      if (const auto* bn = std::get_if<barlow::BatchNormState<T>>(&l)) {
        out.push_back(bn->running_mean);
        out.push_back(bn->running_var);
      }
  return out;
}

barlow::LabeledDataset random_labeled(std::size_t n, std::size_t dim, int classes, std::mt19937_64& rng) {
  barlow::LabeledDataset d(dim, classes);
  std::normal_distribution<float> g;
  std::vector<float> row(dim);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % static_cast<std::size_t>(classes));
    for (std::size_t j = 0; j < dim; ++j) row[j] = g(rng) + (j == static_cast<std::size_t>(y) ? 2.0f : 0.0f);
    d.add_row(row, y);
  }
  return d;
}

barlow::UnlabeledDataset random_unlabeled(std::size_t n, std::size_t dim, std::mt19937_64& rng, float offset) {
  barlow::UnlabeledDataset d(dim);
  std::normal_distribution<float> g(offset, 1.5f);
  std::vector<float> row(dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : row) v = g(rng);
    d.add_row(row);
  }
  return d;
}

TrainConfig small_config(Variant v) {
  TrainConfig c;
  c.variant = v;
  c.epochs = 3;
  c.batch_size = 8;
  c.weights.lambda = 0.5;
  c.seed = 17;
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// schedule and sampler
// ---------------------------------------------------------------------------

TEST(Schedule, StepDecayValues) {
  const TrainConfig c;
  EXPECT_NEAR(barlow::lr_at(0, c), 0.001, 1e-15);
  EXPECT_NEAR(barlow::lr_at(19, c), 0.001, 1e-15);
  EXPECT_NEAR(barlow::lr_at(20, c), 0.00033, 1e-15);
  EXPECT_NEAR(barlow::lr_at(40, c), 0.0001089, 1e-15);
}

TEST(Schedule, NonIncreasing) {
  TrainConfig c;
  for (double decay : {0.1, 0.33, 0.9, 1.0}) {
    c.lr_decay = decay;
    for (std::size_t e = 1; e < 200; ++e) EXPECT_LE(barlow::lr_at(e, c), barlow::lr_at(e - 1, c));
  }
}

TEST(Sampler, BalancedDomainsVisitEveryRowOnce) {
  barlow::PairedBatchSampler s(32, 32, 16, 1);
  ASSERT_EQ(s.batches_per_epoch(), 2u);
  const auto epoch = s.next_epoch();
  ASSERT_EQ(epoch.size(), 2u);
  std::multiset<std::size_t> src, tgt;
  for (const auto& b : epoch) {
    EXPECT_EQ(b.source.size(), 16u);
    EXPECT_EQ(b.target.size(), 16u);
    src.insert(b.source.begin(), b.source.end());
    tgt.insert(b.target.begin(), b.target.end());
  }
  for (std::size_t i = 0; i < 32; ++i) {
    EXPECT_EQ(src.count(i), 1u);
    EXPECT_EQ(tgt.count(i), 1u);
  }
}

TEST(Sampler, SmallerDomainWraps) {
  barlow::PairedBatchSampler s(16, 48, 16, 2);
  ASSERT_EQ(s.batches_per_epoch(), 3u);
  for (int e = 0; e < 4; ++e) {
    std::map<std::size_t, int> src, tgt;
    for (const auto& b : s.next_epoch()) {
      for (auto i : b.source) ++src[i];
      for (auto i : b.target) ++tgt[i];
    }
    ASSERT_EQ(src.size(), 16u);
    for (const auto& [i, n] : src) EXPECT_EQ(n, 3) << "source row " << i;
    ASSERT_EQ(tgt.size(), 48u);
    for (const auto& [i, n] : tgt) EXPECT_EQ(n, 1) << "target row " << i;
  }
}

TEST(Sampler, SeedDeterminesSequence) {
  barlow::PairedBatchSampler a(40, 24, 8, 5), b(40, 24, 8, 5), c(40, 24, 8, 6);
  bool differs = false;
  for (int e = 0; e < 3; ++e) {
    const auto ea = a.next_epoch(), eb = b.next_epoch(), ec = c.next_epoch();
    for (std::size_t k = 0; k < ea.size(); ++k) {
      EXPECT_EQ(ea[k].source, eb[k].source);
      EXPECT_EQ(ea[k].target, eb[k].target);
      differs = differs || ea[k].source != ec[k].source;
    }
  }
  EXPECT_TRUE(differs);
}

TEST(Sampler, RejectsOversizedBatch) {
  EXPECT_THROW(barlow::PairedBatchSampler(4, 6, 8, 0), barlow::ConfigError);
  EXPECT_THROW(barlow::PairedBatchSampler(0, 6, 2, 0), barlow::ConfigError);
}

// ---------------------------------------------------------------------------
// SGD
// ---------------------------------------------------------------------------

namespace {

ModelParams<double> scalar_model() {
  Architecture a;
  a.input_dim = 1;
  a.projector = {{barlow::LayerKind::kAffine, 1, 1}};
  a.classifier = {{barlow::LayerKind::kAffine, 1, 1}};
  auto p = barlow::init_params<double>(a, 0);
  barlow::for_each_tensor(p, [](Matrix<double>& m) { m.fill(0.0); });
  return p;
}

barlow::ParamGrads<double> filled_grads(const ModelParams<double>& p, double v) {
  auto g = barlow::zero_grads(p);
  g.for_each([&](Matrix<double>& m) { m.fill(v); });
  return g;
}

}  // namespace

TEST(Sgd, PlainStep) {
  auto p = scalar_model();
  barlow::OptimizerState<double> st(p);
  barlow::sgd_momentum_step(p, filled_grads(p, 2.0), st, 1.0, 0.0);
  for (const auto& m : flatten(p)) EXPECT_EQ(m(0, 0), -2.0);
}

TEST(Sgd, TwoMomentumSteps) {
  auto p = scalar_model();
  barlow::OptimizerState<double> st(p);
  const auto g = filled_grads(p, 1.0);
  barlow::sgd_momentum_step(p, g, st, 1.0, 0.9);
  barlow::sgd_momentum_step(p, g, st, 1.0, 0.9);
  for (const auto& m : flatten(p)) EXPECT_NEAR(m(0, 0), -2.9, 1e-15);
}

TEST(Sgd, ZeroGradientIsFixedPoint) {
  std::mt19937_64 rng(1);
  auto p = barlow::init_params<double>(Architecture::make_default(4, 3), 7);
  const auto before = flatten(p);
  barlow::OptimizerState<double> st(p);
  barlow::sgd_momentum_step(p, barlow::zero_grads(p), st, 0.1, 0.9);
  EXPECT_EQ(flatten(p), before);
  EXPECT_EQ(p.version, 1u);
}

TEST(Sgd, ShapeMismatchThrows) {
  auto p = scalar_model();
  barlow::OptimizerState<double> st(p);
  auto g = filled_grads(p, 1.0);
  g.classifier.pop_back();
  EXPECT_THROW(barlow::sgd_momentum_step(p, g, st, 1.0, 0.9), barlow::ShapeError);
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

TEST(Train, SourceOnlyLogsNoAlignmentLoss) {
  std::mt19937_64 rng(2);
  const auto src = random_labeled(48, 6, 3, rng);
  const auto tgt = random_unlabeled(40, 6, rng, 1.0f);
  auto cfg = small_config(Variant::kSourceOnly);
  cfg.weights.lambda = 123.0;
  const auto res = barlow::train(cfg, src, tgt, barlow::init_params<float>(Architecture::make_default(6, 3), 1));
  for (const auto& s : res.history.steps) {
    EXPECT_EQ(s.coral, 0.0);
    EXPECT_EQ(s.bfal, 0.0);
    EXPECT_EQ(s.total, s.ce);
  }
}

TEST(Train, EveryLoggedStepSatisfiesDecomposition) {
  std::mt19937_64 rng(3);
  const auto src = random_labeled(48, 6, 3, rng);
  const auto tgt = random_unlabeled(40, 6, rng, 1.0f);
  for (Variant v : barlow::kAllVariants) {
    const auto cfg = small_config(v);
    const auto res = barlow::train(cfg, src, tgt, barlow::init_params<float>(Architecture::make_default(6, 3), 1));
    ASSERT_EQ(res.history.steps.size(), 3u * 6u);
    for (const auto& s : res.history.steps) {
      EXPECT_EQ(s.total, s.ce + cfg.weights.lambda * (s.coral + s.bfal));
      EXPECT_EQ(s.coral > 0.0, barlow::uses_coral(v));
      EXPECT_EQ(s.bfal > 0.0, barlow::uses_bfal(v));
      EXPECT_GE(s.coral, 0.0);
      EXPECT_GE(s.bfal, 0.0);
    }
  }
}

TEST(Train, SingleStepMatchesHandStep) {
  std::mt19937_64 rng(4);
  const auto src = random_labeled(8, 5, 3, rng);
  const auto tgt = random_unlabeled(8, 5, rng, -0.5f);
  auto cfg = small_config(Variant::kFull);
  cfg.epochs = 1;
  const auto init = barlow::init_params<double>(Architecture::make_default(5, 3, 7, 4, 3), 11);
  const auto res = barlow::train(cfg, src, tgt, init);

  barlow::PairedBatchSampler sampler(8, 8, 8, cfg.seed);
  const auto batch = sampler.next_epoch().at(0);
  auto hand = init;
  const auto step = barlow::compute_step(hand, cfg, src.gather<double>(batch.source),
                                         src.gather_labels(batch.source), tgt.gather<double>(batch.target));
  for (const auto* c : {&step.caches.extractor_s, &step.caches.classifier}) barlow::update_running_stats(hand, *c);
  for (const auto* c : {&step.caches.extractor_t, &step.caches.projector_s, &step.caches.projector_t})
    if (*c) barlow::update_running_stats(hand, **c);
  std::vector<Matrix<double>*> theta;
  barlow::for_each_tensor(hand, [&](Matrix<double>& m) { theta.push_back(&m); });
  std::vector<const Matrix<double>*> grads;
  step.grads.for_each([&](const Matrix<double>& m) { grads.push_back(&m); });
  ASSERT_EQ(theta.size(), grads.size());
  const double lr = barlow::lr_at(0, cfg);
  for (std::size_t k = 0; k < theta.size(); ++k)
    for (std::size_t i = 0; i < theta[k]->size(); ++i) {
      const double v = cfg.momentum * 0.0 + grads[k]->values()[i];
      theta[k]->values()[i] -= lr * v;
    }

  EXPECT_EQ(flatten(res.model), flatten(hand));
  EXPECT_EQ(running_stats(res.model), running_stats(hand));
  ASSERT_EQ(res.history.steps.size(), 1u);
  EXPECT_EQ(res.history.steps[0].total, step.report.total);
}

TEST(Train, HistoryIsReproducible) {
  std::mt19937_64 rng(5);
  const auto src = random_labeled(40, 6, 3, rng);
  const auto val = random_labeled(24, 6, 3, rng);
  const auto tgt = random_unlabeled(32, 6, rng, 0.5f);
  const auto cfg = small_config(Variant::kFull);
  const auto init = barlow::init_params<float>(Architecture::make_default(6, 3), 2);
  const auto a = barlow::train(cfg, src, tgt, init, &val);
  const auto b = barlow::train(cfg, src, tgt, init, &val);
  EXPECT_TRUE(a.history == b.history);
  EXPECT_EQ(flatten(a.model), flatten(b.model));
  std::ostringstream ha, hb;
  barlow::write_history_csv(ha, a.history);
  barlow::write_history_csv(hb, b.history);
  EXPECT_EQ(ha.str(), hb.str());
  EXPECT_EQ(ha.str().substr(0, ha.str().find('\n')),
            "epoch,lr,ce,coral,bfal,total,src_val_macro,src_val_micro,tgt_val_macro,tgt_val_micro,best");
}

TEST(Train, SourceOnlyIgnoresTargetContents) {
  std::mt19937_64 rng(6);
  const auto src = random_labeled(40, 6, 3, rng);
  const auto val = random_labeled(24, 6, 3, rng);
  const auto t1 = random_unlabeled(56, 6, rng, 0.0f);
  const auto t2 = random_unlabeled(56, 6, rng, 9.0f);
  ASSERT_FALSE(t1 == t2);
  const auto cfg = small_config(Variant::kSourceOnly);
  const auto init = barlow::init_params<float>(Architecture::make_default(6, 3), 4);
  const auto a = barlow::train(cfg, src, t1, init, &val);
  const auto b = barlow::train(cfg, src, t2, init, &val);
  EXPECT_EQ(flatten(a.model), flatten(b.model));
  EXPECT_EQ(flatten(a.last), flatten(b.last));
  EXPECT_EQ(running_stats(a.last), running_stats(b.last));
  EXPECT_TRUE(a.history == b.history);
}

TEST(Train, SelectionFollowsSourceValidationOnly) {
  std::mt19937_64 rng(7);
  const auto src = random_labeled(48, 6, 3, rng);
  const auto val = random_labeled(30, 6, 3, rng);
  const auto tgt = random_unlabeled(48, 6, rng, 0.0f);
  auto cfg = small_config(Variant::kFull);
  cfg.epochs = 6;
  const auto init = barlow::init_params<float>(Architecture::make_default(6, 3), 5);
  int calls = 0;
  barlow::EpochReporter<float> adversarial = [&](const ModelParams<float>&) -> std::optional<barlow::Accuracy> {
    ++calls;
    return barlow::Accuracy{double(calls % 2), double(calls % 2)};
  };
  const auto quiet = barlow::train(cfg, src, tgt, init, &val);
  const auto noisy = barlow::train(cfg, src, tgt, init, &val, adversarial);
  EXPECT_EQ(calls, 6);
  EXPECT_EQ(quiet.history.best_epoch, noisy.history.best_epoch);
  EXPECT_EQ(flatten(quiet.model), flatten(noisy.model));
  double best = -1.0;
  std::size_t arg = 0;
  for (const auto& e : quiet.history.epochs)
    if (e.source_val->macro > best) {
      best = e.source_val->macro;
      arg = e.epoch;
    }
  EXPECT_EQ(quiet.history.best_epoch, arg);
}

TEST(Train, RejectsMismatchedInputs) {
  std::mt19937_64 rng(8);
  const auto src = random_labeled(16, 6, 3, rng);
  const auto tgt = random_unlabeled(16, 5, rng, 0.0f);
  const auto init = barlow::init_params<float>(Architecture::make_default(6, 3), 1);
  EXPECT_THROW(barlow::train(small_config(Variant::kFull), src, tgt, init), barlow::ConfigError);
  auto bad = small_config(Variant::kFull);
  bad.lr0 = -1.0;
  EXPECT_THROW(barlow::train(bad, src, random_unlabeled(16, 6, rng, 0.0f), init), barlow::ConfigError);
}

// The target domain can only be handed over without labels.
template <typename Target>
concept TrainAcceptsTarget = requires(const TrainConfig& c, const barlow::LabeledDataset& s, const Target& t,
                                      ModelParams<float> m) { barlow::train<float>(c, s, t, m); };
static_assert(TrainAcceptsTarget<barlow::UnlabeledDataset>);
static_assert(!TrainAcceptsTarget<barlow::LabeledDataset>);

#ifndef BARLOW_EXPERIMENT_HPP_
#define BARLOW_EXPERIMENT_HPP_

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "barlow/data.hpp"
#include "barlow/metrics.hpp"
#include "barlow/model.hpp"
#include "barlow/trainer.hpp"

namespace barlow {

/// Layer sizes for the default stack, or an explicit architecture.
struct ModelShape {
  std::size_t hidden_dim = 64;
  std::size_t feature_dim = 16;
  std::size_t projection_dim = 0;  // 0 means equal to feature_dim
  std::optional<Architecture> layers;

  Architecture resolve(std::size_t input_dim, std::size_t classes) const {
    if (layers) {
      if (layers->input_dim != input_dim || layers->num_classes() != classes) {
        throw ConfigError("model: explicit architecture expects " + std::to_string(layers->input_dim) + " inputs and " +
                          std::to_string(layers->num_classes()) + " classes, data has " + std::to_string(input_dim) +
                          " and " + std::to_string(classes));
      }
      layers->validate();
      return *layers;
    }
    return Architecture::make_default(input_dim, classes, hidden_dim, feature_dim, projection_dim);
  }
};

inline constexpr std::string_view kTargetOnly = "target_only";

struct ExperimentConfig {
  ShiftConfig shift;
  TrainConfig train;
  ModelShape model;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t jobs = 1;
  bool target_only = true;
};

struct RunRecord {
  std::string variant;
  std::uint64_t seed = 0;
  std::optional<Accuracy> target_test;
  std::optional<Accuracy> source_test;
  std::size_t best_epoch = 0;
  std::string error;  // empty on success

  bool ok() const { return error.empty(); }
};

struct Aggregate {
  std::string variant;
  std::size_t runs = 0;
  double macro_mean = 0.0, macro_std = 0.0;
  double micro_mean = 0.0, micro_std = 0.0;
  double source_macro_mean = 0.0;
};

struct ExperimentReport {
  std::vector<RunRecord> runs;  // sorted by (variant order, seed)

  std::vector<std::string> variants() const {
    std::vector<std::string> v;
    for (const auto& r : runs)
      if (std::find(v.begin(), v.end(), r.variant) == v.end()) v.push_back(r.variant);
    return v;
  }

  /// Mean and sample standard deviation over the successful runs of a variant.
  Aggregate aggregate(std::string_view variant) const {
    Aggregate a;
    a.variant = variant;
    std::vector<double> ma, mi, sm;
    for (const auto& r : runs) {
      if (r.variant != variant || !r.ok()) continue;
      ma.push_back(r.target_test->macro);
      mi.push_back(r.target_test->micro);
      sm.push_back(r.source_test->macro);
    }
    a.runs = ma.size();
    const auto stats = [](const std::vector<double>& v, double& mean, double& sd) {
      mean = sd = 0.0;
      if (v.empty()) return;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      if (v.size() < 2) return;
      for (double x : v) sd += (x - mean) * (x - mean);
      sd = std::sqrt(sd / static_cast<double>(v.size() - 1));
    };
    double unused = 0.0;
    stats(ma, a.macro_mean, a.macro_std);
    stats(mi, a.micro_mean, a.micro_std);
    stats(sm, a.source_macro_mean, unused);
    return a;
  }
};

/// Source and target splits of one seed, each normalized with its own train statistics.
struct PreparedData {
  DomainSplits source;
  DomainSplits target;
};

inline PreparedData prepare_data(ShiftConfig shift, std::uint64_t seed) {
  shift.seed = seed;
  auto raw = generate_synthetic_shift(shift);
  return {normalize_domain(raw.source), normalize_domain(raw.target)};
}

/**
 * Trains one variant on prepared data. Target labels are used only to score
 * the final model on the target test split (and as training labels for the
 * target-only upper bound).
 */
template <typename T>
RunRecord run_variant(const PreparedData& data, std::string_view variant, std::uint64_t seed,
                      const ExperimentConfig& cfg) {
  RunRecord rec;
  rec.variant = variant;
  rec.seed = seed;
  try {
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    const Architecture arch = cfg.model.resolve(data.source.train.dim(), data.source.train.num_classes());
    auto init = init_params<T>(arch, derive_seed(seed, 3));
    TrainResult<T> res;
    if (variant == kTargetOnly) {
      tc.variant = Variant::kSourceOnly;
      res = train(tc, data.target.train, data.target.train.unlabeled(), std::move(init), &data.target.val);
    } else {
      tc.variant = parse_variant(variant);
      res = train(tc, data.source.train, data.target.train.unlabeled(), std::move(init), &data.source.val);
    }
    rec.best_epoch = res.history.best_epoch;
    rec.target_test = evaluate(res.model, data.target.test);
    rec.source_test = evaluate(res.model, data.source.test);
  } catch (const std::exception& e) {
    rec.error = e.what();
  }
  return rec;
}

template <typename T>
ExperimentReport run_ablation(const ExperimentConfig& cfg) {
  if (cfg.seeds.empty()) throw ConfigError("ablation: at least one seed is required");
  cfg.train.validate();

  std::vector<std::string> variants;
  for (Variant v : kAllVariants) variants.emplace_back(to_string(v));
  if (cfg.target_only) variants.emplace_back(kTargetOnly);

  // data depends only on the seed, so every variant of a seed sees identical splits
  std::vector<PreparedData> data;
  data.reserve(cfg.seeds.size());
  for (auto s : cfg.seeds) data.push_back(prepare_data(cfg.shift, s));

  ExperimentReport report;
  report.runs.resize(variants.size() * cfg.seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < report.runs.size();) {
      const std::size_t vi = k / cfg.seeds.size();
      const std::size_t si = k % cfg.seeds.size();
      report.runs[k] = run_variant<T>(data[si], variants[vi], cfg.seeds[si], cfg);
    }
  };
  const std::size_t jobs = std::clamp<std::size_t>(cfg.jobs, 1, report.runs.size());
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return report;
}

namespace detail {

inline std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

}  // namespace detail

/// One row per (variant, seed) followed by mean/std rows per variant.
inline void write_report_csv(std::ostream& os, const ExperimentReport& r) {
  os << "variant,seed,target_macro,target_micro,source_macro,source_micro,best_epoch,status\n";
  for (const auto& run : r.runs) {
    os << run.variant << ',' << run.seed << ',';
    if (run.ok()) {
      os << detail::fixed(run.target_test->macro, 6) << ',' << detail::fixed(run.target_test->micro, 6) << ','
         << detail::fixed(run.source_test->macro, 6) << ',' << detail::fixed(run.source_test->micro, 6) << ','
         << run.best_epoch << ",ok\n";
    } else {
      std::string msg = run.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      os << ",,,,,failed: " << msg << '\n';
    }
  }
  for (const auto& v : r.variants()) {
    const auto a = r.aggregate(v);
    os << v << ",mean," << detail::fixed(a.macro_mean, 6) << ',' << detail::fixed(a.micro_mean, 6) << ','
       << detail::fixed(a.source_macro_mean, 6) << ",,," << a.runs << " runs\n";
    os << v << ",std," << detail::fixed(a.macro_std, 6) << ',' << detail::fixed(a.micro_std, 6) << ",,,,\n";
  }
}

inline void write_report_table(std::ostream& os, const ExperimentReport& r) {
  os << "variant       runs  target macro (%)    target micro (%)    source macro (%)\n";
  os << "------------  ----  ------------------  ------------------  ----------------\n";
  for (const auto& v : r.variants()) {
    const auto a = r.aggregate(v);
    char line[256];
    std::snprintf(line, sizeof(line), "%-12s  %4zu  %6.2f +/- %6.2f     %6.2f +/- %6.2f     %6.2f\n", v.c_str(), a.runs,
                  100 * a.macro_mean, 100 * a.macro_std, 100 * a.micro_mean, 100 * a.micro_std,
                  100 * a.source_macro_mean);
    os << line;
  }
  for (const auto& run : r.runs)
    if (!run.ok()) os << "FAILED " << run.variant << " seed " << run.seed << ": " << run.error << '\n';
  os << "macro accuracy = mean per-class recall over classes present in the evaluated split\n";
}

}  // namespace barlow

#endif  // BARLOW_EXPERIMENT_HPP_

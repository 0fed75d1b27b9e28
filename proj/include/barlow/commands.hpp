#ifndef BARLOW_COMMANDS_HPP_
#define BARLOW_COMMANDS_HPP_

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>

#include "barlow/config.hpp"
#include "barlow/data.hpp"
#include "barlow/error.hpp"
#include "barlow/experiment.hpp"
#include "barlow/gradcheck.hpp"
#include "barlow/log.hpp"
#include "barlow/metrics.hpp"
#include "barlow/serialization.hpp"
#include "barlow/trainer.hpp"

namespace barlow::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kConfigError = 1, kRuntimeError = 2, kGradcheckFailure = 3 };

/// Command-line overrides shared by the subcommands.
struct Overrides {
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> jobs;
  std::optional<std::string> variant;
  std::optional<std::string> precision;
};

/// Loads the config (or defaults) and applies command-line overrides.
inline RunConfig resolve_config(const Overrides& o) {
  RunConfig c = o.config_path ? load_run_config(*o.config_path) : RunConfig{};
  if (o.seed) {
    c.train.seed = *o.seed;
    if (c.data.shift) c.data.shift->seed = *o.seed;
    c.eval.seeds = {*o.seed};
  }
  if (o.out) c.eval.output_dir = *o.out;
  if (o.jobs) {
    if (*o.jobs == 0) throw ConfigError("--jobs must be positive");
    c.eval.jobs = *o.jobs;
  }
  if (o.variant) c.train.variant = parse_variant(*o.variant);
  if (o.precision) {
    if (*o.precision != "f32" && *o.precision != "f64") throw ConfigError("--precision must be f32 or f64");
    c.precision = *o.precision;
  }
  return c;
}

inline fs::path prepare_output_dir(const RunConfig& c) {
  fs::path dir(c.eval.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory '" + dir.string() + "': " + ec.message());
  write_json_file((dir / "config.json").string(), run_config_to_json(c));
  return dir;
}

/// Maps library exceptions onto the documented exit codes.
inline int guarded(const std::function<int()>& body, std::ostream& err = std::cerr) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

inline int cmd_generate(const Overrides& o) {
  const RunConfig c = resolve_config(o);
  if (!c.data.shift) throw ConfigError("generate: config has no data.shift section");
  const fs::path dir = prepare_output_dir(c);
  const auto data = generate_synthetic_shift(*c.data.shift);
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    const std::string tag(to_string(s));
    save_dataset((dir / ("source_" + tag + ".csv")).string(), data.source.get(s));
    save_dataset((dir / ("target_" + tag + ".csv")).string(), data.target.get(s));
  }
  write_json_file((dir / "shift.json").string(), shift_config_to_json(*c.data.shift));
  log::info("wrote 6 dataset files to " + dir.string());
  return kOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// Datasets for a single training run. Target labels, when present on disk,
/// stay in target_val / target_test and never reach the trainer.
struct LoadedData {
  DomainSplits source;
  UnlabeledDataset target_train;
  std::optional<LabeledDataset> target_val;
  std::optional<LabeledDataset> target_test;
};

inline LoadedData load_run_data(const RunConfig& c) {
  LoadedData d;
  if (c.data.shift) {
    auto raw = generate_synthetic_shift(*c.data.shift);
    DomainSplits src = c.data.normalize ? normalize_domain(raw.source) : raw.source;
    DomainSplits tgt = c.data.normalize ? normalize_domain(raw.target) : raw.target;
    d.source = std::move(src);
    d.target_train = tgt.train.unlabeled();
    d.target_val = std::move(tgt.val);
    d.target_test = std::move(tgt.test);
    return d;
  }
  const auto& p = *c.data.paths;
  d.source.train = load_labeled(p.source_train, std::nullopt, Split::kTrain);
  const int m = d.source.train.num_classes();
  if (!p.source_val.empty()) d.source.val = load_labeled(p.source_val, m, Split::kVal);
  if (!p.source_test.empty()) d.source.test = load_labeled(p.source_test, m, Split::kTest);
  d.target_train = load_unlabeled(p.target_train);
  if (!p.target_val.empty()) d.target_val = load_labeled(p.target_val, m, Split::kVal);
  if (!p.target_test.empty()) d.target_test = load_labeled(p.target_test, m, Split::kTest);
  if (c.data.normalize) {
    const auto ss = fit_normalization(d.source.train);
    d.source.train = apply_normalization(d.source.train, ss);
    if (!d.source.val.empty()) d.source.val = apply_normalization(d.source.val, ss);
    if (!d.source.test.empty()) d.source.test = apply_normalization(d.source.test, ss);
    const auto ts = fit_normalization(d.target_train);
    d.target_train = apply_normalization(d.target_train, ts);
    if (d.target_val) d.target_val = apply_normalization(*d.target_val, ts);
    if (d.target_test) d.target_test = apply_normalization(*d.target_test, ts);
  }
  return d;
}

template <typename T>
int train_with_precision(const RunConfig& c, const fs::path& dir) {
  const LoadedData d = load_run_data(c);
  const Architecture arch = c.model.resolve(d.source.train.dim(), d.source.train.num_classes());
  auto init = init_params<T>(arch, derive_seed(c.train.seed, 3));

  EpochReporter<T> reporter;
  if (d.target_val) reporter = [&](const ModelParams<T>& m) -> std::optional<Accuracy> { return evaluate(m, *d.target_val); };
  const LabeledDataset* val = d.source.val.empty() ? nullptr : &d.source.val;

  const auto res = train(c.train, d.source.train, d.target_train, std::move(init), val, reporter);
  save_checkpoint((dir / "checkpoint.json").string(), res.model);
  {
    std::ofstream os(dir / "history.csv", std::ios::binary);
    write_history_csv(os, res.history);
  }
  for (const auto& e : res.history.epochs) {
    log::debug("epoch " + std::to_string(e.epoch) + " total " + std::to_string(e.mean.total) + " ce " +
               std::to_string(e.mean.ce));
  }
  std::cout << "variant " << to_string(c.train.variant) << ", best epoch " << res.history.best_epoch << '\n';
  if (!d.source.test.empty()) {
    const auto a = evaluate(res.model, d.source.test);
    std::cout << "source test  macro " << detail::fixed(a.macro) << "  micro " << detail::fixed(a.micro) << '\n';
  }
  if (d.target_test) {
    const auto a = evaluate(res.model, *d.target_test);
    std::cout << "target test  macro " << detail::fixed(a.macro) << "  micro " << detail::fixed(a.micro) << '\n';
  }
  return kOk;
}

inline int cmd_train(const Overrides& o) {
  const RunConfig c = resolve_config(o);
  const fs::path dir = prepare_output_dir(c);
  return c.precision == "f64" ? train_with_precision<double>(c, dir) : train_with_precision<float>(c, dir);
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOptions {
  std::string checkpoint;
  std::string dataset;
  std::optional<std::string> normalize_from;  // train split of the dataset's domain
  std::optional<std::string> out;
};

template <typename T>
Accuracy eval_with_precision(const json& ck, const EvalOptions& e) {
  const auto model = checkpoint_from_json<T>(ck);
  const int m = static_cast<int>(model.arch.num_classes());
  LabeledDataset data = load_labeled(e.dataset, m, Split::kTest);
  if (e.normalize_from) data = apply_normalization(data, fit_normalization(load_unlabeled(*e.normalize_from)));
  return evaluate(model, data);
}

inline int cmd_eval(const EvalOptions& e) {
  std::ifstream is(e.checkpoint);
  if (!is) throw ConfigError("cannot open checkpoint '" + e.checkpoint + "'");
  json ck;
  try {
    ck = json::parse(is);
  } catch (const nlohmann::json::parse_error& err) {
    throw DataError("checkpoint is not valid JSON: " + std::string(err.what()));
  }
  const std::string prec = checkpoint_precision(ck);
  const Accuracy a = prec == "f64" ? eval_with_precision<double>(ck, e) : eval_with_precision<float>(ck, e);
  std::cout << "macro " << detail::fixed(a.macro, 6) << "  micro " << detail::fixed(a.micro, 6) << '\n';
  if (e.out) {
    std::error_code ec;
    fs::create_directories(*e.out, ec);
    std::ofstream os(fs::path(*e.out) / "eval.csv", std::ios::binary);
    os << "checkpoint,dataset,macro,micro\n"
       << e.checkpoint << ',' << e.dataset << ',' << detail::fixed(a.macro, 6) << ',' << detail::fixed(a.micro, 6) << '\n';
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

inline int cmd_gradcheck(const gradcheck::SuiteOptions& opt, std::ostream& os = std::cout) {
  const auto results = gradcheck::run_suite(opt);
  bool ok = true;
  char line[160];
  for (const auto& r : results) {
    std::snprintf(line, sizeof(line), "%-18s worst rel. err %.3e (tol %.0e, %zu instances)  %s\n", r.op.c_str(), r.worst,
                  r.tolerance, r.instances, r.passed() ? "PASS" : "FAIL");
    os << line;
    ok = ok && r.passed();
  }
  return ok ? kOk : kGradcheckFailure;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

inline int cmd_ablate(const Overrides& o, std::ostream& os = std::cout) {
  const RunConfig c = resolve_config(o);
  if (!c.data.shift) throw ConfigError("ablate: requires a data.shift section (the generator is re-seeded per seed)");
  const fs::path dir = prepare_output_dir(c);
  const auto exp = c.experiment();
  const ExperimentReport r = c.precision == "f64" ? run_ablation<double>(exp) : run_ablation<float>(exp);
  {
    std::ofstream f(dir / "report.csv", std::ios::binary);
    write_report_csv(f, r);
  }
  {
    std::ofstream f(dir / "report.txt", std::ios::binary);
    write_report_table(f, r);
  }
  write_report_table(os, r);
  return kOk;
}

}  // namespace barlow::cli

#endif  // BARLOW_COMMANDS_HPP_

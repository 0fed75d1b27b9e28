#ifndef BARLOW_CONFIG_HPP_
#define BARLOW_CONFIG_HPP_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "barlow/data.hpp"
#include "barlow/experiment.hpp"
#include "barlow/serialization.hpp"
#include "barlow/trainer.hpp"

namespace barlow {

/// The frozen synthetic benchmark: 8 classes in 20 dimensions, target rotated
/// by 30 degrees in every coordinate pair, scaled by 1.5 and translated by 2.0.
/// Source rows carry a label-dependent cue of strength 5 that the target lacks.
inline ShiftConfig benchmark_shift() {
  ShiftConfig c;
  c.num_classes = 8;
  c.dim = 20;
  c.class_separation = 3.0;
  c.within_class_std = 1.0;
  c.rotation_deg = 30.0;
  c.rotation_pairs = 0;
  c.scale.assign(c.dim, 1.5);
  c.translation.assign(c.dim, 2.0);
  c.nuisance_strength = 5.0;
  c.nuisance_dims = 20;
  c.samples_per_class = {100, 50, 100};
  c.seed = 0;
  return c;
}

/// Training settings used with the benchmark.
inline TrainConfig benchmark_train() {
  TrainConfig t;
  t.epochs = 60;
  t.weights.lambda = 1.0;
  return t;
}

/// Same generator with the shift operator set to the identity and no nuisance.
inline ShiftConfig null_shift(ShiftConfig c = benchmark_shift()) {
  c.rotation_deg = 0.0;
  c.matrix.reset();
  c.scale.assign(c.dim, 1.0);
  c.translation.assign(c.dim, 0.0);
  c.nuisance_strength = 0.0;
  return c;
}

struct DataPaths {
  std::string source_train, source_val, source_test;
  std::string target_train, target_val, target_test;
};

struct DataSection {
  std::optional<ShiftConfig> shift = benchmark_shift();  // generate in memory
  std::optional<DataPaths> paths;                        // or read CSVs
  bool normalize = true;             // per-domain stats from each train split
};

struct EvalSection {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::string output_dir = "out";
  std::size_t jobs = 1;
  bool target_only = true;
};

/// Everything a command needs. Unknown keys are rejected on load; the resolved
/// form (all defaults filled in) is what gets echoed next to the outputs.
struct RunConfig {
  std::string precision = "f32";
  DataSection data;
  ModelShape model;
  TrainConfig train = benchmark_train();
  EvalSection eval;

  ExperimentConfig experiment() const {
    ExperimentConfig e;
    e.shift = data.shift.value_or(benchmark_shift());
    e.train = train;
    e.model = model;
    e.seeds = eval.seeds;
    e.jobs = eval.jobs;
    e.target_only = eval.target_only;
    return e;
  }
};

inline RunConfig run_config_from_json(const json& j) {
  detail::check_keys(j, {"precision", "data", "model", "train", "eval"}, "config");
  RunConfig c;
  detail::read_opt(j, "precision", c.precision, "config");
  if (c.precision != "f32" && c.precision != "f64") {
    throw ConfigError("config.precision must be 'f32' or 'f64', got '" + c.precision + "'");
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::check_keys(d, {"shift", "paths", "normalize"}, "data");
    if (d.contains("shift") && d.contains("paths")) throw ConfigError("data: give either 'shift' or 'paths', not both");
    if (d.contains("shift")) c.data.shift = shift_config_from_json(d.at("shift"));
    if (d.contains("paths")) {
      c.data.shift.reset();
      const auto& p = d.at("paths");
      detail::check_keys(p, {"source_train", "source_val", "source_test", "target_train", "target_val", "target_test"},
                         "data.paths");
      DataPaths dp;
      detail::read_opt(p, "source_train", dp.source_train, "data.paths");
      detail::read_opt(p, "source_val", dp.source_val, "data.paths");
      detail::read_opt(p, "source_test", dp.source_test, "data.paths");
      detail::read_opt(p, "target_train", dp.target_train, "data.paths");
      detail::read_opt(p, "target_val", dp.target_val, "data.paths");
      detail::read_opt(p, "target_test", dp.target_test, "data.paths");
      if (dp.source_train.empty() || dp.target_train.empty()) {
        throw ConfigError("data.paths: source_train and target_train are required");
      }
      c.data.paths = dp;
    }
    detail::read_opt(d, "normalize", c.data.normalize, "data");
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::check_keys(m, {"hidden_dim", "feature_dim", "projection_dim", "architecture"}, "model");
    detail::read_opt(m, "hidden_dim", c.model.hidden_dim, "model");
    detail::read_opt(m, "feature_dim", c.model.feature_dim, "model");
    detail::read_opt(m, "projection_dim", c.model.projection_dim, "model");
    if (m.contains("architecture")) c.model.layers = architecture_from_json(m.at("architecture"));
  }
  if (c.model.projection_dim == 0) c.model.projection_dim = c.model.feature_dim;
  if (j.contains("train")) {
    // unspecified train fields fall back to the benchmark settings
    json t = train_config_to_json(benchmark_train());
    for (const auto& [k, v] : j.at("train").items()) t[k] = v;
    detail::check_keys(j.at("train"),
                       {"batch_size", "lr0", "momentum", "lr_decay", "decay_every_epochs", "epochs", "lambda", "mu",
                        "seed", "variant"},
                       "train");
    c.train = train_config_from_json(t);
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    detail::check_keys(e, {"seeds", "output_dir", "jobs", "target_only"}, "eval");
    detail::read_opt(e, "seeds", c.eval.seeds, "eval");
    detail::read_opt(e, "output_dir", c.eval.output_dir, "eval");
    detail::read_opt(e, "jobs", c.eval.jobs, "eval");
    detail::read_opt(e, "target_only", c.eval.target_only, "eval");
    if (c.eval.seeds.empty()) throw ConfigError("eval.seeds must not be empty");
    if (c.eval.jobs == 0) throw ConfigError("eval.jobs must be positive");
  }
  return c;
}

inline json run_config_to_json(const RunConfig& c) {
  json data = json::object();
  if (c.data.shift) data["shift"] = shift_config_to_json(*c.data.shift);
  if (c.data.paths) {
    const auto& p = *c.data.paths;
    data["paths"] = {{"source_train", p.source_train}, {"source_val", p.source_val},
                     {"source_test", p.source_test},   {"target_train", p.target_train},
                     {"target_val", p.target_val},     {"target_test", p.target_test}};
  }
  data["normalize"] = c.data.normalize;
  json model = {{"hidden_dim", c.model.hidden_dim},
                {"feature_dim", c.model.feature_dim},
                {"projection_dim", c.model.projection_dim == 0 ? c.model.feature_dim : c.model.projection_dim}};
  if (c.model.layers) model["architecture"] = architecture_to_json(*c.model.layers);
  return {{"precision", c.precision},
          {"data", data},
          {"model", model},
          {"train", train_config_to_json(c.train)},
          {"eval",
           {{"seeds", c.eval.seeds},
            {"output_dir", c.eval.output_dir},
            {"jobs", c.eval.jobs},
            {"target_only", c.eval.target_only}}}};
}

inline RunConfig load_run_config(const std::string& path) { return run_config_from_json(read_json_file(path)); }

}  // namespace barlow

#endif  // BARLOW_CONFIG_HPP_

#include <gtest/gtest.h>

#include <random>
#include <sstream>
#include <string>

#include "barlow/commands.hpp"
#include "barlow/config.hpp"
#include "barlow/serialization.hpp"
#include "support.hpp"

using barlow::json;
using barlow::RunConfig;

namespace {

template <typename T>
std::vector<T> flat(barlow::ModelParams<T>& p) {
  std::vector<T> out;
  barlow::for_each_tensor(p, [&](barlow::Matrix<T>& m) { out.insert(out.end(), m.values().begin(), m.values().end()); });
  for (const auto* stack : {&p.extractor, &p.projector, &p.classifier})
    for (const auto& layer : stack->layers)
      if (const auto* bn = std::get_if<barlow::BatchNormState<T>>(&layer)) {
        out.insert(out.end(), bn->running_mean.begin(), bn->running_mean.end());
        out.insert(out.end(), bn->running_var.begin(), bn->running_var.end());
      }
  return out;
}

template <typename T>
barlow::ModelParams<T> perturbed_model(std::uint64_t seed) {
  auto p = barlow::init_params<T>(barlow::Architecture::make_default(7, 3, 9, 5), seed);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  barlow::for_each_tensor(p, [&](barlow::Matrix<T>& m) {
    for (auto& v : m.values()) v = static_cast<T>(n(rng) / 3.0);
  });
  for (auto& layer : p.projector.layers)
    if (auto* bn = std::get_if<barlow::BatchNormState<T>>(&layer)) {
      for (auto& v : bn->running_mean) v = static_cast<T>(n(rng));
      for (auto& v : bn->running_var) v = static_cast<T>(std::exp(n(rng)));
    }
  return p;
}

template <typename T>
void expect_bitwise_round_trip() {
  testing_support::TempDir dir("ckpt");
  auto p = perturbed_model<T>(21);
  barlow::save_checkpoint(dir.str("m.json"), p);
  auto q = barlow::load_checkpoint<T>(dir.str("m.json"));
  EXPECT_EQ(q.arch, p.arch);
  EXPECT_EQ(flat(q), flat(p));
  barlow::save_checkpoint(dir.str("again.json"), q);
  EXPECT_EQ(testing_support::slurp(dir.str("m.json")), testing_support::slurp(dir.str("again.json")));
}

}  // namespace

TEST(Checkpoint, Float32RoundTripIsBitwise) { expect_bitwise_round_trip<float>(); }
TEST(Checkpoint, Float64RoundTripIsBitwise) { expect_bitwise_round_trip<double>(); }

TEST(Checkpoint, PrecisionAndFormatAreChecked) {
  auto j = barlow::checkpoint_to_json(perturbed_model<float>(1));
  EXPECT_EQ(barlow::checkpoint_precision(j), "f32");
  EXPECT_THROW(barlow::checkpoint_from_json<double>(j), barlow::DataError);
  j["version"] = 99;
  EXPECT_THROW(barlow::checkpoint_from_json<float>(j), barlow::DataError);
  EXPECT_THROW(barlow::checkpoint_precision(json::object()), barlow::DataError);
}

TEST(Checkpoint, TruncatedArrayIsRejected) {
  auto j = barlow::checkpoint_to_json(perturbed_model<double>(2));
  j["classifier"][0]["bias"].erase(0);
  EXPECT_THROW(barlow::checkpoint_from_json<double>(j), barlow::DataError);
}

TEST(Config, UnknownKeysAreRejected) {
  EXPECT_THROW(barlow::run_config_from_json({{"trian", json::object()}}), barlow::ConfigError);
  EXPECT_THROW(barlow::run_config_from_json({{"train", {{"lamda", 1.0}}}}), barlow::ConfigError);
  EXPECT_THROW(barlow::run_config_from_json({{"data", {{"shift", {{"rotation", 3}}}}}}), barlow::ConfigError);
  EXPECT_THROW(barlow::run_config_from_json({{"precision", "f16"}}), barlow::ConfigError);
  EXPECT_THROW(barlow::run_config_from_json({{"train", {{"batch_size", 1}}}}), barlow::ConfigError);
}

TEST(Config, EchoedConfigReloadsToTheSameDocument) {
  RunConfig c;
  c.precision = "f64";
  c.train.weights.mu = 0.01;
  c.data.shift->rotation_deg = 12.5;
  c.eval.seeds = {3, 9};
  const json once = barlow::run_config_to_json(c);
  const json twice = barlow::run_config_to_json(barlow::run_config_from_json(once));
  EXPECT_EQ(once.dump(), twice.dump());
}

TEST(Config, PartialTrainSectionKeepsBenchmarkSettings) {
  const auto c = barlow::run_config_from_json({{"train", {{"epochs", 5}}}});
  EXPECT_EQ(c.train.epochs, 5u);
  EXPECT_EQ(c.train.weights.lambda, barlow::benchmark_train().weights.lambda);
}

TEST(Config, ShippedBenchmarkFileMatchesBuiltInDefaults) {
  const auto shipped = barlow::load_run_config(std::string(BARLOW_SOURCE_DIR) + "/configs/benchmark.json");
  EXPECT_EQ(barlow::run_config_to_json(shipped).dump(), barlow::run_config_to_json(RunConfig{}).dump());
}

TEST(Config, SeedOverrideReachesDataAndTraining) {
  barlow::cli::Overrides o;
  o.seed = 42;
  const auto c = barlow::cli::resolve_config(o);
  EXPECT_EQ(c.train.seed, 42u);
  EXPECT_EQ(c.data.shift->seed, 42u);
  EXPECT_EQ(c.eval.seeds, (std::vector<std::uint64_t>{42}));
}

TEST(ExitCodes, ErrorsMapOntoDocumentedCodes) {
  std::ostringstream err;
  EXPECT_EQ(barlow::cli::guarded([]() -> int { throw barlow::ConfigError("bad"); }, err), 1);
  EXPECT_EQ(barlow::cli::guarded([]() -> int { throw barlow::DataError("worse", 4); }, err), 2);
  EXPECT_EQ(barlow::cli::guarded([] { return 0; }, err), 0);
  EXPECT_NE(err.str().find("line 4"), std::string::npos);
}

// barlow: generate synthetic domain-shift data, train and evaluate the
// adaptor, run gradient checks and ablations.
//
// Usage:
//   barlow generate  --config cfg.json --out data/
//   barlow train     --config cfg.json --variant full --out run/
//   barlow eval      --checkpoint run/checkpoint.json --data data/target_test.csv
//                    --normalize-from data/target_train.csv
//   barlow gradcheck --seed 7
//   barlow ablate    --config cfg.json --jobs 4 --out ablation/
//
// Exit codes: 0 success, 1 config error, 2 runtime/numerical error,
// 3 gradient check failure.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "barlow/commands.hpp"

namespace {

void add_common(CLI::App* cmd, barlow::cli::Overrides& o, bool with_variant, bool with_jobs) {
  cmd->add_option_function<std::string>("--config", [&o](const std::string& v) { o.config_path = v; },
                                        "Run config (JSON)");
  cmd->add_option_function<std::uint64_t>("--seed", [&o](std::uint64_t v) { o.seed = v; },
                                          "Seed; overrides every seed in the config");
  cmd->add_option_function<std::string>("--out", [&o](const std::string& v) { o.out = v; }, "Output directory");
  cmd->add_option_function<std::string>("--precision", [&o](const std::string& v) { o.precision = v; },
                                        "f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}));
  if (with_variant) {
    cmd->add_option_function<std::string>("--variant", [&o](const std::string& v) { o.variant = v; },
                                          "source_only | coral_only | bfal_only | full");
  }
  if (with_jobs) {
    cmd->add_option_function<std::size_t>("--jobs", [&o](std::size_t v) { o.jobs = v; },
                                          "Parallel (variant, seed) runs");
  }
}

}  // namespace

int main(int argc, char** argv) {
  using namespace barlow::cli;

  CLI::App app{"Unsupervised domain adaptation with CORAL and Barlow feature alignment"};
  app.require_subcommand(1);

  Overrides gen_o, train_o, ablate_o;
  auto* gen = app.add_subcommand("generate", "Write the six synthetic source/target CSV splits");
  add_common(gen, gen_o, false, false);

  auto* tr = app.add_subcommand("train", "Train one variant, write checkpoint and history");
  add_common(tr, train_o, true, false);

  EvalOptions eval_o;
  auto* ev = app.add_subcommand("eval", "Micro/macro accuracy of a checkpoint on a labeled CSV");
  ev->add_option("--checkpoint", eval_o.checkpoint, "Checkpoint JSON")->required();
  ev->add_option("--data", eval_o.dataset, "Labeled dataset CSV")->required();
  ev->add_option_function<std::string>("--normalize-from", [&](const std::string& v) { eval_o.normalize_from = v; },
                                       "Fit per-dimension normalization on this (train) CSV first");
  ev->add_option_function<std::string>("--out", [&](const std::string& v) { eval_o.out = v; },
                                       "Directory for eval.csv");

  barlow::gradcheck::SuiteOptions gc;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass (float64)");
  grad->add_option("--seed", gc.seed, "Seed");
  grad->add_option("--instances", gc.instances, "Random instances per operation")->check(CLI::PositiveNumber);
  grad->add_option("--batch", gc.batch, "Batch size for the per-op checks")->check(CLI::Range(2, 64));
  grad->add_option("--dim", gc.dim, "Feature dimension for the per-op checks")->check(CLI::Range(1, 64));

  auto* abl = app.add_subcommand("ablate", "Train all variants over the configured seeds");
  add_common(abl, ablate_o, false, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  if (*gen) return guarded([&] { return cmd_generate(gen_o); });
  if (*tr) return guarded([&] { return cmd_train(train_o); });
  if (*ev) return guarded([&] { return cmd_eval(eval_o); });
  if (*grad) return guarded([&] { return cmd_gradcheck(gc); });
  if (*abl) return guarded([&] { return cmd_ablate(ablate_o); });
  return kConfigError;
}

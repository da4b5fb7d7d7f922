// hestia command-line tool: calibrate sensitivities, train, verify the math,
// sweep configurations, and export ternary artifacts.
//
// Config precedence, lowest to highest: built-in defaults, --config file,
// HESTIA_SEED environment variable, then --set/--seed/--mode/... flags.

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "hestia/cli.hpp"

using hestia::cli::RunConfig;

int main(int argc, char** argv) {
  CLI::App app{"hestia: Hessian-guided differentiable ternary QAT toolkit"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::string config_file;
  std::vector<std::string> overrides;
  std::string mode, out_dir, task, model;
  std::int64_t steps = -1;
  std::int64_t seed = -1;

  app.add_option("--config", config_file, "JSON config file (flat dotted keys)");
  app.add_option("--set", overrides, "override a config key, e.g. --set schedule.rho=0.3")
      ->take_all();
  app.add_option("--mode", mode, "training mode: hestia | ste | full_precision");
  app.add_option("--steps", steps, "total training steps");
  app.add_option("--seed", seed, "run seed (HESTIA_SEED env var also honored)");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--task", task, "task kind");
  app.add_option("--model", model, "model kind: mlp | transformer");

  auto* sens = app.add_subcommand("sens", "estimate Hutch++ sensitivity scores");
  auto* train = app.add_subcommand("train", "run the training loop");
  auto* check = app.add_subcommand("check", "run the invariant verification suite");
  bool emit_curves = false;
  check->add_flag("--emit-curves", emit_curves, "write schedule/Jacobian CSV curves");
  auto* sweep = app.add_subcommand("sweep", "run the configured parameter grid");
  auto* export_cmd = app.add_subcommand("export", "export a checkpoint as a ternary artifact");
  std::string checkpoint, output;
  export_cmd->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  export_cmd->add_option("--output", output, "artifact path (default artifact.bin)");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = hestia::cli::assemble_config(config_file, overrides);
    if (!mode.empty()) cfg.mode = mode;
    if (steps >= 0) cfg.train_steps = static_cast<std::size_t>(steps);
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (!task.empty()) cfg.task_kind = task;
    if (!model.empty()) cfg.model_kind = model;

    if (sens->parsed()) return hestia::cli::cmd_sens(cfg);
    if (train->parsed()) return hestia::cli::cmd_train(cfg);
    if (check->parsed()) return hestia::cli::cmd_check(cfg, emit_curves);
    if (sweep->parsed()) return hestia::cli::cmd_sweep(cfg);
    if (export_cmd->parsed()) return hestia::cli::cmd_export(cfg, checkpoint, output);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

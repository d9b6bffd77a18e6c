// Copyright 2026 The mtprop Authors
// SPDX-License-Identifier: Apache-2.0

// mtprop: dataset generation, training, evaluation and sweeps.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mtprop/commands.hpp"
#include "mtprop/error.hpp"

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kValidation = 3, kDivergence = 4 };

}  // namespace

int main(int argc, char** argv) {
  using namespace mtprop;
  CLI::App app{"Semi-supervised temporal action proposals with a Mean Teacher"};
  app.set_version_flag("--version", std::string(MTPROP_VERSION));
  app.require_subcommand(1);

  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;

  cli::GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate the synthetic benchmark");
  gen_cmd->add_option("--config", config, "Experiment config or manifest (JSON)");
  gen_cmd->add_option("--seed", seed, "Dataset seed (default: config data_seed)");
  gen_cmd->add_option("--out", out, "Output directory")->required();
  gen_cmd->add_flag("--force", force, "Overwrite a non-empty output directory");

  cli::TrainArgs tr;
  std::string train_dataset, train_mode, resume;
  std::optional<double> fraction;
  std::optional<long> steps;
  auto* train_cmd = app.add_subcommand("train", "Train one model");
  train_cmd->add_option("--config", config, "Experiment config or manifest (JSON)");
  train_cmd->add_option("--dataset", train_dataset, "Dataset directory")->required();
  train_cmd->add_option("--seed", seed, "Training seed (default: first config seed)");
  train_cmd->add_option("--mode", train_mode, "supervised | semi")->check(CLI::IsMember({"supervised", "semi"}));
  train_cmd->add_option("--fraction", fraction, "Labeled fraction of the training videos");
  train_cmd->add_option("--steps", steps, "Total optimizer steps (overrides config)");
  train_cmd->add_option("--resume", resume, "Checkpoint directory to continue from");
  train_cmd->add_flag("--trace", tr.trace, "Write per-video perturbation trace");
  train_cmd->add_option("--out", out, "Output directory")->required();
  train_cmd->add_flag("--force", force, "Overwrite a non-empty output directory");

  cli::EvalArgs ev;
  std::string eval_model = "teacher";
  auto* eval_cmd = app.add_subcommand("eval", "Generate proposals and score them");
  eval_cmd->add_option("--config", config, "Experiment config or manifest (JSON)");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required();
  eval_cmd->add_option("--dataset", ev.dataset, "Dataset directory")->required();
  eval_cmd->add_option("--model", eval_model, "teacher | student")->check(CLI::IsMember({"teacher", "student"}));
  eval_cmd->add_option("--split", ev.split, "test | train | all")->check(CLI::IsMember({"test", "train", "all"}));
  eval_cmd->add_option("--out", out, "Output directory")->required();
  eval_cmd->add_flag("--force", force, "Overwrite a non-empty output directory");

  std::string sweep_dataset;
  auto* sweep_cmd = app.add_subcommand("sweep", "Label-fraction or ablation sweep");
  sweep_cmd->add_option("--config", config, "Experiment config or manifest (JSON)");
  sweep_cmd->add_option("--dataset", sweep_dataset, "Dataset directory (default: generate from config)");
  sweep_cmd->add_option("--out", out, "Output directory")->required();
  sweep_cmd->add_flag("--force", force, "Overwrite a non-empty output directory");

  std::string manifest;
  auto* replay_cmd = app.add_subcommand("replay", "Re-run a command from its manifest and verify outputs");
  replay_cmd->add_option("manifest", manifest, "manifest.json of a previous run")->required();
  replay_cmd->add_option("--out", out, "Output directory")->required();
  replay_cmd->add_flag("--force", force, "Overwrite a non-empty output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  std::optional<std::filesystem::path> config_path;
  if (config) config_path = *config;
  try {
    if (gen_cmd->parsed()) {
      gen.config = config_path;
      gen.seed = seed;
      gen.out = out;
      gen.force = force;
      cli::gen_data(gen, std::cerr);
    } else if (train_cmd->parsed()) {
      tr.config = config_path;
      tr.dataset = train_dataset;
      tr.seed = seed;
      if (!train_mode.empty()) tr.mode = mt::parse_train_mode(train_mode);
      tr.fraction = fraction;
      tr.steps = steps;
      if (!resume.empty()) tr.resume = resume;
      tr.out = out;
      tr.force = force;
      cli::train(tr, std::cerr);
    } else if (eval_cmd->parsed()) {
      ev.config = config_path;
      ev.model = mt::parse_eval_model(eval_model);
      ev.out = out;
      ev.force = force;
      cli::evaluate(ev, std::cerr);
    } else if (sweep_cmd->parsed()) {
      cli::SweepArgs sw;
      sw.config = config_path;
      if (!sweep_dataset.empty()) sw.dataset = sweep_dataset;
      sw.out = out;
      sw.force = force;
      cli::sweep(sw, std::cerr);
    } else if (replay_cmd->parsed()) {
      cli::replay(manifest, out, force, std::cerr);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kValidation;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged at step " << e.step() << ": " << e.what() << "\n";
    return kDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}

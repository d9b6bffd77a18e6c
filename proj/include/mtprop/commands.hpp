// Copyright 2026 The mtprop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "mtprop/experiment.hpp"

namespace mtprop::cli {

namespace fs = std::filesystem;
using nlohmann::json;

/// Loads an experiment config. Accepts either a bare config object or a
/// manifest.json written by any command (its "config" member is used).
/// With no path, returns the defaults.
exp::ExperimentConfig load_config(const std::optional<fs::path>& path);

struct GenDataArgs {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  fs::path out;
  bool force = false;
};

struct TrainArgs {
  std::optional<fs::path> config;
  fs::path dataset;
  std::optional<std::uint64_t> seed;
  std::optional<mt::TrainMode> mode;
  std::optional<double> fraction;
  std::optional<long> steps;
  std::optional<fs::path> resume;
  fs::path out;
  bool force = false;
  bool trace = false;
};

struct EvalArgs {
  std::optional<fs::path> config;
  fs::path checkpoint;
  fs::path dataset;
  mt::EvalModel model = mt::EvalModel::kTeacher;
  /// "test" (held-out tail), "train" or "all".
  std::string split = "test";
  fs::path out;
  bool force = false;
};

struct SweepArgs {
  std::optional<fs::path> config;
  /// Without a dataset the benchmark is generated from the config.
  std::optional<fs::path> dataset;
  fs::path out;
  bool force = false;
};

void gen_data(const GenDataArgs& args, std::ostream& log);
void train(const TrainArgs& args, std::ostream& log);
void evaluate(const EvalArgs& args, std::ostream& log);
void sweep(const SweepArgs& args, std::ostream& log);

/// Re-executes the command recorded in `manifest` into `out`.
void replay(const fs::path& manifest, const fs::path& out, bool force, std::ostream& log);

}  // namespace mtprop::cli

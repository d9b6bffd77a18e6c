// Copyright 2026 The mtprop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtprop/bsn.hpp"
#include "mtprop/dataset.hpp"
#include "mtprop/eval.hpp"
#include "mtprop/meanteacher.hpp"

namespace mtprop::exp {

using nlohmann::json;

struct EvalConfig {
  bsn::ProposalConfig proposal;
  std::size_t an_max = 100;
  std::vector<double> thresholds = eval::default_tiou_thresholds();
  std::vector<double> map_thresholds = {0.5, 0.75, 0.95};
};

enum class SweepAxis { kFraction, kKlBand, kMaskP };
std::string to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(const std::string& s);

struct ExperimentConfig {
  DatasetConfig dataset;
  std::uint64_t data_seed = 2026;
  /// The last num_test videos of the dataset are held out for evaluation.
  std::size_t num_test = 100;
  mt::TrainConfig train;
  EvalConfig eval;
  std::vector<double> label_fractions = {0.2};
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::vector<mt::TrainMode> modes = {mt::TrainMode::kSupervised, mt::TrainMode::kSemi};
  SweepAxis axis = SweepAxis::kFraction;
  /// Values for the kl_band / mask_p axes; ignored for the fraction axis.
  std::vector<double> axis_values;
  /// Sampler used when sweeping the KL band (wider sigma support than the default).
  SamplerConfig kl_sweep_sampler{1, 5, 0.05, 20.0, 0.0};

  void validate() const;
};

json to_json(const EvalConfig& c);
EvalConfig eval_config_from_json(const json& j);
json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const json& j);

/// Training videos plus a held-out tail.
struct Benchmark {
  Dataset train;
  Dataset test;
};
Benchmark split_benchmark(const Dataset& full, std::size_t num_test);

struct EvalResult {
  eval::EvalReport report;
  std::vector<std::vector<bsn::Proposal>> proposals;
};

/// Proposals for every video, then AR@AN, AUC and mAP (with each video's
/// ground-truth classes standing in for a video-level classifier).
EvalResult evaluate(const mt::Model& model, std::span<const Video> videos, const EvalConfig& config);

json report_to_json(const eval::EvalReport& report, const EvalConfig& config);
std::string ar_curve_csv(const eval::EvalReport& report);

/// KL band around a nominal divergence: [v / 2, 5 v].
KlBand kl_band_around(double value);

struct CellSpec {
  SweepAxis axis = SweepAxis::kFraction;
  double axis_value = 0.0;
  double fraction = 1.0;
  mt::TrainMode mode = mt::TrainMode::kSemi;
  std::uint64_t seed = 0;
};

/// Training config for one sweep cell (axis value applied to `base`).
mt::TrainConfig cell_train_config(const ExperimentConfig& config, const CellSpec& cell);

struct CellResult {
  CellSpec spec;
  /// Metrics of the evaluation model (teacher for semi, student for supervised).
  double auc = 0.0;
  double auc_teacher = 0.0;
  double auc_student = 0.0;
  double ar_at_1 = 0.0;
  double ar_at_10 = 0.0;
  double ar_at_100 = 0.0;
  double map_at_05 = 0.0;
  double final_supervised_loss = 0.0;
  double mean_consistency_loss = 0.0;
  double seconds = 0.0;
};

CellResult run_cell(const Benchmark& bench, const ExperimentConfig& config, const CellSpec& cell);

struct SweepRow {
  SweepAxis axis = SweepAxis::kFraction;
  double axis_value = 0.0;
  mt::TrainMode mode = mt::TrainMode::kSemi;
  std::size_t seeds = 0;
  double auc_mean = 0.0, auc_std = 0.0;
  double ar1_mean = 0.0, ar10_mean = 0.0, ar100_mean = 0.0;
  double auc_teacher_mean = 0.0, auc_student_mean = 0.0;
};

struct SweepResult {
  std::vector<CellResult> cells;
  std::vector<SweepRow> rows;
};

std::vector<CellSpec> sweep_cells(const ExperimentConfig& config);
std::vector<SweepRow> aggregate(const std::vector<CellResult>& cells);
SweepResult run_sweep(const Benchmark& bench, const ExperimentConfig& config,
                      const std::function<void(const CellResult&)>& on_cell = {});

std::string sweep_summary_csv(const std::vector<SweepRow>& rows);
json sweep_detail_json(const SweepResult& result);

/// Defaults used by the headline benchmark.
ExperimentConfig default_experiment();

}  // namespace mtprop::exp

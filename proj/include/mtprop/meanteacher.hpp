// Copyright 2026 The mtprop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mtprop/bsn.hpp"
#include "mtprop/dataset.hpp"
#include "mtprop/nn.hpp"
#include "mtprop/perturb.hpp"

namespace mtprop::mt {

/// TEM + PEM parameter pair; the unit that is averaged into the teacher.
struct Model {
  bsn::TemParams tem;
  bsn::PemParams pem;

  std::vector<nn::Tensor*> parameters();
  std::vector<const nn::Tensor*> parameters() const;
  friend bool operator==(const Model&, const Model&) = default;
};

enum class TrainMode { kSupervised, kSemi };
enum class WarpMode { kMtnd, kIdentity };
enum class EvalModel { kTeacher, kStudent };

std::string to_string(TrainMode mode);
std::string to_string(WarpMode mode);
std::string to_string(EvalModel model);
TrainMode parse_train_mode(const std::string& s);
WarpMode parse_warp_mode(const std::string& s);
EvalModel parse_eval_model(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::kSemi;
  long steps = 2000;
  /// EMA decay of the teacher.
  double alpha = 0.999;
  /// Uses min(alpha, 1 - 1/(step + 1)) so early teachers are plain averages.
  bool ema_warmup = true;
  double mask_p = 0.3;
  double consistency_weight = 1.0;
  /// Sigmoid-shaped ramp of the consistency weight; 0 disables it.
  long ramp_steps = 0;
  std::size_t labeled_per_batch = 4;
  std::size_t unlabeled_per_batch = 4;
  double lr = 1e-3;
  double pem_lr = 1e-3;
  WarpMode warp = WarpMode::kMtnd;
  WarpConfig warp_config;
  double noise_sigma = 0.0;
  std::size_t tem_hidden = 64;
  std::size_t pem_hidden = 64;
  /// Cap on PEM training samples per labeled video and per tIoU bucket.
  std::size_t pem_samples_per_bucket = 8;
  /// Ground-truth jitter, as a fraction of duration, for extra PEM candidates.
  double pem_gt_jitter = 0.2;
  std::size_t pem_jitter_copies = 4;
  /// Experimental: MSE between student and teacher PEM confidences.
  bool pem_consistency = false;
  bsn::CandidateConfig candidates;

  void validate() const;
};

/// Teacher' = alpha * teacher + (1 - alpha) * student, elementwise.
void ema_update(std::span<nn::Tensor* const> teacher, std::span<const nn::Tensor* const> student, double alpha);
void ema_update(Model& teacher, const Model& student, double alpha);

/// weight * mean squared difference over all T x 3 entries; gradient is
/// taken with respect to the student only.
bsn::LossGrad consistency_loss(const bsn::BoundarySignals& student, const Matrix& teacher_warped, double weight);

/// Consistency weight at a given (1-based) step.
double consistency_weight_at(const TrainConfig& config, long step);

struct TrainerState {
  Model student;
  Model teacher;
  nn::AdamState tem_opt;
  nn::AdamState pem_opt;
  long step = 0;
  std::uint64_t seed = 0;
  TrainConfig config;
};

/// Student from (seed), teacher an exact copy.
TrainerState init_trainer(std::size_t feature_dim, const TrainConfig& config, std::uint64_t seed);

struct BatchItem {
  std::size_t video_index = 0;
  const Matrix* features = nullptr;
  /// T x 3 targets; null for unlabeled videos.
  const Matrix* targets = nullptr;
  const std::vector<ActionInterval>* intervals = nullptr;

  bool labeled() const noexcept { return targets != nullptr; }
};

/// Per-video record of one perturbation, for reproducibility audits.
struct VideoTrace {
  long step = 0;
  std::size_t video_index = 0;
  WarpGrid grid;
  std::vector<bool> mask;
  double kl = 0.0;
  bool kl_in_band = true;
  /// Serial of the grid object applied to features, targets and teacher signals.
  std::uint64_t grid_id = 0;
  std::uint64_t features_grid_id = 0;
  std::optional<std::uint64_t> targets_grid_id;
  std::optional<std::uint64_t> teacher_grid_id;
};

struct StepRecord {
  long step = 0;
  double supervised_loss = 0.0;
  /// Unweighted consistency MSE averaged over the batch.
  double consistency_loss = 0.0;
  double consistency_weight = 0.0;
  double total_loss = 0.0;
  double pem_loss = 0.0;
  double mean_kl = 0.0;
  double masked_fraction = 0.0;
  std::size_t labeled = 0;
  std::size_t unlabeled = 0;
  bool student_updated = false;
};

/// One optimisation step on the student followed by the EMA update.
StepRecord train_step(TrainerState& state, std::span<const BatchItem> batch,
                      std::vector<VideoTrace>* trace = nullptr);

struct TrainResult {
  TrainerState state;
  std::vector<StepRecord> history;
  /// Indices of every video whose features were read.
  std::set<std::size_t> accessed;
  std::vector<VideoTrace> trace;
};

struct TrainOptions {
  /// Continue from this state instead of a fresh init.
  std::optional<TrainerState> resume;
  bool record_trace = false;
  std::function<void(const StepRecord&)> on_step;
};

/// Runs train steps until state.step == config.steps. Batches are drawn from
/// `split` (indices into `videos`) with per-step derived random streams, so a
/// resumed run reproduces an uninterrupted one bitwise.
TrainResult train(std::span<const Video> videos, const LabelSplit& split, const TrainConfig& config,
                  std::uint64_t seed, TrainOptions options = {});

/// Batch indices for a step, exposed for tests.
struct BatchPlan {
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> unlabeled;
};
BatchPlan plan_batch(const LabelSplit& split, const TrainConfig& config, std::uint64_t seed, long step);

}  // namespace mtprop::mt

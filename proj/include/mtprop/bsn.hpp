// Copyright 2026 The mtprop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mtprop/dataset.hpp"
#include "mtprop/matrix.hpp"
#include "mtprop/nn.hpp"

namespace mtprop::bsn {

inline constexpr double kProbEps = 1e-7;
inline constexpr std::size_t kBspLength = 32;

enum Channel : std::size_t { kActionness = 0, kStart = 1, kEnd = 2 };

/// Per-snippet (actionness, start, end) probabilities stored as a T x 3 matrix.
struct BoundarySignals {
  Matrix values;

  std::size_t length() const noexcept { return values.rows(); }
  std::vector<double> channel(Channel c) const { return values.column(c); }
};

/// Targets packed as T x 3 in channel order.
Matrix targets_matrix(const SnippetTargets& targets);

/// conv(k3, D->H) -> relu -> conv(k3, H->H) -> relu -> conv(k1, H->3) -> sigmoid
struct TemParams {
  nn::Conv1dLayer conv1;
  nn::Conv1dLayer conv2;
  nn::Conv1dLayer conv3;

  static TemParams init(std::size_t feature_dim, std::size_t hidden, Rng& rng);
  TemParams zeros_like() const;
  std::vector<nn::Tensor*> parameters();
  std::vector<const nn::Tensor*> parameters() const;
  std::size_t feature_dim() const noexcept { return conv1.in_channels(); }
  std::size_t hidden() const noexcept { return conv1.out_channels(); }
  friend bool operator==(const TemParams&, const TemParams&) = default;
};

/// dense(32->H) -> relu -> dense(H->1) -> sigmoid
struct PemParams {
  nn::DenseLayer fc1;
  nn::DenseLayer fc2;

  static PemParams init(std::size_t hidden, Rng& rng);
  PemParams zeros_like() const;
  std::vector<nn::Tensor*> parameters();
  std::vector<const nn::Tensor*> parameters() const;
  std::size_t hidden() const noexcept { return fc1.out_features(); }
  friend bool operator==(const PemParams&, const PemParams&) = default;
};

struct TemCache {
  Matrix input, z1, a1, z2, a2, output;
};

BoundarySignals tem_forward(const TemParams& params, const Matrix& features, TemCache* cache = nullptr);

/// Backpropagates dL/dsignals through the cached forward pass, accumulating into `grads`.
void tem_backward(const TemParams& params, const TemCache& cache, const Matrix& grad_signals,
                  TemParams& grads);

struct LossGrad {
  double loss = 0.0;
  Matrix grad;
};

/// Sum over channels of class-balanced binary cross-entropy. Targets may be soft.
LossGrad tem_loss(const BoundarySignals& signals, const Matrix& targets);

struct PemCache {
  Matrix input, z1, a1, output;
};

/// bsp: N x 32 feature rows -> N confidences in (0, 1).
std::vector<double> pem_forward(const PemParams& params, const Matrix& bsp, PemCache* cache = nullptr);

void pem_backward(const PemParams& params, const PemCache& cache, std::span<const double> grad_conf,
                  PemParams& grads);

struct ScalarLoss {
  double loss = 0.0;
  double grad = 0.0;
};

/// (confidence - target)^2 and its derivative in confidence.
ScalarLoss pem_loss(double confidence, double tiou_target);

struct Proposal {
  double t_start = 0.0;
  double t_end = 0.0;
  double start_prob = 0.0;
  double end_prob = 0.0;
  double confidence = 1.0;
  double final_score = 0.0;

  void rescore() noexcept { final_score = start_prob * end_prob * confidence; }
  friend bool operator==(const Proposal&, const Proposal&) = default;
};

struct CandidateConfig {
  /// Index also qualifies when its probability exceeds ratio * max.
  double threshold_ratio = 0.5;
  /// Longest allowed e - s in snippets; 0 means T.
  std::size_t max_duration = 0;
};

/// Indices passing the boundary rule: strict local maximum or above ratio * max.
std::vector<std::size_t> boundary_candidates(std::span<const double> prob, double threshold_ratio);

/// All (s, e) pairs of start/end candidates with s < e, covering [s, e + 1).
std::vector<Proposal> generate_candidates(const BoundarySignals& signals, const CandidateConfig& config);

/// Linear interpolation of `signal` at real position x, clamped to [0, T-1].
double interpolate(std::span<const double> signal, double x);

/// 16 interior samples plus 8 around each boundary (+/- d/5).
std::array<double, kBspLength> bsp_features(std::span<const double> actionness, const Proposal& proposal);

/// Gaussian Soft-NMS. Output holds proposals with decayed score >= score_floor,
/// in selection order (descending decayed score). `max_keep` > 0 stops after
/// that many selections; the result is then a prefix of the unbounded run.
std::vector<Proposal> soft_nms(std::vector<Proposal> proposals, double sigma, double score_floor,
                               std::size_t max_keep = 0);

struct ProposalConfig {
  CandidateConfig candidates;
  double nms_sigma = 0.75;
  double nms_floor = 1e-3;
  std::size_t max_proposals = 100;
};

/// TEM -> candidates -> PEM -> final score -> Soft-NMS.
std::vector<Proposal> propose(const TemParams& tem, const PemParams& pem, const Matrix& features,
                              const ProposalConfig& config);

/// Largest tIoU between [t_start, t_end] and any interval (0 if none).
double max_tiou(const Proposal& proposal, std::span<const ActionInterval> intervals);

}  // namespace mtprop::bsn

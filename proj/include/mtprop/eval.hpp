// Copyright 2026 The mtprop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace mtprop::eval {

/// Temporal intersection over union of [a_start, a_end] and [b_start, b_end].
/// Throws ValidationError if either interval has start >= end.
double tiou(double a_start, double a_end, double b_start, double b_end);

struct Segment {
  double start = 0.0;
  double end = 0.0;
};

struct ScoredSegment {
  double start = 0.0;
  double end = 0.0;
  double score = 0.0;
};

struct Detection {
  std::size_t video = 0;
  int class_id = 0;
  double start = 0.0;
  double end = 0.0;
  double score = 0.0;
};

struct GroundTruth {
  std::size_t video = 0;
  int class_id = 0;
  double start = 0.0;
  double end = 0.0;
};

/// {0.50, 0.55, ..., 0.95}.
std::vector<double> default_tiou_thresholds();

/// Per-video proposals, each list sorted by score descending.
using ProposalLists = std::vector<std::vector<ScoredSegment>>;
using GroundTruthLists = std::vector<std::vector<Segment>>;

/// Recall averaged over `thresholds`, keeping the top `an` proposals of each
/// video. A ground truth counts as recalled at threshold t if any kept
/// proposal reaches tIoU >= t. Recall pools ground truths across videos.
double average_recall(const ProposalLists& proposals, const GroundTruthLists& gts, std::size_t an,
                      std::span<const double> thresholds);

/// AR@AN for AN = 1..an_max in one pass; element i holds AR@(i + 1).
std::vector<double> ar_curve(const ProposalLists& proposals, const GroundTruthLists& gts,
                             std::size_t an_max, std::span<const double> thresholds);

/// Mean of AR@AN over AN = 1..an_max.
double auc(const ProposalLists& proposals, const GroundTruthLists& gts, std::size_t an_max,
           std::span<const double> thresholds);

/// Area under the monotone precision envelope. precision[i] and recall[i] are
/// cumulative values after the i-th ranked detection.
double interpolated_ap(std::span<const double> precision, std::span<const double> recall);

/// Mean over classes present in `gts` of interpolated AP, with greedy
/// score-ordered one-to-one matching at tIoU >= threshold.
double map_at(std::span<const Detection> detections, std::span<const GroundTruth> gts, double threshold);

struct EvalReport {
  std::map<std::size_t, double> ar_at_an;
  double auc = 0.0;
  std::map<double, double> map_at_tiou;
  /// Recall of each video's ground truths at AN = an_max, averaged over thresholds.
  std::vector<double> per_video_recall;
};

}  // namespace mtprop::eval

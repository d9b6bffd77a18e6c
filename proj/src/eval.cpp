// Copyright 2026 The mtprop Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtprop/eval.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <set>

#include "mtprop/error.hpp"

namespace mtprop::eval {

double tiou(double a_start, double a_end, double b_start, double b_end) {
  if (!(a_start < a_end) || !(b_start < b_end))
    throw ValidationError("tiou: degenerate interval");
  const double inter = std::min(a_end, b_end) - std::max(a_start, b_start);
  if (inter <= 0.0) return 0.0;
  const double uni = std::max(a_end, b_end) - std::min(a_start, b_start);
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::vector<double> default_tiou_thresholds() {
  std::vector<double> out;
  for (int i = 0; i < 10; ++i) out.push_back(0.5 + 0.05 * i);
  return out;
}

double average_recall(const ProposalLists& proposals, const GroundTruthLists& gts, std::size_t an,
                      std::span<const double> thresholds) {
  if (an < 1) throw ValidationError("average_recall: AN must be >= 1");
  if (proposals.size() != gts.size())
    throw ValidationError("average_recall: proposal and ground-truth video counts differ");
  if (thresholds.empty()) throw ValidationError("average_recall: empty threshold grid");
  std::size_t total = 0;
  for (const auto& g : gts) total += g.size();
  if (total == 0) return 0.0;

  double sum = 0.0;
  for (double th : thresholds) {
    std::size_t matched = 0;
    for (std::size_t v = 0; v < gts.size(); ++v) {
      const std::size_t keep = std::min(an, proposals[v].size());
      for (const auto& g : gts[v]) {
        for (std::size_t k = 0; k < keep; ++k) {
          const auto& p = proposals[v][k];
          if (tiou(p.start, p.end, g.start, g.end) >= th) {
            ++matched;
            break;
          }
        }
      }
    }
    sum += static_cast<double>(matched) / static_cast<double>(total);
  }
  return sum / static_cast<double>(thresholds.size());
}

std::vector<double> ar_curve(const ProposalLists& proposals, const GroundTruthLists& gts,
                             std::size_t an_max, std::span<const double> thresholds) {
  if (an_max < 1) throw ValidationError("ar_curve: an_max must be >= 1");
  if (proposals.size() != gts.size())
    throw ValidationError("ar_curve: proposal and ground-truth video counts differ");
  if (thresholds.empty()) throw ValidationError("ar_curve: empty threshold grid");
  std::vector<double> curve(an_max, 0.0);
  std::size_t total = 0;
  for (const auto& g : gts) total += g.size();
  if (total == 0) return curve;

  // hits[r] = number of (gt, threshold) pairs first recalled at rank r (0-based).
  std::vector<std::size_t> hits(an_max, 0);
  for (std::size_t v = 0; v < gts.size(); ++v) {
    const std::size_t keep = std::min(an_max, proposals[v].size());
    for (const auto& g : gts[v]) {
      // Best tIoU reached within the first k proposals is non-decreasing in k,
      // so each threshold's first-hit rank falls out of one scan.
      std::vector<std::size_t> first(thresholds.size(), an_max);
      double best = -1.0;
      for (std::size_t k = 0; k < keep; ++k) {
        const auto& p = proposals[v][k];
        const double iou = tiou(p.start, p.end, g.start, g.end);
        if (iou <= best) continue;
        best = iou;
        for (std::size_t i = 0; i < thresholds.size(); ++i)
          if (first[i] == an_max && iou >= thresholds[i]) first[i] = k;
      }
      for (std::size_t r : first)
        if (r < an_max) ++hits[r];
    }
  }
  const double denom = static_cast<double>(total) * static_cast<double>(thresholds.size());
  std::size_t running = 0;
  for (std::size_t r = 0; r < an_max; ++r) {
    running += hits[r];
    curve[r] = static_cast<double>(running) / denom;
  }
  return curve;
}

double auc(const ProposalLists& proposals, const GroundTruthLists& gts, std::size_t an_max,
           std::span<const double> thresholds) {
  const auto curve = ar_curve(proposals, gts, an_max, thresholds);
  return std::accumulate(curve.begin(), curve.end(), 0.0) / static_cast<double>(an_max);
}

double interpolated_ap(std::span<const double> precision, std::span<const double> recall) {
  if (precision.size() != recall.size()) throw ValidationError("interpolated_ap: size mismatch");
  std::vector<double> envelope(precision.begin(), precision.end());
  for (std::size_t i = envelope.size(); i-- > 1;) envelope[i - 1] = std::max(envelope[i - 1], envelope[i]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < envelope.size(); ++i) {
    ap += (recall[i] - prev_recall) * envelope[i];
    prev_recall = recall[i];
  }
  return ap;
}

double map_at(std::span<const Detection> detections, std::span<const GroundTruth> gts, double threshold) {
  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.class_id);
  if (classes.empty()) return 0.0;

  double total_ap = 0.0;
  for (int cls : classes) {
    std::vector<std::size_t> gt_idx;
    for (std::size_t i = 0; i < gts.size(); ++i)
      if (gts[i].class_id == cls) gt_idx.push_back(i);
    std::vector<std::size_t> det_idx;
    for (std::size_t i = 0; i < detections.size(); ++i)
      if (detections[i].class_id == cls) det_idx.push_back(i);
    std::stable_sort(det_idx.begin(), det_idx.end(), [&](std::size_t a, std::size_t b) {
      return detections[a].score > detections[b].score;
    });

    std::vector<bool> used(gt_idx.size(), false);
    std::vector<double> precision, recall;
    std::size_t tp = 0;
    for (std::size_t n = 0; n < det_idx.size(); ++n) {
      const auto& d = detections[det_idx[n]];
      double best = -1.0;
      std::size_t best_k = gt_idx.size();
      for (std::size_t k = 0; k < gt_idx.size(); ++k) {
        const auto& g = gts[gt_idx[k]];
        if (used[k] || g.video != d.video) continue;
        const double iou = tiou(d.start, d.end, g.start, g.end);
        if (iou > best) {
          best = iou;
          best_k = k;
        }
      }
      if (best_k < gt_idx.size() && best >= threshold) {
        used[best_k] = true;
        ++tp;
      }
      precision.push_back(static_cast<double>(tp) / static_cast<double>(n + 1));
      recall.push_back(static_cast<double>(tp) / static_cast<double>(gt_idx.size()));
    }
    total_ap += interpolated_ap(precision, recall);
  }
  return total_ap / static_cast<double>(classes.size());
}

}  // namespace mtprop::eval

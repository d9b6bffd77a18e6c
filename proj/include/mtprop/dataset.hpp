// Copyright 2026 The mtprop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mtprop/matrix.hpp"

namespace mtprop {

/// Ground-truth action instance in snippet units. `start < end`, both within [0, T].
struct ActionInterval {
  double start = 0.0;
  double end = 0.0;
  int class_id = 0;

  double duration() const noexcept { return end - start; }
  friend bool operator==(const ActionInterval&, const ActionInterval&) = default;
};

struct VideoAnnotation {
  std::string video_id;
  std::vector<ActionInterval> intervals;
  bool labeled = false;

  friend bool operator==(const VideoAnnotation&, const VideoAnnotation&) = default;
};

/// One untrimmed sequence: T x D snippet features plus its annotation.
struct Video {
  Matrix features;
  VideoAnnotation annotation;

  std::size_t length() const noexcept { return features.rows(); }
  friend bool operator==(const Video&, const Video&) = default;
};

/// Per-snippet training targets, all entries in [0, 1].
struct SnippetTargets {
  std::vector<double> actionness;
  std::vector<double> start;
  std::vector<double> end;
};

struct DatasetConfig {
  std::size_t num_videos = 600;
  std::size_t T = 100;
  std::size_t D = 16;
  int num_classes = 5;
  int min_intervals = 1;
  int max_intervals = 3;
  int min_length = 8;
  int max_length = 40;
  /// Minimum number of background snippets between neighbouring intervals.
  int min_gap = 2;
  /// Intervals keep this many snippets away from both sequence ends.
  int edge_margin = 2;
  double feature_noise_sigma = 1.5;
  /// Lag-1 correlation of the noise along time (AR(1), stationary std feature_noise_sigma).
  double feature_noise_correlation = 0.5;
  double background_drift_scale = 1.0;
  double prototype_scale = 1.0;
  /// Catmull-Rom control points per class prototype (per feature dim).
  int prototype_control_points = 5;
  /// Catmull-Rom control points spanning the whole background drift curve.
  int drift_control_points = 8;

  /// Throws ConfigError on empty ranges or intervals that cannot fit in T.
  void validate() const;
};

struct Dataset {
  DatasetConfig config;
  std::uint64_t seed = 0;
  std::vector<Video> videos;

  std::size_t size() const noexcept { return videos.size(); }
};

/// Smooth per-class template: `control` is (control points x D).
struct ClassPrototype {
  Matrix control;
};

/// Class templates shared by every video generated from (config, seed).
std::vector<ClassPrototype> make_prototypes(const DatasetConfig& config, std::uint64_t seed);

/// Catmull-Rom evaluation of `prototype` at `length` evenly spaced phases
/// ((i + 0.5) / length); returns length x D.
Matrix sample_prototype(const ClassPrototype& prototype, std::size_t length);

Dataset generate_dataset(const DatasetConfig& config, std::uint64_t seed);

/// Snippet t (center t + 0.5) is action iff its center lies inside an
/// interval; start/end regions are [b - r, b + r] with r = max(1, d / 10).
SnippetTargets derive_targets(const VideoAnnotation& annotation, std::size_t T);

struct LabelSplit {
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> unlabeled;
};

/// Deterministic partition of indices [0, n) with round(fraction * n) labeled.
/// Both lists are returned in ascending order.
LabelSplit split_labels(std::size_t n, double fraction, std::uint64_t seed);

/// Sets `annotation.labeled` on each video according to `split`.
void apply_split(Dataset& dataset, const LabelSplit& split);

std::string video_id_for(std::size_t index);

}  // namespace mtprop

// Copyright 2026 The mtprop Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtprop/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "mtprop/error.hpp"
#include "mtprop/rng.hpp"

namespace mtprop {
namespace {

constexpr std::uint64_t kPrototypeStream = 1;
constexpr std::uint64_t kVideoStream = 2;
constexpr std::uint64_t kSplitStream = 3;
constexpr int kMaxPlacementAttempts = 1000;
constexpr int kMaxVideoAttempts = 1000;

// Uniform Catmull-Rom through `points` at x in [0, n-1]; ends are clamped.
double catmull_rom(const Matrix& points, std::size_t col, double x) {
  const auto n = static_cast<long>(points.rows());
  if (n == 1) return points(0, col);
  x = std::clamp(x, 0.0, static_cast<double>(n - 1));
  long i = static_cast<long>(std::floor(x));
  if (i >= n - 1) i = n - 2;
  const double u = x - static_cast<double>(i);
  auto at = [&](long k) { return points(static_cast<std::size_t>(std::clamp(k, 0L, n - 1)), col); };
  const double p0 = at(i - 1), p1 = at(i), p2 = at(i + 1), p3 = at(i + 2);
  const double u2 = u * u, u3 = u2 * u;
  return 0.5 * ((2.0 * p1) + (-p0 + p2) * u + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u2 +
                (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * u3);
}

Matrix random_controls(Rng& rng, std::size_t count, std::size_t dims, double scale) {
  Matrix m(count, dims);
  for (auto& v : m.data()) v = rng.normal(0.0, scale);
  return m;
}

bool overlaps(const ActionInterval& a, const ActionInterval& b, double gap) {
  return a.start < b.end + gap && b.start < a.end + gap;
}

// Returns false when placement keeps failing; the caller regenerates.
bool place_intervals(const DatasetConfig& cfg, Rng& rng, std::vector<ActionInterval>& out) {
  out.clear();
  const int count = static_cast<int>(rng.uniform_int(cfg.min_intervals, cfg.max_intervals));
  const long T = static_cast<long>(cfg.T);
  for (int k = 0; k < count; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxPlacementAttempts && !placed; ++attempt) {
      const long length = rng.uniform_int(cfg.min_length, cfg.max_length);
      const long lo = cfg.edge_margin;
      const long hi = T - cfg.edge_margin - length;
      const long start = rng.uniform_int(lo, hi);
      ActionInterval candidate{static_cast<double>(start), static_cast<double>(start + length),
                               static_cast<int>(rng.uniform_int(0, cfg.num_classes - 1))};
      const bool clash = std::any_of(out.begin(), out.end(), [&](const ActionInterval& other) {
        return overlaps(candidate, other, cfg.min_gap);
      });
      if (!clash) {
        out.push_back(candidate);
        placed = true;
      }
    }
    if (!placed) return false;
  }
  std::sort(out.begin(), out.end(),
            [](const ActionInterval& a, const ActionInterval& b) { return a.start < b.start; });
  return true;
}

}  // namespace

void DatasetConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("DatasetConfig: " + what); };
  if (T < 2) fail("T must be >= 2");
  if (D < 1) fail("D must be >= 1");
  if (num_classes < 1) fail("num_classes must be >= 1");
  if (min_intervals < 1 || min_intervals > max_intervals) fail("empty intervals_per_video range");
  if (min_length < 1 || min_length > max_length) fail("empty interval length range");
  if (edge_margin < 0 || min_gap < 0) fail("edge_margin and min_gap must be >= 0");
  if (static_cast<long>(max_length) + 2L * edge_margin > static_cast<long>(T))
    fail("max interval length does not fit in T");
  if (!(feature_noise_sigma >= 0.0) || !(background_drift_scale >= 0.0) || !(prototype_scale >= 0.0))
    fail("noise, drift and prototype scales must be >= 0");
  if (!(feature_noise_correlation >= 0.0 && feature_noise_correlation < 1.0))
    fail("feature_noise_correlation must be in [0, 1)");
  if (prototype_control_points < 1 || drift_control_points < 1) fail("control point counts must be >= 1");
}

std::string video_id_for(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "v%05zu", index);
  return buf;
}

std::vector<ClassPrototype> make_prototypes(const DatasetConfig& config, std::uint64_t seed) {
  std::vector<ClassPrototype> out;
  out.reserve(static_cast<std::size_t>(config.num_classes));
  for (int c = 0; c < config.num_classes; ++c) {
    Rng rng(derive_seed(seed, kPrototypeStream, static_cast<std::uint64_t>(c)));
    out.push_back({random_controls(rng, static_cast<std::size_t>(config.prototype_control_points),
                                   config.D, config.prototype_scale)});
  }
  return out;
}

Matrix sample_prototype(const ClassPrototype& prototype, std::size_t length) {
  const std::size_t dims = prototype.control.cols();
  const double span = static_cast<double>(prototype.control.rows() - 1);
  Matrix out(length, dims);
  for (std::size_t i = 0; i < length; ++i) {
    const double phase = (static_cast<double>(i) + 0.5) / static_cast<double>(length);
    for (std::size_t d = 0; d < dims; ++d) out(i, d) = catmull_rom(prototype.control, d, phase * span);
  }
  return out;
}

Dataset generate_dataset(const DatasetConfig& config, std::uint64_t seed) {
  config.validate();
  const auto prototypes = make_prototypes(config, seed);
  Dataset ds{config, seed, {}};
  ds.videos.reserve(config.num_videos);
  const std::size_t T = config.T;
  const std::size_t D = config.D;

  for (std::size_t v = 0; v < config.num_videos; ++v) {
    std::vector<ActionInterval> intervals;
    std::uint64_t sub_seed = 0;
    bool ok = false;
    for (int attempt = 0; attempt < kMaxVideoAttempts && !ok; ++attempt) {
      sub_seed = derive_seed(seed, kVideoStream, (static_cast<std::uint64_t>(v) << 16) | attempt);
      Rng placement(sub_seed);
      ok = place_intervals(config, placement, intervals);
    }
    if (!ok) throw ConfigError("generate_dataset: could not place intervals for " + video_id_for(v));

    Rng rng(mix64(sub_seed));
    const double drift_span = static_cast<double>(config.drift_control_points - 1);
    const Matrix drift =
        random_controls(rng, static_cast<std::size_t>(config.drift_control_points), D,
                        config.background_drift_scale);
    Matrix features(T, D);
    for (std::size_t t = 0; t < T; ++t) {
      const double x = T > 1 ? drift_span * static_cast<double>(t) / static_cast<double>(T - 1) : 0.0;
      for (std::size_t d = 0; d < D; ++d) features(t, d) = catmull_rom(drift, d, x);
    }
    for (const auto& iv : intervals) {
      const auto s = static_cast<std::size_t>(iv.start);
      const auto e = static_cast<std::size_t>(iv.end);
      const Matrix proto = sample_prototype(prototypes[static_cast<std::size_t>(iv.class_id)], e - s);
      for (std::size_t t = s; t < e; ++t)
        for (std::size_t d = 0; d < D; ++d) features(t, d) = proto(t - s, d);
    }
    const double rho = config.feature_noise_correlation;
    const double innovation = config.feature_noise_sigma * std::sqrt(1.0 - rho * rho);
    std::vector<double> noise(D, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t d = 0; d < D; ++d) {
        const double eps = rng.normal();
        noise[d] = t == 0 ? config.feature_noise_sigma * eps : rho * noise[d] + innovation * eps;
        features(t, d) += noise[d];
      }
    }

    ds.videos.push_back({std::move(features), {video_id_for(v), std::move(intervals), false}});
  }
  return ds;
}

SnippetTargets derive_targets(const VideoAnnotation& annotation, std::size_t T) {
  SnippetTargets out{std::vector<double>(T, 0.0), std::vector<double>(T, 0.0),
                     std::vector<double>(T, 0.0)};
  const double len = static_cast<double>(T);
  for (const auto& iv : annotation.intervals) {
    if (!(iv.start >= 0.0) || !(iv.end <= len) || !(iv.start < iv.end))
      throw ValidationError("derive_targets: interval [" + std::to_string(iv.start) + ", " +
                            std::to_string(iv.end) + "] outside [0, " + std::to_string(T) + "] in " +
                            annotation.video_id);
    const double r = std::max(1.0, iv.duration() / 10.0);
    for (std::size_t t = 0; t < T; ++t) {
      const double c = static_cast<double>(t) + 0.5;
      if (c >= iv.start && c <= iv.end) out.actionness[t] = 1.0;
      if (c >= iv.start - r && c <= iv.start + r) out.start[t] = 1.0;
      if (c >= iv.end - r && c <= iv.end + r) out.end[t] = 1.0;
    }
  }
  return out;
}

LabelSplit split_labels(std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw ConfigError("split_labels: fraction must be in [0, 1]");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, kSplitStream));
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  LabelSplit split{{order.begin(), order.begin() + static_cast<long>(k)},
                   {order.begin() + static_cast<long>(k), order.end()}};
  std::sort(split.labeled.begin(), split.labeled.end());
  std::sort(split.unlabeled.begin(), split.unlabeled.end());
  return split;
}

void apply_split(Dataset& dataset, const LabelSplit& split) {
  for (auto& v : dataset.videos) v.annotation.labeled = false;
  for (auto i : split.labeled) {
    if (i >= dataset.size()) throw ValidationError("apply_split: index out of range");
    dataset.videos[i].annotation.labeled = true;
  }
}

}  // namespace mtprop

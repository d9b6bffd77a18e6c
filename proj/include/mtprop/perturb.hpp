// Copyright 2026 The mtprop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "mtprop/matrix.hpp"
#include "mtprop/rng.hpp"

namespace mtprop {

/// Mixture of n normals, each truncated to [0, T] and mixed by `weights`.
struct MTNDParams {
  std::size_t T = 0;
  std::vector<double> means;
  std::vector<double> sigmas;
  std::vector<double> weights;

  std::size_t components() const noexcept { return means.size(); }
  /// Throws ValidationError on mismatched sizes, sigma <= 0 or weights not summing to 1.
  void validate() const;
};

/// Ranges for drawing MTND parameters. Sigma bounds are fractions of T.
struct SamplerConfig {
  int min_components = 1;
  int max_components = 5;
  double sigma_min_frac = 0.05;
  double sigma_max_frac = 1.0;
  /// Std-dev of optional additive jitter on raw grid draws (snippet units).
  double jitter = 0.0;

  void validate() const;
};

struct KlBand {
  double lo = 0.005;
  double hi = 0.05;
  bool contains(double kl) const noexcept { return kl >= lo && kl <= hi; }
};

struct WarpConfig {
  SamplerConfig sampler;
  /// When set, MTND parameters are redrawn until their discretized KL to the
  /// uniform distribution falls inside the band.
  std::optional<KlBand> band = KlBand{};
  int max_band_attempts = 1000;
  /// Cells for the KL discretization; 0 means one cell per snippet (T).
  std::size_t kl_bins = 0;
};

/// Sample locations for time warping: non-decreasing, g[0] = 0, g[T-1] = T-1.
struct WarpGrid {
  std::vector<double> g;
  std::size_t size() const noexcept { return g.size(); }
};

WarpGrid identity_grid(std::size_t T);

MTNDParams sample_mtnd(std::size_t T, Rng& rng, const SamplerConfig& config);

/// Probability mass of each of `bins` equal cells over [0, T].
std::vector<double> mtnd_cell_masses(const MTNDParams& params, std::size_t bins);

/// sum_b p_b ln(p_b * bins), with 0 ln 0 = 0.
double kl_from_cell_masses(std::span<const double> masses);

double kl_to_uniform(const MTNDParams& params, std::size_t bins);

/// One draw from the truncated mixture.
double sample_location(const MTNDParams& params, Rng& rng);

/// Draws T locations, sorts them and rescales affinely onto [0, T-1].
WarpGrid make_grid(const MTNDParams& params, std::size_t T, Rng& rng, double jitter = 0.0);

struct WarpSample {
  MTNDParams params;
  WarpGrid grid;
  double kl = 0.0;
  /// False when the band could not be hit; params are then the closest seen.
  bool in_band = true;
  int attempts = 1;
};

/// MTND sampling, optional KL-band rejection, then grid construction.
WarpSample sample_warp(std::size_t T, Rng& rng, const WarpConfig& config);

/// Row t of the result is the linear interpolation of `seq` at g[t].
Matrix warp(const Matrix& seq, const WarpGrid& grid);

std::vector<double> warp(std::span<const double> seq, const WarpGrid& grid);

struct MaskResult {
  Matrix values;
  std::vector<bool> mask;

  std::size_t masked_count() const;
};

/// Zeroes each row independently with probability p. Surviving rows are not rescaled.
MaskResult time_mask(const Matrix& seq, double p, Rng& rng);

/// Adds i.i.d. N(0, sigma^2) to every entry.
Matrix gaussian_noise(const Matrix& seq, double sigma, Rng& rng);

}  // namespace mtprop

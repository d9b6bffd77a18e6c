// Copyright 2026 The mtprop Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtprop/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "mtprop/error.hpp"

namespace mtprop {
namespace {

constexpr int kMaxDegenerateRetries = 100;

// Standard normal mass on [a, b], evaluated on the side of the axis that
// avoids cancellation.
double normal_mass(double a, double b) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  if (a >= 0.0) return 0.5 * (std::erfc(a * kInvSqrt2) - std::erfc(b * kInvSqrt2));
  if (b <= 0.0) return 0.5 * (std::erfc(-b * kInvSqrt2) - std::erfc(-a * kInvSqrt2));
  return 0.5 * (std::erf(b * kInvSqrt2) - std::erf(a * kInvSqrt2));
}

double truncated_normal(double mean, double sigma, double upper, Rng& rng) {
  if (sigma >= 0.5 * upper) {
    // Wide component: uniform proposal with Gaussian acceptance.
    for (;;) {
      const double x = rng.uniform(0.0, upper);
      const double z = (x - mean) / sigma;
      if (rng.uniform() < std::exp(-0.5 * z * z)) return x;
    }
  }
  for (;;) {
    const double x = rng.normal(mean, sigma);
    if (x >= 0.0 && x <= upper) return x;
  }
}

}  // namespace

void MTNDParams::validate() const {
  const std::size_t n = means.size();
  if (n == 0) throw ValidationError("MTNDParams: need at least one component");
  if (sigmas.size() != n || weights.size() != n)
    throw ValidationError("MTNDParams: means/sigmas/weights sizes differ");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(sigmas[i] > 0.0) || !std::isfinite(sigmas[i]))
      throw ValidationError("MTNDParams: sigma must be positive and finite");
    if (!(weights[i] >= 0.0)) throw ValidationError("MTNDParams: weights must be >= 0");
    if (!(means[i] >= 0.0 && means[i] <= static_cast<double>(T)))
      throw ValidationError("MTNDParams: mean outside [0, T]");
    total += weights[i];
  }
  if (std::abs(total - 1.0) > 1e-12) throw ValidationError("MTNDParams: weights must sum to 1");
}

void SamplerConfig::validate() const {
  if (min_components < 1 || min_components > max_components)
    throw ConfigError("SamplerConfig: empty component range");
  if (!(sigma_min_frac > 0.0)) throw ConfigError("SamplerConfig: sigma_min must be > 0");
  if (!(sigma_min_frac <= sigma_max_frac)) throw ConfigError("SamplerConfig: sigma_min > sigma_max");
  if (!(jitter >= 0.0)) throw ConfigError("SamplerConfig: jitter must be >= 0");
}

WarpGrid identity_grid(std::size_t T) {
  WarpGrid grid{std::vector<double>(T)};
  std::iota(grid.g.begin(), grid.g.end(), 0.0);
  return grid;
}

MTNDParams sample_mtnd(std::size_t T, Rng& rng, const SamplerConfig& config) {
  config.validate();
  const auto n = static_cast<std::size_t>(rng.uniform_int(config.min_components, config.max_components));
  const double len = static_cast<double>(T);
  const double log_lo = std::log(config.sigma_min_frac * len);
  const double log_hi = std::log(config.sigma_max_frac * len);
  MTNDParams p{T, std::vector<double>(n), std::vector<double>(n), std::vector<double>(n)};
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p.means[i] = rng.uniform(0.0, len);
    p.sigmas[i] = std::exp(rng.uniform(log_lo, log_hi));
    p.weights[i] = rng.exponential();
    total += p.weights[i];
  }
  for (auto& w : p.weights) w /= total;
  return p;
}

std::vector<double> mtnd_cell_masses(const MTNDParams& params, std::size_t bins) {
  if (bins < 2) throw ValidationError("mtnd_cell_masses: bins must be >= 2");
  params.validate();
  const double len = static_cast<double>(params.T);
  std::vector<double> masses(bins, 0.0);
  for (std::size_t i = 0; i < params.components(); ++i) {
    const double mu = params.means[i];
    const double sigma = params.sigmas[i];
    const double z = normal_mass((0.0 - mu) / sigma, (len - mu) / sigma);
    for (std::size_t b = 0; b < bins; ++b) {
      const double lo = len * static_cast<double>(b) / static_cast<double>(bins);
      const double hi = len * static_cast<double>(b + 1) / static_cast<double>(bins);
      masses[b] += params.weights[i] * normal_mass((lo - mu) / sigma, (hi - mu) / sigma) / z;
    }
  }
  const double total = std::accumulate(masses.begin(), masses.end(), 0.0);
  for (auto& m : masses) m /= total;
  return masses;
}

double kl_from_cell_masses(std::span<const double> masses) {
  const double bins = static_cast<double>(masses.size());
  double kl = 0.0;
  for (double p : masses)
    if (p > 0.0) kl += p * std::log(p * bins);
  return std::max(kl, 0.0);
}

double kl_to_uniform(const MTNDParams& params, std::size_t bins) {
  const auto masses = mtnd_cell_masses(params, bins);
  return kl_from_cell_masses(masses);
}

double sample_location(const MTNDParams& params, Rng& rng) {
  double u = rng.uniform();
  std::size_t k = 0;
  for (; k + 1 < params.components(); ++k) {
    if (u < params.weights[k]) break;
    u -= params.weights[k];
  }
  return truncated_normal(params.means[k], params.sigmas[k], static_cast<double>(params.T), rng);
}

WarpGrid make_grid(const MTNDParams& params, std::size_t T, Rng& rng, double jitter) {
  if (T < 2) throw ValidationError("make_grid: T must be >= 2");
  params.validate();
  const double len = static_cast<double>(params.T);
  std::vector<double> draws(T);
  for (int attempt = 0; attempt < kMaxDegenerateRetries; ++attempt) {
    Rng sub(rng.next_u64());
    for (auto& x : draws) {
      x = sample_location(params, sub);
      if (jitter > 0.0) x = std::clamp(x + sub.normal(0.0, jitter), 0.0, len);
    }
    std::sort(draws.begin(), draws.end());
    const double lo = draws.front();
    const double span = draws.back() - lo;
    if (!(span > 0.0)) continue;
    const double top = static_cast<double>(T - 1);
    WarpGrid grid{std::vector<double>(T)};
    for (std::size_t t = 0; t < T; ++t)
      grid.g[t] = std::clamp((draws[t] - lo) / span * top, 0.0, top);
    grid.g.front() = 0.0;
    grid.g.back() = top;
    return grid;
  }
  throw ValidationError("make_grid: degenerate draws after " + std::to_string(kMaxDegenerateRetries) +
                        " retries");
}

WarpSample sample_warp(std::size_t T, Rng& rng, const WarpConfig& config) {
  const std::size_t bins = config.kl_bins == 0 ? T : config.kl_bins;
  WarpSample best;
  best.params = sample_mtnd(T, rng, config.sampler);
  best.kl = kl_to_uniform(best.params, bins);
  best.in_band = !config.band || config.band->contains(best.kl);
  if (config.band) {
    const KlBand band = *config.band;
    // Distance to the band in log space.
    auto distance = [&](double kl) {
      const double v = std::log(std::max(kl, 1e-300));
      if (v < std::log(band.lo)) return std::log(band.lo) - v;
      if (v > std::log(band.hi)) return v - std::log(band.hi);
      return 0.0;
    };
    double best_distance = distance(best.kl);
    int attempt = 1;
    while (!best.in_band && attempt < config.max_band_attempts) {
      ++attempt;
      MTNDParams candidate = sample_mtnd(T, rng, config.sampler);
      const double kl = kl_to_uniform(candidate, bins);
      const double d = distance(kl);
      if (d < best_distance) {
        best_distance = d;
        best.params = std::move(candidate);
        best.kl = kl;
        best.in_band = band.contains(kl);
      }
    }
    best.attempts = attempt;
  }
  best.grid = make_grid(best.params, T, rng, config.sampler.jitter);
  return best;
}

Matrix warp(const Matrix& seq, const WarpGrid& grid) {
  const std::size_t T = seq.rows();
  if (grid.size() != T)
    throw ValidationError("warp: grid length " + std::to_string(grid.size()) + " != sequence length " +
                          std::to_string(T));
  const double top = static_cast<double>(T) - 1.0;
  Matrix out(T, seq.cols());
  for (std::size_t t = 0; t < T; ++t) {
    const double g = grid.g[t];
    if (!(g >= 0.0 && g <= top)) throw ValidationError("warp: grid value outside [0, T-1]");
    const auto i0 = static_cast<std::size_t>(std::floor(g));
    const double lambda = g - static_cast<double>(i0);
    const std::size_t i1 = std::min(i0 + 1, T - 1);
    const auto a = seq.row(i0);
    const auto b = seq.row(i1);
    auto dst = out.row(t);
    for (std::size_t c = 0; c < seq.cols(); ++c) {
      const double lo = std::min(a[c], b[c]);
      const double hi = std::max(a[c], b[c]);
      dst[c] = std::clamp(a[c] + lambda * (b[c] - a[c]), lo, hi);
    }
  }
  return out;
}

std::vector<double> warp(std::span<const double> seq, const WarpGrid& grid) {
  Matrix m(seq.size(), 1, std::vector<double>(seq.begin(), seq.end()));
  return warp(m, grid).data();
}

std::size_t MaskResult::masked_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

MaskResult time_mask(const Matrix& seq, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("time_mask: p must be in [0, 1]");
  MaskResult out{seq, std::vector<bool>(seq.rows(), false)};
  for (std::size_t t = 0; t < seq.rows(); ++t) {
    if (rng.bernoulli(p)) {
      out.mask[t] = true;
      for (auto& x : out.values.row(t)) x = 0.0;
    }
  }
  return out;
}

Matrix gaussian_noise(const Matrix& seq, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw ConfigError("gaussian_noise: sigma must be >= 0");
  Matrix out = seq;
  if (sigma == 0.0) return out;
  for (auto& x : out.data()) x += rng.normal(0.0, sigma);
  return out;
}

}  // namespace mtprop

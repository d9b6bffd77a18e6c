// Copyright 2026 The mtprop Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtprop/bsn.hpp"

#include <algorithm>
#include <cmath>

#include "mtprop/error.hpp"
#include "mtprop/eval.hpp"

namespace mtprop::bsn {

Matrix targets_matrix(const SnippetTargets& targets) {
  const std::size_t T = targets.actionness.size();
  if (targets.start.size() != T || targets.end.size() != T)
    throw ValidationError("targets_matrix: channel lengths differ");
  Matrix out(T, 3);
  for (std::size_t t = 0; t < T; ++t) {
    out(t, kActionness) = targets.actionness[t];
    out(t, kStart) = targets.start[t];
    out(t, kEnd) = targets.end[t];
  }
  return out;
}

TemParams TemParams::init(std::size_t feature_dim, std::size_t hidden, Rng& rng) {
  if (feature_dim == 0 || hidden == 0) throw ConfigError("TemParams: dimensions must be > 0");
  TemParams p;
  p.conv1 = nn::Conv1dLayer::init(feature_dim, hidden, 3, rng);
  p.conv2 = nn::Conv1dLayer::init(hidden, hidden, 3, rng);
  p.conv3 = nn::Conv1dLayer::init(hidden, 3, 1, rng);
  return p;
}

TemParams TemParams::zeros_like() const {
  TemParams z = *this;
  for (auto* t : z.parameters()) std::fill(t->values.begin(), t->values.end(), 0.0);
  return z;
}

std::vector<nn::Tensor*> TemParams::parameters() {
  return {&conv1.kernel, &conv1.bias, &conv2.kernel, &conv2.bias, &conv3.kernel, &conv3.bias};
}

std::vector<const nn::Tensor*> TemParams::parameters() const {
  return {&conv1.kernel, &conv1.bias, &conv2.kernel, &conv2.bias, &conv3.kernel, &conv3.bias};
}

PemParams PemParams::init(std::size_t hidden, Rng& rng) {
  if (hidden == 0) throw ConfigError("PemParams: hidden must be > 0");
  return {nn::DenseLayer::init(kBspLength, hidden, rng), nn::DenseLayer::init(hidden, 1, rng)};
}

PemParams PemParams::zeros_like() const {
  PemParams z = *this;
  for (auto* t : z.parameters()) std::fill(t->values.begin(), t->values.end(), 0.0);
  return z;
}

std::vector<nn::Tensor*> PemParams::parameters() {
  return {&fc1.weight, &fc1.bias, &fc2.weight, &fc2.bias};
}

std::vector<const nn::Tensor*> PemParams::parameters() const {
  return {&fc1.weight, &fc1.bias, &fc2.weight, &fc2.bias};
}

BoundarySignals tem_forward(const TemParams& params, const Matrix& features, TemCache* cache) {
  if (features.cols() != params.feature_dim())
    throw ValidationError("tem_forward: feature dim " + std::to_string(features.cols()) +
                          " != model dim " + std::to_string(params.feature_dim()));
  if (features.rows() < 1) throw ValidationError("tem_forward: empty sequence");
  Matrix z1 = nn::conv1d_forward(params.conv1, features);
  Matrix a1 = nn::relu(z1);
  Matrix z2 = nn::conv1d_forward(params.conv2, a1);
  Matrix a2 = nn::relu(z2);
  Matrix out = nn::sigmoid(nn::conv1d_forward(params.conv3, a2));
  if (cache) *cache = {features, std::move(z1), std::move(a1), std::move(z2), a2, out};
  return {std::move(out)};
}

void tem_backward(const TemParams& params, const TemCache& cache, const Matrix& grad_signals,
                  TemParams& grads) {
  const Matrix g3 = nn::sigmoid_backward(cache.output, grad_signals);
  const Matrix ga2 = nn::conv1d_backward(params.conv3, cache.a2, g3, grads.conv3);
  const Matrix gz2 = nn::relu_backward(cache.z2, ga2);
  const Matrix ga1 = nn::conv1d_backward(params.conv2, cache.a1, gz2, grads.conv2);
  const Matrix gz1 = nn::relu_backward(cache.z1, ga1);
  nn::conv1d_backward(params.conv1, cache.input, gz1, grads.conv1);
}

LossGrad tem_loss(const BoundarySignals& signals, const Matrix& targets) {
  const std::size_t T = signals.length();
  if (targets.rows() != T || targets.cols() != 3 || signals.values.cols() != 3)
    throw ValidationError("tem_loss: signals and targets must both be T x 3");
  LossGrad out{0.0, Matrix(T, 3)};
  const double len = static_cast<double>(T);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    double positives = 0.0;
    for (std::size_t t = 0; t < T; ++t) positives += targets(t, ch);
    const double w_pos = len / (2.0 * std::max(positives, 1.0));
    const double w_neg = len / (2.0 * std::max(len - positives, 1.0));
    double sum = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const double raw = signals.values(t, ch);
      const double p = std::clamp(raw, kProbEps, 1.0 - kProbEps);
      const double b = targets(t, ch);
      sum += w_pos * b * std::log(p) + w_neg * (1.0 - b) * std::log(1.0 - p);
      if (raw > kProbEps && raw < 1.0 - kProbEps)
        out.grad(t, ch) = -(w_pos * b / p - w_neg * (1.0 - b) / (1.0 - p)) / len;
    }
    out.loss += -sum / len;
  }
  return out;
}

std::vector<double> pem_forward(const PemParams& params, const Matrix& bsp, PemCache* cache) {
  if (bsp.cols() != kBspLength) throw ValidationError("pem_forward: expected 32 features per row");
  Matrix z1 = nn::dense_forward(params.fc1, bsp);
  Matrix a1 = nn::relu(z1);
  Matrix out = nn::sigmoid(nn::dense_forward(params.fc2, a1));
  std::vector<double> conf = out.data();
  if (cache) *cache = {bsp, std::move(z1), std::move(a1), std::move(out)};
  return conf;
}

void pem_backward(const PemParams& params, const PemCache& cache, std::span<const double> grad_conf,
                  PemParams& grads) {
  if (grad_conf.size() != cache.output.rows()) throw ValidationError("pem_backward: gradient length mismatch");
  const Matrix g(grad_conf.size(), 1, std::vector<double>(grad_conf.begin(), grad_conf.end()));
  const Matrix gz2 = nn::sigmoid_backward(cache.output, g);
  const Matrix ga1 = nn::dense_backward(params.fc2, cache.a1, gz2, grads.fc2);
  const Matrix gz1 = nn::relu_backward(cache.z1, ga1);
  nn::dense_backward(params.fc1, cache.input, gz1, grads.fc1);
}

ScalarLoss pem_loss(double confidence, double tiou_target) {
  const double diff = confidence - tiou_target;
  return {diff * diff, 2.0 * diff};
}

std::vector<std::size_t> boundary_candidates(std::span<const double> prob, double threshold_ratio) {
  const std::size_t T = prob.size();
  std::vector<std::size_t> out;
  if (T == 0) return out;
  const double peak = *std::max_element(prob.begin(), prob.end());
  for (std::size_t t = 0; t < T; ++t) {
    const bool left_ok = t == 0 || prob[t] > prob[t - 1];
    const bool right_ok = t + 1 == T || prob[t] > prob[t + 1];
    const bool local_max = T > 1 && left_ok && right_ok;
    if (local_max || prob[t] > threshold_ratio * peak) out.push_back(t);
  }
  return out;
}

std::vector<Proposal> generate_candidates(const BoundarySignals& signals, const CandidateConfig& config) {
  const std::size_t T = signals.length();
  if (T < 2) throw ValidationError("generate_candidates: T must be >= 2");
  const std::size_t max_duration = config.max_duration == 0 ? T : config.max_duration;
  const auto ps = signals.channel(kStart);
  const auto pe = signals.channel(kEnd);
  const auto starts = boundary_candidates(ps, config.threshold_ratio);
  const auto ends = boundary_candidates(pe, config.threshold_ratio);
  std::vector<Proposal> out;
  for (std::size_t s : starts) {
    for (std::size_t e : ends) {
      if (e <= s || e - s > max_duration) continue;
      Proposal p;
      p.t_start = static_cast<double>(s);
      p.t_end = static_cast<double>(e + 1);
      p.start_prob = ps[s];
      p.end_prob = pe[e];
      p.confidence = 1.0;
      p.rescore();
      out.push_back(p);
    }
  }
  return out;
}

double interpolate(std::span<const double> signal, double x) {
  if (signal.empty()) throw ValidationError("interpolate: empty signal");
  const double top = static_cast<double>(signal.size() - 1);
  x = std::clamp(x, 0.0, top);
  const auto i0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t i1 = std::min(i0 + 1, signal.size() - 1);
  const double lambda = x - static_cast<double>(i0);
  return signal[i0] + lambda * (signal[i1] - signal[i0]);
}

std::array<double, kBspLength> bsp_features(std::span<const double> actionness, const Proposal& proposal) {
  const double len = static_cast<double>(actionness.size());
  if (!(proposal.t_start < proposal.t_end) || proposal.t_start < 0.0 || proposal.t_end > len)
    throw ValidationError("bsp_features: proposal outside [0, T] or empty");
  const double d = proposal.t_end - proposal.t_start;
  std::array<double, kBspLength> out{};
  auto fill = [&](std::size_t offset, std::size_t count, double lo, double hi) {
    for (std::size_t i = 0; i < count; ++i) {
      const double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
      out[offset + i] = interpolate(actionness, x);
    }
  };
  fill(0, 16, proposal.t_start, proposal.t_end);
  fill(16, 8, proposal.t_start - d / 5.0, proposal.t_start + d / 5.0);
  fill(24, 8, proposal.t_end - d / 5.0, proposal.t_end + d / 5.0);
  return out;
}

std::vector<Proposal> soft_nms(std::vector<Proposal> proposals, double sigma, double score_floor,
                               std::size_t max_keep) {
  if (!(sigma > 0.0)) throw ConfigError("soft_nms: sigma must be > 0");
  std::erase_if(proposals, [&](const Proposal& p) { return p.final_score < score_floor; });
  std::vector<Proposal> out;
  while (!proposals.empty() && (max_keep == 0 || out.size() < max_keep)) {
    auto best = std::max_element(proposals.begin(), proposals.end(), [](const Proposal& a, const Proposal& b) {
      return a.final_score < b.final_score;
    });
    out.push_back(*best);
    proposals.erase(best);
    const Proposal& m = out.back();
    for (auto& p : proposals) {
      const double iou = eval::tiou(m.t_start, m.t_end, p.t_start, p.t_end);
      p.final_score *= std::exp(-(iou * iou) / sigma);
    }
    std::erase_if(proposals, [&](const Proposal& p) { return p.final_score < score_floor; });
  }
  return out;
}

std::vector<Proposal> propose(const TemParams& tem, const PemParams& pem, const Matrix& features,
                              const ProposalConfig& config) {
  const BoundarySignals signals = tem_forward(tem, features);
  auto candidates = generate_candidates(signals, config.candidates);
  if (candidates.empty()) return {};
  const auto actionness = signals.channel(kActionness);
  Matrix bsp(candidates.size(), kBspLength);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto f = bsp_features(actionness, candidates[i]);
    std::copy(f.begin(), f.end(), bsp.row(i).begin());
  }
  const auto conf = pem_forward(pem, bsp);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    candidates[i].confidence = conf[i];
    candidates[i].rescore();
  }
  return soft_nms(std::move(candidates), config.nms_sigma, config.nms_floor, config.max_proposals);
}

double max_tiou(const Proposal& proposal, std::span<const ActionInterval> intervals) {
  double best = 0.0;
  for (const auto& iv : intervals)
    best = std::max(best, eval::tiou(proposal.t_start, proposal.t_end, iv.start, iv.end));
  return best;
}

}  // namespace mtprop::bsn

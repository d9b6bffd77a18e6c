// Copyright 2026 The mtprop Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtprop/nn.hpp"

#include <cmath>
#include <numeric>

#include "mtprop/error.hpp"

namespace mtprop::nn {
namespace {

std::size_t product(const std::vector<std::size_t>& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

inline void axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

// Kernel (o, c, j) reordered to (j, c, o) for the forward pass.
std::vector<double> kernel_jco(const Conv1dLayer& layer) {
  const std::size_t O = layer.out_channels(), C = layer.in_channels(), K = layer.width();
  std::vector<double> out(O * C * K);
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t j = 0; j < K; ++j) out[(j * C + c) * O + o] = layer.kernel.values[(o * C + c) * K + j];
  return out;
}

// Kernel (o, c, j) reordered to (j, o, c) for the input gradient.
std::vector<double> kernel_joc(const Conv1dLayer& layer) {
  const std::size_t O = layer.out_channels(), C = layer.in_channels(), K = layer.width();
  std::vector<double> out(O * C * K);
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t j = 0; j < K; ++j) out[(j * O + o) * C + c] = layer.kernel.values[(o * C + c) * K + j];
  return out;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> dims, double fill)
    : shape(std::move(dims)), values(product(shape), fill) {}

Conv1dLayer Conv1dLayer::init(std::size_t in_channels, std::size_t out_channels, std::size_t width,
                              Rng& rng) {
  if (width % 2 == 0) throw ConfigError("Conv1dLayer: kernel width must be odd");
  Conv1dLayer layer{Tensor({out_channels, in_channels, width}), Tensor({out_channels})};
  layer.validate();
  const double bound = std::sqrt(6.0 / static_cast<double>(in_channels * width));
  for (auto& w : layer.kernel.values) w = rng.uniform(-bound, bound);
  return layer;
}

void Conv1dLayer::validate() const {
  if (kernel.shape.size() != 3 || bias.shape.size() != 1)
    throw ValidationError("Conv1dLayer: kernel must be rank 3 and bias rank 1");
  if (kernel.shape[2] % 2 == 0) throw ValidationError("Conv1dLayer: kernel width must be odd");
  if (bias.shape[0] != kernel.shape[0]) throw ValidationError("Conv1dLayer: bias length != C_out");
}

DenseLayer DenseLayer::init(std::size_t in_features, std::size_t out_features, Rng& rng) {
  DenseLayer layer{Tensor({out_features, in_features}), Tensor({out_features})};
  const double bound = std::sqrt(6.0 / static_cast<double>(in_features));
  for (auto& w : layer.weight.values) w = rng.uniform(-bound, bound);
  return layer;
}

void DenseLayer::validate() const {
  if (weight.shape.size() != 2 || bias.shape.size() != 1 || bias.shape[0] != weight.shape[0])
    throw ValidationError("DenseLayer: inconsistent weight/bias shapes");
}

Matrix conv1d_forward(const Conv1dLayer& layer, const Matrix& input) {
  layer.validate();
  const std::size_t O = layer.out_channels(), C = layer.in_channels(), K = layer.width();
  if (input.cols() != C)
    throw ValidationError("conv1d_forward: input " + shape_str(input.rows(), input.cols()) +
                          " does not match C_in=" + std::to_string(C));
  const auto T = static_cast<long>(input.rows());
  const long pad = static_cast<long>(K - 1) / 2;
  const auto w = kernel_jco(layer);
  Matrix out(input.rows(), O);
  for (long t = 0; t < T; ++t) {
    double* dst = out.row(static_cast<std::size_t>(t)).data();
    std::copy(layer.bias.values.begin(), layer.bias.values.end(), dst);
    for (std::size_t j = 0; j < K; ++j) {
      const long src = t + static_cast<long>(j) - pad;
      if (src < 0 || src >= T) continue;
      const double* x = input.row(static_cast<std::size_t>(src)).data();
      for (std::size_t c = 0; c < C; ++c) axpy(x[c], &w[(j * C + c) * O], dst, O);
    }
  }
  return out;
}

Matrix conv1d_backward(const Conv1dLayer& layer, const Matrix& input, const Matrix& grad_output,
                       Conv1dLayer& grad) {
  layer.validate();
  const std::size_t O = layer.out_channels(), C = layer.in_channels(), K = layer.width();
  if (input.cols() != C || grad_output.cols() != O || grad_output.rows() != input.rows())
    throw ValidationError("conv1d_backward: shape mismatch");
  if (grad.kernel.shape != layer.kernel.shape || grad.bias.shape != layer.bias.shape)
    throw ValidationError("conv1d_backward: gradient buffer shape mismatch");
  const auto T = static_cast<long>(input.rows());
  const long pad = static_cast<long>(K - 1) / 2;
  const auto w = kernel_joc(layer);
  std::vector<double> gw(O * C * K, 0.0);  // (j, c, o)
  Matrix grad_input(input.rows(), C);
  for (long t = 0; t < T; ++t) {
    const double* g = grad_output.row(static_cast<std::size_t>(t)).data();
    for (std::size_t o = 0; o < O; ++o) grad.bias.values[o] += g[o];
    for (std::size_t j = 0; j < K; ++j) {
      const long src = t + static_cast<long>(j) - pad;
      if (src < 0 || src >= T) continue;
      const double* x = input.row(static_cast<std::size_t>(src)).data();
      double* gx = grad_input.row(static_cast<std::size_t>(src)).data();
      for (std::size_t c = 0; c < C; ++c) axpy(x[c], g, &gw[(j * C + c) * O], O);
      for (std::size_t o = 0; o < O; ++o) axpy(g[o], &w[(j * O + o) * C], gx, C);
    }
  }
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t j = 0; j < K; ++j) grad.kernel.values[(o * C + c) * K + j] += gw[(j * C + c) * O + o];
  return grad_input;
}

Matrix dense_forward(const DenseLayer& layer, const Matrix& input) {
  layer.validate();
  const std::size_t O = layer.out_features(), I = layer.in_features();
  if (input.cols() != I)
    throw ValidationError("dense_forward: input " + shape_str(input.rows(), input.cols()) +
                          " does not match in_features=" + std::to_string(I));
  std::vector<double> wt(I * O);
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t i = 0; i < I; ++i) wt[i * O + o] = layer.weight.values[o * I + i];
  Matrix out(input.rows(), O);
  for (std::size_t n = 0; n < input.rows(); ++n) {
    double* dst = out.row(n).data();
    std::copy(layer.bias.values.begin(), layer.bias.values.end(), dst);
    const double* x = input.row(n).data();
    for (std::size_t i = 0; i < I; ++i) axpy(x[i], &wt[i * O], dst, O);
  }
  return out;
}

Matrix dense_backward(const DenseLayer& layer, const Matrix& input, const Matrix& grad_output,
                      DenseLayer& grad) {
  layer.validate();
  const std::size_t O = layer.out_features(), I = layer.in_features();
  if (input.cols() != I || grad_output.cols() != O || grad_output.rows() != input.rows())
    throw ValidationError("dense_backward: shape mismatch");
  if (grad.weight.shape != layer.weight.shape || grad.bias.shape != layer.bias.shape)
    throw ValidationError("dense_backward: gradient buffer shape mismatch");
  Matrix grad_input(input.rows(), I);
  for (std::size_t n = 0; n < input.rows(); ++n) {
    const double* g = grad_output.row(n).data();
    const double* x = input.row(n).data();
    double* gx = grad_input.row(n).data();
    for (std::size_t o = 0; o < O; ++o) {
      grad.bias.values[o] += g[o];
      axpy(g[o], x, &grad.weight.values[o * I], I);
      axpy(g[o], &layer.weight.values[o * I], gx, I);
    }
  }
  return grad_input;
}

Matrix relu(const Matrix& x) {
  Matrix out = x;
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Matrix relu_backward(const Matrix& input, const Matrix& grad_output) {
  if (input.rows() != grad_output.rows() || input.cols() != grad_output.cols())
    throw ValidationError("relu_backward: shape mismatch");
  Matrix out = grad_output;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!(input.data()[i] > 0.0)) out.data()[i] = 0.0;
  return out;
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix sigmoid(const Matrix& x) {
  Matrix out = x;
  for (auto& v : out.data()) v = sigmoid(v);
  return out;
}

Matrix sigmoid_backward(const Matrix& output, const Matrix& grad_output) {
  if (output.rows() != grad_output.rows() || output.cols() != grad_output.cols())
    throw ValidationError("sigmoid_backward: shape mismatch");
  Matrix out = grad_output;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double y = output.data()[i];
    out.data()[i] *= y * (1.0 - y);
  }
  return out;
}

void check_same_shapes(std::span<const Tensor* const> a, std::span<const Tensor* const> b,
                       const std::string& context) {
  if (a.size() != b.size()) throw ValidationError(context + ": parameter count mismatch");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i]->shape != b[i]->shape)
      throw ValidationError(context + ": shape mismatch at parameter " + std::to_string(i));
}

AdamState make_adam_state(std::span<const Tensor* const> params) {
  AdamState state;
  for (const Tensor* p : params) {
    state.m.push_back(p->zeros_like());
    state.v.push_back(p->zeros_like());
  }
  return state;
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
               AdamState& state, const AdamConfig& config) {
  if (!(config.lr > 0.0)) throw ConfigError("adam_step: lr must be > 0");
  std::vector<const Tensor*> cparams(params.begin(), params.end());
  check_same_shapes(cparams, grads, "adam_step");
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ValidationError("adam_step: optimizer state does not match parameters");
  for (std::size_t k = 0; k < grads.size(); ++k)
    for (double g : grads[k]->values)
      if (!std::isfinite(g))
        throw DivergenceError("adam_step: non-finite gradient in parameter " + std::to_string(k),
                              state.step + 1);

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k]->values;
    const auto& g = grads[k]->values;
    auto& m = state.m[k].values;
    auto& v = state.v[k].values;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      p[i] -= config.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.eps);
    }
  }
}

}  // namespace mtprop::nn

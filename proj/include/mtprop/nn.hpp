// Copyright 2026 The mtprop Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mtprop/matrix.hpp"
#include "mtprop/rng.hpp"

namespace mtprop::nn {

/// Shape-tagged parameter buffer (row-major).
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims, double fill = 0.0);

  std::size_t size() const noexcept { return values.size(); }
  Tensor zeros_like() const { return Tensor(shape); }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Same-padding 1-D convolution. kernel is (C_out x C_in x k), k odd.
struct Conv1dLayer {
  Tensor kernel;
  Tensor bias;

  static Conv1dLayer init(std::size_t in_channels, std::size_t out_channels, std::size_t width, Rng& rng);

  std::size_t out_channels() const noexcept { return kernel.shape[0]; }
  std::size_t in_channels() const noexcept { return kernel.shape[1]; }
  std::size_t width() const noexcept { return kernel.shape[2]; }
  void validate() const;
  friend bool operator==(const Conv1dLayer&, const Conv1dLayer&) = default;
};

/// Fully connected layer. weight is (out x in).
struct DenseLayer {
  Tensor weight;
  Tensor bias;

  static DenseLayer init(std::size_t in_features, std::size_t out_features, Rng& rng);

  std::size_t out_features() const noexcept { return weight.shape[0]; }
  std::size_t in_features() const noexcept { return weight.shape[1]; }
  void validate() const;
  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// input T x C_in -> T x C_out, zero padding (k-1)/2 on both sides.
Matrix conv1d_forward(const Conv1dLayer& layer, const Matrix& input);

/// Accumulates kernel/bias gradients into `grad` and returns dL/dinput.
Matrix conv1d_backward(const Conv1dLayer& layer, const Matrix& input, const Matrix& grad_output,
                       Conv1dLayer& grad);

/// Row-wise affine map: input N x in -> N x out.
Matrix dense_forward(const DenseLayer& layer, const Matrix& input);

Matrix dense_backward(const DenseLayer& layer, const Matrix& input, const Matrix& grad_output,
                      DenseLayer& grad);

Matrix relu(const Matrix& x);
Matrix relu_backward(const Matrix& input, const Matrix& grad_output);

double sigmoid(double x) noexcept;
Matrix sigmoid(const Matrix& x);
/// Uses the forward output y: grad * y * (1 - y).
Matrix sigmoid_backward(const Matrix& output, const Matrix& grad_output);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;
};

AdamState make_adam_state(std::span<const Tensor* const> params);

/// Bias-corrected Adam update on each (param, grad) pair. Throws
/// DivergenceError if any gradient is non-finite; params are untouched then.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads,
               AdamState& state, const AdamConfig& config);

/// Throws ValidationError unless the two lists have identical shapes.
void check_same_shapes(std::span<const Tensor* const> a, std::span<const Tensor* const> b,
                       const std::string& context);

}  // namespace mtprop::nn

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "uvlp/tensor.hpp"

namespace uvlp {

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

struct AdamConfig {
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t warmup = 100;
};

struct AdamState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// Learning rate after linear warmup: lr * min(1, step / warmup).
double warmup_lr(const AdamConfig& config, std::size_t step);

/// One bias-corrected Adam update. Tensors without a gradient are treated
/// as having a zero gradient. Throws NonFiniteError naming the first
/// parameter whose gradient holds a NaN or infinity; nothing is updated in
/// that case.
void adam_step(std::span<const NamedTensor> params, AdamState& state, const AdamConfig& config,
               std::size_t step);

/// Rescales all gradients so their joint L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<const NamedTensor> params, double max_norm);

}  // namespace uvlp

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "uvlp/config.hpp"
#include "uvlp/data.hpp"
#include "uvlp/weights.hpp"

namespace uvlp {

/// Model used by the full-model check: L=2, d=16, two heads, N=4, T=6.
ModelConfig grad_check_config();

/// Scenes with random regions, random captions of ordinary words and one
/// question each with a one-hot soft label.
std::vector<SceneExample> random_scenes(const ModelConfig& config, std::size_t count, std::uint64_t seed);

/// Weights drawn at std `scale` with layer-norm gains and biases moved off
/// 1 and 0, so every coordinate carries a gradient well above
/// central-difference roundoff.
ModelWeights spread_weights(const ModelConfig& config, std::uint64_t seed, double scale);

struct GradCheckReport {
  double max_error = 0.0;
  std::string worst_tensor;
  std::size_t coordinates = 0;
  double seconds = 0.0;
};

/// Finite-difference check of every parameter of the combined loss
/// (seq2seq masked-LM + bidirectional masked-LM + VQA BCE) on `batch`
/// random scenes.
GradCheckReport full_model_grad_check(const ModelConfig& config, std::size_t batch, std::uint64_t seed,
                                      double scale = 0.3, double h = 1e-5);

}  // namespace uvlp

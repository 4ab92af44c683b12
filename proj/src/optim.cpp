#include "uvlp/optim.hpp"

#include <algorithm>
#include <cmath>

#include "uvlp/error.hpp"

namespace uvlp {

double warmup_lr(const AdamConfig& config, std::size_t step) {
  if (config.warmup == 0) return config.lr;
  return config.lr * std::min(1.0, static_cast<double>(step) / static_cast<double>(config.warmup));
}

void adam_step(std::span<const NamedTensor> params, AdamState& state, const AdamConfig& config,
               std::size_t step) {
  if (step < 1) throw ConfigError("adam_step: step counts from 1");
  for (const NamedTensor& p : params) {
    if (!p.tensor->has_grad()) continue;
    for (double g : std::as_const(*p.tensor).grad()) {
      if (!std::isfinite(g)) throw NonFiniteError("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  if (state.first_moment.size() != params.size()) {
    state.first_moment.assign(params.size(), {});
    state.second_moment.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.first_moment[i].assign(params[i].tensor->size(), 0.0);
      state.second_moment[i].assign(params[i].tensor->size(), 0.0);
    }
  }
  const double lr = warmup_lr(config, step);
  const double t = static_cast<double>(step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& tensor = *params[i].tensor;
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    auto values = tensor.values();
    const auto grad = std::as_const(tensor).grad();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j];
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      values[j] -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

double clip_grad_norm(std::span<const NamedTensor> params, double max_norm) {
  double sq = 0.0;
  for (const NamedTensor& p : params) {
    for (double g : std::as_const(*p.tensor).grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (const NamedTensor& p : params) {
      if (!p.tensor->has_grad()) continue;
      for (double& g : p.tensor->grad()) g *= factor;
    }
  }
  return norm;
}

}  // namespace uvlp

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "egl/errors.hpp"

namespace egl {

struct AdamWHyper {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t step = 0;

  explicit AdamWState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
};

// Decoupled weight decay:
//   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
inline void adamw_step(std::span<double> params, std::span<const double> grads, AdamWState& state,
                       const AdamWHyper& h) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adamw_step: " + std::to_string(params.size()) + " params, " +
                         std::to_string(grads.size()) + " grads, state of " + std::to_string(state.m.size()));
  }
  for (double g : grads) {
    if (!std::isfinite(g)) throw DivergenceError("adamw_step: non-finite gradient", 0, state.step);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
    state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    params[i] -= h.learning_rate * (m_hat / (std::sqrt(v_hat) + h.eps) + h.weight_decay * params[i]);
  }
}

}  // namespace egl

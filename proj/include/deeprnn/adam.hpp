#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "deeprnn/errors.hpp"
#include "deeprnn/model.hpp"
#include "deeprnn/tensor.hpp"

namespace deeprnn {

using GradientMap = std::map<std::string, Tensor>;

/// Moment estimates for bias-corrected adam.
struct AdamState {
  GradientMap m;
  GradientMap v;
  std::uint64_t t = 0;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real epsilon = 1e-8;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// Advances the moments by one step and returns the parameter deltas
/// -lr * m_hat / (sqrt(v_hat) + eps).
inline GradientMap adam_step(const GradientMap& grads, AdamState& state, Real learning_rate) {
  ++state.t;
  const Real bc1 = 1.0 - std::pow(state.beta1, static_cast<Real>(state.t));
  const Real bc2 = 1.0 - std::pow(state.beta2, static_cast<Real>(state.t));
  GradientMap deltas;
  for (const auto& [name, g] : grads) {
    auto [mit, m_new] = state.m.try_emplace(name, g.shape(), 0.0);
    auto [vit, v_new] = state.v.try_emplace(name, g.shape(), 0.0);
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    if (!m.same_shape(g) || !v.same_shape(g)) throw ShapeError("adam: moment shape mismatch for " + name);
    Tensor delta(g.shape(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const Real m_hat = m[i] / bc1;
      const Real v_hat = v[i] / bc2;
      delta[i] = -learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
    deltas.emplace(name, std::move(delta));
  }
  return deltas;
}

inline void apply_deltas(ParamStore& params, const GradientMap& deltas) {
  for (const auto& [name, d] : deltas) {
    Tensor& p = params.at(name);
    if (!p.same_shape(d)) throw ShapeError("apply_deltas: shape mismatch for " + name);
    for (std::size_t i = 0; i < d.size(); ++i) p[i] += d[i];
  }
}

/// Rescales all gradients so their joint L2 norm is at most max_norm;
/// returns the norm before clipping. max_norm <= 0 disables clipping.
inline Real clip_global_norm(GradientMap& grads, Real max_norm) {
  Real sq = 0;
  for (const auto& [_, g] : grads)
    for (Real v : g.values()) sq += v * v;
  const Real norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const Real s = max_norm / norm;
    for (auto& [_, g] : grads)
      for (Real& v : g.values()) v *= s;
  }
  return norm;
}

}  // namespace deeprnn

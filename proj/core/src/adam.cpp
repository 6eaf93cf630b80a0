#include "canids/adam.hpp"

#include <cmath>

namespace canids {

AdamState AdamState::for_params(std::span<const ParamRef> params, const AdamConfig& config) {
  AdamState state;
  state.config = config;
  for (const auto& p : params) {
    state.names.push_back(p.name);
    state.first_moment.emplace_back(p.values.size(), 0.0);
    state.second_moment.emplace_back(p.values.size(), 0.0);
  }
  return state;
}

void adam_step(std::span<const ParamRef> params, std::span<const GradRef> grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.names.size())
    throw Error("adam: parameter, gradient and state block counts differ");
  for (std::size_t b = 0; b < params.size(); ++b) {
    const auto n = params[b].values.size();
    if (grads[b].values.size() != n || state.first_moment[b].size() != n ||
        state.second_moment[b].size() != n || state.names[b] != params[b].name)
      throw Error("adam: shape mismatch in block " + params[b].name);
    for (double g : grads[b].values) {
      if (!std::isfinite(g)) throw Error("adam: non-finite gradient in block " + params[b].name);
    }
  }

  const auto& cfg = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto p = params[b].values;
    auto g = grads[b].values;
    auto& m = state.first_moment[b];
    auto& v = state.second_moment[b];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

}  // namespace canids

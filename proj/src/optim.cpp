#include "cdstraj/optim.hpp"

#include <cmath>

namespace cdstraj {

void adam_step(ParamStore& params, AdamState& state, const AdamConfig& cfg) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double corr1 = 1.0 - std::pow(cfg.beta1, t);
  const double corr2 = 1.0 - std::pow(cfg.beta2, t);
  for (const auto& name : params.names()) {
    Tensor& w = params.value(name);
    const Tensor& g = params.grad(name);
    auto [mit, _m] = state.m.try_emplace(name, Tensor::zeros(w.shape()));
    auto [vit, _v] = state.v.try_emplace(name, Tensor::zeros(w.shape()));
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    for (std::size_t k = 0; k < w.numel(); ++k) {
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
      const double m_hat = m[k] / corr1;
      const double v_hat = v[k] / corr2;
      w[k] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

double grad_global_norm(const ParamStore& params) {
  double s = 0.0;
  for (const auto& [_, g] : params.grads())
    for (double v : g.data()) s += v * v;
  return std::sqrt(s);
}

double clip_grad_norm(ParamStore& params, double max_norm) {
  const double norm = grad_global_norm(params);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (const auto& name : params.names()) {
      for (auto& v : params.grad(name).storage()) v *= f;
    }
  }
  return norm;
}

}  // namespace cdstraj

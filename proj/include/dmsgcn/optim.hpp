#pragma once

#include <cmath>
#include <vector>

#include "dmsgcn/errors.hpp"
#include "dmsgcn/parameter.hpp"

namespace dmsgcn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment buffers in parameter-set order; allocated as zeros on the first step.
template <typename S>
struct AdamState {
  AdamConfig config;
  std::vector<std::vector<S>> first_moment;
  std::vector<std::vector<S>> second_moment;
  std::size_t step_count = 0;

  explicit AdamState(AdamConfig cfg = {}) : config(cfg) {}
};

/// One bias-corrected Adam update. Frozen entries (freeze_mask == 0) and their
/// moments are left untouched. Gradients are zeroed afterwards.
template <typename S>
void adam_step(ParameterSet<S>& params, AdamState<S>& state) {
  for (const auto& p : params)
    if (!p->value.has_grad()) throw ContractError("adam_step: parameter '" + p->name + "' has no gradient");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p->value.numel(), S(0));
      state.second_moment.emplace_back(p->value.numel(), S(0));
    }
  }
  if (state.first_moment.size() != params.size())
    throw ContractError("adam_step: optimizer state does not match the parameter set");
  for (std::size_t k = 0; k < params.size(); ++k)
    if (state.first_moment[k].size() != params[k]->value.numel())
      throw ContractError("adam_step: moment shape mismatch for '" + params[k]->name + "'");

  ++state.step_count;
  const AdamConfig& c = state.config;
  const double t = static_cast<double>(state.step_count);
  const S b1 = static_cast<S>(c.beta1);
  const S b2 = static_cast<S>(c.beta2);
  const S correction1 = static_cast<S>(1.0 - std::pow(c.beta1, t));
  const S correction2 = static_cast<S>(1.0 - std::pow(c.beta2, t));
  const S lr = static_cast<S>(c.lr);
  const S eps = static_cast<S>(c.eps);

  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter<S>& p = *params[k];
    auto value = p.value.data();
    auto grad = p.value.grad();
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      if (!p.trainable(i)) continue;
      const S g = grad[i];
      m[i] = b1 * m[i] + (S(1) - b1) * g;
      v[i] = b2 * v[i] + (S(1) - b2) * g * g;
      const S m_hat = m[i] / correction1;
      const S v_hat = v[i] / correction2;
      value[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
    p.value.zero_grad();
  }
}

/// Step decay: base_lr * 0.5^floor(epoch / period).
inline double lr_schedule(std::size_t epoch, double base_lr, std::size_t period = 10) {
  return std::ldexp(base_lr, -static_cast<int>(epoch / period));
}

}  // namespace dmsgcn

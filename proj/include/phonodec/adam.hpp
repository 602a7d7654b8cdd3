#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "phonodec/autodiff.hpp"
#include "phonodec/error.hpp"

namespace phonodec {

template <class T>
struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;
};

// One bias-corrected Adam update of every parameter from its accumulated grad.
template <class T>
void adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state) {
  if (state.first_moment.empty()) {
    for (const Parameter<T>* p : params) {
      state.first_moment.emplace_back(p->value.shape());
      state.second_moment.emplace_back(p->value.shape());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ValidationError("adam_step: optimizer state tracks " + std::to_string(state.first_moment.size()) +
                          " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter<T>& p = *params[i];
    if (p.grad.shape() != p.value.shape() || state.first_moment[i].shape() != p.value.shape()) {
      throw ValidationError("adam_step: shape mismatch for parameter " + p.name);
    }
    if (!p.grad.all_finite()) throw NumericError("adam_step: non-finite gradient for parameter " + p.name);
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto value = params[i]->value.values();
    auto grad = params[i]->grad.values();
    auto m = state.first_moment[i].values();
    auto v = state.second_moment[i].values();
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double g = grad[k];
      const double mk = state.beta1 * m[k] + (1.0 - state.beta1) * g;
      const double vk = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double m_hat = mk / correction1;
      const double v_hat = vk / correction2;
      value[k] = static_cast<T>(value[k] - state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon));
    }
  }
}

}  // namespace phonodec

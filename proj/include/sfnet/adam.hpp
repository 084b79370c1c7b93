#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "sfnet/tensor.hpp"

namespace sfnet {

struct AdamSettings {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Moment estimates for a fixed list of parameter tensors.
template <class S>
struct AdamState {
  AdamSettings settings;
  std::vector<Tensor<S>> first_moment;
  std::vector<Tensor<S>> second_moment;
  std::size_t step = 0;

  AdamState() = default;

  AdamState(const std::vector<Tensor<S>*>& params, AdamSettings s) : settings(s) {
    for (const Tensor<S>* p : params) {
      first_moment.emplace_back(p->shape());
      second_moment.emplace_back(p->shape());
    }
  }
};

// One bias-corrected Adam update applied in place.
template <class S>
void adam_step(const std::vector<Tensor<S>*>& params, const std::vector<Tensor<S>>& grads,
               AdamState<S>& state) {
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " params, " +
                         std::to_string(grads.size()) + " grads, " +
                         std::to_string(state.first_moment.size()) + " moment slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() ||
        params[i]->shape() != state.first_moment[i].shape()) {
      throw DimensionError("adam_step: parameter " + std::to_string(i) + " has shape " +
                           to_string(params[i]->shape()) + " but gradient " +
                           to_string(grads[i].shape()));
    }
  }
  ++state.step;
  const AdamSettings& s = state.settings;
  const double t = static_cast<double>(state.step);
  const S b1 = static_cast<S>(s.beta1);
  const S b2 = static_cast<S>(s.beta2);
  const S correction1 = static_cast<S>(1.0 - std::pow(s.beta1, t));
  const S correction2 = static_cast<S>(1.0 - std::pow(s.beta2, t));
  const S lr = static_cast<S>(s.learning_rate);
  const S eps = static_cast<S>(s.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<S>& p = *params[i];
    Tensor<S>& m = state.first_moment[i];
    Tensor<S>& v = state.second_moment[i];
    const Tensor<S>& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = b1 * m[j] + (S{1} - b1) * g[j];
      v[j] = b2 * v[j] + (S{1} - b2) * g[j] * g[j];
      const S m_hat = m[j] / correction1;
      const S v_hat = v[j] / correction2;
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

}  // namespace sfnet

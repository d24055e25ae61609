#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "pemb/autodiff.hpp"

namespace pemb {

enum class OptimizerKind { sgd, adam };

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  std::uint64_t step_count = 0;
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  std::map<std::string, Tensor<T>> first_moment;
  std::map<std::string, Tensor<T>> second_moment;
};

/// One update of `params` from their accumulated gradients. If any gradient
/// is non-finite nothing is modified and NonFiniteGradient is thrown.
template <class T>
void step(const std::vector<Parameter<T>*>& params, OptimizerState<T>& state, T learning_rate) {
  if (!(learning_rate > T(0))) throw std::invalid_argument("learning rate must be positive");
  for (const auto* p : params) {
    if (p->grad.shape() != p->value.shape())
      throw ShapeError("gradient shape mismatch for parameter " + p->name);
    if (!p->grad.all_finite()) throw NonFiniteGradient("non-finite gradient in parameter " + p->name);
  }
  ++state.step_count;
  if (state.kind == OptimizerKind::sgd) {
    for (auto* p : params)
      for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] -= learning_rate * p->grad[i];
    return;
  }
  const auto t = static_cast<T>(state.step_count);
  const T bc1 = T(1) - std::pow(state.beta1, t);
  const T bc2 = T(1) - std::pow(state.beta2, t);
  for (auto* p : params) {
    auto& m = state.first_moment[p->name];
    auto& v = state.second_moment[p->name];
    if (m.shape() != p->value.shape()) m = Tensor<T>(p->value.shape());
    if (v.shape() != p->value.shape()) v = Tensor<T>(p->value.shape());
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const T g = p->grad[i];
      m[i] = state.beta1 * m[i] + (T(1) - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (T(1) - state.beta2) * g * g;
      const T mhat = m[i] / bc1;
      const T vhat = v[i] / bc2;
      p->value[i] -= learning_rate * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace pemb

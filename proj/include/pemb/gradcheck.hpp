#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

#include "pemb/autodiff.hpp"

namespace pemb {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t checked_elements = 0;
};

/// Compares analytic parameter gradients of `loss_fn` against central finite
/// differences. `loss_fn` must rebuild its computation on the graph it is
/// given and return the scalar loss; it must be deterministic. The error of
/// a parameter tensor is ||analytic - numeric|| / max(||analytic|| + ||numeric||, floor);
/// the floor keeps finite-difference noise on exactly-zero gradients from
/// reading as a 100% error. The worst tensor is reported. Frozen parameters
/// are skipped.
template <class T>
GradCheckResult grad_check(ParameterSet<T>& params, const std::function<Var<T>(Graph<T>&)>& loss_fn,
                           T epsilon, double floor = 1e-6) {
  if (!(epsilon > T(0)) || epsilon > T(1e-2)) throw std::invalid_argument("epsilon must lie in (0, 1e-2]");
  GradCheckResult result;
  params.zero_grad();
  {
    Graph<T> g;
    g.backward(loss_fn(g));
  }
  auto eval = [&]() {
    Graph<T> g;
    return static_cast<double>(loss_fn(g).value().item());
  };
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    if (p.frozen) continue;
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const T saved = p.value[i];
      p.value[i] = saved + epsilon;
      const double up = eval();
      p.value[i] = saved - epsilon;
      const double down = eval();
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * static_cast<double>(epsilon));
      const double analytic = static_cast<double>(p.grad[i]);
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
      ++result.checked_elements;
    }
    const double denom = std::sqrt(a2) + std::sqrt(n2);
    const double rel = std::sqrt(diff2) / std::max(denom, floor);
    if (rel > result.max_relative_error || result.worst_parameter.empty()) {
      result.max_relative_error = rel;
      result.worst_parameter = p.name;
    }
  }
  return result;
}

}  // namespace pemb

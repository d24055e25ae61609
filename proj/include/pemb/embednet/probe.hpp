#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "pemb/rng.hpp"

namespace pemb::embednet {

struct ProbeOptions {
  double train_fraction = 0.7;
  std::size_t iterations = 500;
  double learning_rate = 0.5;
  double l2 = 1e-4;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  double train_accuracy = 0;
  double test_accuracy = 0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
};

/// Multinomial logistic regression on standardised features, fitted by
/// full-batch gradient descent on a seeded train split; reports held-out
/// accuracy. Labels are 0..classes-1.
inline ProbeResult linear_probe(const std::vector<std::vector<double>>& features,
                                const std::vector<std::size_t>& labels, const ProbeOptions& opt = {}) {
  const std::size_t n = features.size();
  if (n < 2 || labels.size() != n) throw std::invalid_argument("probe needs >= 2 labelled rows");
  const std::size_t d = features.front().size();
  for (const auto& f : features)
    if (f.size() != d) throw std::invalid_argument("probe rows differ in width");
  const std::size_t k = *std::max_element(labels.begin(), labels.end()) + 1;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(opt.seed, "probe-split"));
  shuffle(order.begin(), order.end(), rng);
  const auto n_train = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::lround(opt.train_fraction * static_cast<double>(n))), 1, n - 1);
  const std::vector<std::size_t> train(order.begin(), order.begin() + n_train);
  const std::vector<std::size_t> test(order.begin() + n_train, order.end());

  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (auto i : train)
    for (std::size_t j = 0; j < d; ++j) mu[j] += features[i][j];
  for (auto& v : mu) v /= static_cast<double>(n_train);
  for (auto i : train)
    for (std::size_t j = 0; j < d; ++j) sd[j] += (features[i][j] - mu[j]) * (features[i][j] - mu[j]);
  for (auto& v : sd) v = std::sqrt(v / static_cast<double>(n_train));
  auto x = [&](std::size_t i, std::size_t j) { return sd[j] > 1e-12 ? (features[i][j] - mu[j]) / sd[j] : 0.0; };

  // W is k x (d+1); the last column is the bias.
  std::vector<double> w(k * (d + 1), 0.0), grad(w.size()), p(k);
  auto logits = [&](std::size_t i, std::vector<double>& out) {
    for (std::size_t c = 0; c < k; ++c) {
      double z = w[c * (d + 1) + d];
      for (std::size_t j = 0; j < d; ++j) z += w[c * (d + 1) + j] * x(i, j);
      out[c] = z;
    }
  };
  for (std::size_t it = 0; it < opt.iterations; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (auto i : train) {
      logits(i, p);
      const double mx = *std::max_element(p.begin(), p.end());
      double z = 0;
      for (auto& v : p) z += (v = std::exp(v - mx));
      for (std::size_t c = 0; c < k; ++c) {
        const double e = p[c] / z - (labels[i] == c ? 1.0 : 0.0);
        for (std::size_t j = 0; j < d; ++j) grad[c * (d + 1) + j] += e * x(i, j);
        grad[c * (d + 1) + d] += e;
      }
    }
    for (std::size_t q = 0; q < w.size(); ++q) {
      const bool bias = q % (d + 1) == d;
      w[q] -= opt.learning_rate * (grad[q] / static_cast<double>(n_train) + (bias ? 0.0 : opt.l2 * w[q]));
    }
  }

  auto accuracy = [&](const std::vector<std::size_t>& rows) {
    std::size_t hit = 0;
    for (auto i : rows) {
      logits(i, p);
      hit += static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin()) == labels[i];
    }
    return static_cast<double>(hit) / static_cast<double>(rows.size());
  };
  return {accuracy(train), accuracy(test), train.size(), test.size()};
}

}  // namespace pemb::embednet

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "pemb/rng.hpp"

namespace pemb {

using Point = std::vector<double>;

inline double squared_distance(const Point& a, const Point& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    d += t * t;
  }
  return d;
}

/// Index of the nearest center; ties go to the lowest index.
inline std::size_t nearest_center(const std::vector<Point>& centers, const Point& p) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const double d = squared_distance(centers[c], p);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

struct KMeansOptions {
  std::size_t max_iterations = 50;
  double tolerance = 1e-6;  // stop once no center moves farther than this
  std::uint64_t seed = 0;
};

struct KMeansResult {
  std::vector<Point> centers;
  std::vector<std::size_t> assignment;
  std::vector<std::size_t> counts;
  std::size_t iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding. Returns fewer than k centers when
/// the data has fewer than k distinct points. Empty clusters keep their center.
inline KMeansResult kmeans(std::span<const Point> points, std::size_t k, const KMeansOptions& opt = {}) {
  if (points.empty()) throw std::invalid_argument("kmeans on an empty point set");
  if (k == 0) throw std::invalid_argument("kmeans needs k >= 1");
  const std::size_t dim = points.front().size();
  for (const auto& p : points)
    if (p.size() != dim) throw std::invalid_argument("kmeans points differ in dimension");

  Rng rng(opt.seed);
  KMeansResult r;
  r.centers.push_back(points[uniform_index(rng, points.size())]);
  std::vector<double> d2(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) d2[i] = squared_distance(points[i], r.centers[0]);
  while (r.centers.size() < k) {
    double total = 0.0;
    for (double v : d2) total += v;
    if (total <= 0.0) break;
    const double target = uniform01(rng) * total;
    double acc = 0.0;
    std::size_t pick = points.size() - 1;
    for (std::size_t i = 0; i < points.size(); ++i) {
      acc += d2[i];
      if (d2[i] > 0.0 && acc > target) {
        pick = i;
        break;
      }
    }
    while (d2[pick] <= 0.0) --pick;  // float slack at the tail
    r.centers.push_back(points[pick]);
    for (std::size_t i = 0; i < points.size(); ++i)
      d2[i] = std::min(d2[i], squared_distance(points[i], r.centers.back()));
  }

  const std::size_t kk = r.centers.size();
  r.assignment.assign(points.size(), 0);
  for (r.iterations = 0; r.iterations < opt.max_iterations;) {
    for (std::size_t i = 0; i < points.size(); ++i) r.assignment[i] = nearest_center(r.centers, points[i]);
    std::vector<Point> sums(kk, Point(dim, 0.0));
    std::vector<std::size_t> counts(kk, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      auto& s = sums[r.assignment[i]];
      for (std::size_t d = 0; d < dim; ++d) s[d] += points[i][d];
      ++counts[r.assignment[i]];
    }
    double max_move = 0.0;
    for (std::size_t c = 0; c < kk; ++c) {
      if (counts[c] == 0) continue;
      for (auto& v : sums[c]) v /= static_cast<double>(counts[c]);
      max_move = std::max(max_move, std::sqrt(squared_distance(sums[c], r.centers[c])));
      r.centers[c] = std::move(sums[c]);
    }
    ++r.iterations;
    if (max_move <= opt.tolerance) break;
  }
  for (std::size_t i = 0; i < points.size(); ++i) r.assignment[i] = nearest_center(r.centers, points[i]);
  r.counts.assign(kk, 0);
  for (auto a : r.assignment) ++r.counts[a];
  return r;
}

}  // namespace pemb

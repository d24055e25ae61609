#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "pemb/kmeans.hpp"
#include "pemb/synth/image.hpp"

namespace pemb::synth {

class EmptyMaskError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 3x3 erosion; out-of-image neighbours count as foreground.
inline Mask erode(const Mask& m) {
  Mask out(m.height, m.width);
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x) {
      std::uint8_t v = 1;
      for (int dy = -1; dy <= 1 && v; ++dy)
        for (int dx = -1; dx <= 1 && v; ++dx) {
          const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
          if (yy < 0 || xx < 0 || yy >= static_cast<long>(m.height) || xx >= static_cast<long>(m.width)) continue;
          v = m.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
        }
      out.at(y, x) = v;
    }
  return out;
}

// 3x3 dilation; out-of-image neighbours count as background.
inline Mask dilate(const Mask& m) {
  Mask out(m.height, m.width);
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < m.width; ++x) {
      std::uint8_t v = 0;
      for (int dy = -1; dy <= 1 && !v; ++dy)
        for (int dx = -1; dx <= 1 && !v; ++dx) {
          const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
          if (yy < 0 || xx < 0 || yy >= static_cast<long>(m.height) || xx >= static_cast<long>(m.width)) continue;
          v = m.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
        }
      out.at(y, x) = v;
    }
  return out;
}

inline Mask open(const Mask& m) { return dilate(erode(m)); }
inline Mask close(const Mask& m) { return erode(dilate(m)); }

/// Pixels whose darkest channel lies more than `threshold` below white.
inline Mask threshold_foreground(const Image& img, double threshold = 0.12) {
  Mask m(img.height, img.width);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double lo = std::min({img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)});
      m.at(y, x) = lo < 1.0 - threshold ? 1 : 0;
    }
  return m;
}

/// Threshold against the near-white background, then opening and closing
/// with a 3x3 structuring element.
inline Mask extract_mask(const Image& img, double threshold = 0.12) {
  Mask m = close(open(threshold_foreground(img, threshold)));
  if (m.count() == 0) throw EmptyMaskError("image has no foreground");
  return m;
}

struct ColorTheme {
  std::vector<Rgb> colors;     // ranked by cluster mass
  std::vector<double> weights; // nonnegative, descending, sum to 1

  std::size_t size() const { return colors.size(); }

  /// k x (r, g, b, weight), the regression label layout.
  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(colors.size() * 4);
    for (std::size_t i = 0; i < colors.size(); ++i) {
      out.insert(out.end(), colors[i].begin(), colors[i].end());
      out.push_back(weights[i]);
    }
    return out;
  }
};

/// Masked k-means palette. Pixels are sorted before clustering so the result
/// does not depend on pixel order. Centers closer than `merge_distance` are one
/// color, so pixel noise never splits a color; fewer distinct colors than k
/// pads with the last center at weight 0.
inline ColorTheme extract_color_themes(const Image& img, const Mask& mask, std::size_t k,
                                       std::uint64_t seed = 0, double merge_distance = 0.04) {
  if (k == 0) throw std::invalid_argument("theme size must be >= 1");
  if (mask.height != img.height || mask.width != img.width)
    throw std::invalid_argument("mask and image sizes differ");
  std::vector<Point> pts;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      if (mask.at(y, x)) pts.push_back({img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)});
  if (pts.empty()) throw EmptyMaskError("color themes need a nonempty mask");
  std::sort(pts.begin(), pts.end());

  KMeansOptions opt;
  opt.seed = seed;
  auto km = kmeans(std::span<const Point>(pts), k, opt);

  // Greedy closest-pair merging; merged centers are count-weighted means.
  for (;;) {
    std::size_t a = 0, b = 0;
    double best = merge_distance * merge_distance;
    for (std::size_t i = 0; i < km.centers.size(); ++i)
      for (std::size_t j = i + 1; j < km.centers.size(); ++j) {
        double d2 = 0;
        for (std::size_t c = 0; c < 3; ++c) d2 += (km.centers[i][c] - km.centers[j][c]) * (km.centers[i][c] - km.centers[j][c]);
        if (d2 < best) best = d2, a = i, b = j;
      }
    if (a == b) break;
    const double na = static_cast<double>(km.counts[a]), nb = static_cast<double>(km.counts[b]);
    for (std::size_t c = 0; c < 3; ++c) km.centers[a][c] = (na * km.centers[a][c] + nb * km.centers[b][c]) / (na + nb);
    km.counts[a] += km.counts[b];
    km.centers.erase(km.centers.begin() + static_cast<std::ptrdiff_t>(b));
    km.counts.erase(km.counts.begin() + static_cast<std::ptrdiff_t>(b));
  }

  std::vector<std::size_t> order(km.centers.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (km.counts[a] != km.counts[b]) return km.counts[a] > km.counts[b];
    return km.centers[a] < km.centers[b];
  });

  ColorTheme theme;
  const double total = static_cast<double>(pts.size());
  for (auto c : order) {
    theme.colors.push_back({km.centers[c][0], km.centers[c][1], km.centers[c][2]});
    theme.weights.push_back(static_cast<double>(km.counts[c]) / total);
  }
  while (theme.colors.size() < k) {
    theme.colors.push_back(theme.colors.back());
    theme.weights.push_back(0.0);
  }
  return theme;
}

}  // namespace pemb::synth

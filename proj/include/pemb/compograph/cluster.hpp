#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "pemb/kmeans.hpp"
#include "pemb/rng.hpp"

namespace pemb::compograph {

/// One item's partitioned embedding. `rgb` is an optional dominant color used
/// to label color clusters for attribute-constrained queries.
struct ItemEmbedding {
  std::string id;
  std::string category;
  std::vector<double> r1, r2, r3;
  std::optional<std::array<double, 3>> rgb;
};

enum class AttributeKind : std::uint8_t { color, shape, remaining };
inline constexpr std::array<AttributeKind, 3> kAttributeKinds = {AttributeKind::color, AttributeKind::shape,
                                                                 AttributeKind::remaining};

inline const char* attribute_kind_name(AttributeKind a) {
  switch (a) {
    case AttributeKind::color: return "color";
    case AttributeKind::shape: return "shape";
    case AttributeKind::remaining: return "remaining";
  }
  return "?";
}

inline AttributeKind parse_attribute_kind(const std::string& s) {
  for (auto a : kAttributeKinds)
    if (s == attribute_kind_name(a)) return a;
  throw std::invalid_argument("unknown attribute '" + s + "' (color, shape, remaining)");
}

inline constexpr std::size_t kNoVertex = std::numeric_limits<std::size_t>::max();

struct RemainingCluster {
  Point center;
  std::size_t vertex = kNoVertex;
};

struct ShapeCluster {
  Point center;
  std::vector<RemainingCluster> remaining;
};

struct ColorCluster {
  Point center;
  std::optional<std::array<double, 3>> rgb;  // member mean of ItemEmbedding::rgb
  std::vector<ShapeCluster> shapes;
};

struct CategoryTree {
  std::string category;
  std::vector<ColorCluster> colors;
};

/// Attribute clusters of a vertex. `shape` and `remaining` are flat indices
/// within the category (depth-first order), so each identifies one tree node.
struct Vertex {
  std::string category;
  std::size_t color = 0;
  std::size_t shape = 0;
  std::size_t remaining = 0;

  std::size_t cluster(AttributeKind a) const {
    return a == AttributeKind::color ? color : a == AttributeKind::shape ? shape : remaining;
  }
  friend bool operator==(const Vertex&, const Vertex&) = default;
};

struct ClusterConfig {
  std::size_t n_p = 16;  // color clusters per category
  std::uint64_t seed = 1;
};

/// Leaves are the graph vertices, numbered depth-first over categories in
/// name order. Invariant: vertices[v] describes leaf v.
struct ClusterTree {
  std::vector<CategoryTree> categories;
  std::vector<Vertex> vertices;
  std::map<std::string, std::size_t> item_vertex;  // leaf of every clustered item
  std::vector<std::string> warnings;

  const CategoryTree* find(const std::string& category) const {
    for (const auto& c : categories)
      if (c.category == category) return &c;
    return nullptr;
  }
  std::vector<std::size_t> category_vertices(const std::string& category) const {
    std::vector<std::size_t> out;
    for (std::size_t v = 0; v < vertices.size(); ++v)
      if (vertices[v].category == category) out.push_back(v);
    return out;
  }
};

/// max(1, round(sqrt(members))).
inline std::size_t sqrt_rule(std::size_t members) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(members)))));
}

namespace detail {

/// k-means over `points[idx]`; returns nonempty centers and, per center, the
/// member indices (into `points`) in ascending order.
inline std::pair<std::vector<Point>, std::vector<std::vector<std::size_t>>> split(
    const std::vector<Point>& points, const std::vector<std::size_t>& idx, std::size_t k, std::uint64_t seed) {
  std::vector<Point> sub;
  sub.reserve(idx.size());
  for (auto i : idx) sub.push_back(points[i]);
  KMeansOptions opt;
  opt.seed = seed;
  const auto km = kmeans(std::span<const Point>(sub), std::min(k, sub.size()), opt);
  std::vector<Point> centers;
  std::vector<std::vector<std::size_t>> members;
  std::vector<std::size_t> remap(km.centers.size(), kNoVertex);
  for (std::size_t c = 0; c < km.centers.size(); ++c) {
    if (km.counts[c] == 0) continue;
    remap[c] = centers.size();
    centers.push_back(km.centers[c]);
    members.emplace_back();
  }
  for (std::size_t j = 0; j < idx.size(); ++j) members[remap[km.assignment[j]]].push_back(idx[j]);
  return {std::move(centers), std::move(members)};
}

}  // namespace detail

/// Level 1: k-means on r1 with min(N_p, items) centers. Level 2: k-means on
/// r2 inside each color cluster, k = sqrt_rule(members). Level 3: likewise on
/// r3 inside each shape cluster. Empty categories are skipped with a warning.
inline ClusterTree hierarchical_cluster(const std::map<std::string, std::vector<ItemEmbedding>>& by_category,
                                        const ClusterConfig& cfg) {
  if (cfg.n_p == 0) throw std::invalid_argument("N_p must be positive");
  ClusterTree tree;
  std::size_t cat_index = 0;
  for (const auto& [category, items] : by_category) {
    const std::size_t ci = cat_index++;
    if (items.empty()) {
      tree.warnings.push_back("category '" + category + "' has no items; omitted");
      continue;
    }
    std::vector<Point> p1, p2, p3;
    for (const auto& it : items) {
      if (it.r1.empty() || it.r2.empty() || it.r3.empty())
        throw std::invalid_argument("item " + it.id + " has an empty embedding part");
      p1.push_back(it.r1);
      p2.push_back(it.r2);
      p3.push_back(it.r3);
    }
    std::vector<std::size_t> all(items.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

    CategoryTree ct;
    ct.category = category;
    std::size_t shape_flat = 0, leaf_flat = 0;
    auto [colors, color_members] = detail::split(p1, all, cfg.n_p, derive_seed(cfg.seed, "cluster-color", {ci}));
    for (std::size_t i = 0; i < colors.size(); ++i) {
      ColorCluster cc;
      cc.center = colors[i];
      std::array<double, 3> rgb{};
      std::size_t labelled = 0;
      for (auto m : color_members[i])
        if (items[m].rgb) {
          for (std::size_t c = 0; c < 3; ++c) rgb[c] += (*items[m].rgb)[c];
          ++labelled;
        }
      if (labelled) {
        for (auto& v : rgb) v /= static_cast<double>(labelled);
        cc.rgb = rgb;
      }
      auto [shapes, shape_members] = detail::split(p2, color_members[i], sqrt_rule(color_members[i].size()),
                                                   derive_seed(cfg.seed, "cluster-shape", {ci, i}));
      for (std::size_t j = 0; j < shapes.size(); ++j, ++shape_flat) {
        ShapeCluster sc;
        sc.center = shapes[j];
        auto [rest, rest_members] = detail::split(p3, shape_members[j], sqrt_rule(shape_members[j].size()),
                                                  derive_seed(cfg.seed, "cluster-remaining", {ci, i, j}));
        for (std::size_t q = 0; q < rest.size(); ++q, ++leaf_flat) {
          const std::size_t v = tree.vertices.size();
          sc.remaining.push_back({rest[q], v});
          tree.vertices.push_back({category, i, shape_flat, leaf_flat});
          for (auto m : rest_members[q]) tree.item_vertex[items[m].id] = v;
        }
        cc.shapes.push_back(std::move(sc));
      }
      ct.colors.push_back(std::move(cc));
    }
    tree.categories.push_back(std::move(ct));
  }
  return tree;
}

/// Nearest color center, then nearest shape center inside it, then nearest
/// remaining center; Euclidean, ties to the lowest index.
inline std::size_t assign_item(const ClusterTree& tree, const std::string& category, const Point& r1,
                               const Point& r2, const Point& r3) {
  const auto* ct = tree.find(category);
  if (!ct) throw std::invalid_argument("category '" + category + "' is not in the cluster tree");
  auto check = [](const Point& p, const Point& center, const char* part) {
    if (p.size() != center.size())
      throw std::invalid_argument(std::string("embedding part ") + part + " has width " + std::to_string(p.size()) +
                                  ", tree expects " + std::to_string(center.size()));
  };
  check(r1, ct->colors.front().center, "r1");
  std::vector<Point> centers;
  for (const auto& c : ct->colors) centers.push_back(c.center);
  const auto& color = ct->colors[nearest_center(centers, r1)];
  check(r2, color.shapes.front().center, "r2");
  centers.clear();
  for (const auto& s : color.shapes) centers.push_back(s.center);
  const auto& shape = color.shapes[nearest_center(centers, r2)];
  check(r3, shape.remaining.front().center, "r3");
  centers.clear();
  for (const auto& r : shape.remaining) centers.push_back(r.center);
  return shape.remaining[nearest_center(centers, r3)].vertex;
}

inline std::size_t assign_item(const ClusterTree& tree, const ItemEmbedding& e) {
  return assign_item(tree, e.category, e.r1, e.r2, e.r3);
}

/// Color cluster of `category` whose RGB label is nearest to `rgb`.
inline std::size_t nearest_color_cluster(const ClusterTree& tree, const std::string& category,
                                         const std::array<double, 3>& rgb) {
  const auto* ct = tree.find(category);
  if (!ct) throw std::invalid_argument("category '" + category + "' is not in the cluster tree");
  std::size_t best = kNoVertex;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < ct->colors.size(); ++i) {
    if (!ct->colors[i].rgb) continue;
    double d = 0;
    for (std::size_t c = 0; c < 3; ++c) d += ((*ct->colors[i].rgb)[c] - rgb[c]) * ((*ct->colors[i].rgb)[c] - rgb[c]);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  if (best == kNoVertex) throw std::invalid_argument("category '" + category + "' has no color labels");
  return best;
}

}  // namespace pemb::compograph

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "pemb/compograph/graph.hpp"

namespace pemb::compograph {

/// Restricts a category's candidates to one attribute cluster.
struct Constraint {
  std::string category;
  AttributeKind attribute = AttributeKind::color;
  std::size_t cluster = 0;
};

struct Query {
  std::optional<std::size_t> seed;      // seed vertex
  std::vector<std::string> categories;  // to fill; empty = every category except the seed's
  std::vector<Constraint> constraints;
};

struct RecommendOptions {
  std::size_t n_t = 5;  // candidates per category
  std::size_t top_m = 10;
  double alpha_s = 2.0;
  double epsilon = 1.0;
  std::size_t max_combinations = 10'000'000;
};

struct Recommendation {
  std::vector<ScoredOutfit> outfits;
  bool seed_isolated = false;  // the seed vertex has no edges; `outfits` is empty
};

/// `x` with its mantissa rounded to 40 bits, so sums of equal terms taken in
/// different orders compare equal.
inline double rank_key(double x) {
  if (x == 0 || !std::isfinite(x)) return x;
  int e = 0;
  const double m = std::frexp(x, &e);
  return std::ldexp(std::nearbyint(std::ldexp(m, 40)), e - 40);
}

/// Descending S, then descending S1, then ascending vertex ids; scores compare
/// by rank_key.
inline bool ranks_before(const ScoredOutfit& a, const ScoredOutfit& b) {
  const double sa = rank_key(a.S), sb = rank_key(b.S);
  if (sa != sb) return sa > sb;
  const double ta = rank_key(a.S1), tb = rank_key(b.S1);
  if (ta != tb) return ta > tb;
  return a.vertices < b.vertices;
}

/// Candidate vertices of `category` in rank order, before truncation to N_t.
/// With a seed the key is the edge weight to the seed (0 without an edge),
/// otherwise the vertex's total incident weight; ties go to the lower id.
inline std::vector<std::size_t> ranked_candidates(const CompositionGraph& g, const std::string& category,
                                                  std::optional<std::size_t> seed,
                                                  const std::vector<Constraint>& constraints) {
  std::vector<double> key(g.vertices.size(), 0.0);
  for (const auto& [e, w] : g.weights) {
    if (!seed) {
      key[e.first] += w;
      key[e.second] += w;
    } else if (e.first == *seed) {
      key[e.second] = w;
    } else if (e.second == *seed) {
      key[e.first] = w;
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t v = 0; v < g.vertices.size(); ++v) {
    if (g.vertices[v].category != category) continue;
    bool ok = true;
    for (const auto& c : constraints)
      if (c.category == category && g.vertices[v].cluster(c.attribute) != c.cluster) ok = false;
    if (ok) out.push_back(v);
  }
  std::stable_sort(out.begin(), out.end(), [&](std::size_t a, std::size_t b) { return rank_key(key[a]) > rank_key(key[b]); });
  return out;
}

/// Exhaustive scoring of every one-vertex-per-category combination of the top
/// N_t candidates; returns the best top_m.
inline Recommendation recommend(const CompositionGraph& g, const AttributeMatchingMap& m, const Query& q,
                                const RecommendOptions& opt) {
  if (opt.n_t == 0 || opt.top_m == 0) throw std::invalid_argument("N_t and top_m must be positive");
  std::set<std::string> known;
  for (const auto& v : g.vertices) known.insert(v.category);
  std::string seed_category;
  if (q.seed) {
    if (!g.has_vertex(*q.seed)) throw std::out_of_range("seed vertex " + std::to_string(*q.seed) + " is not in the graph");
    seed_category = g.vertices[*q.seed].category;
  }
  for (const auto& c : q.constraints) {
    if (!known.count(c.category)) throw std::invalid_argument("constraint names unknown category '" + c.category + "'");
    if (c.category == seed_category) throw std::invalid_argument("constraint on the seed item's own category");
    bool exists = false;
    for (const auto& v : g.vertices) exists |= v.category == c.category && v.cluster(c.attribute) == c.cluster;
    if (!exists)
      throw std::invalid_argument("no " + std::string(attribute_kind_name(c.attribute)) + " cluster " +
                                  std::to_string(c.cluster) + " in category '" + c.category + "'");
  }
  std::vector<std::string> cats = q.categories;
  if (cats.empty())
    for (const auto& c : known)
      if (c != seed_category) cats.push_back(c);
  for (const auto& c : cats) {
    if (!known.count(c)) throw std::invalid_argument("unknown category '" + c + "'");
    if (c == seed_category) throw std::invalid_argument("category '" + c + "' is the seed item's own");
  }
  if (cats.empty() || (!q.seed && cats.size() < 2)) throw std::invalid_argument("query leaves no pair to score");

  Recommendation rec;
  if (q.seed && g.neighbors(*q.seed).empty()) {
    rec.seed_isolated = true;
    return rec;
  }

  std::vector<std::vector<std::size_t>> cand;
  std::size_t combos = 1;
  for (const auto& c : cats) {
    auto r = ranked_candidates(g, c, q.seed, q.constraints);
    if (r.size() > opt.n_t) r.resize(opt.n_t);
    combos *= r.size();
    if (combos > opt.max_combinations) throw std::invalid_argument("too many combinations; lower N_t");
    cand.push_back(std::move(r));
  }

  std::vector<ScoredOutfit> all;
  all.reserve(combos);
  std::vector<std::size_t> digit(cand.size(), 0);
  for (std::size_t n = 0; n < combos; ++n) {
    std::vector<std::size_t> outfit;
    if (q.seed) outfit.push_back(*q.seed);
    for (std::size_t k = 0; k < cand.size(); ++k) outfit.push_back(cand[k][digit[k]]);
    std::sort(outfit.begin(), outfit.end());
    all.push_back(composition_score(g, m, outfit, opt.alpha_s, opt.epsilon));
    for (std::size_t k = cand.size(); k-- > 0;) {
      if (++digit[k] < cand[k].size()) break;
      digit[k] = 0;
    }
  }
  const std::size_t keep = std::min(opt.top_m, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), ranks_before);
  all.resize(keep);
  rec.outfits = std::move(all);
  return rec;
}

}  // namespace pemb::compograph

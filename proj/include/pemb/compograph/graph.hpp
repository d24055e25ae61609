#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "pemb/compograph/cluster.hpp"

namespace pemb::compograph {

using Edge = std::pair<std::size_t, std::size_t>;  // first < second

inline Edge make_edge(std::size_t a, std::size_t b) { return a < b ? Edge{a, b} : Edge{b, a}; }

/// Undirected weighted graph over cluster leaves; edges only join vertices of
/// different categories and every stored weight is positive.
struct CompositionGraph {
  std::vector<Vertex> vertices;
  std::map<Edge, double> weights;

  double weight(std::size_t a, std::size_t b) const {
    auto it = weights.find(make_edge(a, b));
    return it == weights.end() ? 0.0 : it->second;
  }
  bool has_vertex(std::size_t v) const { return v < vertices.size(); }

  /// (neighbor, weight) pairs of `v` in ascending neighbor order.
  std::vector<std::pair<std::size_t, double>> neighbors(std::size_t v) const {
    std::vector<std::pair<std::size_t, double>> out;
    for (const auto& [e, w] : weights) {
      if (e.first == v) out.emplace_back(e.second, w);
      if (e.second == v) out.emplace_back(e.first, w);
    }
    std::sort(out.begin(), out.end());
    return out;
  }
  double max_weight() const {
    double m = 0;
    for (const auto& [e, w] : weights) m = std::max(m, w);
    return m;
  }
  double total_weight() const {
    double s = 0;
    for (const auto& [e, w] : weights) s += w;
    return s;
  }
};

inline CompositionGraph make_graph(const ClusterTree& tree) { return {tree.vertices, {}}; }

/// One side of an attribute-map entry: (category, attribute cluster).
using ClusterRef = std::pair<std::string, std::size_t>;
using ClusterPair = std::pair<ClusterRef, ClusterRef>;  // first < second

inline ClusterPair make_cluster_pair(ClusterRef a, ClusterRef b) {
  return a < b ? ClusterPair{std::move(a), std::move(b)} : ClusterPair{std::move(b), std::move(a)};
}

/// Per attribute kind, co-occurrence scores between attribute clusters of
/// different categories. Pairs are stored once, so score(a,b) = score(b,a).
struct AttributeMatchingMap {
  std::array<std::map<ClusterPair, double>, 3> tables;

  double score(AttributeKind a, const ClusterRef& x, const ClusterRef& y) const {
    const auto& t = tables[static_cast<std::size_t>(a)];
    auto it = t.find(make_cluster_pair(x, y));
    return it == t.end() ? 0.0 : it->second;
  }
  double score(AttributeKind a, const Vertex& x, const Vertex& y) const {
    return score(a, ClusterRef{x.category, x.cluster(a)}, ClusterRef{y.category, y.cluster(a)});
  }
};

/// Cross-category vertex pairs of an outfit, each once, in index order.
inline std::vector<Edge> outfit_pairs(const CompositionGraph& g, const std::vector<std::size_t>& outfit) {
  std::vector<Edge> out;
  for (std::size_t i = 0; i < outfit.size(); ++i)
    for (std::size_t j = i + 1; j < outfit.size(); ++j) {
      const auto a = outfit[i], b = outfit[j];
      if (!g.has_vertex(a) || !g.has_vertex(b)) continue;
      if (g.vertices[a].category == g.vertices[b].category) continue;
      out.push_back(make_edge(a, b));
    }
  return out;
}

/// Every cross-category pair: a new edge starts at 1, an existing one grows by
/// alpha_w; the three attribute tables grow by 1. Returns the pairs touched.
inline std::size_t ingest_outfit(CompositionGraph& g, AttributeMatchingMap& m, const std::vector<std::size_t>& outfit,
                                 double alpha_w) {
  if (!(alpha_w > 0)) throw std::invalid_argument("alpha_w must be positive");
  for (auto v : outfit)
    if (!g.has_vertex(v)) throw std::out_of_range("vertex " + std::to_string(v) + " is not in the graph");
  const auto pairs = outfit_pairs(g, outfit);
  for (const auto& e : pairs) {
    auto [it, fresh] = g.weights.try_emplace(e, 1.0);
    if (!fresh) it->second += alpha_w;
    const auto& va = g.vertices[e.first];
    const auto& vb = g.vertices[e.second];
    for (auto a : kAttributeKinds)
      m.tables[static_cast<std::size_t>(a)][make_cluster_pair({va.category, va.cluster(a)}, {vb.category, vb.cluster(a)})] += 1.0;
  }
  return pairs.size();
}

/// An outfit resolved to vertices, with its optional popularity label.
struct VertexOutfit {
  std::string id;
  std::vector<std::size_t> vertices;
  std::optional<double> like_count;
};

struct IngestOptions {
  double alpha_w = 1.0;
  // alpha_w of each outfit = like_count / max like_count, in (0,1]
  bool score_weighted = false;
};

/// Ingests outfits in order; returns the total pairs touched.
inline std::size_t ingest_corpus(CompositionGraph& g, AttributeMatchingMap& m, const std::vector<VertexOutfit>& outfits,
                                 const IngestOptions& opt) {
  double max_like = 0;
  if (opt.score_weighted) {
    for (const auto& o : outfits) {
      if (!o.like_count) throw std::invalid_argument("score-weighted ingestion needs like counts (" + o.id + ")");
      max_like = std::max(max_like, *o.like_count);
    }
    if (!(max_like > 0)) throw std::invalid_argument("score-weighted ingestion needs a positive like count");
  }
  std::size_t touched = 0;
  for (const auto& o : outfits) {
    double a = opt.alpha_w;
    if (opt.score_weighted) {
      a = *o.like_count / max_like;
      if (!(a > 0)) continue;  // unliked outfits carry no evidence
    }
    touched += ingest_outfit(g, m, o.vertices, a);
  }
  return touched;
}

struct ScoredOutfit {
  std::vector<std::size_t> vertices;
  double S = 0, S1 = 0, S2 = 0;
  std::array<double, 3> attribute{};  // S2 summands: color, shape, remaining
  double alpha_s = 0;
  std::size_t pairs = 0;              // K
};

/// sum / (K (population sd + eps)); an all-zero vector scores 0 for any eps.
inline double dispersion_normalised_mean(const std::vector<double>& v, double eps) {
  const double k = static_cast<double>(v.size());
  double sum = 0;
  for (double x : v) sum += x;
  if (sum == 0) return 0.0;
  const double mean = sum / k;
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  const double denom = k * (std::sqrt(ss / k) + eps);
  if (!(denom > 0)) throw std::domain_error("score denominator is zero (sd = 0 and epsilon = 0)");
  return sum / denom;
}

/// S = S1 + alpha_s S2 over the outfit's cross-category pairs inside the
/// graph; a pair without an edge contributes weight 0.
inline ScoredOutfit composition_score(const CompositionGraph& g, const AttributeMatchingMap& m,
                                      const std::vector<std::size_t>& outfit, double alpha_s, double eps = 1.0) {
  if (eps < 0) throw std::invalid_argument("epsilon must be nonnegative");
  const auto pairs = outfit_pairs(g, outfit);
  if (pairs.empty()) throw std::invalid_argument("outfit has no scorable cross-category pair");
  ScoredOutfit s;
  s.vertices = outfit;
  s.alpha_s = alpha_s;
  s.pairs = pairs.size();
  std::vector<double> w;
  for (const auto& e : pairs) w.push_back(g.weight(e.first, e.second));
  s.S1 = dispersion_normalised_mean(w, eps);
  for (auto a : kAttributeKinds) {
    std::vector<double> sc;
    for (const auto& e : pairs) sc.push_back(m.score(a, g.vertices[e.first], g.vertices[e.second]));
    s.attribute[static_cast<std::size_t>(a)] = dispersion_normalised_mean(sc, eps);
    s.S2 += s.attribute[static_cast<std::size_t>(a)];
  }
  s.S = s.S1 + alpha_s * s.S2;
  return s;
}

/// Every weight divided by sqrt(max weight).
inline void decay_weights(CompositionGraph& g) {
  if (g.weights.empty()) throw std::invalid_argument("trend update on an empty graph");
  const double root = std::sqrt(g.max_weight());
  for (auto& [e, w] : g.weights) w /= root;
}

/// Decay, then ingest the newer outfits with increment alpha_w > 1.
inline std::size_t trend_update(CompositionGraph& g, AttributeMatchingMap& m, const std::vector<VertexOutfit>& newer,
                                double alpha_w) {
  if (!(alpha_w > 1)) throw std::invalid_argument("trend update needs alpha_w > 1");
  decay_weights(g);
  return ingest_corpus(g, m, newer, {alpha_w, false});
}

}  // namespace pemb::compograph

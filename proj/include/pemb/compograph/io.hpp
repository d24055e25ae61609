#pragma once

#include <fstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "pemb/compograph/graph.hpp"

namespace pemb::compograph {

inline constexpr int kGraphSchema = 1;

class GraphFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline nlohmann::json tree_to_json(const ClusterTree& t) {
  nlohmann::json cats = nlohmann::json::array();
  for (const auto& c : t.categories) {
    nlohmann::json colors = nlohmann::json::array();
    for (const auto& cc : c.colors) {
      nlohmann::json shapes = nlohmann::json::array();
      for (const auto& sc : cc.shapes) {
        nlohmann::json rest = nlohmann::json::array();
        for (const auto& r : sc.remaining) rest.push_back({{"center", r.center}, {"vertex", r.vertex}});
        shapes.push_back({{"center", sc.center}, {"remaining", rest}});
      }
      nlohmann::json j{{"center", cc.center}, {"shapes", shapes}};
      j["rgb"] = cc.rgb ? nlohmann::json(*cc.rgb) : nlohmann::json(nullptr);
      colors.push_back(std::move(j));
    }
    cats.push_back({{"category", c.category}, {"colors", colors}});
  }
  return {{"categories", cats}, {"item_vertex", t.item_vertex}, {"warnings", t.warnings}};
}

/// Rebuilds the vertex table from the tree, so the two cannot disagree.
inline ClusterTree tree_from_json(const nlohmann::json& j) {
  ClusterTree t;
  for (const auto& jc : j.at("categories")) {
    CategoryTree c;
    c.category = jc.at("category").get<std::string>();
    std::size_t shape_flat = 0, leaf_flat = 0;
    for (const auto& jcc : jc.at("colors")) {
      ColorCluster cc;
      cc.center = jcc.at("center").get<Point>();
      if (jcc.contains("rgb") && !jcc.at("rgb").is_null()) cc.rgb = jcc.at("rgb").get<std::array<double, 3>>();
      for (const auto& jsc : jcc.at("shapes")) {
        ShapeCluster sc;
        sc.center = jsc.at("center").get<Point>();
        for (const auto& jr : jsc.at("remaining")) {
          const auto v = jr.at("vertex").get<std::size_t>();
          if (v != t.vertices.size()) throw GraphFormatError("cluster tree vertices are not numbered depth-first");
          sc.remaining.push_back({jr.at("center").get<Point>(), v});
          t.vertices.push_back({c.category, c.colors.size(), shape_flat, leaf_flat++});
        }
        if (sc.remaining.empty()) throw GraphFormatError("shape cluster without leaves");
        ++shape_flat;
        cc.shapes.push_back(std::move(sc));
      }
      if (cc.shapes.empty()) throw GraphFormatError("color cluster without shape clusters");
      c.colors.push_back(std::move(cc));
    }
    if (c.colors.empty()) throw GraphFormatError("category '" + c.category + "' without clusters");
    t.categories.push_back(std::move(c));
  }
  if (j.contains("item_vertex")) t.item_vertex = j.at("item_vertex").get<std::map<std::string, std::size_t>>();
  if (j.contains("warnings")) t.warnings = j.at("warnings").get<std::vector<std::string>>();
  return t;
}

inline nlohmann::json map_to_json(const AttributeMatchingMap& m) {
  nlohmann::json out = nlohmann::json::object();
  for (auto a : kAttributeKinds) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& [k, s] : m.tables[static_cast<std::size_t>(a)])
      rows.push_back({k.first.first, k.first.second, k.second.first, k.second.second, s});
    out[attribute_kind_name(a)] = std::move(rows);
  }
  return out;
}

inline AttributeMatchingMap map_from_json(const nlohmann::json& j) {
  AttributeMatchingMap m;
  for (auto a : kAttributeKinds)
    for (const auto& r : j.at(attribute_kind_name(a))) {
      const double s = r.at(4).get<double>();
      if (s < 0) throw GraphFormatError("negative attribute score");
      m.tables[static_cast<std::size_t>(a)][make_cluster_pair({r.at(0).get<std::string>(), r.at(1).get<std::size_t>()},
                                                              {r.at(2).get<std::string>(), r.at(3).get<std::size_t>()})] = s;
    }
  return m;
}

/// Tree, vertices, edges and attribute tables. Object keys are sorted and
/// arrays follow vertex/edge order, so equal graphs serialise identically.
inline nlohmann::json graph_to_json(const ClusterTree& tree, const CompositionGraph& g, const AttributeMatchingMap& m) {
  nlohmann::json verts = nlohmann::json::array();
  for (std::size_t v = 0; v < g.vertices.size(); ++v) {
    const auto& x = g.vertices[v];
    verts.push_back({{"id", v}, {"category", x.category}, {"color", x.color}, {"shape", x.shape}, {"remaining", x.remaining}});
  }
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [e, w] : g.weights) edges.push_back({e.first, e.second, w});
  return {{"schema_version", kGraphSchema},
          {"tree", tree_to_json(tree)},
          {"vertices", verts},
          {"edges", edges},
          {"attribute_map", map_to_json(m)}};
}

struct GraphBundle {
  ClusterTree tree;
  CompositionGraph graph;
  AttributeMatchingMap map;
};

inline GraphBundle graph_from_json(const nlohmann::json& j) {
  if (j.value("schema_version", -1) != kGraphSchema) throw GraphFormatError("unsupported graph schema_version");
  GraphBundle b;
  b.tree = tree_from_json(j.at("tree"));
  b.graph = make_graph(b.tree);
  const auto& verts = j.at("vertices");
  if (verts.size() != b.graph.vertices.size()) throw GraphFormatError("vertex table disagrees with the cluster tree");
  for (std::size_t v = 0; v < verts.size(); ++v) {
    const Vertex x{verts[v].at("category").get<std::string>(), verts[v].at("color").get<std::size_t>(),
                   verts[v].at("shape").get<std::size_t>(), verts[v].at("remaining").get<std::size_t>()};
    if (verts[v].at("id").get<std::size_t>() != v || !(x == b.graph.vertices[v]))
      throw GraphFormatError("vertex " + std::to_string(v) + " disagrees with the cluster tree");
  }
  for (const auto& e : j.at("edges")) {
    const auto a = e.at(0).get<std::size_t>(), c = e.at(1).get<std::size_t>();
    const double w = e.at(2).get<double>();
    if (!b.graph.has_vertex(a) || !b.graph.has_vertex(c)) throw GraphFormatError("edge names an unknown vertex");
    if (b.graph.vertices[a].category == b.graph.vertices[c].category)
      throw GraphFormatError("edge joins two vertices of one category");
    if (!(w > 0)) throw GraphFormatError("edge weights must be positive");
    b.graph.weights[make_edge(a, c)] = w;
  }
  b.map = map_from_json(j.at("attribute_map"));
  return b;
}

inline void save_graph(const std::string& path, const ClusterTree& tree, const CompositionGraph& g,
                       const AttributeMatchingMap& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << graph_to_json(tree, g, m).dump(1) << '\n';
}

inline constexpr int kEmbeddingSchema = 1;

inline nlohmann::json embedding_to_json(const ItemEmbedding& e) {
  nlohmann::json j{{"schema_version", kEmbeddingSchema}, {"item_id", e.id}, {"category", e.category},
                   {"r1", e.r1},         {"r2", e.r2},         {"r3", e.r3}};
  j["rgb"] = e.rgb ? nlohmann::json(*e.rgb) : nlohmann::json(nullptr);
  return j;
}

inline ItemEmbedding embedding_from_json(const nlohmann::json& j) {
  if (j.value("schema_version", -1) != kEmbeddingSchema) throw GraphFormatError("unsupported embedding schema_version");
  ItemEmbedding e{j.at("item_id").get<std::string>(), j.at("category").get<std::string>(), j.at("r1").get<Point>(),
                  j.at("r2").get<Point>(),       j.at("r3").get<Point>(),             std::nullopt};
  if (j.contains("rgb") && !j.at("rgb").is_null()) e.rgb = j.at("rgb").get<std::array<double, 3>>();
  return e;
}

/// One JSON object per line.
inline void write_embeddings(const std::string& path, const std::vector<ItemEmbedding>& items) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& e : items) out << embedding_to_json(e).dump() << '\n';
}

inline std::vector<ItemEmbedding> read_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<ItemEmbedding> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(embedding_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw GraphFormatError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

inline std::map<std::string, std::vector<ItemEmbedding>> group_by_category(const std::vector<ItemEmbedding>& items) {
  std::map<std::string, std::vector<ItemEmbedding>> out;
  for (const auto& e : items) out[e.category].push_back(e);
  return out;
}

inline GraphBundle load_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    return graph_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw GraphFormatError(path + ": " + e.what());
  }
}

}  // namespace pemb::compograph

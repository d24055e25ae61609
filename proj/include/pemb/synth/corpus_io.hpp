#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pemb/synth/generator.hpp"
#include "pemb/synth/image.hpp"

namespace pemb::synth {

inline constexpr int kSchemaVersion = 1;

namespace fs = std::filesystem;
using nlohmann::json;

inline json rule_to_json(const CompatibilityRule& r) {
  return json{{"tag", r.tag},
              {"attribute", attribute_name(r.attribute)},
              {"category_a", category_name(r.category_a)},
              {"class_a", r.class_a},
              {"category_b", category_name(r.category_b)},
              {"class_b", r.class_b}};
}

inline CompatibilityRule rule_from_json(const json& j) {
  CompatibilityRule r;
  r.tag = j.at("tag").get<std::string>();
  r.attribute = parse_attribute(j.at("attribute").get<std::string>());
  r.category_a = parse_category(j.at("category_a").get<std::string>());
  r.class_a = j.at("class_a").get<std::size_t>();
  r.category_b = parse_category(j.at("category_b").get<std::string>());
  r.class_b = j.at("class_b").get<std::size_t>();
  return r;
}

inline json config_to_json(const CorpusConfig& c) {
  json rules = json::array();
  for (const auto& r : c.rules) rules.push_back(rule_to_json(r));
  return json{{"items_per_category", c.items_per_category},
              {"outfits", c.outfits},
              {"colors", c.colors},
              {"shapes", c.shapes},
              {"textures", c.textures},
              {"max_outfit_size", c.max_outfit_size},
              {"background_fraction", c.background_fraction},
              {"height", c.render.height},
              {"width", c.render.width},
              {"seed", c.seed},
              {"rules", rules}};
}

inline json item_to_json(const Item& it) {
  json j{{"schema_version", kSchemaVersion},
         {"id", it.id},
         {"category", category_name(it.category)},
         {"image", "images/" + it.id + ".ppm"}};
  if (it.truth) {
    j["color_factor"] = it.truth->color;
    j["color_name"] = kPalette[it.truth->color].name;
    j["color_rgb"] = it.truth->color_rgb;
    j["shape_factor"] = it.truth->shape;
    j["shape_name"] = kShapes[it.truth->shape];
    j["texture_factor"] = it.truth->texture;
    j["texture_name"] = kTextures[it.truth->texture];
  }
  return j;
}

inline json outfit_to_json(const Outfit& o) {
  json j{{"schema_version", kSchemaVersion}, {"id", o.id}, {"item_ids", o.item_ids}, {"rule_tags", o.rule_tags}};
  if (o.like_count) j["like_count"] = *o.like_count;
  return j;
}

inline Outfit outfit_from_json(const json& j) {
  Outfit o;
  o.id = j.at("id").get<std::string>();
  o.item_ids = j.at("item_ids").get<std::vector<std::string>>();
  if (j.contains("like_count") && !j["like_count"].is_null()) o.like_count = j["like_count"].get<std::uint64_t>();
  if (j.contains("rule_tags")) o.rule_tags = j["rule_tags"].get<std::vector<std::string>>();
  return o;
}

inline std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

inline void write_jsonl(const fs::path& path, const std::vector<json>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : records) out << r.dump() << '\n';
}

/// Writes into a sibling temporary directory and renames it into place, so a
/// failure never leaves a partial corpus behind.
inline void write_corpus(const fs::path& dir, const Corpus& corpus, const CorpusConfig& cfg) {
  fs::path tmp = dir;
  tmp += ".partial";
  fs::remove_all(tmp);
  fs::create_directories(tmp / "images");
  try {
    std::vector<json> items, outfits;
    for (const auto& it : corpus.items) {
      items.push_back(item_to_json(it));
      write_ppm((tmp / "images" / (it.id + ".ppm")).string(), it.image);
    }
    for (const auto& o : corpus.outfits) outfits.push_back(outfit_to_json(o));
    write_jsonl(tmp / "items.jsonl", items);
    write_jsonl(tmp / "outfits.jsonl", outfits);
    std::ofstream manifest(tmp / "corpus.json", std::ios::binary);
    manifest << json{{"schema_version", kSchemaVersion}, {"config", config_to_json(cfg)}}.dump(2) << '\n';
  } catch (...) {
    fs::remove_all(tmp);
    throw;
  }
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

inline std::vector<Outfit> read_outfits(const fs::path& path) {
  std::vector<Outfit> out;
  for (const auto& j : read_jsonl(path)) out.push_back(outfit_from_json(j));
  return out;
}

inline Corpus read_corpus(const fs::path& dir) {
  Corpus c;
  for (const auto& j : read_jsonl(dir / "items.jsonl")) {
    Item it;
    it.id = j.at("id").get<std::string>();
    it.category = parse_category(j.at("category").get<std::string>());
    it.image = read_ppm((dir / j.at("image").get<std::string>()).string());
    if (j.contains("color_factor")) {
      ItemTruth t;
      t.color = j.at("color_factor").get<std::size_t>();
      t.shape = j.at("shape_factor").get<std::size_t>();
      t.texture = j.at("texture_factor").get<std::size_t>();
      t.color_rgb = j.at("color_rgb").get<Rgb>();
      it.truth = t;
    }
    c.items.push_back(std::move(it));
  }
  c.outfits = read_outfits(dir / "outfits.jsonl");
  return c;
}

/// Schema and referential checks; returns one message per problem found.
inline std::vector<std::string> validate_corpus(const fs::path& dir) {
  std::vector<std::string> problems;
  auto problem = [&](std::string s) { problems.push_back(std::move(s)); };
  for (const char* f : {"corpus.json", "items.jsonl", "outfits.jsonl"})
    if (!fs::exists(dir / f)) problem(std::string("missing ") + f);
  if (!problems.empty()) return problems;

  try {
    std::ifstream in(dir / "corpus.json");
    const auto manifest = json::parse(in);
    if (manifest.value("schema_version", -1) != kSchemaVersion) problem("corpus.json: unsupported schema_version");
  } catch (const std::exception& e) {
    problem(std::string("corpus.json: ") + e.what());
  }

  std::map<std::string, Category> categories;
  std::size_t height = 0, width = 0;
  try {
    for (const auto& j : read_jsonl(dir / "items.jsonl")) {
      const auto id = j.value("id", std::string{});
      if (id.empty()) {
        problem("item without id");
        continue;
      }
      if (j.value("schema_version", -1) != kSchemaVersion) problem(id + ": bad schema_version");
      Category cat;
      try {
        cat = parse_category(j.value("category", std::string{}));
      } catch (const std::exception& e) {
        problem(id + ": " + e.what());
        continue;
      }
      if (!categories.emplace(id, cat).second) problem("duplicate item id " + id);
      if (j.contains("color_factor") && j["color_factor"].get<std::size_t>() >= kPalette.size())
        problem(id + ": color_factor out of range");
      if (j.contains("shape_factor") && j["shape_factor"].get<std::size_t>() >= kShapes.size())
        problem(id + ": shape_factor out of range");
      if (j.contains("texture_factor") && j["texture_factor"].get<std::size_t>() >= kTextures.size())
        problem(id + ": texture_factor out of range");
      const auto img_path = dir / j.value("image", std::string{});
      try {
        const auto img = read_ppm(img_path.string());
        if (height == 0) {
          height = img.height;
          width = img.width;
        } else if (img.height != height || img.width != width) {
          problem(id + ": image size differs from the corpus size");
        }
      } catch (const std::exception& e) {
        problem(id + ": " + e.what());
      }
    }
  } catch (const std::exception& e) {
    problem(e.what());
  }

  try {
    std::set<std::string> outfit_ids;
    for (const auto& j : read_jsonl(dir / "outfits.jsonl")) {
      const auto o = outfit_from_json(j);
      if (!outfit_ids.insert(o.id).second) problem("duplicate outfit id " + o.id);
      if (o.item_ids.size() < 2 || o.item_ids.size() > kCategoryCount)
        problem(o.id + ": outfit must have 2-5 items");
      std::set<Category> seen;
      for (const auto& iid : o.item_ids) {
        auto it = categories.find(iid);
        if (it == categories.end()) {
          problem(o.id + ": unknown item " + iid);
          continue;
        }
        if (!seen.insert(it->second).second) problem(o.id + ": two items share category " + std::string(category_name(it->second)));
      }
    }
  } catch (const std::exception& e) {
    problem(e.what());
  }
  return problems;
}

}  // namespace pemb::synth

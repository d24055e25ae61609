#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pemb/rng.hpp"
#include "pemb/synth/image.hpp"

namespace pemb::synth {

enum class Category : std::uint8_t { tops, bottoms, hats, bags, shoes };
inline constexpr std::size_t kCategoryCount = 5;
inline constexpr std::array<Category, kCategoryCount> kCategories = {
    Category::tops, Category::bottoms, Category::hats, Category::bags, Category::shoes};

inline constexpr std::string_view category_name(Category c) {
  constexpr std::array<std::string_view, kCategoryCount> names = {"tops", "bottoms", "hats", "bags", "shoes"};
  return names[static_cast<std::size_t>(c)];
}

inline Category parse_category(std::string_view s) {
  for (auto c : kCategories)
    if (category_name(c) == s) return c;
  throw std::invalid_argument("unknown category '" + std::string(s) + "'");
}

inline constexpr std::size_t category_index(Category c) { return static_cast<std::size_t>(c); }

struct NamedColor {
  std::string_view name;
  Rgb rgb;
};

// Every channel stays >= 0.05 from 0 and 1 so per-pixel noise never clips,
// and the darkest channel is far below the background threshold.
inline constexpr std::array<NamedColor, 10> kPalette = {{
    {"red", {0.85, 0.10, 0.10}},
    {"blue", {0.10, 0.20, 0.80}},
    {"green", {0.10, 0.60, 0.20}},
    {"yellow", {0.93, 0.80, 0.10}},
    {"purple", {0.50, 0.15, 0.65}},
    {"orange", {0.93, 0.50, 0.06}},
    {"cyan", {0.10, 0.70, 0.80}},
    {"pink", {0.93, 0.45, 0.65}},
    {"brown", {0.50, 0.30, 0.10}},
    {"black", {0.12, 0.12, 0.12}},
}};

inline constexpr std::array<std::string_view, 6> kShapes = {"circle", "square", "triangle",
                                                            "diamond", "hbar", "vbar"};
inline constexpr std::array<std::string_view, 4> kTextures = {"solid", "stripes", "dots", "checker"};

template <std::size_t N>
std::size_t vocab_index(const std::array<std::string_view, N>& vocab, std::string_view s, const char* what) {
  for (std::size_t i = 0; i < N; ++i)
    if (vocab[i] == s) return i;
  throw std::invalid_argument(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

inline std::size_t color_index(std::string_view name) {
  for (std::size_t i = 0; i < kPalette.size(); ++i)
    if (kPalette[i].name == name) return i;
  throw std::invalid_argument("unknown color '" + std::string(name) + "'");
}
inline std::size_t shape_index(std::string_view s) { return vocab_index(kShapes, s, "shape"); }
inline std::size_t texture_index(std::string_view s) { return vocab_index(kTextures, s, "texture"); }

struct ItemTruth {
  std::size_t color = 0;
  std::size_t shape = 0;
  std::size_t texture = 0;
  Rgb color_rgb{};

  friend bool operator==(const ItemTruth&, const ItemTruth&) = default;
};

struct Item {
  std::string id;
  Category category = Category::tops;
  Image image;
  std::optional<ItemTruth> truth;
};

struct RenderOptions {
  std::size_t height = 32;
  std::size_t width = 32;
  double foreground_noise = 0.015;   // uniform half-width, < 0.02 so the color contract holds
  double background_floor = 0.97;    // background channels drawn from [floor, 1]
  double shade_factor = 0.55;        // secondary pattern color = shade_factor * primary
};

/// Generator's own silhouette of a shape on an h x w grid.
inline Mask silhouette(std::size_t shape, std::size_t h, std::size_t w) {
  if (shape >= kShapes.size()) throw std::invalid_argument("unknown shape index " + std::to_string(shape));
  Mask m(h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(w) - 0.5;
      const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(h) - 0.5;
      bool in = false;
      switch (shape) {
        case 0: in = u * u + v * v <= 0.38 * 0.38; break;
        case 1: in = std::abs(u) <= 0.31 && std::abs(v) <= 0.31; break;
        case 2: {
          // apex up, base at the bottom
          const double t = (v + 0.36) / 0.72;
          in = t >= 0.0 && t <= 1.0 && std::abs(u) <= 0.42 * t + 0.03;
          break;
        }
        case 3: in = std::abs(u) + std::abs(v) <= 0.42; break;
        case 4: in = std::abs(u) <= 0.42 && std::abs(v) <= 0.17; break;
        case 5: in = std::abs(u) <= 0.17 && std::abs(v) <= 0.42; break;
        default: break;
      }
      m.at(y, x) = in ? 1 : 0;
    }
  return m;
}

/// True where the texture paints the secondary (shaded) color.
inline bool texture_secondary(std::size_t texture, std::size_t y, std::size_t x) {
  switch (texture) {
    case 0: return false;
    case 1: return y % 3 == 0;
    case 2: return (y % 6) < 2 && (x % 6) < 2;
    case 3: return ((y / 2) + (x / 2)) % 3 == 0;
    default: throw std::invalid_argument("unknown texture index " + std::to_string(texture));
  }
}

/// Deterministic in every argument. The silhouette depends only on the shape,
/// the pattern only on the texture; the seed only drives pixel noise.
inline Item generate_item(Category category, std::size_t color, std::size_t shape, std::size_t texture,
                          std::uint64_t seed, const RenderOptions& opt = {}, std::string id = {}) {
  if (color >= kPalette.size()) throw std::invalid_argument("unknown color index " + std::to_string(color));
  if (shape >= kShapes.size()) throw std::invalid_argument("unknown shape index " + std::to_string(shape));
  if (texture >= kTextures.size()) throw std::invalid_argument("unknown texture index " + std::to_string(texture));
  if (opt.height < 8 || opt.width < 8) throw std::invalid_argument("image must be at least 8x8");

  Item item;
  item.id = std::move(id);
  item.category = category;
  const Rgb base = kPalette[color].rgb;
  item.truth = ItemTruth{color, shape, texture, base};

  const Mask sil = silhouette(shape, opt.height, opt.width);
  Rng rng(derive_seed(seed, "item-noise"));
  Image img(opt.height, opt.width);
  for (std::size_t y = 0; y < opt.height; ++y)
    for (std::size_t x = 0; x < opt.width; ++x) {
      if (sil.at(y, x)) {
        const bool shade = texture_secondary(texture, y, x);
        for (std::size_t c = 0; c < 3; ++c) {
          const double v = shade ? base[c] * opt.shade_factor : base[c];
          img.at(y, x, c) = std::clamp(v + uniform(rng, -opt.foreground_noise, opt.foreground_noise), 0.0, 1.0);
        }
      } else {
        for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = uniform(rng, opt.background_floor, 1.0);
      }
    }
  item.image = std::move(img);
  return item;
}

// ---- corpus ----------------------------------------------------------------

enum class Attribute : std::uint8_t { color, shape, texture };

inline std::string_view attribute_name(Attribute a) {
  switch (a) {
    case Attribute::color: return "color";
    case Attribute::shape: return "shape";
    case Attribute::texture: return "texture";
  }
  return "?";
}

inline Attribute parse_attribute(std::string_view s) {
  if (s == "color") return Attribute::color;
  if (s == "shape") return Attribute::shape;
  if (s == "texture") return Attribute::texture;
  throw std::invalid_argument("unknown attribute '" + std::string(s) + "'");
}

/// "items of category_a whose attribute is class_a co-occur with items of
/// category_b whose attribute is class_b".
struct CompatibilityRule {
  std::string tag;
  Attribute attribute = Attribute::color;
  Category category_a = Category::tops;
  std::size_t class_a = 0;
  Category category_b = Category::bottoms;
  std::size_t class_b = 1;
};

inline std::size_t truth_class(const ItemTruth& t, Attribute a) {
  switch (a) {
    case Attribute::color: return t.color;
    case Attribute::shape: return t.shape;
    case Attribute::texture: return t.texture;
  }
  return 0;
}

struct Outfit {
  std::string id;
  std::vector<std::string> item_ids;
  std::optional<std::uint64_t> like_count;
  std::vector<std::string> rule_tags;
};

struct CorpusConfig {
  std::size_t items_per_category = 50;
  std::size_t outfits = 200;
  std::size_t colors = 8;
  std::size_t shapes = 4;
  std::size_t textures = 3;
  std::size_t max_outfit_size = 5;
  // Fraction of outfits drawn uniformly instead of from a rule. Zero keeps the
  // "every outfit satisfies a planted rule" contract.
  double background_fraction = 0.0;
  std::vector<CompatibilityRule> rules = {
      {"red-tops~blue-bottoms", Attribute::color, Category::tops, 0, Category::bottoms, 1}};
  RenderOptions render;
  std::uint64_t seed = 1;
};

struct Corpus {
  std::vector<Item> items;
  std::vector<Outfit> outfits;

  const Item& item(const std::string& id) const {
    for (const auto& it : items)
      if (it.id == id) return it;
    throw std::out_of_range("unknown item id " + id);
  }
};

inline std::string item_id(Category c, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%04zu", std::string(category_name(c)).c_str(), i);
  return buf;
}

inline std::string outfit_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "outfit-%05zu", i);
  return buf;
}

inline bool satisfies(const CompatibilityRule& rule, const std::vector<const Item*>& members) {
  bool a = false, b = false;
  for (const auto* it : members) {
    if (!it->truth) continue;
    if (it->category == rule.category_a && truth_class(*it->truth, rule.attribute) == rule.class_a) a = true;
    if (it->category == rule.category_b && truth_class(*it->truth, rule.attribute) == rule.class_b) b = true;
  }
  return a && b;
}

/// Items get stratified factors (each category cycles through every color,
/// shape and texture under independent shuffles), so every configured class
/// is present once items_per_category reaches the vocabulary size.
inline Corpus generate_outfit_corpus(const CorpusConfig& cfg) {
  if (cfg.outfits == 0) throw std::invalid_argument("corpus needs at least one outfit");
  if (cfg.items_per_category == 0) throw std::invalid_argument("corpus needs at least one item per category");
  if (cfg.colors == 0 || cfg.colors > kPalette.size()) throw std::invalid_argument("color count out of range");
  if (cfg.shapes == 0 || cfg.shapes > kShapes.size()) throw std::invalid_argument("shape count out of range");
  if (cfg.textures == 0 || cfg.textures > kTextures.size()) throw std::invalid_argument("texture count out of range");
  if (cfg.max_outfit_size < 2 || cfg.max_outfit_size > kCategoryCount)
    throw std::invalid_argument("max outfit size must lie in [2,5]");
  if (cfg.background_fraction < 0.0 || cfg.background_fraction > 1.0)
    throw std::invalid_argument("background fraction must lie in [0,1]");
  if (cfg.rules.empty() && cfg.background_fraction < 1.0)
    throw std::invalid_argument("unsatisfiable: no compatibility rules given");

  Corpus corpus;
  for (auto cat : kCategories) {
    Rng rng(derive_seed(cfg.seed, "factors", {category_index(cat)}));
    const std::size_t n = cfg.items_per_category;
    std::vector<std::size_t> col(n), shp(n), tex(n);
    for (std::size_t i = 0; i < n; ++i) {
      col[i] = i % cfg.colors;
      shp[i] = i % cfg.shapes;
      tex[i] = i % cfg.textures;
    }
    shuffle(col.begin(), col.end(), rng);
    shuffle(shp.begin(), shp.end(), rng);
    shuffle(tex.begin(), tex.end(), rng);
    for (std::size_t i = 0; i < n; ++i) {
      corpus.items.push_back(generate_item(cat, col[i], shp[i], tex[i],
                                           derive_seed(cfg.seed, "item", {category_index(cat), i}),
                                           cfg.render, item_id(cat, i)));
    }
  }

  std::array<std::vector<const Item*>, kCategoryCount> by_cat;
  for (const auto& it : corpus.items) by_cat[category_index(it.category)].push_back(&it);

  struct Pools {
    std::vector<const Item*> a, b;
  };
  std::vector<Pools> pools;
  for (const auto& r : cfg.rules) {
    if (r.category_a == r.category_b) throw std::invalid_argument("unsatisfiable rule " + r.tag + ": same category on both sides");
    const std::size_t limit = r.attribute == Attribute::color   ? cfg.colors
                              : r.attribute == Attribute::shape ? cfg.shapes
                                                                : cfg.textures;
    if (r.class_a >= limit || r.class_b >= limit)
      throw std::invalid_argument("unsatisfiable rule " + r.tag + ": class outside configured vocabulary");
    Pools p;
    for (const auto* it : by_cat[category_index(r.category_a)])
      if (truth_class(*it->truth, r.attribute) == r.class_a) p.a.push_back(it);
    for (const auto* it : by_cat[category_index(r.category_b)])
      if (truth_class(*it->truth, r.attribute) == r.class_b) p.b.push_back(it);
    if (p.a.empty() || p.b.empty()) throw std::invalid_argument("unsatisfiable rule " + r.tag + ": no matching items");
    pools.push_back(std::move(p));
  }

  Rng rng(derive_seed(cfg.seed, "outfits"));
  for (std::size_t o = 0; o < cfg.outfits; ++o) {
    std::vector<const Item*> members;
    std::array<bool, kCategoryCount> used{};
    const bool background = uniform01(rng) < cfg.background_fraction;
    if (!background) {
      const std::size_t ri = o % cfg.rules.size();
      const auto& r = cfg.rules[ri];
      members.push_back(pools[ri].a[uniform_index(rng, pools[ri].a.size())]);
      members.push_back(pools[ri].b[uniform_index(rng, pools[ri].b.size())]);
      used[category_index(r.category_a)] = used[category_index(r.category_b)] = true;
    }
    const std::size_t lo = 2;
    const std::size_t size = lo + uniform_index(rng, cfg.max_outfit_size - lo + 1);
    std::vector<std::size_t> rest;
    for (std::size_t c = 0; c < kCategoryCount; ++c)
      if (!used[c]) rest.push_back(c);
    shuffle(rest.begin(), rest.end(), rng);
    for (std::size_t c : rest) {
      if (members.size() >= size) break;
      members.push_back(by_cat[c][uniform_index(rng, by_cat[c].size())]);
    }
    std::sort(members.begin(), members.end(),
              [](const Item* x, const Item* y) { return x->category < y->category; });

    Outfit out;
    out.id = outfit_id(o);
    for (const auto* m : members) out.item_ids.push_back(m->id);
    for (const auto& r : cfg.rules)
      if (satisfies(r, members)) out.rule_tags.push_back(r.tag);
    out.like_count = (out.rule_tags.empty() ? 0 : 50) + uniform_index(rng, 51);
    corpus.outfits.push_back(std::move(out));
  }
  return corpus;
}

}  // namespace pemb::synth

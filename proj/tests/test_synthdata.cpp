#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "pemb/synth/corpus_io.hpp"
#include "pemb/synth/generator.hpp"
#include "pemb/synth/preprocess.hpp"

namespace pemb::synth {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("pemb_synth_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(GenerateItem, IsDeterministic) {
  const auto a = generate_item(Category::hats, color_index("red"), shape_index("circle"), texture_index("solid"), 7);
  const auto b = generate_item(Category::hats, color_index("red"), shape_index("circle"), texture_index("solid"), 7);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(*a.truth, *b.truth);
}

TEST(GenerateItem, RejectsUnknownFactors) {
  EXPECT_THROW(generate_item(Category::tops, kPalette.size(), 0, 0, 1), std::invalid_argument);
  EXPECT_THROW(generate_item(Category::tops, 0, kShapes.size(), 0, 1), std::invalid_argument);
  EXPECT_THROW(generate_item(Category::tops, 0, 0, kTextures.size(), 1), std::invalid_argument);
}

TEST(GenerateItem, SolidRedForegroundMatchesRed) {
  const auto item = generate_item(Category::tops, color_index("red"), shape_index("square"), 0, 3);
  const auto sil = silhouette(shape_index("square"), item.image.height, item.image.width);
  const Rgb red = kPalette[color_index("red")].rgb;
  std::size_t close = 0, total = 0;
  for (std::size_t y = 0; y < sil.height; ++y)
    for (std::size_t x = 0; x < sil.width; ++x) {
      if (!sil.at(y, x)) continue;
      ++total;
      bool ok = true;
      for (std::size_t c = 0; c < 3; ++c) ok = ok && std::abs(item.image.at(y, x, c) - red[c]) <= 0.02;
      close += ok;
    }
  ASSERT_GT(total, 0u);
  EXPECT_GE(static_cast<double>(close) / static_cast<double>(total), 0.95);
}

TEST(GenerateItem, SeedOnlyChangesNoise) {
  const auto a = generate_item(Category::bags, 2, 3, 1, 100);
  const auto b = generate_item(Category::bags, 2, 3, 1, 101);
  EXPECT_NE(a.image, b.image);
  EXPECT_EQ(extract_mask(a.image), extract_mask(b.image));
  const auto ta = extract_color_themes(a.image, extract_mask(a.image), 2);
  const auto tb = extract_color_themes(b.image, extract_mask(b.image), 2);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(ta.colors[0][c], tb.colors[0][c], 0.02);
}

TEST(GenerateItem, ValuesInUnitInterval) {
  for (std::size_t color = 0; color < kPalette.size(); ++color) {
    const auto it = generate_item(Category::shoes, color, color % kShapes.size(), color % kTextures.size(), color);
    for (double v : it.image.pixels) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

// ---- masks ------------------------------------------------------------------

TEST(ExtractMask, PureBackgroundIsRejected) {
  Image img(16, 16, {0.99, 0.98, 1.0});
  EXPECT_THROW(extract_mask(img), EmptyMaskError);
}

TEST(ExtractMask, FilledSquareWithinBoundaryBand) {
  Image img(16, 16);
  Mask square(16, 16);
  for (std::size_t y = 4; y < 12; ++y)
    for (std::size_t x = 5; x < 13; ++x) {
      img.set(y, x, {0.2, 0.3, 0.6});
      square.at(y, x) = 1;
    }
  const auto m = extract_mask(img);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) {
      if (m.at(y, x) == square.at(y, x)) continue;
      // only pixels whose 3x3 neighbourhood straddles the square edge may differ
      bool straddles = false;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
          if (yy < 0 || xx < 0 || yy >= 16 || xx >= 16) continue;
          straddles = straddles || square.at(yy, xx) != square.at(y, x);
        }
      EXPECT_TRUE(straddles) << y << "," << x;
    }
}

// 8x8, square at rows/cols 2..5 and one salt pixel in the corner. Erosion
// shrinks the square to rows/cols 3..4 and deletes the salt; dilation restores
// the 4x4 square; closing leaves it unchanged.
TEST(ExtractMask, OpeningRemovesSaltNoise) {
  Image img(8, 8);
  Mask expected(8, 8);
  for (std::size_t y = 2; y < 6; ++y)
    for (std::size_t x = 2; x < 6; ++x) {
      img.set(y, x, {0.1, 0.1, 0.1});
      expected.at(y, x) = 1;
    }
  img.set(0, 7, {0.1, 0.1, 0.1});
  EXPECT_EQ(threshold_foreground(img).count(), 17u);
  EXPECT_EQ(extract_mask(img), expected);
}

TEST(ExtractMask, RoundTripIoUOnGeneratedItems) {
  double worst = 1.0;
  for (std::size_t shape = 0; shape < kShapes.size(); ++shape)
    for (std::size_t texture = 0; texture < kTextures.size(); ++texture)
      for (std::size_t color = 0; color < kPalette.size(); ++color) {
        const auto it = generate_item(Category::tops, color, shape, texture, 17 * shape + 5 * texture + color);
        const double v = iou(extract_mask(it.image), silhouette(shape, 32, 32));
        worst = std::min(worst, v);
        EXPECT_GE(v, 0.95) << kShapes[shape] << "/" << kTextures[texture] << "/" << kPalette[color].name;
      }
  RecordProperty("worst_iou", std::to_string(worst));
}

// ---- color themes -----------------------------------------------------------

Mask full_mask(std::size_t h, std::size_t w) {
  Mask m(h, w);
  for (auto& b : m.bits) b = 1;
  return m;
}

TEST(ColorThemes, SingleColorPadsWithZeroWeight) {
  Image img(6, 6, {0.3, 0.5, 0.7});
  const auto t = extract_color_themes(img, full_mask(6, 6), 5);
  ASSERT_EQ(t.size(), 5u);
  EXPECT_EQ(t.weights[0], 1.0);
  for (std::size_t i = 1; i < 5; ++i) {
    EXPECT_EQ(t.weights[i], 0.0);
    EXPECT_EQ(t.colors[i], t.colors[0]);
  }
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(t.colors[0][c], img.at(0, 0, c), 1e-12);
  EXPECT_EQ(t.flatten().size(), 20u);
}

TEST(ColorThemes, SeventyThirtySplit) {
  const Rgb red{0.9, 0.1, 0.1}, blue{0.1, 0.1, 0.9};
  Image img(10, 10);
  for (std::size_t i = 0; i < 100; ++i) img.set(i / 10, i % 10, i < 70 ? red : blue);
  const auto t = extract_color_themes(img, full_mask(10, 10), 2);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_NEAR(t.weights[0], 0.7, 0.05);
  EXPECT_NEAR(t.weights[1], 0.3, 0.05);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_NEAR(t.colors[0][c], red[c], 0.02);
    EXPECT_NEAR(t.colors[1][c], blue[c], 0.02);
  }
}

TEST(ColorThemes, SingleClusterIsForegroundMean) {
  const auto it = generate_item(Category::bottoms, 4, 2, 3, 9);
  const auto mask = extract_mask(it.image);
  Rgb mean{0, 0, 0};
  for (std::size_t y = 0; y < mask.height; ++y)
    for (std::size_t x = 0; x < mask.width; ++x)
      if (mask.at(y, x))
        for (std::size_t c = 0; c < 3; ++c) mean[c] += it.image.at(y, x, c);
  for (auto& v : mean) v /= static_cast<double>(mask.count());
  const auto t = extract_color_themes(it.image, mask, 1);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(t.colors[0][c], mean[c], 1e-12);
  EXPECT_EQ(t.weights[0], 1.0);
}

TEST(ColorThemes, WeightsDescendAndSumToOne) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto it = generate_item(Category::hats, seed % 8, seed % 6, seed % 4, seed);
    const auto t = extract_color_themes(it.image, extract_mask(it.image), 5);
    ASSERT_EQ(t.size(), 5u);
    double total = 0;
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_GE(t.weights[i], 0.0);
      if (i) {
        EXPECT_LE(t.weights[i], t.weights[i - 1]);
      }
      total += t.weights[i];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(ColorThemes, InvariantToForegroundPermutation) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto it = generate_item(Category::tops, seed % 8, 1, 1 + seed % 3, seed);
    const auto mask = extract_mask(it.image);
    std::vector<std::pair<std::size_t, std::size_t>> fg;
    for (std::size_t y = 0; y < mask.height; ++y)
      for (std::size_t x = 0; x < mask.width; ++x)
        if (mask.at(y, x)) fg.emplace_back(y, x);
    auto perm = fg;
    Rng rng(seed + 1000);
    shuffle(perm.begin(), perm.end(), rng);
    Image shuffled = it.image;
    for (std::size_t i = 0; i < fg.size(); ++i)
      shuffled.set(perm[i].first, perm[i].second, it.image.rgb(fg[i].first, fg[i].second));
    const auto a = extract_color_themes(it.image, mask, 5);
    const auto b = extract_color_themes(shuffled, mask, 5);
    EXPECT_EQ(a.colors, b.colors);
    EXPECT_EQ(a.weights, b.weights);
  }
}

TEST(ColorThemes, EmptyMaskIsRejected) {
  Image img(4, 4);
  EXPECT_THROW(extract_color_themes(img, Mask(4, 4), 3), EmptyMaskError);
  EXPECT_THROW(extract_color_themes(img, full_mask(4, 4), 0), std::invalid_argument);
}

// ---- corpus -----------------------------------------------------------------

CorpusConfig small_config(std::uint64_t seed) {
  CorpusConfig cfg;
  cfg.items_per_category = 24;
  cfg.outfits = 100;
  cfg.render.height = cfg.render.width = 16;
  cfg.seed = seed;
  return cfg;
}

TEST(Corpus, EveryOutfitSatisfiesThePlantedRule) {
  const auto corpus = generate_outfit_corpus(small_config(3));
  ASSERT_EQ(corpus.outfits.size(), 100u);
  const auto rule = CorpusConfig{}.rules.front();
  for (const auto& o : corpus.outfits) {
    std::vector<const Item*> members;
    for (const auto& id : o.item_ids) members.push_back(&corpus.item(id));
    EXPECT_TRUE(satisfies(rule, members)) << o.id;
    ASSERT_EQ(o.rule_tags.size(), 1u);
    EXPECT_EQ(o.rule_tags[0], rule.tag);
    ASSERT_TRUE(o.like_count.has_value());
    EXPECT_GE(*o.like_count, 50u);
  }
}

TEST(Corpus, OutfitInvariantsHold) {
  auto cfg = small_config(4);
  cfg.background_fraction = 0.5;
  const auto corpus = generate_outfit_corpus(cfg);
  for (const auto& o : corpus.outfits) {
    EXPECT_GE(o.item_ids.size(), 2u);
    EXPECT_LE(o.item_ids.size(), 5u);
    std::set<Category> cats;
    for (const auto& id : o.item_ids) EXPECT_TRUE(cats.insert(corpus.item(id).category).second) << o.id;
  }
}

TEST(Corpus, PlantedPairHasMaximumCooccurrence) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto corpus = generate_outfit_corpus(small_config(seed));
    std::map<std::pair<std::size_t, std::size_t>, int> counts;
    for (const auto& o : corpus.outfits) {
      const Item *top = nullptr, *bottom = nullptr;
      for (const auto& id : o.item_ids) {
        const auto& it = corpus.item(id);
        if (it.category == Category::tops) top = &it;
        if (it.category == Category::bottoms) bottom = &it;
      }
      if (top && bottom) ++counts[{top->truth->color, bottom->truth->color}];
    }
    const auto best = std::max_element(counts.begin(), counts.end(),
                                       [](const auto& a, const auto& b) { return a.second < b.second; });
    EXPECT_EQ(best->first, (std::pair<std::size_t, std::size_t>{color_index("red"), color_index("blue")}));
  }
}

TEST(Corpus, StratifiedFactorsCoverVocabulary) {
  const auto corpus = generate_outfit_corpus(small_config(5));
  for (auto cat : kCategories) {
    std::set<std::size_t> colors, shapes, textures;
    for (const auto& it : corpus.items)
      if (it.category == cat) {
        colors.insert(it.truth->color);
        shapes.insert(it.truth->shape);
        textures.insert(it.truth->texture);
      }
    EXPECT_EQ(colors.size(), 8u);
    EXPECT_EQ(shapes.size(), 4u);
    EXPECT_EQ(textures.size(), 3u);
  }
}

TEST(Corpus, RejectsBadConfigs) {
  auto cfg = small_config(1);
  cfg.outfits = 0;
  EXPECT_THROW(generate_outfit_corpus(cfg), std::invalid_argument);
  cfg = small_config(1);
  cfg.rules = {{"bad", Attribute::color, Category::tops, 9, Category::bottoms, 1}};
  EXPECT_THROW(generate_outfit_corpus(cfg), std::invalid_argument);
  cfg.rules = {{"same", Attribute::shape, Category::tops, 0, Category::tops, 1}};
  EXPECT_THROW(generate_outfit_corpus(cfg), std::invalid_argument);
  cfg.rules.clear();
  EXPECT_THROW(generate_outfit_corpus(cfg), std::invalid_argument);
}

TEST(Corpus, FixedSeedGivesIdenticalBytes) {
  const auto cfg = small_config(11);
  const auto a = scratch_dir("a"), b = scratch_dir("b");
  write_corpus(a, generate_outfit_corpus(cfg), cfg);
  write_corpus(b, generate_outfit_corpus(cfg), cfg);
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), a).string());
  ASSERT_GT(files.size(), 100u);
  for (const auto& f : files) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Corpus, WrittenCorpusValidatesAndRoundTrips) {
  const auto cfg = small_config(12);
  const auto corpus = generate_outfit_corpus(cfg);
  const auto dir = scratch_dir("rt");
  write_corpus(dir, corpus, cfg);
  EXPECT_TRUE(validate_corpus(dir).empty());
  EXPECT_FALSE(fs::exists(fs::path(dir.string() + ".partial")));

  const auto back = read_corpus(dir);
  ASSERT_EQ(back.items.size(), corpus.items.size());
  ASSERT_EQ(back.outfits.size(), corpus.outfits.size());
  for (std::size_t i = 0; i < corpus.items.size(); ++i) {
    EXPECT_EQ(back.items[i].id, corpus.items[i].id);
    EXPECT_EQ(*back.items[i].truth, *corpus.items[i].truth);
    for (std::size_t p = 0; p < corpus.items[i].image.pixels.size(); ++p)
      EXPECT_NEAR(back.items[i].image.pixels[p], corpus.items[i].image.pixels[p], 0.5 / 255.0 + 1e-12);
  }
  EXPECT_EQ(back.outfits[7].item_ids, corpus.outfits[7].item_ids);
  EXPECT_EQ(back.outfits[7].like_count, corpus.outfits[7].like_count);

  {
    std::ofstream out(dir / "outfits.jsonl", std::ios::app);
    out << R"({"schema_version":1,"id":"outfit-x","item_ids":["tops-0000","tops-0001"]})" << '\n';
    out << R"({"schema_version":1,"id":"outfit-y","item_ids":["tops-0000","nope-0001"]})" << '\n';
  }
  const auto problems = validate_corpus(dir);
  EXPECT_EQ(problems.size(), 2u);
  fs::remove_all(dir);
}

TEST(Corpus, MissingFilesAreReported) {
  const auto dir = scratch_dir("missing");
  fs::create_directories(dir);
  EXPECT_EQ(validate_corpus(dir).size(), 3u);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace pemb::synth

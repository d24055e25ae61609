#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CmdResult {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  static fs::path dir;

  static void SetUpTestSuite() {
    dir = fs::temp_directory_path() / ("pemb-cli-" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    ASSERT_EQ(run("gen --out corpus --items 12 --outfits 80 --size 16 --seed 2").code, 0);
    ASSERT_EQ(run(std::string("train --corpus corpus --out model.ckpt ") + kTinyModel + " --epochs 2").code, 0);
    ASSERT_EQ(run("embed --corpus corpus --model model.ckpt --out emb.jsonl").code, 0);
    ASSERT_EQ(run("cluster --embeddings emb.jsonl --out tree.json --n-p 3").code, 0);
    ASSERT_EQ(run("build-graph --tree tree.json --outfits corpus --out graph.json").code, 0);
  }
  static void TearDownTestSuite() { fs::remove_all(dir); }

  static constexpr const char* kTinyModel = "--batch-size 16 --d1 4 --d2 4 --d3 2 --channels1 2 --channels2 4";

  static CmdResult run(const std::string& args, const std::string& env = "") {
    const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd = "cd '" + dir.string() + "' && " + env + " '" + PEMB_CLI_PATH + "' " + args + " >'" +
                            out.string() + "' 2>'" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    CmdResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  static std::vector<json> json_lines(const std::string& text) {
    std::vector<json> out;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line))
      if (!line.empty()) out.push_back(json::parse(line));
    return out;
  }

  static std::map<std::string, std::string> tree_files(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
      if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
    return out;
  }

  // first item of the first outfit: it is guaranteed to have edges
  static std::string seed_item() {
    std::ifstream in(dir / "corpus" / "outfits.jsonl");
    std::string line;
    std::getline(in, line);
    return json::parse(line).at("item_ids").at(0).get<std::string>();
  }
};
fs::path Cli::dir;

TEST_F(Cli, GenIsDeterministic) {
  ASSERT_EQ(run("gen --out again --items 12 --outfits 80 --size 16 --seed 2").code, 0);
  EXPECT_EQ(tree_files(dir / "again"), tree_files(dir / "corpus"));
  ASSERT_EQ(run("gen --out other --items 12 --outfits 80 --size 16 --seed 3").code, 0);
  EXPECT_NE(tree_files(dir / "other"), tree_files(dir / "corpus"));
}

TEST_F(Cli, GenWithoutOutfitsFailsCleanly) {
  const auto r = run("gen --out empty --outfits 0");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("outfit"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "empty"));
}

TEST_F(Cli, GeneratedCorpusValidates) {
  const auto r = run("validate corpus");
  EXPECT_EQ(r.code, 0) << r.err;
  fs::copy(dir / "corpus", dir / "broken", fs::copy_options::recursive);
  std::ofstream(dir / "broken" / "outfits.jsonl", std::ios::app)
      << R"({"schema_version":1,"id":"outfit-x","item_ids":["nope-1","nope-2"],"rule_tags":[]})" << '\n';
  const auto bad = run("validate broken");
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("nope-1"), std::string::npos);
}

TEST_F(Cli, LossLogHasOneRowPerEpoch) {
  const auto log = slurp(dir / "model.ckpt.loss.csv");
  std::stringstream ss(log);
  std::string line;
  std::getline(ss, line);
  EXPECT_EQ(line, "epoch,L_i,L_t,L_p,L_e,total");
  int rows = 0;
  while (std::getline(ss, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 5);
    EXPECT_EQ(line.substr(0, line.find(',')), std::to_string(rows));
  }
  EXPECT_EQ(rows, 2);
  const auto side = json::parse(slurp(dir / "model.ckpt.json"));
  EXPECT_EQ(side.at("schema_version"), 1);
}

TEST_F(Cli, ZeroWeightsAreFlagged) {
  const auto r = run(std::string("train --corpus corpus --out zero.ckpt --epochs 1 --alpha 0 --beta 0 ") + kTinyModel);
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("alpha = 0"), std::string::npos);
  EXPECT_NE(r.err.find("beta = 0"), std::string::npos);
  EXPECT_NE(slurp(dir / "zero.ckpt.loss.csv").find("L_t,L_p,L_e"), std::string::npos);
}

TEST_F(Cli, ResumeMatchesUninterruptedRun) {
  ASSERT_EQ(run(std::string("train --corpus corpus --out full.ckpt --epochs 3 ") + kTinyModel).code, 0);
  ASSERT_EQ(run(std::string("train --corpus corpus --out part.ckpt --epochs 2 ") + kTinyModel).code, 0);
  const auto r = run(std::string("train --corpus corpus --out part.ckpt --epochs 3 --resume ") + kTinyModel);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("resuming after epoch 2"), std::string::npos);
  auto last = [](const std::string& csv) {
    std::vector<double> v;
    std::stringstream ss(csv.substr(csv.rfind('\n', csv.size() - 2) + 1));
    std::string f;
    while (std::getline(ss, f, ',')) v.push_back(std::stod(f));
    return v;
  };
  const auto a = last(slurp(dir / "full.ckpt.loss.csv")), b = last(slurp(dir / "part.ckpt.loss.csv"));
  ASSERT_EQ(a.size(), 6u);
  ASSERT_EQ(b.size(), 6u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6) << "column " << i;
  EXPECT_EQ(slurp(dir / "full.ckpt"), slurp(dir / "part.ckpt"));
  const auto mismatch = run("train --corpus corpus --out part.ckpt --epochs 4 --resume --d1 6");
  EXPECT_EQ(mismatch.code, 2);
}

TEST_F(Cli, EmbeddingsCarrySchemaAndParts) {
  const auto lines = json_lines(slurp(dir / "emb.jsonl"));
  ASSERT_EQ(lines.size(), 60u);
  for (const auto& j : lines) {
    EXPECT_EQ(j.at("schema_version"), 1);
    EXPECT_TRUE(j.at("item_id").is_string());
    EXPECT_EQ(j.at("r1").size(), 4u);
    EXPECT_EQ(j.at("r2").size(), 4u);
    EXPECT_EQ(j.at("r3").size(), 2u);
    EXPECT_EQ(j.at("rgb").size(), 3u);
  }
}

TEST_F(Cli, StagesAreIdempotentAndLeaveInputsAlone) {
  const auto corpus_before = tree_files(dir / "corpus");
  const auto graph = slurp(dir / "graph.json"), tree = slurp(dir / "tree.json"), emb = slurp(dir / "emb.jsonl");
  ASSERT_EQ(run("embed --corpus corpus --model model.ckpt --out emb2.jsonl").code, 0);
  ASSERT_EQ(run("cluster --embeddings emb.jsonl --out tree2.json --n-p 3").code, 0);
  ASSERT_EQ(run("build-graph --tree tree.json --outfits corpus --out graph2.json").code, 0);
  EXPECT_EQ(slurp(dir / "emb2.jsonl"), emb);
  EXPECT_EQ(slurp(dir / "tree2.json"), tree);
  EXPECT_EQ(slurp(dir / "graph2.json"), graph);
  EXPECT_EQ(tree_files(dir / "corpus"), corpus_before);
  EXPECT_EQ(slurp(dir / "graph.json"), graph);
  EXPECT_EQ(json::parse(graph).at("schema_version"), 1);
  EXPECT_EQ(json::parse(tree).at("schema_version"), 1);
}

TEST_F(Cli, RecommendEmitsRankedBreakdown) {
  const auto r = run("recommend --graph graph.json --seed-item " + seed_item() + " --topk 10 --n-t 2");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto lines = json_lines(r.out);
  ASSERT_FALSE(lines.empty());
  EXPECT_LE(lines.size(), 10u);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& j = lines[i];
    EXPECT_EQ(j.at("schema_version"), 1);
    EXPECT_EQ(j.at("rank"), i + 1);
    const double S = j.at("S"), S1 = j.at("S1"), S2 = j.at("S2"), a = j.at("alpha_s");
    EXPECT_NEAR(S, S1 + a * S2, 1e-9);
    const auto& at = j.at("attribute");
    EXPECT_NEAR(S2, at.at("color").get<double>() + at.at("shape").get<double>() + at.at("remaining").get<double>(), 1e-9);
    if (i > 0) {
      EXPECT_LE(S, lines[i - 1].at("S").get<double>());
    }
  }
}

TEST_F(Cli, ColorConstraintSelectsNearestLabelledCluster) {
  const auto r = run("recommend --graph graph.json --seed-item " + seed_item() +
                     " --categories bottoms --color bottoms=#1a33cc --topk 50 --n-t 50");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto g = json::parse(slurp(dir / "graph.json"));
  // independent lookup of the bottoms color cluster whose rgb label is nearest to #1a33cc
  std::size_t want = 0;
  double best = 1e9;
  for (const auto& c : g.at("tree").at("categories"))
    if (c.at("category") == "bottoms")
      for (std::size_t i = 0; i < c.at("colors").size(); ++i) {
        const auto rgb = c["colors"][i].at("rgb").get<std::vector<double>>();
        const double d = std::pow(rgb[0] - 0x1a / 255.0, 2) + std::pow(rgb[1] - 0x33 / 255.0, 2) +
                         std::pow(rgb[2] - 0xcc / 255.0, 2);
        if (d < best) {
          best = d;
          want = i;
        }
      }
  for (const auto& j : json_lines(r.out))
    for (const auto& v : j.at("vertices"))
      if (v.at("category") == "bottoms") {
        EXPECT_EQ(v.at("color"), want);
      }
}

TEST_F(Cli, EnvironmentOverridesDefaults) {
  const auto r = run("recommend --graph graph.json --seed-item " + seed_item(), "PEMB_RECOMMEND_TOPK=1");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(json_lines(r.out).size(), 1u);
}

TEST_F(Cli, HelpListsDefaults) {
  const auto r = run("recommend --help");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("--n-t"), std::string::npos);
  EXPECT_NE(r.out.find("[5]"), std::string::npos);
  const auto t = run("train --help");
  EXPECT_NE(t.out.find("--beta"), std::string::npos);
  EXPECT_NE(t.out.find("[0.7]"), std::string::npos);
}

TEST_F(Cli, TrendMatchesStandaloneArithmetic) {
  ASSERT_EQ(run("trend --graph graph.json --outfits corpus --alpha-w 2 --out trended.json").code, 0);
  const auto before = json::parse(slurp(dir / "graph.json")), after = json::parse(slurp(dir / "trended.json"));
  double mx = 0;
  std::map<std::pair<std::size_t, std::size_t>, double> w;
  for (const auto& e : before.at("edges")) {
    w[{e[0], e[1]}] = e[2];
    mx = std::max(mx, e[2].get<double>());
  }
  for (auto& [k, v] : w) v /= std::sqrt(mx);
  // re-ingest the same outfits by hand
  std::map<std::string, std::size_t> item_vertex = before.at("tree").at("item_vertex");
  std::vector<std::string> cat_of;
  for (const auto& v : before.at("vertices")) cat_of.push_back(v.at("category"));
  std::ifstream in(dir / "corpus" / "outfits.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::size_t> vs;
    const auto outfit = json::parse(line);
    for (const auto& id : outfit.at("item_ids")) vs.push_back(item_vertex.at(id));
    for (std::size_t i = 0; i < vs.size(); ++i)
      for (std::size_t j = i + 1; j < vs.size(); ++j) {
        if (cat_of[vs[i]] == cat_of[vs[j]]) continue;
        const auto key = std::make_pair(std::min(vs[i], vs[j]), std::max(vs[i], vs[j]));
        auto it = w.find(key);
        if (it == w.end())
          w[key] = 1.0;
        else
          it->second += 2.0;
      }
  }
  ASSERT_EQ(after.at("edges").size(), w.size());
  double max_after = 0, want_max = 0;
  for (const auto& e : after.at("edges")) {
    EXPECT_NEAR(e[2].get<double>(), (w[{e[0], e[1]}]), 1e-9);
    max_after = std::max(max_after, e[2].get<double>());
  }
  for (const auto& [k, v] : w) want_max = std::max(want_max, v);
  EXPECT_NEAR(max_after, want_max, 1e-9);
  EXPECT_EQ(run("trend --graph graph.json --outfits corpus --alpha-w 1 --out t1.json").code, 2);
}

TEST_F(Cli, EvaluateAllTiesGivesZeroScores) {
  {
    std::ofstream out(dir / "ties.csv");
    out << "method_i,method_j,score_i,score_j\n";
    for (int i = 0; i < 3; ++i)
      for (int j = i + 1; j < 3; ++j)
        for (int k = 0; k < 4; ++k) out << i << ',' << j << ",0.5,0.5\n";
  }
  const auto r = run("evaluate --records ties.csv");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_EQ(j.at("schema_version"), 1);
  EXPECT_TRUE(j.at("lambda").is_null());
  for (const auto& s : j.at("scores")) EXPECT_EQ(s.at("z"), 0.0);
}

TEST_F(Cli, EvaluateSimulatedRecords) {
  const auto r = run("evaluate --simulate 0,0.5,1 --n-o 3000 --records sim.csv --seed 4 --matrices");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_NEAR(j.at("half_width").get<double>(), 0.0253, 5e-5);
  EXPECT_LT(j["scores"][0]["z"].get<double>(), j["scores"][1]["z"].get<double>());
  EXPECT_LT(j["scores"][1]["z"].get<double>(), j["scores"][2]["z"].get<double>());
  EXPECT_TRUE(j.contains("matrices"));
  EXPECT_EQ(run("validate sim.csv").code, 0);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("recommend").code, 1);
  EXPECT_EQ(run("gen --out x --items banana").code, 1);
  EXPECT_EQ(run("recommend --graph graph.json --color notacolor").code, 1);
  EXPECT_EQ(run("recommend --graph missing.json").code, 2);
  EXPECT_EQ(run("recommend --graph graph.json --constraint tops:bogus:1").code, 2);
  EXPECT_EQ(run("recommend --graph graph.json --seed-vertex 100000").code, 2);
  {
    std::ofstream out(dir / "unanimous.csv");
    out << "method_i,method_j,score_i,score_j\n0,1,1,0\n0,1,1,0\n";
  }
  EXPECT_EQ(run("evaluate --records unanimous.csv").code, 3);
  EXPECT_EQ(run("grad-check --tolerance 1e-300").code, 3);
}

TEST_F(Cli, GradCheckPassesAtToyScale) {
  const auto r = run("grad-check");
  ASSERT_EQ(r.code, 0) << r.out << r.err;
  const auto j = json::parse(r.out);
  EXPECT_EQ(j.at("schema_version"), 1);
  EXPECT_LT(j.at("max_relative_error").get<double>(), 1e-3);
  EXPECT_TRUE(j.at("passed").get<bool>());
}

}  // namespace

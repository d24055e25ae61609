// pemb: file-based pipeline gen -> train -> embed -> cluster -> build-graph -> recommend.
//
// Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 numerical failure.
// Every option can also be set from the environment: global options as
// PEMB_<OPTION>, subcommand options as PEMB_<SUBCOMMAND>_<OPTION>, upper case
// with '-' mapped to '_' (PEMB_SEED, PEMB_TRAIN_EPOCHS, PEMB_RECOMMEND_TOPK).

#include <CLI11.hpp>

#include <cctype>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pemb/compograph/io.hpp"
#include "pemb/compograph/recommend.hpp"
#include "pemb/embednet/train.hpp"
#include "pemb/gradcheck.hpp"
#include "pemb/synth/corpus_io.hpp"
#include "pemb/thurstone.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pemb;

namespace {

constexpr int kOutputSchema = 1;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 1;
  bool seed_given = false;
  int verbosity = 1;
};
Globals g_globals;

void info(const std::string& msg) {
  if (g_globals.verbosity > 0) std::cerr << "pemb: " << msg << '\n';
}
void warn(const std::string& msg) { std::cerr << "pemb: warning: " << msg << '\n'; }

/// "-" is stdout. Files are written whole or not at all.
void write_text(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
    if (!out) throw std::runtime_error("failed writing " + path);
  }
  fs::rename(tmp, path);
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return json::parse(in);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, sep))
    if (!part.empty()) out.push_back(part);
  return out;
}

std::array<double, 3> parse_hex_color(std::string s) {
  if (!s.empty() && s[0] == '#') s.erase(0, 1);
  if (s.size() != 6 || s.find_first_not_of("0123456789abcdefABCDEF") != std::string::npos)
    throw UsageError("color must be a 6-digit hex value such as #d91a1a, got '" + s + "'");
  std::array<double, 3> rgb{};
  for (int c = 0; c < 3; ++c) rgb[c] = std::stoi(s.substr(2 * c, 2), nullptr, 16) / 255.0;
  return rgb;
}

// ---- gen ----------------------------------------------------------------------------

struct GenOptions {
  std::string out;
  synth::CorpusConfig cfg;
  std::size_t size = 32;
};

int cmd_gen(GenOptions o) {
  o.cfg.render.height = o.cfg.render.width = o.size;
  o.cfg.seed = g_globals.seed;
  const auto corpus = synth::generate_outfit_corpus(o.cfg);  // throws before anything is written
  synth::write_corpus(o.out, corpus, o.cfg);
  info("wrote " + std::to_string(corpus.items.size()) + " items and " + std::to_string(corpus.outfits.size()) +
       " outfits to " + o.out);
  return 0;
}

// ---- train --------------------------------------------------------------------------

struct TrainOptions {
  std::string corpus, out, config, log;
  bool resume = false;
  embednet::EmbedNetConfig flags;
  std::vector<std::pair<CLI::Option*, std::function<void(embednet::EmbedNetConfig&)>>> given;
};

template <class M>
void bind_field(CLI::App* app, TrainOptions& o, const std::string& name, M embednet::EmbedNetConfig::*field,
                const std::string& desc) {
  auto* opt = app->add_option("--" + name, o.flags.*field, desc)->capture_default_str();
  o.given.emplace_back(opt, [&o, field](embednet::EmbedNetConfig& c) { c.*field = o.flags.*field; });
}

embednet::EmbedNetConfig resolve_config(const TrainOptions& o) {
  embednet::EmbedNetConfig c;
  if (!o.config.empty()) c = read_json(o.config).get<embednet::EmbedNetConfig>();
  for (const auto& [opt, apply] : o.given)
    if (opt->count() > 0) apply(c);
  if (g_globals.seed_given) c.seed = g_globals.seed;
  return c;
}

int cmd_train(const TrainOptions& o) {
  auto cfg = resolve_config(o);
  const auto corpus = synth::read_corpus(o.corpus);
  if (corpus.items.size() < 2) throw std::invalid_argument("training needs at least two items");
  cfg.height = corpus.items.front().image.height;
  cfg.width = corpus.items.front().image.width;
  cfg.validate();
  if (cfg.alpha == 0) warn("alpha = 0: L_t is logged but does not drive updates");
  if (cfg.beta == 0) warn("beta = 0: L_e is logged but does not drive updates");
  const std::string log_path = o.log.empty() ? o.out + ".loss.csv" : o.log;

  embednet::TrainState<double> state;
  std::optional<embednet::EmbedNet<double>> model;
  if (o.resume && fs::exists(o.out)) {
    auto saved = embednet::load_model_config(o.out);
    saved.epochs = cfg.epochs;
    if (json(saved) != json(cfg)) throw std::invalid_argument("--resume: configuration differs from the checkpoint's");
    model.emplace(embednet::load_model<double>(o.out, &state));
    std::ifstream in(log_path);
    if (!in) throw std::runtime_error("--resume: cannot open loss log " + log_path);
    state.log = embednet::read_loss_log(in);
    if (state.log.size() < state.epochs_done) throw std::invalid_argument("--resume: loss log is shorter than the checkpoint");
    state.log.resize(state.epochs_done);
    info("resuming after epoch " + std::to_string(state.epochs_done));
  } else {
    model.emplace(cfg);
  }
  info("preparing " + std::to_string(corpus.items.size()) + " examples");
  const auto data = embednet::prepare_examples<double>(corpus.items, cfg);
  auto on_epoch = [&](const embednet::EpochLog& r) {
    std::ostringstream row;
    row.precision(6);
    row << "epoch " << r.epoch << ": L_i " << r.reconstruction << " L_t " << r.attribute << " L_p " << r.prediction
        << " L_e " << r.adversarial << " total " << r.total;
    info(row.str());
    embednet::save_model(o.out, *model, state);
    std::ostringstream csv;
    embednet::write_loss_log(csv, state.log);
    write_text(log_path, csv.str());
  };
  while (state.epochs_done < cfg.epochs) on_epoch(embednet::train_epoch(*model, data, state));
  if (state.log.empty()) {
    embednet::save_model(o.out, *model, state);
    std::ostringstream csv;
    embednet::write_loss_log(csv, state.log);
    write_text(log_path, csv.str());
  }
  return 0;
}

// ---- embed --------------------------------------------------------------------------

struct EmbedOptions {
  std::string corpus, model, out;
};

int cmd_embed(const EmbedOptions& o) {
  auto model = embednet::load_model<double>(o.model);
  const auto corpus = synth::read_corpus(o.corpus);
  const auto data = embednet::prepare_examples<double>(corpus.items, model.config());
  const auto emb = embednet::encode_all(model, data);
  std::vector<compograph::ItemEmbedding> items;
  for (std::size_t i = 0; i < data.size(); ++i) {
    compograph::ItemEmbedding e{data[i].id, std::string(synth::category_name(data[i].category)), emb[i].r1, emb[i].r2,
                                emb[i].r3, std::nullopt};
    e.rgb = {data[i].theme[0], data[i].theme[1], data[i].theme[2]};  // dominant theme color
    items.push_back(std::move(e));
  }
  std::ostringstream out;
  for (const auto& e : items) out << compograph::embedding_to_json(e).dump() << '\n';
  write_text(o.out, out.str());
  info("embedded " + std::to_string(items.size()) + " items");
  return 0;
}

// ---- cluster ------------------------------------------------------------------------

struct ClusterOptions {
  std::string embeddings, out;
  std::size_t n_p = 16;
};

compograph::ClusterTree load_tree(const std::string& path) {
  const auto j = read_json(path);
  if (j.contains("edges")) return compograph::graph_from_json(j).tree;
  if (j.value("schema_version", -1) != compograph::kGraphSchema)
    throw compograph::GraphFormatError(path + ": unsupported schema_version");
  return compograph::tree_from_json(j.at("tree"));
}

int cmd_cluster(const ClusterOptions& o) {
  compograph::ClusterConfig cfg;
  cfg.n_p = o.n_p;
  cfg.seed = g_globals.seed;
  const auto tree = compograph::hierarchical_cluster(compograph::group_by_category(compograph::read_embeddings(o.embeddings)), cfg);
  for (const auto& w : tree.warnings) warn(w);
  const json j{{"schema_version", compograph::kGraphSchema}, {"tree", compograph::tree_to_json(tree)}};
  write_text(o.out, j.dump(1) + "\n");
  info(std::to_string(tree.vertices.size()) + " leaf clusters over " + std::to_string(tree.categories.size()) +
       " categories");
  return 0;
}

// ---- build-graph / trend ----------------------------------------------------------------

/// Item id -> vertex: the tree's own assignment, else nearest centers from `embeddings`.
std::vector<compograph::VertexOutfit> resolve_outfits(const compograph::ClusterTree& tree,
                                                      const std::vector<synth::Outfit>& outfits,
                                                      const std::string& embeddings_path) {
  std::map<std::string, compograph::ItemEmbedding> extra;
  if (!embeddings_path.empty())
    for (auto& e : compograph::read_embeddings(embeddings_path)) extra.emplace(e.id, std::move(e));
  std::vector<compograph::VertexOutfit> out;
  for (const auto& o : outfits) {
    compograph::VertexOutfit v{o.id, {}, std::nullopt};
    if (o.like_count) v.like_count = static_cast<double>(*o.like_count);
    for (const auto& id : o.item_ids) {
      if (auto it = tree.item_vertex.find(id); it != tree.item_vertex.end()) {
        v.vertices.push_back(it->second);
      } else if (auto e = extra.find(id); e != extra.end()) {
        v.vertices.push_back(compograph::assign_item(tree, e->second));
      } else {
        throw std::invalid_argument(o.id + ": item " + id + " is neither clustered nor in --embeddings");
      }
    }
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<synth::Outfit> load_outfits(const std::string& path) {
  return synth::read_outfits(fs::is_directory(path) ? fs::path(path) / "outfits.jsonl" : fs::path(path));
}

struct BuildOptions {
  std::string tree, outfits, embeddings, out;
  double alpha_w = 1.0;
  bool score_weighted = false;
};

int cmd_build_graph(const BuildOptions& o) {
  const auto tree = load_tree(o.tree);
  auto g = compograph::make_graph(tree);
  compograph::AttributeMatchingMap m;
  const auto outfits = resolve_outfits(tree, load_outfits(o.outfits), o.embeddings);
  const auto pairs = compograph::ingest_corpus(g, m, outfits, {o.alpha_w, o.score_weighted});
  write_text(o.out, compograph::graph_to_json(tree, g, m).dump(1) + "\n");
  info(std::to_string(outfits.size()) + " outfits, " + std::to_string(pairs) + " pairs, " +
       std::to_string(g.weights.size()) + " edges");
  return 0;
}

struct TrendOptions {
  std::string graph, outfits, embeddings, out;
  double alpha_w = 2.0;
};

int cmd_trend(const TrendOptions& o) {
  auto b = compograph::load_graph(o.graph);
  const double before = b.graph.max_weight();
  const auto outfits = resolve_outfits(b.tree, load_outfits(o.outfits), o.embeddings);
  compograph::trend_update(b.graph, b.map, outfits, o.alpha_w);
  write_text(o.out, compograph::graph_to_json(b.tree, b.graph, b.map).dump(1) + "\n");
  std::ostringstream msg;
  msg.precision(17);
  msg << "max weight " << before << " -> " << b.graph.max_weight();
  info(msg.str());
  return 0;
}

// ---- recommend ------------------------------------------------------------------------

struct RecommendCliOptions {
  std::string graph, embeddings, out = "-", categories;
  std::string seed_item;
  long long seed_vertex = -1;
  std::vector<std::string> colors, constraints;
  compograph::RecommendOptions opt;
};

json outfit_to_json(const compograph::CompositionGraph& g, const compograph::ScoredOutfit& s, std::size_t rank) {
  json vs = json::array();
  for (auto v : s.vertices)
    vs.push_back({{"vertex", v},
                  {"category", g.vertices[v].category},
                  {"color", g.vertices[v].color},
                  {"shape", g.vertices[v].shape},
                  {"remaining", g.vertices[v].remaining}});
  return {{"schema_version", kOutputSchema},
          {"rank", rank},
          {"vertices", vs},
          {"S", s.S},
          {"S1", s.S1},
          {"S2", s.S2},
          {"alpha_s", s.alpha_s},
          {"attribute", {{"color", s.attribute[0]}, {"shape", s.attribute[1]}, {"remaining", s.attribute[2]}}},
          {"pairs", s.pairs}};
}

int cmd_recommend(RecommendCliOptions o) {
  const auto b = compograph::load_graph(o.graph);
  compograph::Query q;
  if (!o.seed_item.empty() && o.seed_vertex >= 0) throw UsageError("give --seed-item or --seed-vertex, not both");
  if (!o.seed_item.empty()) {
    if (auto it = b.tree.item_vertex.find(o.seed_item); it != b.tree.item_vertex.end()) {
      q.seed = it->second;
    } else {
      if (o.embeddings.empty()) throw std::invalid_argument("seed item " + o.seed_item + " is not clustered; pass --embeddings");
      for (const auto& e : compograph::read_embeddings(o.embeddings))
        if (e.id == o.seed_item) q.seed = compograph::assign_item(b.tree, e);
      if (!q.seed) throw std::invalid_argument("seed item " + o.seed_item + " is not in " + o.embeddings);
    }
  } else if (o.seed_vertex >= 0) {
    q.seed = static_cast<std::size_t>(o.seed_vertex);
  }
  q.categories = split(o.categories, ',');
  std::set<std::string> known;
  for (const auto& v : b.graph.vertices) known.insert(v.category);
  std::vector<std::string> fill = q.categories;
  if (fill.empty())
    for (const auto& c : known)
      if (!q.seed || c != b.graph.vertices.at(*q.seed).category) fill.push_back(c);
  for (const auto& spec : o.colors) {
    const auto eq = spec.find('=');
    const auto rgb = parse_hex_color(eq == std::string::npos ? spec : spec.substr(eq + 1));
    const std::vector<std::string> cats = eq == std::string::npos ? fill : std::vector<std::string>{spec.substr(0, eq)};
    for (const auto& c : cats) {
      if (!known.count(c)) throw std::invalid_argument("unknown category '" + c + "'");
      q.constraints.push_back({c, compograph::AttributeKind::color, compograph::nearest_color_cluster(b.tree, c, rgb)});
    }
  }
  for (const auto& spec : o.constraints) {
    const auto parts = split(spec, ':');
    if (parts.size() != 3) throw UsageError("--constraint takes category:attribute:cluster, got '" + spec + "'");
    std::size_t cluster = 0;
    try {
      cluster = std::stoul(parts[2]);
    } catch (const std::exception&) {
      throw UsageError("--constraint cluster must be a nonnegative integer, got '" + parts[2] + "'");
    }
    q.constraints.push_back({parts[0], compograph::parse_attribute_kind(parts[1]), cluster});
  }
  const auto rec = compograph::recommend(b.graph, b.map, q, o.opt);
  if (rec.seed_isolated) warn("seed vertex " + std::to_string(*q.seed) + " has no edges; nothing to recommend");
  std::ostringstream out;
  for (std::size_t r = 0; r < rec.outfits.size(); ++r) out << outfit_to_json(b.graph, rec.outfits[r], r + 1).dump() << '\n';
  write_text(o.out, out.str());
  return 0;
}

// ---- evaluate -----------------------------------------------------------------------

struct EvaluateOptions {
  std::string records, out = "-", simulate;
  std::size_t n_o = 100;
  double tau = 0.5;
  bool matrices = false;
};

int cmd_evaluate(const EvaluateOptions& o) {
  if (!o.simulate.empty()) {
    std::vector<double> scales;
    for (const auto& s : split(o.simulate, ',')) scales.push_back(std::stod(s));
    if (scales.size() < 2) throw UsageError("--simulate needs at least two scale values");
    thurstone::write_comparisons_csv(o.records, thurstone::simulate_judgments(scales, o.n_o, g_globals.seed));
    info("wrote simulated judgments to " + o.records);
  }
  std::size_t n = 0;
  const auto records = thurstone::read_comparisons_csv(o.records, &n);
  const auto report = thurstone::evaluate(records, n, o.tau);
  if (!report.lambda) warn("every comparison is a tie; lambda is undefined and all scores are 0");
  write_text(o.out, thurstone::report_to_json(report, o.matrices).dump(2) + "\n");
  return 0;
}

// ---- validate -----------------------------------------------------------------------

int cmd_validate(const std::string& path) {
  std::vector<std::string> problems;
  if (fs::is_directory(path)) {
    problems = synth::validate_corpus(path);
  } else {
    try {
      if (path.size() > 4 && path.substr(path.size() - 4) == ".csv") {
        std::size_t n = 0;
        const auto records = thurstone::read_comparisons_csv(path, &n);
        thurstone::tally(records, n);
      } else if (path.size() > 6 && path.substr(path.size() - 6) == ".jsonl") {
        compograph::read_embeddings(path);
      } else {
        load_tree(path);
      }
    } catch (const std::exception& e) {
      problems.push_back(e.what());
    }
  }
  for (const auto& p : problems) std::cerr << path << ": " << p << '\n';
  if (!problems.empty()) return 2;
  std::cout << path << ": ok\n";
  return 0;
}

// ---- grad-check ---------------------------------------------------------------------

struct GradCheckOptions {
  std::size_t size = 16, part_width = 4, items = 2;
  double epsilon = 1e-5, tolerance = 1e-3;
};

int cmd_grad_check(const GradCheckOptions& o) {
  embednet::EmbedNetConfig cfg;
  cfg.height = cfg.width = o.size;
  cfg.d1 = cfg.d2 = cfg.d3 = o.part_width;
  cfg.channels1 = 2;
  cfg.channels2 = 4;
  cfg.theme_colors = 2;
  cfg.color_hidden = 4;
  cfg.mask_hidden = 0;
  cfg.predictor_hidden = 4;
  cfg.seed = g_globals.seed;
  cfg.validate();
  synth::CorpusConfig cc;
  cc.items_per_category = o.items;
  cc.outfits = 1;
  cc.render.height = cc.render.width = o.size;
  cc.seed = g_globals.seed;
  const auto corpus = synth::generate_outfit_corpus(cc);
  embednet::EmbedNet<double> model(cfg);
  const auto batch = embednet::make_batch(embednet::prepare_examples<double>(corpus.items, cfg));
  const auto r = grad_check<double>(
      model.parameters(),
      [&](Graph<double>& g) {
        Rng noise(derive_seed(g_globals.seed, "grad-check-noise"));
        return model.losses(g, batch, embednet::Mode::batch_stats, &noise).total;
      },
      o.epsilon);
  const bool pass = r.max_relative_error < o.tolerance;
  std::cout << json{{"schema_version", kOutputSchema},
                    {"max_relative_error", r.max_relative_error},
                    {"worst_parameter", r.worst_parameter},
                    {"checked_elements", r.checked_elements},
                    {"tolerance", o.tolerance},
                    {"passed", pass}}
                   .dump(2)
            << '\n';
  return pass ? 0 : 3;
}

// ---- wiring ---------------------------------------------------------------------------

std::string env_name(const std::string& prefix, const std::string& option) {
  std::string s = prefix;
  for (char c : option) s += c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

void attach_env(CLI::App& app, const std::string& prefix) {
  for (auto* opt : app.get_options()) {
    const auto& names = opt->get_lnames();
    if (names.empty() || names.front() == "help") continue;
    opt->envname(env_name(prefix, names.front()));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Partitioned-embedding outfit composition pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->always_capture_default();
  auto* seed_opt = app.add_option("--seed", g_globals.seed, "Global seed; stage seeds are derived from it")
                       ->capture_default_str();
  app.add_flag("-v,--verbose", [](std::int64_t) { g_globals.verbosity = 2; }, "More logging");
  app.add_flag("-q,--quiet", [](std::int64_t) { g_globals.verbosity = 0; }, "Errors only");

  GenOptions gen;
  auto* s_gen = app.add_subcommand("gen", "Generate a synthetic corpus directory");
  s_gen->add_option("--out", gen.out, "Output directory")->required();
  s_gen->add_option("--items", gen.cfg.items_per_category, "Items per category");
  s_gen->add_option("--outfits", gen.cfg.outfits, "Number of outfits");
  s_gen->add_option("--colors", gen.cfg.colors, "Color classes");
  s_gen->add_option("--shapes", gen.cfg.shapes, "Shape classes");
  s_gen->add_option("--textures", gen.cfg.textures, "Texture classes");
  s_gen->add_option("--max-outfit-size", gen.cfg.max_outfit_size, "Largest outfit (2-5)");
  s_gen->add_option("--background-fraction", gen.cfg.background_fraction, "Share of outfits drawn without a rule");
  s_gen->add_option("--size", gen.size, "Image height and width");

  TrainOptions train;
  auto* s_train = app.add_subcommand("train", "Train the partitioned-embedding network");
  s_train->add_option("--corpus", train.corpus, "Corpus directory")->required();
  s_train->add_option("--out", train.out, "Checkpoint path (a .json sidecar is written next to it)")->required();
  s_train->add_option("--config", train.config, "Model configuration JSON; flags override it");
  s_train->add_option("--log", train.log, "Loss log CSV (default <out>.loss.csv)");
  s_train->add_flag("--resume", train.resume, "Continue from --out if it exists");
  bind_field(s_train, train, "epochs", &embednet::EmbedNetConfig::epochs, "Training epochs");
  bind_field(s_train, train, "batch-size", &embednet::EmbedNetConfig::batch_size, "Batch size");
  bind_field(s_train, train, "alpha", &embednet::EmbedNetConfig::alpha, "Weight of the attribute loss");
  bind_field(s_train, train, "beta", &embednet::EmbedNetConfig::beta, "Weight of the adversarial loss");
  bind_field(s_train, train, "lr-predictor", &embednet::EmbedNetConfig::lr_predictor, "Prediction-net learning rate");
  bind_field(s_train, train, "lr-encoder", &embednet::EmbedNetConfig::lr_encoder, "Encoder learning rate");
  bind_field(s_train, train, "predictor-steps", &embednet::EmbedNetConfig::predictor_steps, "Prediction updates per batch");
  bind_field(s_train, train, "d1", &embednet::EmbedNetConfig::d1, "Color part width");
  bind_field(s_train, train, "d2", &embednet::EmbedNetConfig::d2, "Shape part width");
  bind_field(s_train, train, "d3", &embednet::EmbedNetConfig::d3, "Remaining part width");
  bind_field(s_train, train, "channels1", &embednet::EmbedNetConfig::channels1, "First conv channels");
  bind_field(s_train, train, "channels2", &embednet::EmbedNetConfig::channels2, "Second conv channels");
  bind_field(s_train, train, "theme-colors", &embednet::EmbedNetConfig::theme_colors, "Colors per theme label");
  bind_field(s_train, train, "color-hidden", &embednet::EmbedNetConfig::color_hidden, "Color head hidden width (0 = linear)");
  bind_field(s_train, train, "mask-hidden", &embednet::EmbedNetConfig::mask_hidden, "Mask head hidden width (0 = linear)");
  bind_field(s_train, train, "predictor-hidden", &embednet::EmbedNetConfig::predictor_hidden, "Prediction-net hidden width");
  bind_field(s_train, train, "dropout", &embednet::EmbedNetConfig::dropout, "Dropout rate");

  EmbedOptions embed;
  auto* s_embed = app.add_subcommand("embed", "Encode corpus items into partitioned embeddings");
  s_embed->add_option("--corpus", embed.corpus, "Corpus directory")->required();
  s_embed->add_option("--model", embed.model, "Checkpoint from train")->required();
  s_embed->add_option("--out", embed.out, "Embeddings JSONL")->required();

  ClusterOptions cluster;
  auto* s_cluster = app.add_subcommand("cluster", "Hierarchical clustering of embeddings");
  s_cluster->add_option("--embeddings", cluster.embeddings, "Embeddings JSONL")->required();
  s_cluster->add_option("--out", cluster.out, "Cluster tree JSON")->required();
  s_cluster->add_option("--n-p", cluster.n_p, "Color clusters per category");

  BuildOptions build;
  auto* s_build = app.add_subcommand("build-graph", "Build the composition graph from outfits");
  s_build->add_option("--tree", build.tree, "Cluster tree JSON")->required();
  s_build->add_option("--outfits", build.outfits, "outfits.jsonl or a corpus directory")->required();
  s_build->add_option("--embeddings", build.embeddings, "Embeddings of items not in the tree");
  s_build->add_option("--out", build.out, "Graph JSON")->required();
  s_build->add_option("--alpha-w", build.alpha_w, "Increment for repeated co-occurrence");
  s_build->add_flag("--score-weighted", build.score_weighted, "Increment by like_count / max like_count");

  RecommendCliOptions rec;
  auto* s_rec = app.add_subcommand("recommend", "Rank outfits for a seed item and constraints");
  s_rec->add_option("--graph", rec.graph, "Graph JSON")->required();
  s_rec->add_option("--seed-item", rec.seed_item, "Seed item id");
  s_rec->add_option("--seed-vertex", rec.seed_vertex, "Seed vertex id");
  s_rec->add_option("--embeddings", rec.embeddings, "Embeddings for a seed item that is not clustered");
  s_rec->add_option("--categories", rec.categories, "Comma-separated categories to fill");
  s_rec->add_option("--color", rec.colors, "HEX or category=HEX; nearest labelled color cluster");
  s_rec->add_option("--constraint", rec.constraints, "category:attribute:cluster");
  s_rec->add_option("--topk", rec.opt.top_m, "Outfits to return");
  s_rec->add_option("--n-t", rec.opt.n_t, "Candidates per category");
  s_rec->add_option("--alpha-s", rec.opt.alpha_s, "Weight of the attribute score");
  s_rec->add_option("--epsilon", rec.opt.epsilon, "Dispersion guard");
  s_rec->add_option("--out", rec.out, "JSON lines output ('-' = stdout)");

  TrendOptions trend;
  auto* s_trend = app.add_subcommand("trend", "Decay weights and ingest newer outfits");
  s_trend->add_option("--graph", trend.graph, "Graph JSON")->required();
  s_trend->add_option("--outfits", trend.outfits, "Newer outfits JSONL or corpus directory")->required();
  s_trend->add_option("--embeddings", trend.embeddings, "Embeddings of items not in the tree");
  s_trend->add_option("--alpha-w", trend.alpha_w, "Increment for newer outfits (> 1)");
  s_trend->add_option("--out", trend.out, "Updated graph JSON")->required();

  EvaluateOptions ev;
  auto* s_eval = app.add_subcommand("evaluate", "Thurstone scaling of pairwise judgments");
  s_eval->add_option("--records", ev.records, "comparisons.csv")->required();
  s_eval->add_option("--tau", ev.tau, "Logistic guard");
  s_eval->add_flag("--matrices", ev.matrices, "Embed F, M, G and Z in the report");
  s_eval->add_option("--simulate", ev.simulate, "Comma-separated true scales; writes --records first");
  s_eval->add_option("--n-o", ev.n_o, "Observations per pair when simulating");
  s_eval->add_option("--out", ev.out, "Report JSON ('-' = stdout)");

  std::string validate_path;
  auto* s_val = app.add_subcommand("validate", "Check a corpus directory, graph/tree JSON, embeddings or comparisons");
  s_val->add_option("path", validate_path, "File or directory")->required();

  GradCheckOptions gc;
  auto* s_gc = app.add_subcommand("grad-check", "Finite-difference check of the full training objective");
  s_gc->add_option("--size", gc.size, "Image height and width");
  s_gc->add_option("--part-width", gc.part_width, "Width of each embedding part");
  s_gc->add_option("--items", gc.items, "Items per category in the batch");
  s_gc->add_option("--epsilon", gc.epsilon, "Finite-difference step");
  s_gc->add_option("--tolerance", gc.tolerance, "Largest accepted relative error");

  attach_env(app, "PEMB_");
  for (auto* sub : app.get_subcommands({})) attach_env(*sub, env_name("PEMB_", sub->get_name()) + "_");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  g_globals.seed_given = seed_opt->count() > 0;

  try {
    if (*s_gen) return cmd_gen(gen);
    if (*s_train) return cmd_train(train);
    if (*s_embed) return cmd_embed(embed);
    if (*s_cluster) return cmd_cluster(cluster);
    if (*s_build) return cmd_build_graph(build);
    if (*s_rec) return cmd_recommend(rec);
    if (*s_trend) return cmd_trend(trend);
    if (*s_eval) return cmd_evaluate(ev);
    if (*s_val) return cmd_validate(validate_path);
    if (*s_gc) return cmd_grad_check(gc);
  } catch (const UsageError& e) {
    std::cerr << "pemb: " << e.what() << '\n';
    return 1;
  } catch (const embednet::NonFiniteLoss& e) {
    std::cerr << "pemb: " << e.what() << '\n';
    return 3;
  } catch (const std::domain_error& e) {
    std::cerr << "pemb: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "pemb: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

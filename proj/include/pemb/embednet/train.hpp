#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pemb/checkpoint.hpp"
#include "pemb/embednet/model.hpp"
#include "pemb/optim.hpp"
#include "pemb/synth/generator.hpp"
#include "pemb/synth/preprocess.hpp"

namespace pemb::embednet {

/// One item with its image as [3,H,W] and its supervised labels.
template <class T>
struct Example {
  std::string id;
  synth::Category category = synth::Category::tops;
  Tensor<T> image;
  std::vector<T> theme;
  std::vector<T> mask;
};

template <class T>
Example<T> prepare_example(const synth::Item& item, const EmbedNetConfig& cfg) {
  if (item.image.height != cfg.height || item.image.width != cfg.width)
    throw ShapeError("item " + item.id + " is " + std::to_string(item.image.height) + "x" +
                     std::to_string(item.image.width) + ", model expects " + std::to_string(cfg.height) + "x" +
                     std::to_string(cfg.width));
  Example<T> ex;
  ex.id = item.id;
  ex.category = item.category;
  ex.image = synth::to_chw<T>(item.image);
  const auto mask = synth::extract_mask(item.image);
  for (double v : synth::extract_color_themes(item.image, mask, cfg.theme_colors).flatten())
    ex.theme.push_back(static_cast<T>(v));
  for (auto b : mask.bits) ex.mask.push_back(static_cast<T>(b));
  return ex;
}

template <class T>
std::vector<Example<T>> prepare_examples(const std::vector<synth::Item>& items, const EmbedNetConfig& cfg) {
  std::vector<Example<T>> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(prepare_example<T>(it, cfg));
  return out;
}

template <class T>
Batch<T> make_batch(const std::vector<Example<T>>& data, std::span<const std::size_t> idx) {
  if (idx.empty()) throw std::invalid_argument("empty batch");
  const auto& first = data.at(idx[0]);
  const std::size_t n = idx.size(), img = first.image.size(), th = first.theme.size(), mk = first.mask.size();
  Batch<T> b;
  b.images = Tensor<T>(Shape{n, first.image.dim(0), first.image.dim(1), first.image.dim(2)});
  const bool labelled = th > 0 && mk > 0;
  if (labelled) {
    b.themes = Tensor<T>(Shape{n, th});
    b.masks = Tensor<T>(Shape{n, mk});
  }
  for (std::size_t r = 0; r < n; ++r) {
    const auto& ex = data.at(idx[r]);
    if (ex.image.size() != img || ex.theme.size() != th || ex.mask.size() != mk)
      throw ShapeError("example " + ex.id + " differs in size from the rest of the batch");
    std::copy(ex.image.values().begin(), ex.image.values().end(), b.images.values().begin() + r * img);
    if (labelled) {
      std::copy(ex.theme.begin(), ex.theme.end(), b.themes.values().begin() + r * th);
      std::copy(ex.mask.begin(), ex.mask.end(), b.masks.values().begin() + r * mk);
    }
  }
  return b;
}

template <class T>
Batch<T> make_batch(const std::vector<Example<T>>& data) {
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  return make_batch(data, std::span<const std::size_t>(idx));
}

// ---- loss evaluations on a batch ---------------------------------------------

/// Mean squared error over every element.
template <class T>
T reconstruction_loss(const Tensor<T>& image, const Tensor<T>& decoded) {
  if (image.shape() != decoded.shape())
    throw ShapeError("reconstruction_loss: " + shape_string(image.shape()) + " vs " + shape_string(decoded.shape()));
  T acc = T(0);
  for (std::size_t i = 0; i < image.size(); ++i) acc += (image[i] - decoded[i]) * (image[i] - decoded[i]);
  return acc / static_cast<T>(image.size());
}

struct AttributeLoss {
  double color = 0;
  double shape = 0;  // mask BCE + divergence
  double total = 0;  // mean of the two
};

/// All evaluations below use batch statistics without touching the running
/// averages and draw no noise, so they are pure functions of parameters and batch.
template <class T>
AttributeLoss attribute_loss(EmbedNet<T>& model, const Batch<T>& batch) {
  Graph<T> g;
  const auto t = model.losses(g, batch, Mode::batch_stats);
  return {t.color.value().item(), (t.mask_bce.value().item() + t.divergence.value().item()),
          t.attribute.value().item()};
}

template <class T>
T prediction_loss(EmbedNet<T>& model, const Batch<T>& batch) {
  Graph<T> g;
  auto x = g.input("images", batch.images, model.image_shape(batch.size()));
  return model.prediction_loss(model.encode(g, x, Mode::batch_stats)).value().item();
}

template <class T>
T encoder_adversarial_loss(EmbedNet<T>& model, const Batch<T>& batch) {
  Graph<T> g;
  auto x = g.input("images", batch.images, model.image_shape(batch.size()));
  return neg(model.prediction_loss(model.encode(g, x, Mode::batch_stats))).value().item();
}

// ---- inference ------------------------------------------------------------------

struct PartitionedEmbedding {
  std::vector<double> r1, r2, r3;

  std::vector<double> concat() const {
    std::vector<double> v(r1);
    v.insert(v.end(), r2.begin(), r2.end());
    v.insert(v.end(), r3.begin(), r3.end());
    return v;
  }
  std::size_t width() const { return r1.size() + r2.size() + r3.size(); }
};

/// Eval-mode encoding; r2 is the shape-code mean.
template <class T>
std::vector<PartitionedEmbedding> encode(EmbedNet<T>& model, const Tensor<T>& images) {
  Graph<T> g;
  const auto& s = images.shape();
  auto x = g.input("images", images, model.image_shape(s.empty() ? 0 : s[0]));
  const auto c = model.encode(g, x, Mode::eval);
  std::vector<PartitionedEmbedding> out(s[0]);
  auto rows = [](const Tensor<T>& t, std::size_t r) {
    const std::size_t w = t.dim(1);
    return std::vector<double>(t.values().begin() + r * w, t.values().begin() + (r + 1) * w);
  };
  for (std::size_t r = 0; r < s[0]; ++r) out[r] = {rows(c.r1.value(), r), rows(c.mu2.value(), r), rows(c.r3.value(), r)};
  return out;
}

template <class T>
PartitionedEmbedding encode(EmbedNet<T>& model, const synth::Image& image) {
  const auto& cfg = model.config();
  if (image.height != cfg.height || image.width != cfg.width)
    throw ShapeError("image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     ", model expects " + std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
  auto chw = synth::to_chw<T>(image);
  return encode(model, chw.reshaped(Shape{1, 3, cfg.height, cfg.width})).front();
}

/// Encodes examples in chunks to bound memory.
template <class T>
std::vector<PartitionedEmbedding> encode_all(EmbedNet<T>& model, const std::vector<Example<T>>& data,
                                             std::size_t chunk = 64) {
  std::vector<PartitionedEmbedding> out;
  for (std::size_t b = 0; b < data.size(); b += chunk) {
    std::vector<std::size_t> idx(std::min(chunk, data.size() - b));
    std::iota(idx.begin(), idx.end(), b);
    for (auto& e : encode(model, make_batch(data, std::span<const std::size_t>(idx)).images)) out.push_back(std::move(e));
  }
  return out;
}

template <class T>
synth::Image decode(EmbedNet<T>& model, const std::vector<double>& embedding) {
  const auto& cfg = model.config();
  if (embedding.size() != cfg.embedding_width())
    throw ShapeError("embedding width " + std::to_string(embedding.size()) + ", model expects " +
                     std::to_string(cfg.embedding_width()));
  Graph<T> g;
  Tensor<T> e(Shape{1, embedding.size()});
  for (std::size_t i = 0; i < embedding.size(); ++i) e[i] = static_cast<T>(embedding[i]);
  const auto out = model.decode(g.input("embedding", std::move(e))).value();
  return synth::from_chw(out.data(), cfg.height, cfg.width);
}

// ---- training ---------------------------------------------------------------------

class NonFiniteLoss : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochLog {
  std::size_t epoch = 0;
  double reconstruction = 0, attribute = 0, prediction = 0, adversarial = 0, total = 0;
};

template <class T>
struct TrainState {
  std::size_t epochs_done = 0;
  OptimizerState<T> predictor;
  OptimizerState<T> encoder;
  std::vector<EpochLog> log;
};

/// Freezes every parameter whose name has one of the prefixes for its lifetime.
template <class T>
class FreezeGuard {
 public:
  FreezeGuard(ParameterSet<T>& params, const std::vector<std::string>& prefixes)
      : frozen_(params.with_prefix(prefixes)) {
    for (auto* p : frozen_) {
      saved_.push_back(p->frozen);
      p->frozen = true;
    }
  }
  ~FreezeGuard() {
    for (std::size_t i = 0; i < frozen_.size(); ++i) frozen_[i]->frozen = saved_[i];
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<Parameter<T>*> frozen_;
  std::vector<bool> saved_;
};

/// Phase P: encoders frozen, `steps` updates of the prediction nets on L_p.
/// The codes cannot change while the encoders are frozen, so they are
/// computed once. Returns L_p before the first update.
template <class T>
T predictor_step(EmbedNet<T>& model, const Batch<T>& batch, OptimizerState<T>& opt, std::size_t steps = 1) {
  auto& ps = model.parameters();
  FreezeGuard<T> freeze(ps, encoding_prefixes());
  Graph<T> enc;
  const auto codes = model.encode(enc, enc.input("images", batch.images, model.image_shape(batch.size())),
                                  Mode::batch_stats);
  const auto params = ps.with_prefix(predictor_prefixes());
  T first = T(0);
  for (std::size_t k = 0; k < steps; ++k) {
    ps.zero_grad();
    Graph<T> g;
    auto lp = model.prediction_loss(model.detached(g, codes));
    const T v = lp.value().item();
    if (!std::isfinite(static_cast<double>(v))) throw NonFiniteLoss("non-finite prediction loss");
    if (k == 0) first = v;
    g.backward(lp);
    step(params, opt, static_cast<T>(model.config().lr_predictor));
  }
  return first;
}

/// Phase E: prediction nets frozen, one update of encoders, decoder and heads
/// on L_i + alpha L_t + beta L_e. Returns the evaluated components.
template <class T>
EpochLog encoder_step(EmbedNet<T>& model, const Batch<T>& batch, OptimizerState<T>& opt, Rng& rng) {
  auto& ps = model.parameters();
  FreezeGuard<T> freeze(ps, predictor_prefixes());
  ps.zero_grad();
  Graph<T> g;
  const auto t = model.losses(g, batch, Mode::train, &rng);
  EpochLog out;
  out.reconstruction = t.reconstruction.value().item();
  out.attribute = t.attribute.value().item();
  out.prediction = t.prediction.value().item();
  out.adversarial = t.adversarial.value().item();
  out.total = t.total.value().item();
  if (!std::isfinite(out.total)) throw NonFiniteLoss("non-finite total loss");
  g.backward(t.total);
  step(ps.with_prefix(encoding_prefixes()), opt, static_cast<T>(model.config().lr_encoder));
  return out;
}

/// Batch order of an epoch; a trailing singleton is merged into the previous
/// batch because batch statistics need two rows.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                            std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "epoch-order", {epoch}));
  shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch_size)
    out.emplace_back(order.begin() + b, order.begin() + std::min(n, b + batch_size));
  if (out.size() > 1 && out.back().size() < 2) {
    out[out.size() - 2].insert(out[out.size() - 2].end(), out.back().begin(), out.back().end());
    out.pop_back();
  }
  return out;
}

/// Runs one epoch (numbered state.epochs_done + 1) and appends its log row:
/// row means of the phase-E components over the epoch's batches.
template <class T>
const EpochLog& train_epoch(EmbedNet<T>& model, const std::vector<Example<T>>& data, TrainState<T>& state) {
  const auto& cfg = model.config();
  if (data.size() < 2) throw std::invalid_argument("training needs at least two examples");
  const std::size_t epoch = state.epochs_done + 1;
  EpochLog acc;
  acc.epoch = epoch;
  const auto batches = epoch_batches(data.size(), cfg.batch_size, cfg.seed, epoch);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const auto batch = make_batch(data, std::span<const std::size_t>(batches[b]));
    const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(b + 1);
    try {
      predictor_step(model, batch, state.predictor, cfg.predictor_steps);
      Rng rng(derive_seed(cfg.seed, "batch-noise", {epoch, b}));
      const auto r = encoder_step(model, batch, state.encoder, rng);
      const double w = static_cast<double>(batch.size()) / static_cast<double>(data.size());
      acc.reconstruction += w * r.reconstruction;
      acc.attribute += w * r.attribute;
      acc.prediction += w * r.prediction;
      acc.adversarial += w * r.adversarial;
      acc.total += w * r.total;
    } catch (const NonFiniteLoss& e) {
      throw NonFiniteLoss(std::string(e.what()) + " at " + where);
    } catch (const NonFiniteGradient& e) {
      throw NonFiniteLoss(std::string(e.what()) + " at " + where);
    }
  }
  state.epochs_done = epoch;
  state.log.push_back(acc);
  return state.log.back();
}

/// Trains until `state.epochs_done == cfg.epochs`; `on_epoch` sees each new row.
template <class T>
void train(EmbedNet<T>& model, const std::vector<Example<T>>& data, TrainState<T>& state,
           const std::function<void(const EpochLog&)>& on_epoch = {}) {
  while (state.epochs_done < model.config().epochs) {
    const auto& row = train_epoch(model, data, state);
    if (on_epoch) on_epoch(row);
  }
}

inline void write_loss_log(std::ostream& out, const std::vector<EpochLog>& log) {
  out << "epoch,L_i,L_t,L_p,L_e,total\n";
  out.precision(17);
  for (const auto& r : log)
    out << r.epoch << ',' << r.reconstruction << ',' << r.attribute << ',' << r.prediction << ','
        << r.adversarial << ',' << r.total << '\n';
}

/// Inverse of write_loss_log.
inline std::vector<EpochLog> read_loss_log(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "epoch,L_i,L_t,L_p,L_e,total")
    throw std::invalid_argument("loss log header must be epoch,L_i,L_t,L_p,L_e,total");
  std::vector<EpochLog> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[6];
    for (auto& x : f)
      if (!std::getline(ss, x, ',')) throw std::invalid_argument("loss log row needs 6 fields: " + line);
    out.push_back({std::stoul(f[0]), std::stod(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5])});
  }
  return out;
}

// ---- checkpoints --------------------------------------------------------------------

inline constexpr int kCheckpointSchema = 1;

/// Parameters, batch-norm running statistics, both optimizer states and the
/// epoch counter, so a resumed run continues bit-identically.
template <class T>
std::map<std::string, Tensor<T>> checkpoint_tensors(EmbedNet<T>& model, const TrainState<T>& state) {
  auto out = model.parameters().snapshot();
  for (auto* bn : model.batch_norms()) {
    const auto& s = bn->stats();
    out.emplace("bn/" + bn->name() + "/mean", Tensor<T>(Shape{s.running_mean.size()}, s.running_mean));
    out.emplace("bn/" + bn->name() + "/var", Tensor<T>(Shape{s.running_var.size()}, s.running_var));
  }
  auto put_opt = [&](const std::string& tag, const OptimizerState<T>& o) {
    out.emplace("opt/" + tag + "/steps", Tensor<T>::scalar(static_cast<T>(o.step_count)));
    for (const auto& [k, v] : o.first_moment) out.emplace("opt/" + tag + "/m/" + k, v);
    for (const auto& [k, v] : o.second_moment) out.emplace("opt/" + tag + "/v/" + k, v);
  };
  put_opt("predictor", state.predictor);
  put_opt("encoder", state.encoder);
  out.emplace("train/epochs", Tensor<T>::scalar(static_cast<T>(state.epochs_done)));
  return out;
}

template <class T>
void restore_checkpoint(EmbedNet<T>& model, TrainState<T>& state, const std::map<std::string, Tensor<T>>& tensors) {
  auto& ps = model.parameters();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto it = tensors.find(ps[i].name);
    if (it == tensors.end()) throw checkpoint::FormatError("checkpoint lacks parameter " + ps[i].name);
    if (it->second.shape() != ps[i].value.shape())
      throw checkpoint::FormatError("checkpoint shape mismatch for " + ps[i].name);
    ps[i].value = it->second;
  }
  for (auto* bn : model.batch_norms()) {
    auto& s = bn->stats();
    const auto& m = tensors.at("bn/" + bn->name() + "/mean").values();
    const auto& v = tensors.at("bn/" + bn->name() + "/var").values();
    s.running_mean.assign(m.begin(), m.end());
    s.running_var.assign(v.begin(), v.end());
  }
  auto get_opt = [&](const std::string& tag, OptimizerState<T>& o) {
    o = OptimizerState<T>{};
    if (auto it = tensors.find("opt/" + tag + "/steps"); it != tensors.end())
      o.step_count = static_cast<std::uint64_t>(it->second.item());
    const std::string pm = "opt/" + tag + "/m/", pv = "opt/" + tag + "/v/";
    for (const auto& [k, v] : tensors) {
      if (k.rfind(pm, 0) == 0) o.first_moment[k.substr(pm.size())] = v;
      if (k.rfind(pv, 0) == 0) o.second_moment[k.substr(pv.size())] = v;
    }
  };
  get_opt("predictor", state.predictor);
  get_opt("encoder", state.encoder);
  state.epochs_done = 0;
  if (auto it = tensors.find("train/epochs"); it != tensors.end())
    state.epochs_done = static_cast<std::size_t>(it->second.item());
}

/// Writes `path` (tensor container) and `path.json` (config sidecar).
template <class T>
void save_model(const std::string& path, EmbedNet<T>& model, const TrainState<T>& state) {
  checkpoint::save(path, checkpoint_tensors(model, state));
  nlohmann::json side{{"schema_version", kCheckpointSchema},
                      {"precision", sizeof(T) * 8},
                      {"epochs_done", state.epochs_done},
                      {"config", model.config()}};
  std::ofstream out(path + ".json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path + ".json");
  out << side.dump(2) << '\n';
}

inline EmbedNetConfig load_model_config(const std::string& path) {
  std::ifstream in(path + ".json");
  if (!in) throw std::runtime_error("cannot open " + path + ".json");
  const auto side = nlohmann::json::parse(in);
  if (side.value("schema_version", -1) != kCheckpointSchema)
    throw checkpoint::FormatError(path + ".json: unsupported schema_version");
  return side.at("config").get<EmbedNetConfig>();
}

template <class T>
EmbedNet<T> load_model(const std::string& path, TrainState<T>* state = nullptr) {
  EmbedNet<T> model(load_model_config(path));
  TrainState<T> local;
  restore_checkpoint(model, state ? *state : local, checkpoint::load<T>(path));
  return model;
}

}  // namespace pemb::embednet

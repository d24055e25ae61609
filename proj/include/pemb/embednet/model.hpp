#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "pemb/autodiff.hpp"
#include "pemb/embednet/config.hpp"
#include "pemb/layers.hpp"
#include "pemb/ops.hpp"
#include "pemb/rng.hpp"

namespace pemb::embednet {

/// train: batch statistics, running-statistic updates.
/// batch_stats: batch statistics, running statistics untouched.
/// eval: running statistics; never samples or drops out.
enum class Mode { train, batch_stats, eval };

/// Images [N,3,H,W] with their labels: flattened color themes [N, 4k] and
/// binary shape masks [N, H*W].
template <class T>
struct Batch {
  Tensor<T> images;
  Tensor<T> themes;
  Tensor<T> masks;

  std::size_t size() const { return images.empty() ? 0 : images.dim(0); }
  bool labelled() const { return !themes.empty() && !masks.empty(); }
};

template <class T>
struct Codes {
  Var<T> r1, mu2, logvar2, r3;
  Var<T> z2;  // reparameterised sample in training, mu2 otherwise
};

template <class T>
struct LossTerms {
  Var<T> reconstruction;  // L_i
  Var<T> color;           // theme regression
  Var<T> mask_bce;
  Var<T> divergence;      // KL of the shape code, per pixel
  Var<T> attribute;       // L_t
  Var<T> prediction;      // L_p
  Var<T> adversarial;     // L_e
  Var<T> total;
};

/// Per-part predictor inputs: every other part in [r1; r2; r3] order.
inline constexpr std::array<std::array<int, 2>, 3> kPredictorInputs = {{{1, 2}, {0, 2}, {0, 1}}};

inline const std::vector<std::string>& predictor_prefixes() {
  static const std::vector<std::string> p = {"pnet"};
  return p;
}
inline const std::vector<std::string>& encoding_prefixes() {
  static const std::vector<std::string> p = {"enet", "dnet", "anet"};
  return p;
}

template <class T>
class EmbedNet {
 public:
  explicit EmbedNet(EmbedNetConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(derive_seed(cfg_.seed, "embednet-init"));
    const std::array<std::size_t, 3> widths = {cfg_.d1, cfg_.d2, cfg_.d3};
    const std::size_t c1 = cfg_.channels1, c2 = cfg_.channels2;
    const std::size_t flat = c2 * (cfg_.height / 4) * (cfg_.width / 4);
    const bool bn = cfg_.batch_norm;
    for (std::size_t i = 0; i < 3; ++i) {
      const auto name = "enet" + std::to_string(i + 1);
      auto& e = enc_[i];
      e.conv1 = Conv2d<T>(params_, name + ".conv1", 3, c1, 4, 2, 1, rng, !bn);
      if (bn) e.bn1 = BatchNorm<T>(params_, name + ".bn1", c1);
      e.conv2 = Conv2d<T>(params_, name + ".conv2", c1, c2, 4, 2, 1, rng, !bn);
      if (bn) e.bn2 = BatchNorm<T>(params_, name + ".bn2", c2);
      e.code = Dense<T>(params_, name + ".code", flat, widths[i], rng, cfg_.zero_init_codes);
      e.norm = BatchNorm<T>(params_, name + ".norm", widths[i], /*affine=*/false);
      if (i == 1) e.logvar = Dense<T>(params_, name + ".logvar", flat, widths[i], rng, cfg_.zero_init_codes);
    }
    dec_fc_ = Dense<T>(params_, "dnet.fc", cfg_.embedding_width(), flat, rng);
    dec_up1_ = ConvTranspose2d<T>(params_, "dnet.up1", c2, c1, 4, 2, 1, rng);
    dec_up2_ = ConvTranspose2d<T>(params_, "dnet.up2", c1, 3, 4, 2, 1, rng);
    // A zero hidden width makes the head a single affine map.
    if (cfg_.color_hidden) color1_ = Dense<T>(params_, "anet1.fc1", cfg_.d1, cfg_.color_hidden, rng);
    color2_ = Dense<T>(params_, "anet1.fc2", cfg_.color_hidden ? cfg_.color_hidden : cfg_.d1, cfg_.theme_width(), rng);
    if (cfg_.mask_hidden) mask1_ = Dense<T>(params_, "anet2.fc1", cfg_.d2, cfg_.mask_hidden, rng);
    mask2_ = Dense<T>(params_, "anet2.fc2", cfg_.mask_hidden ? cfg_.mask_hidden : cfg_.d2, cfg_.height * cfg_.width, rng);
    for (std::size_t i = 0; i < 3; ++i) {
      const auto name = "pnet" + std::to_string(i + 1);
      const std::size_t in = cfg_.embedding_width() - widths[i];
      pred_[i][0] = Dense<T>(params_, name + ".fc1", in, cfg_.predictor_hidden, rng);
      pred_[i][1] = Dense<T>(params_, name + ".fc2", cfg_.predictor_hidden, widths[i], rng);
    }
  }

  EmbedNet(EmbedNet&&) noexcept = default;
  EmbedNet& operator=(EmbedNet&&) noexcept = default;

  const EmbedNetConfig& config() const { return cfg_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }
  Shape image_shape(std::size_t n) const { return Shape{n, 3, cfg_.height, cfg_.width}; }

  std::vector<BatchNorm<T>*> batch_norms() {
    std::vector<BatchNorm<T>*> out;
    for (auto& e : enc_) {
      if (cfg_.batch_norm) {
        out.push_back(&e.bn1);
        out.push_back(&e.bn2);
      }
      out.push_back(&e.norm);
    }
    return out;
  }

  /// Encoder pass. `rng` drives dropout and the reparameterisation noise; it
  /// is ignored in eval mode and may be null for a deterministic pass.
  Codes<T> encode(Graph<T>& g, Var<T> images, Mode mode, Rng* rng = nullptr) {
    const auto& s = images.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] != cfg_.height || s[3] != cfg_.width) {
      throw ShapeError("node '" + g.node(images.id).op + "': expected images [N,3," +
                       std::to_string(cfg_.height) + "," + std::to_string(cfg_.width) + "], got " +
                       shape_string(s));
    }
    const bool stochastic = rng && mode != Mode::eval;
    std::array<Var<T>, 3> h;
    for (std::size_t i = 0; i < 3; ++i) h[i] = trunk(enc_[i], images, mode, stochastic ? rng : nullptr);
    // Codes are standardised per dimension, so no part can defeat its
    // predictor by growing in scale; L_p per part is then at most its width.
    const bool batch_stats = mode != Mode::eval, update = mode == Mode::train;
    std::array<Var<T>, 3> r;
    for (std::size_t i = 0; i < 3; ++i) r[i] = enc_[i].norm(enc_[i].code(h[i]), batch_stats, update);
    Codes<T> c;
    c.r1 = r[0];
    c.mu2 = r[1];
    c.logvar2 = enc_[1].logvar(h[1]);
    c.r3 = r[2];
    c.z2 = c.mu2;
    if (stochastic) {
      Tensor<T> eps(c.mu2.shape());
      for (auto& v : eps.values()) v = static_cast<T>(standard_normal(*rng));
      c.z2 = c.mu2 + exp(T(0.5) * c.logvar2) * g.constant(std::move(eps));
    }
    return c;
  }

  /// [N, d] embedding -> [N,3,H,W] image in [0,1].
  Var<T> decode(Var<T> embedding) {
    auto& g = *embedding.graph;
    const Shape s = embedding.shape();  // copied: pushing nodes may reallocate
    if (s.size() != 2 || s[1] != cfg_.embedding_width()) {
      throw ShapeError("node '" + g.node(embedding.id).op + "': expected embedding width " +
                       std::to_string(cfg_.embedding_width()) + ", got " + shape_string(s));
    }
    auto h = relu(dec_fc_(embedding));
    h = reshape(h, Shape{s[0], cfg_.channels2, cfg_.height / 4, cfg_.width / 4});
    h = relu(dec_up1_(h));
    return sigmoid(dec_up2_(h));
  }

  Var<T> color_theme(Var<T> r1) { return sigmoid(color2_(cfg_.color_hidden ? relu(color1_(r1)) : r1)); }
  Var<T> mask_logits(Var<T> z2) { return mask2_(cfg_.mask_hidden ? relu(mask1_(z2)) : z2); }

  /// Pnet i's estimate of part i from the other two (r2 enters as its mean).
  Var<T> predict_part(const Codes<T>& c, std::size_t i) {
    const std::array<Var<T>, 3> parts = {c.r1, c.mu2, c.r3};
    auto in = concat_cols<T>({parts[kPredictorInputs[i][0]], parts[kPredictorInputs[i][1]]});
    return pred_[i][1](relu(pred_[i][0](in)));
  }

  /// Codes as graph constants, for predictor updates that never reach the encoders.
  Codes<T> detached(Graph<T>& g, const Codes<T>& c) {
    Codes<T> d;
    d.r1 = g.constant(c.r1.value());
    d.mu2 = g.constant(c.mu2.value());
    d.logvar2 = g.constant(c.logvar2.value());
    d.r3 = g.constant(c.r3.value());
    d.z2 = d.mu2;
    return d;
  }

  /// Sum over parts of the per-element squared prediction error.
  Var<T> prediction_loss(const Codes<T>& c) {
    const std::array<Var<T>, 3> parts = {c.r1, c.mu2, c.r3};
    Var<T> total = mse(parts[0], predict_part(c, 0));
    for (std::size_t i = 1; i < 3; ++i) total = total + mse(parts[i], predict_part(c, i));
    return total;
  }

  /// Every term of the combined objective on one batch.
  LossTerms<T> losses(Graph<T>& g, const Batch<T>& batch, Mode mode, Rng* rng = nullptr) {
    if (!batch.labelled()) throw std::invalid_argument("batch is missing color-theme or mask labels");
    const std::size_t n = batch.size();
    auto x = g.input("images", batch.images, image_shape(n));
    auto themes = g.input("themes", batch.themes, Shape{n, cfg_.theme_width()});
    auto masks = g.input("masks", batch.masks, Shape{n, cfg_.height * cfg_.width});
    const auto c = encode(g, x, mode, rng);

    LossTerms<T> t;
    t.reconstruction = mse(decode(concat_cols<T>({c.r1, c.z2, c.r3})), x);
    t.color = mse(color_theme(c.r1), themes);
    t.mask_bce = bce_with_logits(mask_logits(c.z2), masks);
    t.divergence = scale(kl_standard_normal(c.mu2, c.logvar2), T(1) / static_cast<T>(cfg_.height * cfg_.width));
    // two labelled attributes: color, shape (= mask BCE + divergence)
    t.attribute = scale(t.color + (t.mask_bce + t.divergence), T(0.5));
    t.prediction = prediction_loss(c);
    t.adversarial = neg(t.prediction);
    t.total = t.reconstruction + scale(t.attribute, static_cast<T>(cfg_.alpha)) +
              scale(t.adversarial, static_cast<T>(cfg_.beta));
    return t;
  }

 private:
  struct Encoder {
    Conv2d<T> conv1, conv2;
    BatchNorm<T> bn1, bn2, norm;
    Dense<T> code, logvar;
  };

  Var<T> trunk(Encoder& e, Var<T> x, Mode mode, Rng* rng) {
    const bool batch_stats = mode != Mode::eval;
    const bool update = mode == Mode::train;
    auto h = e.conv1(x);
    if (cfg_.batch_norm) h = e.bn1(h, batch_stats, update);
    h = relu(h);
    if (rng && cfg_.dropout > 0) h = dropout(h, static_cast<T>(cfg_.dropout), *rng, true);
    h = e.conv2(h);
    if (cfg_.batch_norm) h = e.bn2(h, batch_stats, update);
    h = relu(h);
    if (rng && cfg_.dropout > 0) h = dropout(h, static_cast<T>(cfg_.dropout), *rng, true);
    return flatten(h);
  }

  EmbedNetConfig cfg_;
  ParameterSet<T> params_;
  std::array<Encoder, 3> enc_;
  Dense<T> dec_fc_;
  ConvTranspose2d<T> dec_up1_, dec_up2_;
  Dense<T> color1_, color2_, mask1_, mask2_;
  std::array<std::array<Dense<T>, 2>, 3> pred_;
};

/// L_i + alpha L_t + beta L_e on already-evaluated components.
inline double total_loss(double reconstruction, double attribute, double adversarial, double alpha, double beta) {
  if (alpha < 0 || beta < 0) throw std::invalid_argument("alpha and beta must be nonnegative");
  return reconstruction + alpha * attribute + beta * adversarial;
}

}  // namespace pemb::embednet

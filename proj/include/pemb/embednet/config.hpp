#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace pemb::embednet {

struct EmbedNetConfig {
  // image geometry; both extents must be divisible by 4 (two stride-2 stages)
  std::size_t height = 32;
  std::size_t width = 32;

  // part widths of [r1; r2; r3]
  std::size_t d1 = 8;
  std::size_t d2 = 8;
  std::size_t d3 = 4;

  // encoder/decoder channel counts of the two 4x4 stride-2 stages
  std::size_t channels1 = 8;
  std::size_t channels2 = 16;
  bool batch_norm = true;
  double dropout = 0.0;

  std::size_t theme_colors = 5;
  std::size_t color_hidden = 32;
  std::size_t mask_hidden = 64;
  std::size_t predictor_hidden = 32;

  double alpha = 2.0;
  double beta = 0.7;
  double lr_predictor = 1e-3;
  double lr_encoder = 1e-3;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::size_t predictor_steps = 1;  // P-steps per E-step

  // Zero-initialised code layers make an untrained encoder emit zeros.
  bool zero_init_codes = false;
  // Reserved: adversarial color generator in place of theme regression.
  bool gan_color_head = false;
  std::uint64_t seed = 1;

  std::size_t embedding_width() const { return d1 + d2 + d3; }
  std::size_t theme_width() const { return theme_colors * 4; }

  void validate() const {
    if (height < 8 || width < 8 || height % 4 || width % 4)
      throw std::invalid_argument("image extents must be >= 8 and divisible by 4");
    if (!d1 || !d2 || !d3) throw std::invalid_argument("part widths must be positive");
    if (!channels1 || !channels2 || !theme_colors || !predictor_hidden)
      throw std::invalid_argument("layer widths must be positive");
    if (alpha < 0 || beta < 0) throw std::invalid_argument("alpha and beta must be nonnegative");
    if (!(lr_predictor > 0) || !(lr_encoder > 0)) throw std::invalid_argument("learning rates must be positive");
    if (!batch_size) throw std::invalid_argument("batch size must be positive");
    if (!predictor_steps) throw std::invalid_argument("predictor steps must be positive");
    if (dropout < 0 || dropout >= 1) throw std::invalid_argument("dropout must lie in [0,1)");
    if (gan_color_head) throw std::invalid_argument("the adversarial color head is not implemented");
  }
};

inline void to_json(nlohmann::json& j, const EmbedNetConfig& c) {
  j = nlohmann::json{{"height", c.height},
                     {"width", c.width},
                     {"d1", c.d1},
                     {"d2", c.d2},
                     {"d3", c.d3},
                     {"channels1", c.channels1},
                     {"channels2", c.channels2},
                     {"batch_norm", c.batch_norm},
                     {"dropout", c.dropout},
                     {"theme_colors", c.theme_colors},
                     {"color_hidden", c.color_hidden},
                     {"mask_hidden", c.mask_hidden},
                     {"predictor_hidden", c.predictor_hidden},
                     {"alpha", c.alpha},
                     {"beta", c.beta},
                     {"lr_predictor", c.lr_predictor},
                     {"lr_encoder", c.lr_encoder},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"predictor_steps", c.predictor_steps},
                     {"zero_init_codes", c.zero_init_codes},
                     {"gan_color_head", c.gan_color_head},
                     {"seed", c.seed}};
}

// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, EmbedNetConfig& c) {
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  opt("height", c.height);
  opt("width", c.width);
  opt("d1", c.d1);
  opt("d2", c.d2);
  opt("d3", c.d3);
  opt("channels1", c.channels1);
  opt("channels2", c.channels2);
  opt("batch_norm", c.batch_norm);
  opt("dropout", c.dropout);
  opt("theme_colors", c.theme_colors);
  opt("color_hidden", c.color_hidden);
  opt("mask_hidden", c.mask_hidden);
  opt("predictor_hidden", c.predictor_hidden);
  opt("alpha", c.alpha);
  opt("beta", c.beta);
  opt("lr_predictor", c.lr_predictor);
  opt("lr_encoder", c.lr_encoder);
  opt("epochs", c.epochs);
  opt("batch_size", c.batch_size);
  opt("predictor_steps", c.predictor_steps);
  opt("zero_init_codes", c.zero_init_codes);
  opt("gan_color_head", c.gan_color_head);
  opt("seed", c.seed);
}

}  // namespace pemb::embednet

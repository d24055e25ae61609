#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pemb/tensor.hpp"

namespace pemb::synth {

using Rgb = std::array<double, 3>;

/// H x W x 3 raster, interleaved RGB, values in [0,1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, Rgb fill = {1.0, 1.0, 1.0}) : height(h), width(w), pixels(h * w * 3) {
    for (std::size_t i = 0; i < h * w; ++i)
      for (std::size_t c = 0; c < 3; ++c) pixels[i * 3 + c] = fill[c];
  }

  double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }

  Rgb rgb(std::size_t y, std::size_t x) const { return {at(y, x, 0), at(y, x, 1), at(y, x, 2)}; }
  void set(std::size_t y, std::size_t x, const Rgb& v) {
    for (std::size_t c = 0; c < 3; ++c) at(y, x, c) = v[c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Binary H x W raster, row-major; 1 = foreground.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(std::size_t h, std::size_t w) : height(h), width(w), bits(h * w, 0) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return bits[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return bits[y * width + x]; }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits) n += b;
    return n;
  }

  friend bool operator==(const Mask&, const Mask&) = default;
};

inline double iou(const Mask& a, const Mask& b) {
  if (a.height != b.height || a.width != b.width) throw std::invalid_argument("iou of masks with different sizes");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    inter += a.bits[i] && b.bits[i];
    uni += a.bits[i] || b.bits[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// [3,H,W] planar tensor view of the image for the networks.
template <class T>
Tensor<T> to_chw(const Image& img) {
  Tensor<T> t(Shape{3, img.height, img.width});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x)
        t[(c * img.height + y) * img.width + x] = static_cast<T>(img.at(y, x, c));
  return t;
}

template <class T>
Image from_chw(const T* data, std::size_t h, std::size_t w) {
  Image img(h, w);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) img.at(y, x, c) = static_cast<double>(data[(c * h + y) * w + x]);
  return img;
}

inline std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Binary PPM (P6), maxval 255.
inline void write_ppm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<char> buf(img.pixels.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<char>(quantize(img.pixels[i]));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("failed writing " + path);
}

inline Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  auto token = [&]() {
    std::string t;
    while (in >> t) {
      if (t[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return t;
    }
    throw std::runtime_error("truncated PPM header in " + path);
  };
  if (token() != "P6") throw std::runtime_error(path + " is not a binary PPM");
  const auto w = std::stoul(token());
  const auto h = std::stoul(token());
  const auto maxval = std::stoul(token());
  if (maxval != 255 || w == 0 || h == 0) throw std::runtime_error("unsupported PPM in " + path);
  in.get();
  std::vector<char> buf(w * h * 3);
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!in) throw std::runtime_error("truncated PPM data in " + path);
  Image img(h, w);
  for (std::size_t i = 0; i < buf.size(); ++i)
    img.pixels[i] = static_cast<double>(static_cast<unsigned char>(buf[i])) / 255.0;
  return img;
}

}  // namespace pemb::synth

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "panosim/geo.hpp"

namespace panosim {

/// Row-major interleaved 8-bit RGB.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::size_t offset(int x, int y) const { return (static_cast<std::size_t>(y) * width + x) * 3; }
  Rgb8 at(int x, int y) const {
    const auto* p = pixels.data() + offset(x, y);
    return {p[0], p[1], p[2]};
  }
  void set(int x, int y, Rgb8 c) {
    auto* p = pixels.data() + offset(x, y);
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }
  friend bool operator==(const RgbImage&, const RgbImage&) = default;
};

/// Row-major interleaved 8-bit RGBA, straight (non-premultiplied) alpha.
struct RgbaImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  RgbaImage() = default;
  RgbaImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 4, 0) {}

  std::size_t offset(int x, int y) const { return (static_cast<std::size_t>(y) * width + x) * 4; }
  friend bool operator==(const RgbaImage&, const RgbaImage&) = default;
};

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ImageEncoding { kPng, kJpeg };

RgbImage decode_rgb(std::span<const std::uint8_t> bytes);
RgbImage read_rgb(const std::filesystem::path& path);
/// Images without an alpha channel decode as fully opaque.
RgbaImage decode_rgba(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode(const RgbImage& image, ImageEncoding encoding, int jpeg_quality = 90);
std::vector<std::uint8_t> encode_png(const RgbaImage& image);
void write_image(const std::filesystem::path& path, const RgbImage& image);

}  // namespace panosim

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "edgelite/tensor.hpp"

namespace edgelite {

/// 8-bit RGB raster, row-major, interleaved channels.
struct Image {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::int64_t w, std::int64_t h, std::uint8_t fill = 0);

  std::uint8_t& at(std::int64_t x, std::int64_t y, int c) { return pixels[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::int64_t x, std::int64_t y, int c) const { return pixels[(y * width + x) * 3 + c]; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Straight (non-premultiplied) RGBA cutout.
struct RgbaImage {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<std::uint8_t> pixels;

  RgbaImage() = default;
  RgbaImage(std::int64_t w, std::int64_t h, std::uint8_t fill = 0);

  std::uint8_t& at(std::int64_t x, std::int64_t y, int c) { return pixels[(y * width + x) * 4 + c]; }
  std::uint8_t at(std::int64_t x, std::int64_t y, int c) const { return pixels[(y * width + x) * 4 + c]; }
};

/// Binary PPM (P6, maxval 255).
std::vector<std::uint8_t> encode_ppm(const Image& img);
Image decode_ppm(std::span<const std::uint8_t> bytes);
Image load_image(const std::filesystem::path& path);
void save_image(const Image& img, const std::filesystem::path& path);

/// Bilinear resampling with half-pixel centres and clamped borders.
Image resize_bilinear(const Image& img, std::int64_t width, std::int64_t height);
RgbaImage resize_bilinear(const RgbaImage& img, std::int64_t width, std::int64_t height);

struct Placement {
  std::int64_t x = 0;
  std::int64_t y = 0;
  double scale = 1.0;
};

/// Scaled size of a cutout under `place`.
std::int64_t placed_extent(std::int64_t extent, double scale);

/// Alpha-over blend of `cutout` resized by `place.scale` with its top-left
/// corner at (x, y). Placement error when it leaves the background.
Image composite_hazard(const Image& background, const RgbaImage& cutout, const Placement& place);

struct AugmentSpec {
  bool hflip = false;
  std::int64_t dx = 0;
  std::int64_t dy = 0;
  double zoom = 1.0;
  int brightness = 0;
};

/// flip, then shift, then zoom about the centre, then brightness. Vacated
/// pixels replicate the nearest edge.
Image augment(const Image& img, const AugmentSpec& spec);

/// (n, 3, h, w) float tensor with pixels mapped to [-1, 1].
Tensor images_to_tensor(std::span<const Image> images);
Tensor image_to_tensor(const Image& img);

}  // namespace edgelite

#include "edgelite/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <string>

#include "edgelite/model.hpp"
#include "edgelite/serialize.hpp"

namespace edgelite {

namespace {

std::uint8_t clamp_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0)); }

void require_extent(std::int64_t w, std::int64_t h) {
  require(w >= 1 && h >= 1, ErrorKind::shape, "image dimensions must be positive");
}

// Reads one whitespace-delimited header token, skipping comments.
std::int64_t header_number(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  for (;;) {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  require(pos < bytes.size(), ErrorKind::truncated, "ppm header is truncated");
  require(std::isdigit(bytes[pos]) != 0, ErrorKind::decode, "malformed ppm header");
  std::int64_t v = 0;
  while (pos < bytes.size() && std::isdigit(bytes[pos])) {
    v = v * 10 + (bytes[pos++] - '0');
    require(v <= 1'000'000, ErrorKind::decode, "ppm dimension out of range");
  }
  return v;
}

template <int C>
void resample(const std::uint8_t* src, std::int64_t sw, std::int64_t sh, std::uint8_t* dst, std::int64_t dw,
              std::int64_t dh) {
  const double fx = static_cast<double>(sw) / dw;
  const double fy = static_cast<double>(sh) / dh;
  for (std::int64_t y = 0; y < dh; ++y) {
    const double sy = std::clamp((y + 0.5) * fy - 0.5, 0.0, static_cast<double>(sh - 1));
    const auto y0 = static_cast<std::int64_t>(sy);
    const std::int64_t y1 = std::min(y0 + 1, sh - 1);
    const double wy = sy - y0;
    for (std::int64_t x = 0; x < dw; ++x) {
      const double sx = std::clamp((x + 0.5) * fx - 0.5, 0.0, static_cast<double>(sw - 1));
      const auto x0 = static_cast<std::int64_t>(sx);
      const std::int64_t x1 = std::min(x0 + 1, sw - 1);
      const double wx = sx - x0;
      for (int c = 0; c < C; ++c) {
        const double top = src[(y0 * sw + x0) * C + c] * (1 - wx) + src[(y0 * sw + x1) * C + c] * wx;
        const double bottom = src[(y1 * sw + x0) * C + c] * (1 - wx) + src[(y1 * sw + x1) * C + c] * wx;
        dst[(y * dw + x) * C + c] = clamp_u8(top * (1 - wy) + bottom * wy);
      }
    }
  }
}

}  // namespace

Image::Image(std::int64_t w, std::int64_t h, std::uint8_t fill) : width(w), height(h) {
  require_extent(w, h);
  pixels.assign(static_cast<std::size_t>(w * h * 3), fill);
}

RgbaImage::RgbaImage(std::int64_t w, std::int64_t h, std::uint8_t fill) : width(w), height(h) {
  require_extent(w, h);
  pixels.assign(static_cast<std::size_t>(w * h * 4), fill);
}

std::vector<std::uint8_t> encode_ppm(const Image& img) {
  require(img.width >= 1 && img.height >= 1 &&
              img.pixels.size() == static_cast<std::size_t>(img.width * img.height * 3),
          ErrorKind::shape, "image buffer does not match its dimensions");
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

Image decode_ppm(std::span<const std::uint8_t> bytes) {
  require(bytes.size() >= 2, ErrorKind::truncated, "ppm file is truncated");
  require(bytes[0] == 'P' && bytes[1] == '6', ErrorKind::bad_magic, "not a binary ppm (P6) file");
  std::size_t pos = 2;
  const std::int64_t w = header_number(bytes, pos);
  const std::int64_t h = header_number(bytes, pos);
  const std::int64_t maxval = header_number(bytes, pos);
  require(w >= 1 && h >= 1, ErrorKind::decode, "ppm dimensions must be positive");
  require(maxval == 255, ErrorKind::decode, "only maxval 255 is supported");
  require(pos < bytes.size() && std::isspace(bytes[pos]), ErrorKind::truncated, "ppm header is truncated");
  ++pos;
  const auto need = static_cast<std::size_t>(w * h * 3);
  require(bytes.size() - pos >= need, ErrorKind::truncated, "ppm pixel data is truncated");
  Image img(w, h);
  std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(pos), need, img.pixels.begin());
  return img;
}

Image load_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_ppm(bytes);
}

void save_image(const Image& img, const std::filesystem::path& path) { write_file(path, encode_ppm(img)); }

Image resize_bilinear(const Image& img, std::int64_t width, std::int64_t height) {
  if (width == img.width && height == img.height) return img;
  Image out(width, height);
  resample<3>(img.pixels.data(), img.width, img.height, out.pixels.data(), width, height);
  return out;
}

RgbaImage resize_bilinear(const RgbaImage& img, std::int64_t width, std::int64_t height) {
  if (width == img.width && height == img.height) return img;
  RgbaImage out(width, height);
  resample<4>(img.pixels.data(), img.width, img.height, out.pixels.data(), width, height);
  return out;
}

std::int64_t placed_extent(std::int64_t extent, double scale) {
  return std::max<std::int64_t>(1, std::llround(static_cast<double>(extent) * scale));
}

Image composite_hazard(const Image& background, const RgbaImage& cutout, const Placement& place) {
  require(place.scale > 0.0 && std::isfinite(place.scale), ErrorKind::placement, "cutout scale must be positive");
  const std::int64_t w = placed_extent(cutout.width, place.scale);
  const std::int64_t h = placed_extent(cutout.height, place.scale);
  require(place.x >= 0 && place.y >= 0 && place.x + w <= background.width && place.y + h <= background.height,
          ErrorKind::placement, "cutout does not fit inside the background");
  const RgbaImage scaled = resize_bilinear(cutout, w, h);
  Image out = background;
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const std::uint32_t a = scaled.at(x, y, 3);
      for (int c = 0; c < 3; ++c) {
        std::uint8_t& dst = out.at(place.x + x, place.y + y, c);
        dst = static_cast<std::uint8_t>((a * scaled.at(x, y, c) + (255 - a) * dst + 127) / 255);
      }
    }
  }
  return out;
}

Image augment(const Image& img, const AugmentSpec& spec) {
  require(spec.zoom >= 0.5 && spec.zoom <= 2.0, ErrorKind::spec, "zoom must lie in [0.5, 2]");
  require(std::abs(spec.dx) <= img.width && std::abs(spec.dy) <= img.height, ErrorKind::spec,
          "shift exceeds the image size");
  require(spec.brightness >= -255 && spec.brightness <= 255, ErrorKind::spec, "brightness must lie in [-255, 255]");
  const std::int64_t w = img.width;
  const std::int64_t h = img.height;
  Image cur = img;
  if (spec.hflip) {
    Image next(w, h);
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) next.at(x, y, c) = cur.at(w - 1 - x, y, c);
      }
    }
    cur = std::move(next);
  }
  if (spec.dx != 0 || spec.dy != 0) {
    Image next(w, h);
    for (std::int64_t y = 0; y < h; ++y) {
      const std::int64_t sy = std::clamp<std::int64_t>(y - spec.dy, 0, h - 1);
      for (std::int64_t x = 0; x < w; ++x) {
        const std::int64_t sx = std::clamp<std::int64_t>(x - spec.dx, 0, w - 1);
        for (int c = 0; c < 3; ++c) next.at(x, y, c) = cur.at(sx, sy, c);
      }
    }
    cur = std::move(next);
  }
  if (spec.zoom != 1.0) {
    Image next(w, h);
    const double cx = w / 2.0;
    const double cy = h / 2.0;
    for (std::int64_t y = 0; y < h; ++y) {
      const double sy = std::clamp((y + 0.5 - cy) / spec.zoom + cy - 0.5, 0.0, static_cast<double>(h - 1));
      const auto y0 = static_cast<std::int64_t>(sy);
      const std::int64_t y1 = std::min(y0 + 1, h - 1);
      const double wy = sy - y0;
      for (std::int64_t x = 0; x < w; ++x) {
        const double sx = std::clamp((x + 0.5 - cx) / spec.zoom + cx - 0.5, 0.0, static_cast<double>(w - 1));
        const auto x0 = static_cast<std::int64_t>(sx);
        const std::int64_t x1 = std::min(x0 + 1, w - 1);
        const double wx = sx - x0;
        for (int c = 0; c < 3; ++c) {
          const double top = cur.at(x0, y0, c) * (1 - wx) + cur.at(x1, y0, c) * wx;
          const double bottom = cur.at(x0, y1, c) * (1 - wx) + cur.at(x1, y1, c) * wx;
          next.at(x, y, c) = clamp_u8(top * (1 - wy) + bottom * wy);
        }
      }
    }
    cur = std::move(next);
  }
  if (spec.brightness != 0) {
    for (auto& p : cur.pixels) p = static_cast<std::uint8_t>(std::clamp(p + spec.brightness, 0, 255));
  }
  return cur;
}

Tensor images_to_tensor(std::span<const Image> images) {
  require(!images.empty(), ErrorKind::shape, "no images to batch");
  const std::int64_t w = images.front().width;
  const std::int64_t h = images.front().height;
  Tensor out({static_cast<std::int64_t>(images.size()), 3, h, w});
  auto dst = out.mutable_data();
  const std::int64_t plane = w * h;
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = images[n];
    require(img.width == w && img.height == h, ErrorKind::shape, "batch images differ in size");
    float* base = dst.data() + static_cast<std::int64_t>(n) * 3 * plane;
    for (std::int64_t i = 0; i < plane; ++i) {
      for (int c = 0; c < 3; ++c) base[c * plane + i] = normalize_pixel(img.pixels[i * 3 + c]);
    }
  }
  return out;
}

Tensor image_to_tensor(const Image& img) { return images_to_tensor(std::span<const Image>(&img, 1)); }

}  // namespace edgelite

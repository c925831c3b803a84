#pragma once

// 8-bit PNG read/write through libpng.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "errors.hpp"
#include "texel_map.hpp"
#include "types.hpp"

namespace meshforge {

struct Rgb8Image {
  int width = 0;
  int height = 0;
  int channels = 3;  // 1 (gray) or 3 (rgb)
  std::vector<std::uint8_t> pixels;
};

inline std::uint8_t quantize(double x) { return std::uint8_t(std::lround(std::clamp(x, 0.0, 1.0) * 255.0)); }

inline void write_png(const std::filesystem::path& path, const Rgb8Image& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = png_uint_32(img.width);
  image.height = png_uint_32(img.height);
  image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr))
    throw IoError("cannot write '" + path.string() + "': " + image.message);
}

inline Rgb8Image read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw IoError("cannot read '" + path.string() + "': " + image.message);
  const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Rgb8Image img;
  img.width = int(image.width);
  img.height = int(image.height);
  img.channels = gray ? 1 : 3;
  img.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("cannot decode '" + path.string() + "': " + image.message);
  }
  return img;
}

inline Rgb8Image to_rgb8(const Image& img) {
  Rgb8Image out{img.width, img.height, 3, std::vector<std::uint8_t>(img.rgb.size())};
  for (std::size_t i = 0; i < img.rgb.size(); ++i) out.pixels[i] = quantize(img.rgb[i]);
  return out;
}

inline Rgb8Image alpha_to_gray8(const Image& img) {
  Rgb8Image out{img.width, img.height, 1, std::vector<std::uint8_t>(img.alpha.size())};
  for (std::size_t i = 0; i < img.alpha.size(); ++i) out.pixels[i] = quantize(img.alpha[i]);
  return out;
}

// Alpha is set to 1 everywhere; PNG targets carry no coverage.
inline Image from_rgb8(const Rgb8Image& img) {
  Image out(img.width, img.height);
  for (std::size_t i = 0; i < out.pixel_count(); ++i) {
    for (int c = 0; c < 3; ++c) out.rgb[3 * i + c] = img.pixels[i * img.channels + (img.channels == 1 ? 0 : c)] / 255.0;
    out.alpha[i] = 1.0;
  }
  return out;
}

inline void save_image_png(const std::filesystem::path& path, const Image& img) { write_png(path, to_rgb8(img)); }
inline Image load_image_png(const std::filesystem::path& path) { return from_rgb8(read_png(path)); }

// Colour maps are written as sigmoid(logit); normal maps as (n + 1) / 2.
inline Rgb8Image texel_map_to_rgb8(const TexelMap& map) {
  const DecodedMap d = decode(map);
  Rgb8Image out{map.width, map.height, 3, std::vector<std::uint8_t>(d.values.size())};
  for (std::size_t i = 0; i < d.values.size(); ++i)
    out.pixels[i] = map.kind == TexelKind::color ? quantize(d.values[i]) : quantize((d.values[i] + 1) / 2);
  return out;
}

inline TexelMap texel_map_from_rgb8(const Rgb8Image& img, TexelKind kind) {
  DecodedMap d(img.width, img.height);
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    const double c = img.pixels[img.channels == 1 ? i / 3 : i] / 255.0;
    d.values[i] = kind == TexelKind::color ? c : 2 * c - 1;
  }
  return encode(d, kind);
}

}  // namespace meshforge

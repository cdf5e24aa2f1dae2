#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "rtgs/math.hpp"

namespace rtgs {

/// Interleaved multi-channel image, row 0 at the top.
template <typename T>
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, int c, T fill = T{})
      : width(w), height(h), channels(c), data(static_cast<size_t>(w) * h * c, fill) {}

  bool empty() const { return data.empty(); }
  int pixel_count() const { return width * height; }
  size_t index(int x, int y, int c = 0) const {
    return (static_cast<size_t>(y) * width + x) * channels + c;
  }
  T& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  const T& at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
  friend bool operator==(const Image&, const Image&) = default;
};

using ImageF = Image<float>;
using ImageD = Image<double>;

template <typename To, typename From>
Image<To> image_cast(const Image<From>& src) {
  Image<To> out(src.width, src.height, src.channels);
  std::transform(src.data.begin(), src.data.end(), out.data.begin(),
                 [](From v) { return static_cast<To>(v); });
  return out;
}

inline double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}
inline double linear_to_srgb(double c) {
  c = std::clamp(c, 0.0, 1.0);
  return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

// ---------------------------------------------------------------------------
// PFM: "PF" (RGB) or "Pf" (grey), little-endian scale, rows bottom-to-top.

inline void write_pfm(const std::filesystem::path& path, const ImageF& img) {
  if (img.channels != 1 && img.channels != 3)
    throw Error("write_pfm: PFM supports 1 or 3 channels, got " + std::to_string(img.channels));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("write_pfm: cannot open " + path.string());
  f << (img.channels == 3 ? "PF" : "Pf") << '\n' << img.width << ' ' << img.height << "\n-1.0\n";
  const size_t row = static_cast<size_t>(img.width) * img.channels;
  for (int y = img.height - 1; y >= 0; --y)
    f.write(reinterpret_cast<const char*>(img.data.data() + y * row),
            static_cast<std::streamsize>(row * sizeof(float)));
  if (!f) throw Error("write_pfm: write failed for " + path.string());
}

inline ImageF read_pfm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("read_pfm: cannot open " + path.string());
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  f >> magic >> w >> h >> scale;
  f.get();
  if ((magic != "PF" && magic != "Pf") || w <= 0 || h <= 0 || !f)
    throw Error("read_pfm: malformed header in " + path.string());
  const int c = magic == "PF" ? 3 : 1;
  ImageF img(w, h, c);
  const size_t row = static_cast<size_t>(w) * c;
  for (int y = h - 1; y >= 0; --y)
    f.read(reinterpret_cast<char*>(img.data.data() + y * row),
           static_cast<std::streamsize>(row * sizeof(float)));
  if (!f) throw Error("read_pfm: truncated data in " + path.string());
  if (scale > 0.0) {
    // Big-endian payload.
    for (float& v : img.data) {
      uint32_t u;
      std::memcpy(&u, &v, 4);
      u = __builtin_bswap32(u);
      std::memcpy(&v, &u, 4);
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// PNG (8-bit) through libpng.

inline Image<uint8_t> read_png8(const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw Error("read_png: cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("read_png: decode failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_expand(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int c = png_get_channels(png, info);
  Image<uint8_t> img(w, h, c);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = img.data.data() + static_cast<size_t>(y) * w * c;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline void write_png8(const std::filesystem::path& path, const Image<uint8_t>& img) {
  if (img.channels != 1 && img.channels != 3)
    throw Error("write_png: 1 or 3 channels expected");
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw Error("write_png: cannot open " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("write_png: encode failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.data.data() +
                                             static_cast<size_t>(y) * img.width * img.channels));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// PNG color image decoded to linear RGB: value/255, then sRGB to linear.
inline ImageF read_png_linear(const std::filesystem::path& path) {
  const auto raw = read_png8(path);
  ImageF out(raw.width, raw.height, 3);
  for (int y = 0; y < raw.height; ++y)
    for (int x = 0; x < raw.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const int src = raw.channels == 1 ? 0 : c;
        out.at(x, y, c) = static_cast<float>(srgb_to_linear(raw.at(x, y, src) / 255.0));
      }
  return out;
}

/// Linear RGB written as sRGB-encoded 8-bit PNG.
template <typename T>
void write_png_linear(const std::filesystem::path& path, const Image<T>& img) {
  Image<uint8_t> out(img.width, img.height, img.channels);
  for (size_t i = 0; i < img.data.size(); ++i)
    out.data[i] = static_cast<uint8_t>(std::lround(255.0 * linear_to_srgb(img.data[i])));
  write_png8(path, out);
}

/// Loads an image by extension: .pfm (linear float) or .png (sRGB 8-bit).
inline ImageF read_image(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  if (ext == ".pfm") return read_pfm(path);
  if (ext == ".png") return read_png_linear(path);
  throw Error("read_image: unsupported extension '" + ext + "' for " + path.string());
}

}  // namespace rtgs

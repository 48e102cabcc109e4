// PNG reading/writing on top of libpng. Masks are stored as 8-bit
// indexed-color files; frames and heatmaps as RGB / grayscale.
#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "avseg/tensor.hpp"

namespace avseg {

using Rgb = std::array<uint8_t, 3>;

/// Interleaved 8-bit image, row-major.
struct Image {
  long width = 0;
  long height = 0;
  long channels = 1;
  std::vector<uint8_t> pixels;

  Image() = default;
  Image(long w, long h, long c) : width(w), height(h), channels(c),
                                  pixels(static_cast<size_t>(w) * h * c, 0) {}
  uint8_t& at(long y, long x, long c) {
    return pixels[static_cast<size_t>((y * width + x) * channels + c)];
  }
  uint8_t at(long y, long x, long c) const {
    return pixels[static_cast<size_t>((y * width + x) * channels + c)];
  }
};

/// Decoded PNG: either an expanded gray/RGB image or raw palette indices.
struct PngContent {
  bool indexed = false;
  Image image;                  // valid when !indexed (1 or 3 channels)
  std::vector<uint8_t> indices; // valid when indexed, width*height entries
  long width = 0, height = 0;
  std::vector<Rgb> palette;     // valid when indexed
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw Error("cannot open file: " + path);
  return f;
}

}  // namespace detail

inline void write_png(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw Error("write_png: only 1 or 3 channel images supported");
  auto f = detail::open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng write failure: " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(img.height);
  for (long y = 0; y < img.height; ++y)
    rows[y] = const_cast<png_bytep>(img.pixels.data() + y * img.width * img.channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline void write_png_indexed(const std::string& path, long width, long height,
                              const std::vector<uint8_t>& indices,
                              const std::vector<Rgb>& palette) {
  if (static_cast<long>(indices.size()) != width * height)
    throw Error("write_png_indexed: index buffer size mismatch");
  if (palette.empty() || palette.size() > 256)
    throw Error("write_png_indexed: palette must hold 1..256 entries");
  auto f = detail::open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("libpng write failure: " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width),
               static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_PALETTE,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_color> plte(palette.size());
  for (size_t i = 0; i < palette.size(); ++i)
    plte[i] = {palette[i][0], palette[i][1], palette[i][2]};
  png_set_PLTE(png, info, plte.data(), static_cast<int>(plte.size()));
  png_write_info(png, info);
  std::vector<png_bytep> rows(height);
  for (long y = 0; y < height; ++y)
    rows[y] = const_cast<png_bytep>(indices.data() + y * width);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline PngContent read_png(const std::string& path) {
  auto f = detail::open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("libpng read failure (corrupt file?): " + path);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);

  png_uint_32 w, h;
  int bit_depth, color_type;
  png_get_IHDR(png, info, &w, &h, &bit_depth, &color_type, nullptr, nullptr, nullptr);

  PngContent out;
  out.width = static_cast<long>(w);
  out.height = static_cast<long>(h);

  if (color_type == PNG_COLOR_TYPE_PALETTE) {
    out.indexed = true;
    if (bit_depth < 8) png_set_packing(png);
    png_read_update_info(png, info);
    png_colorp plte = nullptr;
    int n_plte = 0;
    png_get_PLTE(png, info, &plte, &n_plte);
    out.palette.resize(n_plte);
    for (int i = 0; i < n_plte; ++i)
      out.palette[i] = {plte[i].red, plte[i].green, plte[i].blue};
    out.indices.resize(static_cast<size_t>(w) * h);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = out.indices.data() + y * w;
    png_read_image(png, rows.data());
  } else {
    if (bit_depth == 16) png_set_strip_16(png);
    if (bit_depth < 8) png_set_packing(png);
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    long channels = png_get_channels(png, info);
    out.image = Image(static_cast<long>(w), static_cast<long>(h), channels);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y)
      rows[y] = out.image.pixels.data() + static_cast<size_t>(y) * w * channels;
    png_read_image(png, rows.data());
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

/// Frame tensor slice (H,W,3) in [0,1] -> 8-bit RGB image.
inline Image frame_to_image(const Tensor& frames, long t) {
  long H = frames.dim(1), W = frames.dim(2);
  Image img(W, H, 3);
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x)
      for (long c = 0; c < 3; ++c) {
        double v = frames.at(t, y, x, c);
        v = std::min(1.0, std::max(0.0, v));
        img.at(y, x, c) = static_cast<uint8_t>(std::lround(v * 255.0));
      }
  return img;
}

}  // namespace avseg

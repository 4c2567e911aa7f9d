#pragma once

#include <png.h>

#include <cstdio>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "overlord/core/tensor.hpp"

namespace overlord::data {

struct Image8 {
  std::size_t h = 0, w = 0, channels = 0;  // 1 or 3
  std::vector<std::uint8_t> pixels;        // row-major, interleaved

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * w + x) * channels + c];
  }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * w + x) * channels + c];
  }
};

namespace png_detail {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
}  // namespace png_detail

// 8-bit PNG reader; palette/gray/alpha variants are expanded to RGB8 or
// kept as GRAY8 when force_gray is set.
inline Image8 read_png(const std::string& path, bool force_gray = false) {
  std::unique_ptr<std::FILE, png_detail::FileCloser> fp(
      std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("read_png: cannot open " + path);

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) throw std::runtime_error("read_png: libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: failed to decode " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (force_gray) {
    if (png_get_color_type(png, info) & PNG_COLOR_MASK_COLOR)
      png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  } else {
    if (!(png_get_color_type(png, info) & PNG_COLOR_MASK_COLOR))
      png_set_gray_to_rgb(png);
  }
  png_read_update_info(png, info);

  Image8 img;
  img.h = png_get_image_height(png, info);
  img.w = png_get_image_width(png, info);
  img.channels = png_get_channels(png, info);
  img.pixels.resize(img.h * img.w * img.channels);
  std::vector<png_bytep> rows(img.h);
  for (std::size_t y = 0; y < img.h; ++y)
    rows[y] = img.pixels.data() + y * img.w * img.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

inline void write_png(const std::string& path, const Image8& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("write_png: channels must be 1 or 3");
  std::unique_ptr<std::FILE, png_detail::FileCloser> fp(
      std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("write_png: cannot open " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) throw std::runtime_error("write_png: libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: failed to encode " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, png_uint_32(img.w), png_uint_32(img.h), 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(img.h);
  for (std::size_t y = 0; y < img.h; ++y)
    rows[y] = const_cast<png_bytep>(img.pixels.data() +
                                    y * img.w * img.channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// [-1,1] float image <-> 8-bit. 255 maps to exactly 1.0 and back.
template <typename T>
Image8 to_image8(const Tensor<T>& img) {
  if (img.rank() != 3)
    throw std::invalid_argument("to_image8: expects [H,W,C]");
  Image8 out;
  out.h = img.dim(0);
  out.w = img.dim(1);
  out.channels = img.dim(2);
  out.pixels.resize(img.numel());
  for (std::size_t i = 0; i < img.numel(); ++i) {
    const double v = (double(img[i]) + 1.0) * 127.5;
    const double r = std::nearbyint(std::min(255.0, std::max(0.0, v)));
    out.pixels[i] = std::uint8_t(r);
  }
  return out;
}

template <typename T>
Tensor<T> from_image8(const Image8& img) {
  Tensor<T> out({img.h, img.w, img.channels});
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] = T(double(img.pixels[i]) / 127.5 - 1.0);
  return out;
}

// Bilinear resize of an [H,W,C] tensor.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& src, std::size_t oh,
                          std::size_t ow) {
  const std::size_t h = src.dim(0), w = src.dim(1), c = src.dim(2);
  if (h == oh && w == ow) return src;
  Tensor<T> out({oh, ow, c});
  const double sy = double(h) / double(oh), sx = double(w) / double(ow);
  for (std::size_t y = 0; y < oh; ++y) {
    const double fy = (double(y) + 0.5) * sy - 0.5;
    const double cy = std::min(std::max(fy, 0.0), double(h - 1));
    const std::size_t y0 = std::size_t(cy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double wy = cy - double(y0);
    for (std::size_t x = 0; x < ow; ++x) {
      const double fx = (double(x) + 0.5) * sx - 0.5;
      const double cx = std::min(std::max(fx, 0.0), double(w - 1));
      const std::size_t x0 = std::size_t(cx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double wx = cx - double(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v00 = src[(y0 * w + x0) * c + ch];
        const double v01 = src[(y0 * w + x1) * c + ch];
        const double v10 = src[(y1 * w + x0) * c + ch];
        const double v11 = src[(y1 * w + x1) * c + ch];
        out[(y * ow + x) * c + ch] =
            T((1 - wy) * ((1 - wx) * v00 + wx * v01) +
              wy * ((1 - wx) * v10 + wx * v11));
      }
    }
  }
  return out;
}

}  // namespace overlord::data

#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "overlord/core/rng.hpp"
#include "overlord/core/tensor.hpp"

namespace overlord::transform {

// Sampled parameters of one random spatial transform, returned alongside the
// image for reproducibility. crop_* are fractions of the image size.
struct SpatialTransformParams {
  bool flip = false;
  double angle_deg = 0.0;
  double crop_top = 0.0, crop_left = 0.0, crop_h = 1.0, crop_w = 1.0;
};

enum class TransformMode { kRandomSpatial, kMask, kIdentity };

inline const char* to_string(TransformMode m) {
  switch (m) {
    case TransformMode::kRandomSpatial: return "random_spatial";
    case TransformMode::kMask: return "mask";
    case TransformMode::kIdentity: return "identity";
  }
  return "?";
}

inline TransformMode transform_mode_from_string(const std::string& s) {
  if (s == "random_spatial") return TransformMode::kRandomSpatial;
  if (s == "mask") return TransformMode::kMask;
  if (s == "identity") return TransformMode::kIdentity;
  throw std::invalid_argument("unknown transform mode: " + s);
}

struct TransformConfig {
  double flip_prob = 0.5;
  double max_angle = 30.0;  // degrees
  double crop_min = 0.7;    // lower bound of crop height/width fraction
};

namespace detail {

template <typename T>
Tensor<T> hflip(const Tensor<T>& img) {
  const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  Tensor<T> out({h, w, c});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        out[(y * w + x) * c + ch] = img[(y * w + (w - 1 - x)) * c + ch];
  return out;
}

// Bilinear sample with out-of-bounds mapped to black (-1 internally).
template <typename T>
inline double sample_bilinear(const Tensor<T>& img, double fy, double fx,
                              std::size_t ch) {
  const std::ptrdiff_t h = std::ptrdiff_t(img.dim(0));
  const std::ptrdiff_t w = std::ptrdiff_t(img.dim(1));
  const std::size_t c = img.dim(2);
  const std::ptrdiff_t y0 = std::ptrdiff_t(std::floor(fy));
  const std::ptrdiff_t x0 = std::ptrdiff_t(std::floor(fx));
  const double wy = fy - double(y0), wx = fx - double(x0);
  auto px = [&](std::ptrdiff_t y, std::ptrdiff_t x) -> double {
    if (y < 0 || y >= h || x < 0 || x >= w) return -1.0;
    return double(img[(std::size_t(y) * std::size_t(w) + std::size_t(x)) * c + ch]);
  };
  return (1 - wy) * ((1 - wx) * px(y0, x0) + wx * px(y0, x0 + 1)) +
         wy * ((1 - wx) * px(y0 + 1, x0) + wx * px(y0 + 1, x0 + 1));
}

template <typename T>
Tensor<T> rotate(const Tensor<T>& img, double angle_deg) {
  if (angle_deg == 0.0) return img;
  const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  const double a = angle_deg * M_PI / 180.0;
  const double ca = std::cos(a), sa = std::sin(a);
  const double cy = (double(h) - 1) / 2, cx = (double(w) - 1) / 2;
  Tensor<T> out({h, w, c});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      // Inverse map: rotate output coords by -a around the center.
      const double dy = double(y) - cy, dx = double(x) - cx;
      const double sy = cy + (sa * dx + ca * dy);
      const double sx = cx + (ca * dx - sa * dy);
      for (std::size_t ch = 0; ch < c; ++ch)
        out[(y * w + x) * c + ch] = T(sample_bilinear(img, sy, sx, ch));
    }
  return out;
}

template <typename T>
Tensor<T> crop_resize(const Tensor<T>& img, double top, double left,
                      double ch_frac, double cw_frac) {
  const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  if (ch_frac >= 1.0 && cw_frac >= 1.0 && top == 0.0 && left == 0.0)
    return img;
  Tensor<T> out({h, w, c});
  const double src_h = ch_frac * double(h), src_w = cw_frac * double(w);
  const double y_off = top * double(h), x_off = left * double(w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double sy =
          y_off + (double(y) + 0.5) * src_h / double(h) - 0.5;
      const double sx =
          x_off + (double(x) + 0.5) * src_w / double(w) - 0.5;
      for (std::size_t ch = 0; ch < c; ++ch)
        out[(y * w + x) * c + ch] = T(sample_bilinear(img, sy, sx, ch));
    }
  return out;
}

}  // namespace detail

// Composition order is fixed: flip, then rotate, then crop-and-resize.
// Output stays in [-1,1] (bilinear weights are convex; padding is -1).
template <typename T>
std::pair<Tensor<T>, SpatialTransformParams> random_spatial_transform(
    const Tensor<T>& image, Rng& rng, const TransformConfig& cfg) {
  SpatialTransformParams p;
  p.flip = rng.bernoulli(cfg.flip_prob);
  p.angle_deg = rng.uniform(-cfg.max_angle, cfg.max_angle);
  p.crop_h = rng.uniform(cfg.crop_min, 1.0);
  p.crop_w = rng.uniform(cfg.crop_min, 1.0);
  p.crop_top = rng.uniform(0.0, 1.0 - p.crop_h);
  p.crop_left = rng.uniform(0.0, 1.0 - p.crop_w);

  Tensor<T> out = p.flip ? detail::hflip(image) : image;
  out = detail::rotate(out, p.angle_deg);
  out = detail::crop_resize(out, p.crop_top, p.crop_left, p.crop_h, p.crop_w);
  return {std::move(out), p};
}

// Applies fixed parameters (replay path for reproducibility tests).
template <typename T>
Tensor<T> apply_spatial_params(const Tensor<T>& image,
                               const SpatialTransformParams& p) {
  Tensor<T> out = p.flip ? detail::hflip(image) : image;
  out = detail::rotate(out, p.angle_deg);
  return detail::crop_resize(out, p.crop_top, p.crop_left, p.crop_h, p.crop_w);
}

// T(x; m) = x (.) m, computed in [0,1] space and mapped back, so masked-out
// pixels are black rather than mid-gray.
template <typename T>
Tensor<T> mask_transform(const Tensor<T>& image, const Tensor<T>& mask) {
  if (image.rank() != 3 || mask.rank() != 2 || image.dim(0) != mask.dim(0) ||
      image.dim(1) != mask.dim(1))
    throw std::invalid_argument("mask_transform: shape mismatch");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  Tensor<T> out({h, w, c});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const T m = mask.at2(y, x);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double unit = (double(image[(y * w + x) * c + ch]) + 1.0) / 2.0;
        out[(y * w + x) * c + ch] = T(unit * double(m) * 2.0 - 1.0);
      }
    }
  return out;
}

// Dispatch over the transform family. Identity is the inference-time default
// for the correlated-attribute encoder.
template <typename T>
Tensor<T> apply_T(const Tensor<T>& image, const Tensor<T>* mask,
                  TransformMode mode, Rng& rng, const TransformConfig& cfg) {
  switch (mode) {
    case TransformMode::kIdentity:
      return image;
    case TransformMode::kRandomSpatial:
      return random_spatial_transform(image, rng, cfg).first;
    case TransformMode::kMask:
      if (mask == nullptr || mask->empty())
        throw std::invalid_argument("apply_T: mask mode without a mask");
      return mask_transform(image, *mask);
  }
  throw std::logic_error("apply_T: unreachable");
}

}  // namespace overlord::transform

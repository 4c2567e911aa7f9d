#pragma once

#include <array>
#include <cmath>
#include <stdexcept>

#include "overlord/core/tensor.hpp"
#include "overlord/synth/factors.hpp"

namespace overlord::synth {

// Deterministic rasterizer for the synthetic benchmark. One filled dart
// polygon per image:
//   - hue family encodes y,
//   - the interior pattern and the texture of a localized band on the upper
//     wing encode corr,
//   - position, rotation and scale are the pose.
// Patterns are evaluated in the polygon's local frame, so they translate,
// rotate and scale rigidly with the shape. Anti-aliasing is 2x2
// supersampling; with patterns anchored to the local frame this makes
// integer-pixel translations of the factors exact pixel shifts.

namespace render_detail {

// Concave dart pointing along +x in local units.
inline constexpr std::array<std::array<double, 2>, 4> kDart = {{
    {1.00, 0.00},
    {-0.55, 0.66},
    {-0.18, 0.00},
    {-0.55, -0.66},
}};

inline bool point_in_polygon(double x, double y) {
  bool inside = false;
  const auto& v = kDart;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    const bool crosses = (v[i][1] > y) != (v[j][1] > y);
    if (crosses) {
      const double t = (y - v[j][1]) / (v[i][1] - v[j][1]);
      const double xc = v[j][0] + t * (v[i][0] - v[j][0]);
      if (x < xc) inside = !inside;
    }
  }
  return inside;
}

struct Rgb {
  double r, g, b;
};

inline constexpr std::array<Rgb, 3> kClassColor = {{
    {0.85, 0.25, 0.20},  // reds
    {0.20, 0.80, 0.30},  // greens
    {0.25, 0.40, 0.90},  // blues
}};

inline constexpr std::array<Rgb, 6> kBandColor = {{
    {0.95, 0.85, 0.15},
    {0.10, 0.90, 0.85},
    {0.95, 0.45, 0.10},
    {0.80, 0.15, 0.85},
    {0.95, 0.95, 0.95},
    {0.12, 0.12, 0.18},
}};

inline constexpr Rgb kBackground = {0.06, 0.07, 0.09};

// The background carries a faint class tint: the labeled attribute is a
// global property of the image, not of the shape alone, mirroring
// multi-domain photo sets whose domain statistics pervade every region.
inline Rgb background_for(std::size_t y) {
  const Rgb c = kClassColor[y % kClassColor.size()];
  return {kBackground.r + 0.10 * c.r, kBackground.g + 0.10 * c.g,
          kBackground.b + 0.10 * c.b};
}

// Which of the two body tones applies at local point (lx, ly).
inline bool pattern_on(std::size_t corr, double lx, double ly) {
  switch (corr % 6) {
    case 0:
      return std::sin(2.0 * M_PI * 2.2 * ly) > 0;
    case 1: {
      const double gx = lx * 3.2 - std::floor(lx * 3.2) - 0.5;
      const double gy = ly * 3.2 - std::floor(ly * 3.2) - 0.5;
      return gx * gx + gy * gy < 0.085;
    }
    case 2:
      return (long(std::floor(lx * 2.6)) + long(std::floor(ly * 2.6))) % 2 == 0;
    case 3:
      return std::sin(2.0 * M_PI * 2.2 * lx) > 0;
    case 4:
      return std::sin(2.0 * M_PI * 2.2 * (lx + ly) * M_SQRT1_2) > 0;
    case 5:
      return std::sin(2.0 * M_PI * 2.0 * std::sqrt(lx * lx + ly * ly)) > 0;
  }
  return false;
}

// The localized band on the upper wing (local frame).
inline bool in_band(double lx, double ly) {
  return point_in_polygon(lx, ly) && ly >= 0.28;
}

inline Rgb band_color(std::size_t corr, double lx) {
  const Rgb base = kBandColor[corr % 6];
  const double freq = 1.5 + 0.7 * double(corr % 6);
  const double tone = std::sin(2.0 * M_PI * freq * lx) > 0 ? 1.0 : 0.55;
  return {base.r * tone, base.g * tone, base.b * tone};
}

inline Rgb shade(const FactorTuple& f, double lx, double ly) {
  if (!point_in_polygon(lx, ly)) return background_for(f.y);
  if (in_band(lx, ly)) return band_color(f.corr, lx);
  const Rgb base = kClassColor[f.y % kClassColor.size()];
  const double tone = pattern_on(f.corr, lx, ly) ? 1.0 : 0.42;
  return {base.r * tone, base.g * tone, base.b * tone};
}

}  // namespace render_detail

inline double render_base_radius(std::size_t h, std::size_t w) {
  return 0.33 * double(std::min(h, w));
}

// [H,W,3] image in [-1,1]. Deterministic: same factors, same bytes.
template <typename T>
Tensor<T> render_sample(const FactorTuple& f, std::size_t h, std::size_t w) {
  if (h < 16 || w < 16)
    throw std::invalid_argument("render_sample: canvas below 16x16");
  using namespace render_detail;
  Tensor<T> img({h, w, 3});
  const double cx = (double(w) - 1.0) / 2.0 + f.dx * double(w) / 2.0;
  const double cy = (double(h) - 1.0) / 2.0 + f.dy * double(h) / 2.0;
  const double radius = f.scale * render_base_radius(h, w);
  const double cos_t = std::cos(-f.theta), sin_t = std::sin(-f.theta);
  constexpr double kSub[2] = {-0.25, 0.25};

  for (std::size_t py = 0; py < h; ++py) {
    for (std::size_t px = 0; px < w; ++px) {
      double r = 0, g = 0, b = 0;
      for (double sy : kSub) {
        for (double sx : kSub) {
          const double ux = (double(px) + sx - cx) / radius;
          const double uy = (double(py) + sy - cy) / radius;
          const double lx = cos_t * ux - sin_t * uy;
          const double ly = sin_t * ux + cos_t * uy;
          const Rgb c = shade(f, lx, ly);
          r += c.r;
          g += c.g;
          b += c.b;
        }
      }
      T* out = img.data() + (py * w + px) * 3;
      out[0] = T(r / 4.0 * 2.0 - 1.0);
      out[1] = T(g / 4.0 * 2.0 - 1.0);
      out[2] = T(b / 4.0 * 2.0 - 1.0);
    }
  }
  return img;
}

// Binary mask of the corr band, same supersampling as the renderer;
// a pixel belongs to the mask when at least half its subsamples do.
template <typename T>
Tensor<T> render_band_mask(const FactorTuple& f, std::size_t h, std::size_t w) {
  if (h < 16 || w < 16)
    throw std::invalid_argument("render_band_mask: canvas below 16x16");
  using namespace render_detail;
  Tensor<T> mask({h, w});
  const double cx = (double(w) - 1.0) / 2.0 + f.dx * double(w) / 2.0;
  const double cy = (double(h) - 1.0) / 2.0 + f.dy * double(h) / 2.0;
  const double radius = f.scale * render_base_radius(h, w);
  const double cos_t = std::cos(-f.theta), sin_t = std::sin(-f.theta);
  constexpr double kSub[2] = {-0.25, 0.25};
  for (std::size_t py = 0; py < h; ++py) {
    for (std::size_t px = 0; px < w; ++px) {
      int hits = 0;
      for (double sy : kSub) {
        for (double sx : kSub) {
          const double ux = (double(px) + sx - cx) / radius;
          const double uy = (double(py) + sy - cy) / radius;
          const double lx = cos_t * ux - sin_t * uy;
          const double ly = sin_t * ux + cos_t * uy;
          if (in_band(lx, ly)) ++hits;
        }
      }
      mask.at2(py, px) = hits >= 2 ? T(1) : T(0);
    }
  }
  return mask;
}

}  // namespace overlord::synth

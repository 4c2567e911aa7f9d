#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "overlord/data/image_io.hpp"

namespace overlord::report {

// Probe-accuracy curves: `epoch<TAB>value` rows per file, values in [0,1].
struct CurveSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;  // (epoch, accuracy)
};

inline CurveSeries read_curve_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("curves: cannot open " + path);
  CurveSeries s;
  s.name = path;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    double epoch, value;
    if (!(row >> epoch >> value))
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected `epoch<TAB>value`");
    if (value < 0.0 || value > 1.0)
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": accuracy outside [0,1]");
    s.points.emplace_back(epoch, value);
  }
  if (s.points.empty())
    throw std::runtime_error(path + ": empty curve file");
  return s;
}

namespace curves_detail {

struct Canvas {
  std::size_t w, h;
  data::Image8 img;

  Canvas(std::size_t w_, std::size_t h_) : w(w_), h(h_) {
    img.w = w;
    img.h = h;
    img.channels = 3;
    img.pixels.assign(w * h * 3, 255);
  }
  void set(std::ptrdiff_t x, std::ptrdiff_t y, std::uint8_t r, std::uint8_t g,
           std::uint8_t b) {
    if (x < 0 || y < 0 || x >= std::ptrdiff_t(w) || y >= std::ptrdiff_t(h))
      return;
    auto* p = img.pixels.data() + (std::size_t(y) * w + std::size_t(x)) * 3;
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }
  void line(double x0, double y0, double x1, double y1, std::uint8_t r,
            std::uint8_t g, std::uint8_t b, int dash = 0) {
    const double dx = x1 - x0, dy = y1 - y0;
    const int steps = int(std::max(std::abs(dx), std::abs(dy))) + 1;
    for (int i = 0; i <= steps; ++i) {
      if (dash > 0 && (i / dash) % 2 == 1) continue;
      const double t = double(i) / double(steps);
      set(std::ptrdiff_t(x0 + t * dx), std::ptrdiff_t(y0 + t * dy), r, g, b);
    }
  }
};

// 3x5 digit glyphs for axis labels.
inline const char* glyph(char c) {
  switch (c) {
    case '0': return "111101101101111";
    case '1': return "010110010010111";
    case '2': return "111001111100111";
    case '3': return "111001111001111";
    case '4': return "101101111001001";
    case '5': return "111100111001111";
    case '6': return "111100111101111";
    case '7': return "111001010010010";
    case '8': return "111101111101111";
    case '9': return "111101111001111";
    case '.': return "000000000000010";
    default: return "000000000000000";
  }
}

inline void draw_text(Canvas& cv, std::ptrdiff_t x, std::ptrdiff_t y,
                      const std::string& text) {
  for (char c : text) {
    const char* g = glyph(c);
    for (int gy = 0; gy < 5; ++gy)
      for (int gx = 0; gx < 3; ++gx)
        if (g[gy * 3 + gx] == '1') cv.set(x + gx, y + gy, 40, 40, 40);
    x += 4;
  }
}

}  // namespace curves_detail

// Renders the probe-accuracy-vs-epoch comparison with a horizontal chance
// line. Series colors cycle through a small fixed palette.
inline void emit_curves(const std::vector<CurveSeries>& series,
                        double chance_level, const std::string& out_path) {
  if (series.empty()) throw std::invalid_argument("emit_curves: no series");
  using namespace curves_detail;
  const std::size_t W = 520, H = 360, ML = 46, MR = 16, MT = 16, MB = 36;
  Canvas cv(W, H);

  double max_epoch = 1;
  for (const auto& s : series)
    for (const auto& [e, v] : s.points) max_epoch = std::max(max_epoch, e);

  auto px = [&](double epoch) {
    return ML + epoch / max_epoch * double(W - ML - MR);
  };
  auto py = [&](double value) {
    return double(H - MB) - value * double(H - MT - MB);
  };

  // Axes and y ticks at 0, 0.5, 1.
  cv.line(ML, MT, ML, H - MB, 0, 0, 0);
  cv.line(ML, H - MB, W - MR, H - MB, 0, 0, 0);
  for (double tick : {0.0, 0.5, 1.0}) {
    cv.line(ML - 3, py(tick), ML, py(tick), 0, 0, 0);
    std::ostringstream label;
    label << tick;
    draw_text(cv, 8, std::ptrdiff_t(py(tick)) - 2, label.str());
  }
  for (double frac : {0.0, 0.5, 1.0}) {
    const double e = frac * max_epoch;
    cv.line(px(e), H - MB, px(e), H - MB + 3, 0, 0, 0);
    std::ostringstream label;
    label << std::size_t(e);
    draw_text(cv, std::ptrdiff_t(px(e)) - 4, H - MB + 6, label.str());
  }

  // Chance line, dashed gray.
  cv.line(ML, py(chance_level), W - MR, py(chance_level), 128, 128, 128, 4);

  const std::uint8_t palette[4][3] = {
      {202, 58, 46}, {46, 104, 202}, {36, 140, 64}, {160, 90, 190}};
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& pal = palette[si % 4];
    const auto& pts = series[si].points;
    if (pts.size() == 1) {
      // Degenerate single-point series: draw a small marker.
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          cv.set(std::ptrdiff_t(px(pts[0].first)) + dx,
                 std::ptrdiff_t(py(pts[0].second)) + dy, pal[0], pal[1],
                 pal[2]);
      continue;
    }
    for (std::size_t i = 1; i < pts.size(); ++i)
      cv.line(px(pts[i - 1].first), py(pts[i - 1].second), px(pts[i].first),
              py(pts[i].second), pal[0], pal[1], pal[2]);
  }

  data::write_png(out_path, cv.img);
}

inline void emit_curves_from_files(const std::vector<std::string>& tsv_paths,
                                   double chance_level,
                                   const std::string& out_path) {
  std::vector<CurveSeries> series;
  for (const auto& p : tsv_paths) series.push_back(read_curve_tsv(p));
  emit_curves(series, chance_level, out_path);
}

}  // namespace overlord::report

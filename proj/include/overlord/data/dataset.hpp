#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "overlord/core/serialize.hpp"
#include "overlord/data/image_io.hpp"
#include "overlord/synth/factors.hpp"
#include "overlord/synth/render.hpp"

namespace overlord::data {

using synth::CorrelationSpec;
using synth::FactorTuple;

// Immutable after construction. Pixels in [-1,1]; masks in {0,1};
// ground-truth factors are present for synthetic data only.
template <typename T = float>
struct Dataset {
  Tensor<T> images;  // [N,H,W,C]
  std::vector<std::size_t> labels;
  Tensor<T> masks;                    // [N,H,W] or empty
  std::vector<FactorTuple> factors;   // empty when unknown
  std::size_t k = 0;                  // labeled-attribute count

  std::size_t size() const { return images.empty() ? 0 : images.dim(0); }
  std::size_t height() const { return images.dim(1); }
  std::size_t width() const { return images.dim(2); }
  std::size_t channels() const { return images.dim(3); }
  bool has_masks() const { return !masks.empty(); }
  bool has_factors() const { return !factors.empty(); }

  Tensor<T> image(std::size_t i) const {
    const std::size_t hw = height() * width() * channels();
    Tensor<T> out({height(), width(), channels()});
    std::copy_n(images.data() + i * hw, hw, out.data());
    return out;
  }
  Tensor<T> mask(std::size_t i) const {
    const std::size_t hw = height() * width();
    Tensor<T> out({height(), width()});
    std::copy_n(masks.data() + i * hw, hw, out.data());
    return out;
  }

  // Gathers rows into one [B,H,W,C] batch tensor.
  Tensor<T> gather_images(const std::vector<std::size_t>& idx) const {
    const std::size_t hw = height() * width() * channels();
    Tensor<T> out({idx.size(), height(), width(), channels()});
    for (std::size_t i = 0; i < idx.size(); ++i)
      std::copy_n(images.data() + idx[i] * hw, hw, out.data() + i * hw);
    return out;
  }

  void validate() const {
    for (std::size_t i = 0; i < images.numel(); ++i)
      if (images[i] < T(-1) || images[i] > T(1))
        throw std::runtime_error("dataset: pixel out of [-1,1]");
    for (std::size_t l : labels)
      if (l >= k) throw std::runtime_error("dataset: label out of range");
    for (std::size_t i = 0; i < masks.numel(); ++i)
      if (masks[i] != T(0) && masks[i] != T(1))
        throw std::runtime_error("dataset: non-binary mask");
  }
};

template <typename T = float>
Dataset<T> build_dataset(const CorrelationSpec& spec, std::size_t n,
                         std::size_t h, std::size_t w, Rng& rng,
                         bool with_masks) {
  if (n < 1) throw std::invalid_argument("build_dataset: n must be >= 1");
  spec.validate();
  Dataset<T> ds;
  ds.k = spec.k;
  ds.images = Tensor<T>({n, h, w, 3});
  if (with_masks) ds.masks = Tensor<T>({n, h, w});
  ds.labels.resize(n);
  ds.factors.resize(n);
  const std::size_t img_sz = h * w * 3;
  for (std::size_t i = 0; i < n; ++i) {
    const FactorTuple f = synth::sample_factors(rng, spec);
    ds.factors[i] = f;
    ds.labels[i] = f.y;
    Tensor<T> img = synth::render_sample<T>(f, h, w);
    std::copy_n(img.data(), img_sz, ds.images.data() + i * img_sz);
    if (with_masks) {
      Tensor<T> m = synth::render_band_mask<T>(f, h, w);
      std::copy_n(m.data(), h * w, ds.masks.data() + i * h * w);
    }
  }
  return ds;
}

// Cache format, magic OVLD0001 padded to 16 bytes:
//   magic[8] + zeros[8]
//   N,H,W,C,K u32
//   float32 images, int32 labels
//   masks block:   u8 flag, then u8 {0,1} per pixel
//   factors block: u8 flag, then per sample u32 y, u32 corr,
//                  f32 dx, dy, theta, scale
inline constexpr char kDatasetMagic[9] = "OVLD0001";

template <typename T>
void save_dataset(const std::string& path, const Dataset<T>& ds) {
  io::Writer w(path);
  w.magic(kDatasetMagic);
  for (int i = 0; i < 8; ++i) w.u8(0);
  w.u32(std::uint32_t(ds.size()));
  w.u32(std::uint32_t(ds.height()));
  w.u32(std::uint32_t(ds.width()));
  w.u32(std::uint32_t(ds.channels()));
  w.u32(std::uint32_t(ds.k));
  if constexpr (std::is_same_v<T, float>) {
    w.f32_array(ds.images.data(), ds.images.numel());
  } else {
    for (std::size_t i = 0; i < ds.images.numel(); ++i)
      w.f32(float(ds.images[i]));
  }
  for (std::size_t l : ds.labels) {
    const std::int32_t v = std::int32_t(l);
    w.bytes(&v, 4);
  }
  w.u8(ds.has_masks() ? 1 : 0);
  if (ds.has_masks())
    for (std::size_t i = 0; i < ds.masks.numel(); ++i)
      w.u8(ds.masks[i] != T(0) ? 1 : 0);
  w.u8(ds.has_factors() ? 1 : 0);
  if (ds.has_factors())
    for (const FactorTuple& f : ds.factors) {
      w.u32(std::uint32_t(f.y));
      w.u32(std::uint32_t(f.corr));
      w.f32(float(f.dx));
      w.f32(float(f.dy));
      w.f32(float(f.theta));
      w.f32(float(f.scale));
    }
  w.close();
}

template <typename T = float>
Dataset<T> load_dataset(const std::string& path) {
  io::Reader r(path);
  r.expect_magic(kDatasetMagic);
  for (int i = 0; i < 8; ++i) r.u8();
  const std::size_t n = r.u32(), h = r.u32(), w = r.u32(), c = r.u32(),
                    k = r.u32();
  Dataset<T> ds;
  ds.k = k;
  ds.images = Tensor<T>({n, h, w, c});
  if constexpr (std::is_same_v<T, float>) {
    r.f32_array(ds.images.data(), ds.images.numel());
  } else {
    for (std::size_t i = 0; i < ds.images.numel(); ++i)
      ds.images[i] = T(r.f32());
  }
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::int32_t v;
    r.bytes(&v, 4);
    ds.labels[i] = std::size_t(v);
  }
  if (r.u8()) {
    ds.masks = Tensor<T>({n, h, w});
    for (std::size_t i = 0; i < ds.masks.numel(); ++i)
      ds.masks[i] = r.u8() ? T(1) : T(0);
  }
  if (r.u8()) {
    ds.factors.resize(n);
    for (FactorTuple& f : ds.factors) {
      f.y = r.u32();
      f.corr = r.u32();
      f.dx = r.f32();
      f.dy = r.f32();
      f.theta = r.f32();
      f.scale = r.f32();
    }
  }
  return ds;
}

// Loads a folder of PNGs with a tab-separated labels file
// (`filename<TAB>label_id` per line) and optional mask PNGs of the same
// filenames. Images are resized to `resolution` and normalized to [-1,1].
template <typename T = float>
Dataset<T> load_folder_dataset(const std::string& image_dir,
                               const std::string& labels_file,
                               const std::string& masks_dir,
                               std::size_t resolution) {
  namespace fs = std::filesystem;
  std::ifstream lf(labels_file);
  if (!lf)
    throw std::runtime_error("load_folder_dataset: cannot open labels file " +
                             labels_file);
  std::map<std::string, std::size_t> label_of;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lf, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error(labels_file + ":" + std::to_string(line_no) +
                               ": expected filename<TAB>label_id");
    const std::string name = line.substr(0, tab);
    label_of[name] = std::size_t(std::stoul(line.substr(tab + 1)));
  }

  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(image_dir))
    if (e.is_regular_file() && e.path().extension() == ".png")
      files.push_back(e.path().filename().string());
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw std::runtime_error("load_folder_dataset: no PNG files in " +
                             image_dir);

  Dataset<T> ds;
  ds.images = Tensor<T>({files.size(), resolution, resolution, 3});
  if (!masks_dir.empty())
    ds.masks = Tensor<T>({files.size(), resolution, resolution});
  ds.labels.resize(files.size());
  std::size_t max_label = 0;
  const std::size_t img_sz = resolution * resolution * 3;

  for (std::size_t i = 0; i < files.size(); ++i) {
    const auto it = label_of.find(files[i]);
    if (it == label_of.end())
      throw std::runtime_error("load_folder_dataset: no label for image " +
                               files[i]);
    ds.labels[i] = it->second;
    max_label = std::max(max_label, it->second);

    Tensor<T> img = from_image8<T>(
        read_png((fs::path(image_dir) / files[i]).string()));
    img = resize_bilinear(img, resolution, resolution);
    std::copy_n(img.data(), img_sz, ds.images.data() + i * img_sz);

    if (!masks_dir.empty()) {
      Image8 m8 = read_png((fs::path(masks_dir) / files[i]).string(),
                           /*force_gray=*/true);
      if (m8.h != resolution || m8.w != resolution) {
        // Masks resize with nearest neighbour to stay binary.
        Image8 r8;
        r8.h = resolution;
        r8.w = resolution;
        r8.channels = 1;
        r8.pixels.resize(resolution * resolution);
        for (std::size_t y = 0; y < resolution; ++y)
          for (std::size_t x = 0; x < resolution; ++x)
            r8.pixels[y * resolution + x] =
                m8.at(y * m8.h / resolution, x * m8.w / resolution, 0);
        m8 = std::move(r8);
      }
      if (m8.h != resolution || m8.w != resolution)
        throw std::runtime_error("load_folder_dataset: mask shape mismatch for " +
                                 files[i]);
      for (std::size_t p = 0; p < resolution * resolution; ++p)
        ds.masks[i * resolution * resolution + p] =
            m8.pixels[p] >= 128 ? T(1) : T(0);
    }
  }
  ds.k = max_label + 1;
  return ds;
}

}  // namespace overlord::data

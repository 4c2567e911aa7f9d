#pragma once

#include <stdexcept>
#include <vector>

#include "overlord/data/image_io.hpp"
#include "overlord/train/trainer.hpp"

namespace overlord::report {

// Translation grid with headers: row 0 holds the reference images, column 0
// the source images, and cell (i, j) the translation of source i guided by
// reference j. Total size (rows+1)*H x (cols+1)*W.
struct GridSpec {
  std::vector<std::size_t> sources;     // dataset indices
  std::vector<std::size_t> references;  // dataset indices
};

inline Tensor<float> render_grid(
    const GridSpec& spec, train::RunArtifacts& art,
    const data::Dataset<float>& ds,
    transform::TransformMode t_inference =
        transform::TransformMode::kIdentity) {
  if (spec.sources.empty() || spec.references.empty())
    throw std::invalid_argument("render_grid: empty rows or columns");
  if (!art.bundle.has_eu)
    throw std::runtime_error(
        "render_grid: bundle incomplete; run the synthesis stage first");

  const std::size_t h = ds.height(), w = ds.width(), c = ds.channels();
  const std::size_t rows = spec.sources.size() + 1;
  const std::size_t cols = spec.references.size() + 1;
  Tensor<float> grid({rows * h, cols * w, c}, -1.0f);

  auto blit = [&](const Tensor<float>& img, std::size_t row, std::size_t col) {
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t ch = 0; ch < c; ++ch)
          grid[((row * h + y) * cols * w + col * w + x) * c + ch] =
              img[(y * w + x) * c + ch];
  };

  for (std::size_t j = 0; j < spec.references.size(); ++j)
    blit(ds.image(spec.references[j]), 0, j + 1);
  for (std::size_t i = 0; i < spec.sources.size(); ++i)
    blit(ds.image(spec.sources[i]), i + 1, 0);

  for (std::size_t i = 0; i < spec.sources.size(); ++i) {
    const Tensor<float> src = ds.image(spec.sources[i]);
    for (std::size_t j = 0; j < spec.references.size(); ++j) {
      const std::size_t ref_idx = spec.references[j];
      train::Reference ref;
      ref.label = ds.labels[ref_idx];
      ref.image = ds.image(ref_idx);
      if (t_inference == transform::TransformMode::kMask && ds.has_masks())
        ref.mask = ds.mask(ref_idx);
      Tensor<float> out =
          train::translate(art.bundle, art.bank, src, ref,
                           /*use_ey=*/false, t_inference);
      blit(out, i + 1, j + 1);
    }
  }
  return grid;
}

inline void render_grid_png(const GridSpec& spec, train::RunArtifacts& art,
                            const data::Dataset<float>& ds,
                            const std::string& path,
                            transform::TransformMode t_inference =
                                transform::TransformMode::kIdentity) {
  data::write_png(path, data::to_image8(render_grid(spec, art, ds,
                                                    t_inference)));
}

}  // namespace overlord::report

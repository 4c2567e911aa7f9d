#pragma once

#include <string>
#include <vector>

#include "overlord/eval/harness.hpp"
#include "overlord/train/trainer.hpp"

namespace overlord::eval {

struct ReportOptions {
  std::size_t refs_per_source = 10;  // references per source and target class
  std::size_t max_sources = 500;
  std::uint64_t seed = 1;
  transform::TransformMode t_inference = transform::TransformMode::kIdentity;
};

// All translations of the evaluation protocol: every source translated into
// every other class, guided by randomly drawn reference images.
struct TranslationPool {
  Tensor<float> images;
  std::vector<std::size_t> source_labels, target_labels;
  std::vector<std::size_t> source_index, ref_index;
  // Per (source, target class): row range into `images` for diversity sets.
  std::vector<std::vector<std::size_t>> groups;
};

inline TranslationPool build_translation_pool(
    train::RunArtifacts& art, const data::Dataset<float>& eval_ds,
    const ReportOptions& opts) {
  if (!art.bundle.has_eu)
    throw std::runtime_error(
        "translation pool: E_u is untrained; run the synthesis stage first");
  const std::size_t k = eval_ds.k;
  const std::size_t n_src = std::min(opts.max_sources, eval_ds.size());
  Rng rng = Rng::stream(opts.seed, rng_tag::kEval);

  // Encoder codes are reused across translations.
  Tensor<float> u_codes = encoder_outputs(art.bundle.Eu, eval_ds.images);
  Tensor<float> c_codes;
  if (art.bundle.has_ec) {
    if (opts.t_inference == transform::TransformMode::kIdentity) {
      c_codes = encoder_outputs(art.bundle.Ec, eval_ds.images);
    } else {
      // Mask-mode inference: E_c sees the reference band, as in training.
      Tensor<float> masked(
          {eval_ds.size(), eval_ds.height(), eval_ds.width(),
           eval_ds.channels()});
      const std::size_t sz =
          eval_ds.height() * eval_ds.width() * eval_ds.channels();
      for (std::size_t i = 0; i < eval_ds.size(); ++i) {
        Tensor<float> img = eval_ds.image(i);
        Tensor<float> m = eval_ds.mask(i);
        Tensor<float> tx = transform::mask_transform(img, m);
        std::copy_n(tx.data(), sz, masked.data() + i * sz);
      }
      c_codes = encoder_outputs(art.bundle.Ec, masked);
    }
  }

  std::vector<std::vector<std::size_t>> by_class(k);
  for (std::size_t i = 0; i < eval_ds.size(); ++i)
    by_class[eval_ds.labels[i]].push_back(i);

  TranslationPool pool;
  std::vector<Tensor<float>> latents;
  const std::size_t d_y = art.bank.d_y(), d_c = art.bundle.dims.d_c,
                    d_u = art.bank.d_u();
  for (std::size_t s = 0; s < n_src; ++s) {
    const std::size_t src_label = eval_ds.labels[s];
    for (std::size_t target = 0; target < k; ++target) {
      if (target == src_label) continue;
      if (by_class[target].empty()) continue;
      std::vector<std::size_t> group;
      for (std::size_t r = 0; r < opts.refs_per_source; ++r) {
        const std::size_t ref =
            by_class[target][rng.below(by_class[target].size())];
        Tensor<float> lat({1, art.bundle.latent_dim()});
        std::size_t off = 0;
        for (std::size_t j = 0; j < d_y; ++j)
          lat.at2(0, off++) = art.bank.y_embed.at2(target, j);
        if (art.bundle.has_ec)
          for (std::size_t j = 0; j < d_c; ++j)
            lat.at2(0, off++) = c_codes.at2(ref, j);
        for (std::size_t j = 0; j < d_u; ++j)
          lat.at2(0, off++) = u_codes.at2(s, j);
        group.push_back(latents.size());
        latents.push_back(std::move(lat));
        pool.source_labels.push_back(src_label);
        pool.target_labels.push_back(target);
        pool.source_index.push_back(s);
        pool.ref_index.push_back(ref);
      }
      pool.groups.push_back(std::move(group));
    }
  }

  // Batched generator forwards.
  const std::size_t n = latents.size();
  const std::size_t img_sz =
      eval_ds.height() * eval_ds.width() * eval_ds.channels();
  pool.images = Tensor<float>(
      {n, eval_ds.height(), eval_ds.width(), eval_ds.channels()});
  const std::size_t batch = 64;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t b = std::min(batch, n - start);
    Tensor<float> lat({b, art.bundle.latent_dim()});
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < art.bundle.latent_dim(); ++j)
        lat.at2(i, j) = latents[start + i].at2(0, j);
    ad::Tape<float> t;
    nets::Binder<float> bind(t, false);
    auto* out = art.bundle.G.forward(bind, t.constant(std::move(lat)));
    std::copy_n(out->value.data(), b * img_sz,
                pool.images.data() + start * img_sz);
  }
  return pool;
}

// Amortized reconstructions of the first n sources (batched).
inline Tensor<float> reconstruct_sources(train::RunArtifacts& art,
                                         const data::Dataset<float>& eval_ds,
                                         std::size_t n) {
  Tensor<float> y_codes = encoder_outputs(art.bundle.Ey, eval_ds.images);
  Tensor<float> u_codes = encoder_outputs(art.bundle.Eu, eval_ds.images);
  Tensor<float> c_codes;
  if (art.bundle.has_ec)
    c_codes = encoder_outputs(art.bundle.Ec, eval_ds.images);
  const std::size_t img_sz =
      eval_ds.height() * eval_ds.width() * eval_ds.channels();
  Tensor<float> out(
      {n, eval_ds.height(), eval_ds.width(), eval_ds.channels()});
  const std::size_t batch = 64;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t b = std::min(batch, n - start);
    Tensor<float> lat({b, art.bundle.latent_dim()});
    for (std::size_t i = 0; i < b; ++i) {
      std::size_t off = 0;
      for (std::size_t j = 0; j < art.bundle.dims.d_y; ++j)
        lat.at2(i, off++) = y_codes.at2(start + i, j);
      if (art.bundle.has_ec)
        for (std::size_t j = 0; j < art.bundle.dims.d_c; ++j)
          lat.at2(i, off++) = c_codes.at2(start + i, j);
      for (std::size_t j = 0; j < art.bundle.dims.d_u; ++j)
        lat.at2(i, off++) = u_codes.at2(start + i, j);
    }
    ad::Tape<float> t;
    nets::Binder<float> bind(t, false);
    auto* o = art.bundle.G.forward(bind, t.constant(std::move(lat)));
    std::copy_n(o->value.data(), b * img_sz, out.data() + start * img_sz);
  }
  return out;
}

namespace pipeline_detail {

// Normalized pose error of oracle predictions against ground truth rows.
inline double oracle_pose_error(OracleSet<float>& oracles,
                                const Tensor<float>& images,
                                const Tensor<float>& pose_gt) {
  Tensor<float> pred = oracles.predict_pose(images);
  const std::size_t n = pred.dim(0), p = pred.dim(1);
  double total = 0;
  for (std::size_t j = 0; j < p; ++j) {
    double mean = 0, var = 0, se = 0;
    for (std::size_t i = 0; i < n; ++i) mean += double(pose_gt.at2(i, j));
    mean /= double(n);
    for (std::size_t i = 0; i < n; ++i) {
      var += (double(pose_gt.at2(i, j)) - mean) *
             (double(pose_gt.at2(i, j)) - mean);
      se += (double(pred.at2(i, j)) - double(pose_gt.at2(i, j))) *
            (double(pred.at2(i, j)) - double(pose_gt.at2(i, j)));
    }
    total += var > 0 ? std::sqrt(se / var) : 0.0;
  }
  return total / double(p);
}

inline Tensor<float> pose_rows(const data::Dataset<float>& ds,
                               const std::vector<std::size_t>& rows) {
  Tensor<float> out({rows.size(), synth::kPoseDim});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto pv = synth::pose_vector(ds.factors[rows[i]]);
    for (std::size_t j = 0; j < synth::kPoseDim; ++j)
      out.at2(i, j) = float(pv[j]);
  }
  return out;
}

}  // namespace pipeline_detail

// The full quantitative protocol. Fields that need unavailable inputs
// (factors, a trained E_u, oracles) are left unset.
inline EvalReport full_report(train::RunArtifacts& art,
                              const data::Dataset<float>& train_ds,
                              const data::Dataset<float>& eval_ds,
                              OracleSet<float>* oracles,
                              const ReportOptions& opts = {}) {
  EvalReport report;
  report.chance_level = 1.0 / double(train_ds.k);
  Rng rng = Rng::stream(opts.seed, rng_tag::kEval + 7);

  // Representation-level probe: the codes the run actually uses — the bank
  // for stage-1 artifacts, E_u outputs on held-out images after stage 2.
  Tensor<float> codes;
  const std::vector<std::size_t>* code_labels = nullptr;
  const data::Dataset<float>* code_ds = nullptr;
  if (art.bundle.has_eu) {
    codes = encoder_outputs(art.bundle.Eu, eval_ds.images);
    code_labels = &eval_ds.labels;
    code_ds = &eval_ds;
  } else {
    codes = art.bank.u_prime;
    code_labels = &train_ds.labels;
    code_ds = &train_ds;
  }
  {
    Rng pr(rng.next_u64());
    auto [probe, acc] = train_probe(codes, *code_labels, 0.25, pr);
    report.probe_acc_y_from_u = acc;
  }
  if (code_ds->has_factors()) {
    std::vector<std::size_t> all(code_ds->size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const double err = pose_regression_probe(
        codes, pipeline_detail::pose_rows(*code_ds, all));
    report.pose_regression_err = err;
    report.pose_regression_r2 = 1.0 - err * err;
  }

  if (!art.bundle.has_eu || oracles == nullptr) return report;

  // Image-level metrics over the translation pool.
  TranslationPool pool = build_translation_pool(art, eval_ds, opts);
  {
    Rng lr(rng.next_u64());
    auto leak = source_leakage_accuracy(pool.images, pool.source_labels,
                                        pool.target_labels, eval_ds.k, lr);
    report.leakage_acc = leak.accuracy;
  }
  {
    auto fid = desk_fid(eval_ds.images, eval_ds.labels, pool.images,
                        pool.target_labels, *oracles, eval_ds.k);
    report.frechet_by_domain = fid.per_class;
    report.frechet_mean = fid.mean;
  }
  {
    std::vector<Tensor<float>> sets;
    const std::size_t img_sz =
        eval_ds.height() * eval_ds.width() * eval_ds.channels();
    for (const auto& group : pool.groups) {
      Tensor<float> set({group.size(), eval_ds.height(), eval_ds.width(),
                         eval_ds.channels()});
      for (std::size_t i = 0; i < group.size(); ++i)
        std::copy_n(pool.images.data() + group[i] * img_sz, img_sz,
                    set.data() + i * img_sz);
      sets.push_back(std::move(set));
    }
    report.diversity = diversity_score(sets, *oracles).score;
  }

  if (eval_ds.has_factors()) {
    FactorTransfer ft;
    const auto y_pred = classify(oracles->y_classifier, pool.images);
    const auto c_pred = classify(oracles->corr_classifier, pool.images);
    std::size_t y_hit = 0, c_hit = 0;
    for (std::size_t i = 0; i < y_pred.size(); ++i) {
      if (y_pred[i] == pool.target_labels[i]) ++y_hit;
      if (c_pred[i] == eval_ds.factors[pool.ref_index[i]].corr) ++c_hit;
    }
    ft.y_acc = double(y_hit) / double(y_pred.size());
    ft.corr_acc = double(c_hit) / double(c_pred.size());

    // Pose must survive translation: compare oracle pose on translations
    // (target = source pose) against the same oracle on reconstructions.
    ft.pose_err = pipeline_detail::oracle_pose_error(
        *oracles, pool.images,
        pipeline_detail::pose_rows(eval_ds, pool.source_index));
    const std::size_t n_rec = std::min(opts.max_sources, eval_ds.size());
    Tensor<float> recons = reconstruct_sources(art, eval_ds, n_rec);
    std::vector<std::size_t> rec_rows(n_rec);
    for (std::size_t i = 0; i < n_rec; ++i) rec_rows[i] = i;
    ft.pose_err_recon = pipeline_detail::oracle_pose_error(
        *oracles, recons, pipeline_detail::pose_rows(eval_ds, rec_rows));
    report.factor_transfer = ft;
  }
  return report;
}

}  // namespace overlord::eval

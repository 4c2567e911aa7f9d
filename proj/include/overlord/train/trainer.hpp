#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "overlord/data/dataset.hpp"
#include "overlord/eval/harness.hpp"
#include "overlord/eval/probes.hpp"
#include "overlord/latent/bank.hpp"
#include "overlord/losses/losses.hpp"
#include "overlord/nets/checkpoint.hpp"
#include "overlord/train/adam.hpp"
#include "overlord/transform/transforms.hpp"

namespace overlord::train {

struct TrainConfig {
  // Disentanglement stage (latent optimization).
  double lr_latent = 0.01;
  double lr_generator = 0.001;
  double lr_encoder = 0.0001;
  std::size_t epochs_stage1 = 200;
  // Synthesis stage: one learning rate for every parameter group.
  double lr_stage2 = 0.0001;
  std::size_t epochs_stage2 = 100;

  std::size_t batch_size = 32;
  loss::LossWeights weights;
  loss::FeatureLossConfig rec;
  double noise_std = 1.0;
  double init_std = 0.05;
  double r1_gamma = 1.0;
  bool eq8_raw_x = true;  // feed E_c the raw image in the amortized path
  bool ey_in_stage1 = false;

  transform::TransformMode t_mode = transform::TransformMode::kRandomSpatial;
  transform::TransformConfig t_cfg;

  nets::Dims dims;
  nets::ArchConfig arch;

  std::uint64_t seed = 1;
  std::size_t log_every = 20;
  std::size_t checkpoint_every = 500;
  bool probe_curve = true;  // per-epoch probe of y from the uncorrelated codes
  eval::ProbeRecipe probe;

  void validate() const {
    if (lr_latent <= 0 || lr_generator <= 0 || lr_encoder <= 0 ||
        lr_stage2 <= 0)
      throw std::invalid_argument("train config: step sizes must be positive");
    if (epochs_stage1 < 1 || epochs_stage2 < 1 || batch_size < 1)
      throw std::invalid_argument("train config: epochs/batch must be >= 1");
    weights.validate();
    rec.validate();
  }
};

// Everything a finished run hands to evaluation and downstream stages.
struct RunArtifacts {
  latent::LatentBank<float> bank;
  nets::ModelBundle<float> bundle;
  std::vector<std::pair<std::size_t, double>> probe_curve;
  std::string variant;   // stage1 | stage2 | amortized | no_xcorr
  std::string out_dir;   // empty when nothing was persisted
  std::string stage1_source;  // provenance for stage-2 runs
};

namespace detail {

// Adam over one named parameter group, fed from a Binder after backward.
template <typename T>
struct AdamGroup {
  nets::ParamRefs<T> refs;
  std::vector<AdamState<T>> states;
  AdamConfig cfg;

  void init(nets::ParamRefs<T> r, double lr) {
    refs = std::move(r);
    states.assign(refs.size(), {});
    cfg.lr = lr;
  }

  void step(nets::Binder<T>& bind) {
    for (std::size_t i = 0; i < refs.size(); ++i) {
      Tensor<T> g = bind.grad_of(*refs[i].second);
      if (!g.empty()) adam_step(*refs[i].second, g, states[i], cfg);
    }
  }
};

class LossLog {
 public:
  explicit LossLog(const std::string& path) {
    if (!path.empty()) {
      out_.open(path);
      if (!out_) throw std::runtime_error("cannot open loss log " + path);
    }
  }
  void line(std::size_t step, const char* name, double value) {
    if (out_.is_open())
      out_ << step << '\t' << name << '\t' << value << '\n';
  }
  void flush() {
    if (out_.is_open()) out_.flush();
  }

 private:
  std::ofstream out_;
};

inline void ensure_dirs(const std::string& out_dir) {
  namespace fs = std::filesystem;
  if (out_dir.empty()) return;
  fs::create_directories(fs::path(out_dir) / "stage1");
  fs::create_directories(fs::path(out_dir) / "stage2");
  fs::create_directories(fs::path(out_dir) / "curves");
}

inline void write_probe_curve(
    const std::string& out_dir,
    const std::vector<std::pair<std::size_t, double>>& curve) {
  if (out_dir.empty() || curve.empty()) return;
  std::ofstream f(std::filesystem::path(out_dir) / "curves" /
                  "probe_by_epoch.tsv");
  for (const auto& [epoch, acc] : curve) f << epoch << '\t' << acc << '\n';
}

inline void check_finite(double v, std::size_t step, const char* term) {
  if (!std::isfinite(v))
    throw std::runtime_error("non-finite loss at step " +
                             std::to_string(step) + " in term '" + term +
                             "'; last periodic checkpoint retained");
}

// Distinct rows with accumulated gradients (robust to repeated indices).
template <typename T>
std::vector<std::size_t> scatter_row_grads(
    const std::vector<std::size_t>& indices, const Tensor<T>& batch_grad,
    Tensor<T>& table_grad) {
  std::vector<std::size_t> unique;
  const std::size_t d = batch_grad.dim(1);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    bool seen = false;
    for (std::size_t u : unique) seen = seen || u == indices[i];
    if (!seen) unique.push_back(indices[i]);
    for (std::size_t j = 0; j < d; ++j)
      table_grad.at2(indices[i], j) += batch_grad.at2(i, j);
  }
  std::sort(unique.begin(), unique.end());
  return unique;
}

template <typename T>
std::vector<std::size_t> unique_sorted(std::vector<std::size_t> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace detail

// Probe accuracy of the labeled attribute from a code matrix; the fixed
// instrument behind the per-epoch disentanglement curves.
inline double probe_codes_accuracy(const Tensor<float>& codes,
                                   const std::vector<std::size_t>& labels,
                                   Rng& rng, const eval::ProbeRecipe& recipe) {
  auto [probe, acc] = eval::train_probe(codes, labels, 0.25, rng, recipe);
  return acc;
}

namespace detail {

template <typename T>
Tensor<T> transformed_batch(const data::Dataset<T>& ds,
                            const std::vector<std::size_t>& indices,
                            transform::TransformMode mode,
                            const transform::TransformConfig& t_cfg,
                            Rng& t_rng) {
  const std::size_t b = indices.size();
  Tensor<T> out({b, ds.height(), ds.width(), ds.channels()});
  const std::size_t sz = ds.height() * ds.width() * ds.channels();
  for (std::size_t i = 0; i < b; ++i) {
    Tensor<T> img = ds.image(indices[i]);
    Tensor<T> m;
    const Tensor<T>* mp = nullptr;
    if (mode == transform::TransformMode::kMask) {
      m = ds.mask(indices[i]);
      mp = &m;
    }
    Tensor<T> tx = transform::apply_T(img, mp, mode, t_rng, t_cfg);
    std::copy_n(tx.data(), sz, out.data() + i * sz);
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage 1: disentanglement by latent optimization.
// Per minibatch: one gradient step each on the sampled u' rows, the touched
// y-embedding rows, E_c and G, at their respective learning rates.
// `amortized_u` switches to the inductive-bias ablation where u comes from
// E_u(x) instead of the bank; `with_ec=false` removes the correlated branch.
// ---------------------------------------------------------------------------
inline RunArtifacts train_stage1_impl(const data::Dataset<float>& ds,
                                      const TrainConfig& cfg,
                                      const std::string& out_dir,
                                      bool amortized_u, bool with_ec) {
  cfg.validate();
  if (ds.size() == 0) throw std::invalid_argument("stage1: empty dataset");
  if (with_ec && cfg.t_mode == transform::TransformMode::kMask &&
      !ds.has_masks())
    throw std::invalid_argument("stage1: t_mode=mask but dataset has no masks");

  detail::ensure_dirs(out_dir);
  namespace fs = std::filesystem;

  Rng bank_rng = Rng::stream(cfg.seed, rng_tag::kBankInit);
  Rng model_rng = Rng::stream(cfg.seed, rng_tag::kModelInit);
  Rng order_rng = Rng::stream(cfg.seed, rng_tag::kBatchOrder);
  Rng t_rng = Rng::stream(cfg.seed, rng_tag::kTransform);
  Rng noise_rng = Rng::stream(cfg.seed, rng_tag::kNoise);
  Rng probe_rng = Rng::stream(cfg.seed, rng_tag::kProbe);

  RunArtifacts art;
  art.variant = amortized_u ? "amortized" : (with_ec ? "stage1" : "no_xcorr");
  art.out_dir = out_dir;
  art.bank = latent::init_bank<float>(ds.size(), cfg.dims.d_u, ds.k,
                                      cfg.dims.d_y, bank_rng, cfg.init_std);
  art.bundle =
      nets::ModelBundle<float>::create(model_rng, cfg.dims, cfg.arch, with_ec);
  art.bundle.has_ey = cfg.ey_in_stage1;

  detail::AdamGroup<float> adam_g, adam_ec, adam_ey, adam_eu;
  adam_g.init(art.bundle.params_g(), cfg.lr_generator);
  if (with_ec) adam_ec.init(art.bundle.params_ec(), cfg.lr_encoder);
  if (cfg.ey_in_stage1) adam_ey.init(art.bundle.params_ey(), cfg.lr_encoder);
  if (amortized_u) adam_eu.init(art.bundle.params_eu(), cfg.lr_encoder);
  RowAdamState<float> adam_u, adam_y;
  AdamConfig latent_cfg;
  latent_cfg.lr = cfg.lr_latent;

  detail::LossLog log(out_dir.empty()
                          ? ""
                          : (fs::path(out_dir) / "loss.log").string());

  auto current_codes = [&]() -> Tensor<float> {
    if (!amortized_u) return art.bank.u_prime;
    return eval::encoder_outputs(art.bundle.Eu, ds.images);
  };
  auto record_probe = [&](std::size_t epoch) {
    if (!cfg.probe_curve) return;
    Rng r(probe_rng.next_u64());
    art.probe_curve.emplace_back(
        epoch, probe_codes_accuracy(current_codes(), ds.labels, r, cfg.probe));
  };
  record_probe(0);

  auto save_all = [&] {
    if (out_dir.empty()) return;
    latent::save_bank((fs::path(out_dir) / "stage1" / "latents.ovlb").string(),
                      art.bank);
    nets::save_bundle((fs::path(out_dir) / "stage1" / "model.ovlm").string(),
                      art.bundle);
  };

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs_stage1; ++epoch) {
    const auto perm = order_rng.permutation(ds.size());
    for (std::size_t start = 0; start < ds.size();
         start += cfg.batch_size, ++step) {
      const std::size_t b = std::min(cfg.batch_size, ds.size() - start);
      std::vector<std::size_t> idx(perm.begin() + start,
                                   perm.begin() + start + b);
      loss::Stage1Batch<float> batch;
      batch.indices = idx;
      batch.labels.resize(b);
      for (std::size_t i = 0; i < b; ++i) batch.labels[i] = ds.labels[idx[i]];
      batch.x = ds.gather_images(idx);
      if (with_ec)
        batch.x_corr =
            detail::transformed_batch(ds, idx, cfg.t_mode, cfg.t_cfg, t_rng);

      ad::Tape<float> t;
      nets::Binder<float> g_bind(t, true), ec_bind(t, true), ey_bind(t, true),
          eu_bind(t, true);

      ad::NodeRef<float> total = nullptr;
      ad::NodeRef<float> u_rows = nullptr;
      ad::NodeRef<float> y_table = nullptr;
      double rec_v = 0, pen_v = 0;
      if (!amortized_u) {
        auto g = loss::disentanglement_objective(
            t, batch, art.bank, art.bundle, g_bind, with_ec ? &ec_bind : nullptr,
            cfg.ey_in_stage1 ? &ey_bind : nullptr, cfg.rec,
            cfg.weights.lambda_b, cfg.noise_std, noise_rng);
        total = g.total;
        u_rows = g.u_rows;
        y_table = g.y_table;
        rec_v = g.rec;
        pen_v = g.bottleneck;
      } else {
        // Inductive-bias ablation: u codes produced by E_u(x), trained
        // jointly; the bottleneck applies to the encoder outputs.
        Tensor<float> x_in = batch.x;
        auto* u_node =
            art.bundle.Eu.forward(eu_bind, t.constant(std::move(x_in)));
        auto* u_noisy =
            latent::noisy_bottleneck(t, u_node, noise_rng, cfg.noise_std);
        ad::NodeRef<float> y_vec = nullptr;
        if (cfg.ey_in_stage1) {
          Tensor<float> x2 = batch.x;
          y_vec = art.bundle.Ey.forward(ey_bind, t.constant(std::move(x2)));
        } else {
          Tensor<float> table = art.bank.y_embed;
          y_table = t.leaf(std::move(table), true);
          y_vec = ad::gather_rows(t, y_table, batch.labels);
        }
        std::vector<ad::NodeRef<float>> parts = {y_vec};
        if (with_ec) {
          Tensor<float> xc = batch.x_corr;
          parts.push_back(
              art.bundle.Ec.forward(ec_bind, t.constant(std::move(xc))));
        }
        parts.push_back(u_noisy);
        auto* x_hat = art.bundle.G.forward(g_bind, ad::concat_cols(t, parts));
        Tensor<float> target = batch.x;
        auto* rec = loss::reconstruction_loss(
            t, x_hat, t.constant(std::move(target)), cfg.rec);
        auto* pen = latent::bottleneck_penalty(t, u_node);
        total = ad::add(
            t, rec, ad::scale(t, pen, float(cfg.weights.lambda_b)));
        rec_v = rec->value[0];
        pen_v = pen->value[0];
      }

      detail::check_finite(rec_v, step, "reconstruction");
      detail::check_finite(pen_v, step, "bottleneck");
      detail::check_finite(total->value[0], step, "disentanglement total");
      t.backward(total);

      // One gradient step per parameter group, fixed order.
      if (u_rows != nullptr && u_rows->has_grad()) {
        Tensor<float> table_grad = Tensor<float>::zeros_like(art.bank.u_prime);
        const auto rows =
            detail::scatter_row_grads(idx, u_rows->grad, table_grad);
        adam_step_rows(art.bank.u_prime, table_grad, rows, adam_u, latent_cfg);
      }
      if (y_table != nullptr && y_table->has_grad()) {
        const auto rows = detail::unique_sorted<std::size_t>(batch.labels);
        adam_step_rows(art.bank.y_embed, y_table->grad, rows, adam_y,
                       latent_cfg);
      }
      if (with_ec) adam_ec.step(ec_bind);
      if (cfg.ey_in_stage1) adam_ey.step(ey_bind);
      if (amortized_u) adam_eu.step(eu_bind);
      adam_g.step(g_bind);

      if (step % cfg.log_every == 0) {
        log.line(step, "rec", rec_v);
        log.line(step, "bottleneck", pen_v);
        log.line(step, "disent_total", total->value[0]);
      }
      if (cfg.checkpoint_every > 0 && step > 0 &&
          step % cfg.checkpoint_every == 0)
        save_all();
    }
    if (amortized_u) {
      // Keep the bank in sync so downstream probes see the current codes.
      art.bank.u_prime = current_codes();
    }
    record_probe(epoch + 1);
  }

  save_all();
  detail::write_probe_curve(out_dir, art.probe_curve);
  log.flush();
  return art;
}

inline RunArtifacts train_stage1(const data::Dataset<float>& ds,
                                 const TrainConfig& cfg,
                                 const std::string& out_dir = "") {
  return train_stage1_impl(ds, cfg, out_dir, /*amortized_u=*/false,
                           /*with_ec=*/true);
}

inline RunArtifacts train_amortized_ablation(const data::Dataset<float>& ds,
                                             const TrainConfig& cfg,
                                             const std::string& out_dir = "") {
  return train_stage1_impl(ds, cfg, out_dir, /*amortized_u=*/true,
                           /*with_ec=*/true);
}

inline RunArtifacts train_no_xcorr_ablation(const data::Dataset<float>& ds,
                                            const TrainConfig& cfg,
                                            const std::string& out_dir = "") {
  return train_stage1_impl(ds, cfg, out_dir, /*amortized_u=*/false,
                           /*with_ec=*/false);
}

// ---------------------------------------------------------------------------
// Stage 2: amortized synthesis. E_y and E_u are distilled onto the frozen
// stage-1 codes while G (warm-started) and E_c are fine-tuned; a
// from-scratch discriminator alternates one step with one generator/encoder
// step per minibatch. The stage-1 bank is never mutated.
// ---------------------------------------------------------------------------
inline RunArtifacts train_stage2(const RunArtifacts& stage1,
                                 const data::Dataset<float>& ds,
                                 const TrainConfig& cfg,
                                 const std::string& out_dir = "") {
  cfg.validate();
  if (stage1.bank.n() != ds.size())
    throw std::invalid_argument("stage2: bank size != dataset size");

  detail::ensure_dirs(out_dir);
  namespace fs = std::filesystem;

  RunArtifacts art;
  art.variant = "stage2";
  art.out_dir = out_dir;
  art.stage1_source = stage1.out_dir;
  art.bank = stage1.bank;
  art.bundle = stage1.bundle;  // G and E_c warm-started

  const std::uint64_t bank_checksum_before =
      io::tensor_checksum(art.bank.u_prime) ^
      io::tensor_checksum(art.bank.y_embed);

  // Fresh encoders and discriminator (E_y survives if stage 1 trained it).
  Rng model_rng = Rng::stream(cfg.seed, rng_tag::kModelInit + 100);
  if (!art.bundle.has_ey)
    art.bundle.Ey.init(model_rng, cfg.dims.H, cfg.dims.C,
                       cfg.arch.enc_base_channels, cfg.dims.d_y);
  art.bundle.Eu.init(model_rng, cfg.dims.H, cfg.dims.C,
                     cfg.arch.enc_base_channels, cfg.dims.d_u);
  art.bundle.D.init(model_rng, cfg.dims.H, cfg.dims.C,
                    cfg.arch.enc_base_channels);
  art.bundle.has_ey = true;
  art.bundle.has_eu = true;
  art.bundle.has_d = cfg.weights.lambda_adv > 0;

  Rng order_rng = Rng::stream(cfg.seed, rng_tag::kBatchOrder + 100);
  Rng t_rng = Rng::stream(cfg.seed, rng_tag::kTransform + 100);

  detail::AdamGroup<float> adam_g, adam_ec, adam_ey, adam_eu, adam_d;
  adam_g.init(art.bundle.params_g(), cfg.lr_stage2);
  if (art.bundle.has_ec) adam_ec.init(art.bundle.params_ec(), cfg.lr_stage2);
  adam_ey.init(art.bundle.params_ey(), cfg.lr_stage2);
  adam_eu.init(art.bundle.params_eu(), cfg.lr_stage2);
  adam_d.init(art.bundle.params_d(), cfg.lr_stage2);

  detail::LossLog log(out_dir.empty()
                          ? ""
                          : (fs::path(out_dir) / "loss.log").string());
  auto save_all = [&] {
    if (out_dir.empty()) return;
    nets::save_bundle((fs::path(out_dir) / "stage2" / "model.ovlm").string(),
                      art.bundle);
    // The frozen bank travels with the run so the directory stays
    // self-contained (translation needs the label-embedding table).
    latent::save_bank((fs::path(out_dir) / "stage1" / "latents.ovlb").string(),
                      art.bank);
    if (!art.stage1_source.empty()) {
      std::ofstream prov(fs::path(out_dir) / "stage2" / "provenance.txt");
      prov << "stage1\t" << art.stage1_source << "\n";
      prov << "bank_checksum\t" << bank_checksum_before << "\n";
    }
  };

  const bool adversarial = cfg.weights.lambda_adv > 0;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs_stage2; ++epoch) {
    const auto perm = order_rng.permutation(ds.size());
    for (std::size_t start = 0; start < ds.size();
         start += cfg.batch_size, ++step) {
      const std::size_t b = std::min(cfg.batch_size, ds.size() - start);
      std::vector<std::size_t> idx(perm.begin() + start,
                                   perm.begin() + start + b);
      Tensor<float> x = ds.gather_images(idx);
      Tensor<float> x_for_ec =
          (cfg.eq8_raw_x || !art.bundle.has_ec)
              ? x
              : detail::transformed_batch(ds, idx, cfg.t_mode, cfg.t_cfg,
                                          t_rng);

      // Frozen distillation targets from the stage-1 codes.
      Tensor<float> y_targets({b, art.bank.d_y()});
      Tensor<float> u_targets({b, art.bank.d_u()});
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < art.bank.d_y(); ++j)
          y_targets.at2(i, j) = art.bank.y_embed.at2(ds.labels[idx[i]], j);
        for (std::size_t j = 0; j < art.bank.d_u(); ++j)
          u_targets.at2(i, j) = art.bank.u_prime.at2(idx[i], j);
      }

      // Discriminator step (skipped entirely for lambda_adv = 0).
      if (adversarial) {
        Tensor<float> fake;
        {
          ad::Tape<float> t;
          nets::Binder<float> gb(t, false), ecb(t, false), eyb(t, false),
              eub(t, false);
          fake = loss::amortized_reconstruction(t, x, x_for_ec, art.bundle,
                                                gb, ecb, eyb, eub)
                     .x_hat->value;
        }
        ad::Tape<float> t;
        nets::Binder<float> d_bind(t, true);
        auto d = loss::synthesis_discriminator_objective(
            t, x, fake, art.bundle, d_bind, cfg.r1_gamma);
        detail::check_finite(d.loss_d, step, "loss_d");
        detail::check_finite(d.r1, step, "r1");
        t.backward(d.total);
        adam_d.step(d_bind);
        if (step % cfg.log_every == 0) {
          log.line(step, "loss_d", d.loss_d);
          log.line(step, "r1", d.r1);
        }
      }

      // Generator/encoder step.
      {
        ad::Tape<float> t;
        nets::Binder<float> gb(t, true), ecb(t, true), eyb(t, true),
            eub(t, true), db(t, false);
        auto g = loss::synthesis_generator_objective(
            t, x, x_for_ec, y_targets, u_targets, art.bundle, gb, ecb, eyb,
            eub, db, cfg.rec, cfg.weights);
        detail::check_finite(g.gen, step, "generation");
        detail::check_finite(g.enc, step, "distillation");
        detail::check_finite(g.total->value[0], step, "synthesis total");
        t.backward(g.total);
        adam_ey.step(eyb);
        adam_eu.step(eub);
        if (art.bundle.has_ec) adam_ec.step(ecb);
        adam_g.step(gb);
        if (step % cfg.log_every == 0) {
          log.line(step, "gen", g.gen);
          log.line(step, "enc", g.enc);
          log.line(step, "adv_g", g.adv_g);
          log.line(step, "synth_total", g.total->value[0]);
        }
      }

      if (cfg.checkpoint_every > 0 && step > 0 &&
          step % cfg.checkpoint_every == 0)
        save_all();
    }
  }

  const std::uint64_t bank_checksum_after =
      io::tensor_checksum(art.bank.u_prime) ^
      io::tensor_checksum(art.bank.y_embed);
  if (bank_checksum_before != bank_checksum_after)
    throw std::logic_error("stage2 mutated the frozen stage-1 bank");

  save_all();
  log.flush();
  return art;
}

// ---------------------------------------------------------------------------
// Inference-time translation.
// ---------------------------------------------------------------------------

struct Reference {
  std::optional<std::size_t> label;       // table-mode target label
  std::optional<Tensor<float>> image;     // supplies E_c (and E_y) codes
  std::optional<Tensor<float>> mask;      // only for mask-mode inference
};

// output = G(y_ref, E_c(T(reference)), E_u(source)). The label embedding
// comes from the stage-1 table unless `use_ey`; T defaults to identity.
inline Tensor<float> translate(
    nets::ModelBundle<float>& bundle, const latent::LatentBank<float>& bank,
    const Tensor<float>& source, const Reference& ref, bool use_ey = false,
    transform::TransformMode t_mode_inference =
        transform::TransformMode::kIdentity,
    const transform::TransformConfig& t_cfg = {}, Rng* t_rng = nullptr) {
  if (!bundle.has_eu)
    throw std::runtime_error(
        "translate: E_u is untrained; run the synthesis stage (train stage2) "
        "first");
  if (use_ey && !bundle.has_ey)
    throw std::runtime_error(
        "translate: image-guided labels need E_y; run the synthesis stage "
        "(train stage2) first");

  Tensor<float> y_vec;
  if (use_ey) {
    if (!ref.image) throw std::invalid_argument("translate: reference image required");
    y_vec = nets::encode_one(bundle.Ey, *ref.image);
  } else {
    if (!ref.label) throw std::invalid_argument("translate: reference label required");
    y_vec = latent::label_embedding(bank, *ref.label);
  }

  Tensor<float> c_vec;
  if (bundle.has_ec) {
    if (!ref.image)
      throw std::invalid_argument(
          "translate: reference image required for the correlated code");
    Rng local(0);
    Rng& rr = t_rng ? *t_rng : local;
    const Tensor<float>* mask = ref.mask ? &*ref.mask : nullptr;
    Tensor<float> xc =
        transform::apply_T(*ref.image, mask, t_mode_inference, rr, t_cfg);
    c_vec = nets::encode_one(bundle.Ec, xc);
  }

  Tensor<float> u_vec = nets::encode_one(bundle.Eu, source);
  return nets::generate_one(bundle, y_vec, c_vec, u_vec);
}

// Amortized reconstruction of a single image (the translate(x, x) path).
inline Tensor<float> reconstruct(nets::ModelBundle<float>& bundle,
                                 const Tensor<float>& x) {
  if (!bundle.has_eu || !bundle.has_ey)
    throw std::runtime_error("reconstruct: needs stage-2 encoders");
  Tensor<float> y_vec = nets::encode_one(bundle.Ey, x);
  Tensor<float> c_vec;
  if (bundle.has_ec) c_vec = nets::encode_one(bundle.Ec, x);
  Tensor<float> u_vec = nets::encode_one(bundle.Eu, x);
  return nets::generate_one(bundle, y_vec, c_vec, u_vec);
}

// ---------------------------------------------------------------------------
// Checkpoint round trips for whole runs.
// ---------------------------------------------------------------------------

inline void save_checkpoint(RunArtifacts& art, const std::string& dir) {
  namespace fs = std::filesystem;
  detail::ensure_dirs(dir);
  latent::save_bank((fs::path(dir) / "stage1" / "latents.ovlb").string(),
                    art.bank);
  const bool is_stage2 = art.variant == "stage2";
  nets::save_bundle(
      (fs::path(dir) / (is_stage2 ? "stage2" : "stage1") / "model.ovlm")
          .string(),
      art.bundle);
  detail::write_probe_curve(dir, art.probe_curve);
}

inline RunArtifacts load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  RunArtifacts art;
  art.out_dir = dir;
  art.bank = latent::load_bank<float>(
      (fs::path(dir) / "stage1" / "latents.ovlb").string());
  const auto stage2_model = fs::path(dir) / "stage2" / "model.ovlm";
  if (fs::exists(stage2_model)) {
    art.bundle = nets::load_bundle<float>(stage2_model.string());
    art.variant = "stage2";
    const auto prov = fs::path(dir) / "stage2" / "provenance.txt";
    if (fs::exists(prov)) {
      std::ifstream p(prov);
      std::string key;
      p >> key >> art.stage1_source;
    }
  } else {
    art.bundle = nets::load_bundle<float>(
        (fs::path(dir) / "stage1" / "model.ovlm").string());
    art.variant = art.bundle.has_ec ? "stage1" : "no_xcorr";
  }
  return art;
}

}  // namespace overlord::train

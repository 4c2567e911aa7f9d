#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "overlord/latent/bank.hpp"
#include "overlord/nets/nets.hpp"

namespace overlord::loss {

using ad::NodeRef;
using ad::Tape;

enum class FeatureLossKind { kPixelL1, kMultiscaleL1, kFixedRandomFeatures };

inline const char* to_string(FeatureLossKind k) {
  switch (k) {
    case FeatureLossKind::kPixelL1: return "pixel_l1";
    case FeatureLossKind::kMultiscaleL1: return "multiscale_l1";
    case FeatureLossKind::kFixedRandomFeatures: return "fixed_random_features";
  }
  return "?";
}

inline FeatureLossKind feature_loss_from_string(const std::string& s) {
  if (s == "pixel_l1") return FeatureLossKind::kPixelL1;
  if (s == "multiscale_l1") return FeatureLossKind::kMultiscaleL1;
  if (s == "fixed_random_features")
    return FeatureLossKind::kFixedRandomFeatures;
  throw std::invalid_argument("unknown feature loss kind: " + s);
}

// The reconstruction distance. multiscale_l1 is the default;
// fixed_random_features is the closest stand-in for a pretrained perceptual
// loss that stays dependency-free: a frozen, seeded, never-trained conv
// pyramid.
struct FeatureLossConfig {
  FeatureLossKind kind = FeatureLossKind::kMultiscaleL1;
  std::array<double, 3> scale_weights = {0.5, 0.3, 0.2};
  std::uint64_t feature_net_seed = 0x0f2a1b;

  void validate() const {
    double sum = 0;
    for (double w : scale_weights) {
      if (w < 0) throw std::invalid_argument("scale weights must be >= 0");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("scale weights must sum to 1");
  }
};

struct LossWeights {
  double lambda_b = 0.001;
  double lambda_enc = 10.0;
  double lambda_adv = 1.0;

  void validate() const {
    if (lambda_b < 0 || lambda_enc < 0 || lambda_adv < 0 ||
        !std::isfinite(lambda_b + lambda_enc + lambda_adv))
      throw std::invalid_argument("loss weights must be finite and >= 0");
  }
};

namespace detail {

template <typename T>
NodeRef<T> mean_abs_diff(Tape<T>& t, NodeRef<T> a, NodeRef<T> b) {
  return ad::mean_all(t, ad::abs_op(t, ad::sub(t, a, b)));
}

// The frozen random feature pyramid: three stride-2 convs, widths 12/24/48,
// weights drawn once from the seed and never trained.
template <typename T>
struct FrozenPyramid {
  std::vector<Tensor<T>> w;
  std::vector<Tensor<T>> b;

  explicit FrozenPyramid(std::uint64_t seed, std::size_t in_channels) {
    Rng rng(Rng::splitmix64(seed));
    const std::size_t widths[3] = {12, 24, 48};
    std::size_t ci = in_channels;
    for (std::size_t level = 0; level < 3; ++level) {
      const std::size_t co = widths[level];
      w.push_back(nets::init::he_normal<T>(rng, {3, 3, ci, co}, 9 * ci));
      b.push_back(Tensor<T>({co}));
      ci = co;
    }
  }

  // Feature maps at each level for one batch.
  std::vector<NodeRef<T>> run(Tape<T>& t, NodeRef<T> x) const {
    std::vector<NodeRef<T>> feats;
    NodeRef<T> h = x;
    for (std::size_t level = 0; level < 3; ++level) {
      Tensor<T> wc = w[level], bc = b[level];
      h = ad::conv2d(t, h, t.constant(std::move(wc)),
                     t.constant(std::move(bc)), 2, 1);
      h = ad::leaky_relu(t, h, T(0.2));
      feats.push_back(h);
    }
    return feats;
  }
};

}  // namespace detail

// ell(x_hat, x): the per-pair reconstruction distance, batch mean.
template <typename T>
NodeRef<T> reconstruction_loss(Tape<T>& t, NodeRef<T> x_hat, NodeRef<T> x,
                               const FeatureLossConfig& cfg) {
  if (!x_hat->value.same_shape(x->value))
    throw std::invalid_argument("reconstruction_loss: shape mismatch " +
                                x_hat->value.shape_str() + " vs " +
                                x->value.shape_str());
  cfg.validate();
  switch (cfg.kind) {
    case FeatureLossKind::kPixelL1:
      return detail::mean_abs_diff(t, x_hat, x);
    case FeatureLossKind::kMultiscaleL1: {
      NodeRef<T> a = x_hat, b = x;
      NodeRef<T> total = nullptr;
      for (int level = 0; level < 3; ++level) {
        if (level > 0) {
          a = ad::avgpool2(t, a);
          b = ad::avgpool2(t, b);
        }
        auto* term = ad::scale(t, detail::mean_abs_diff(t, a, b),
                               T(cfg.scale_weights[level]));
        total = total ? ad::add(t, total, term) : term;
      }
      return total;
    }
    case FeatureLossKind::kFixedRandomFeatures: {
      detail::FrozenPyramid<T> net(cfg.feature_net_seed, x->value.dim(3));
      auto fa = net.run(t, x_hat);
      auto fb = net.run(t, x);
      NodeRef<T> total = nullptr;
      for (std::size_t level = 0; level < fa.size(); ++level) {
        auto* term = ad::mean_all(
            t, ad::square(t, ad::sub(t, fa[level], fb[level])));
        term = ad::scale(t, term, T(1.0 / double(fa.size())));
        total = total ? ad::add(t, total, term) : term;
      }
      return total;
    }
  }
  throw std::logic_error("reconstruction_loss: unreachable");
}

// One training minibatch for the disentanglement stage. x_corr holds T(x)
// per sample; it stays empty when the correlated branch is ablated.
template <typename T>
struct Stage1Batch {
  Tensor<T> x;
  Tensor<T> x_corr;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> indices;  // rows of the latent bank
};

template <typename T>
struct Stage1Graph {
  NodeRef<T> total = nullptr;
  double rec = 0, bottleneck = 0;
  NodeRef<T> u_rows = nullptr;   // leaf: gathered u' rows, [B, d_u]
  NodeRef<T> y_table = nullptr;  // leaf: full y embedding table
};

// L_disent = ell(G(y, E_c(T(x)), u' + z), x) + lambda_b * mean_i ||u'_i||^2.
// In ey_bind mode the label code comes from E_y(x) instead of the table
// (the image-guided variant trained during the disentanglement stage).
template <typename T>
Stage1Graph<T> disentanglement_objective(
    Tape<T>& t, const Stage1Batch<T>& batch, latent::LatentBank<T>& bank,
    nets::ModelBundle<T>& bundle, nets::Binder<T>& g_bind,
    std::type_identity_t<nets::Binder<T>>* ec_bind,
    std::type_identity_t<nets::Binder<T>>* ey_bind,
    const FeatureLossConfig& rec_cfg, double lambda_b, double noise_std,
    Rng& noise_rng) {
  const std::size_t B = batch.x.dim(0);
  if (batch.labels.size() != B || batch.indices.size() != B)
    throw std::invalid_argument("stage1 batch: label/index count mismatch");

  Stage1Graph<T> g;
  // Gather the batch rows of u' into a leaf.
  Tensor<T> u_batch({B, bank.d_u()});
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < bank.d_u(); ++j)
      u_batch.at2(i, j) = bank.u_prime.at2(batch.indices[i], j);
  g.u_rows = t.leaf(std::move(u_batch), true);

  NodeRef<T> u_noisy =
      latent::noisy_bottleneck(t, g.u_rows, noise_rng, noise_std);

  NodeRef<T> y_vec = nullptr;
  if (ey_bind != nullptr) {
    Tensor<T> x_in = batch.x;
    y_vec = bundle.Ey.forward(*ey_bind, t.constant(std::move(x_in)));
  } else {
    Tensor<T> table = bank.y_embed;
    g.y_table = t.leaf(std::move(table), true);
    y_vec = ad::gather_rows(t, g.y_table, batch.labels);
  }

  std::vector<NodeRef<T>> parts = {y_vec};
  if (bundle.has_ec) {
    if (ec_bind == nullptr || batch.x_corr.empty())
      throw std::invalid_argument(
          "stage1: correlated branch enabled but no x_corr/binder given");
    Tensor<T> xc = batch.x_corr;
    parts.push_back(bundle.Ec.forward(*ec_bind, t.constant(std::move(xc))));
  }
  parts.push_back(u_noisy);

  auto* latent = ad::concat_cols(t, parts);
  auto* x_hat = bundle.G.forward(g_bind, latent);
  Tensor<T> x_target = batch.x;
  auto* rec = reconstruction_loss(t, x_hat, t.constant(std::move(x_target)),
                                  rec_cfg);
  auto* pen = latent::bottleneck_penalty(t, g.u_rows);
  g.total = ad::add(t, rec, ad::scale(t, pen, T(lambda_b)));
  g.rec = double(rec->value[0]);
  g.bottleneck = double(pen->value[0]);
  return g;
}

// L_enc = mean_i ( ||E_y(x_i) - y_i||^2 + ||E_u(x_i) - u'_i||^2 ).
// Targets are the frozen stage-1 codes; u targets are noiseless.
template <typename T>
NodeRef<T> encoder_distillation_loss(Tape<T>& t, NodeRef<T> ey_out,
                                     NodeRef<T> eu_out,
                                     const Tensor<T>& y_targets,
                                     const Tensor<T>& u_targets) {
  if (!ey_out->value.same_shape(y_targets) ||
      !eu_out->value.same_shape(u_targets))
    throw std::invalid_argument("distillation: target dim mismatch");
  const std::size_t B = y_targets.dim(0);
  Tensor<T> yt = y_targets, ut = u_targets;
  auto* ey_term =
      ad::sum_all(t, ad::square(t, ad::sub(t, ey_out, t.constant(std::move(yt)))));
  auto* eu_term =
      ad::sum_all(t, ad::square(t, ad::sub(t, eu_out, t.constant(std::move(ut)))));
  return ad::scale(t, ad::add(t, ey_term, eu_term), T(1) / T(B));
}

// Non-saturating adversarial losses from raw logits, in softplus form:
//   loss_D = mean softplus(-real) + mean softplus(fake)
//   loss_G = mean softplus(-fake)
template <typename T>
std::pair<NodeRef<T>, NodeRef<T>> adversarial_losses(Tape<T>& t,
                                                     NodeRef<T> real_logits,
                                                     NodeRef<T> fake_logits) {
  auto* d_real = ad::mean_all(t, ad::softplus(t, ad::scale(t, real_logits, T(-1))));
  auto* d_fake = ad::mean_all(t, ad::softplus(t, fake_logits));
  auto* loss_d = ad::add(t, d_real, d_fake);
  auto* loss_g =
      ad::mean_all(t, ad::softplus(t, ad::scale(t, fake_logits, T(-1))));
  return {loss_d, loss_g};
}

// Exact R1 penalty value: mean over the batch of the squared norm of the
// input gradient of the logit sum. `logits_fn` builds D's forward pass.
template <typename T, typename LogitsFn>
std::pair<double, Tensor<T>> r1_penalty(const Tensor<T>& real_batch,
                                        LogitsFn&& logits_fn) {
  Tape<T> t;
  Tensor<T> x = real_batch;
  auto* input = t.leaf(std::move(x), true);
  auto* total = ad::sum_all(t, logits_fn(t, input));
  t.backward(total);
  Tensor<T> g = input->has_grad() ? input->grad
                                  : Tensor<T>::zeros_like(real_batch);
  const std::size_t B = real_batch.dim(0);
  double acc = 0;
  for (std::size_t i = 0; i < g.numel(); ++i) acc += double(g[i]) * double(g[i]);
  return {acc / double(B), std::move(g)};
}

// Training-path surrogate whose parameter gradient equals that of
// (gamma/2) * R1, built from two extra discriminator passes along the
// (stop-gradient) input-gradient direction. Symmetric differencing keeps the
// approximation error at O(eps^2); no second-order backprop is needed.
template <typename T, typename LogitsFn>
NodeRef<T> r1_surrogate(Tape<T>& t, const Tensor<T>& real_batch,
                        const Tensor<T>& input_grad, double gamma,
                        LogitsFn&& logits_fn, double fd_eps = 1e-2) {
  double norm = 0;
  for (std::size_t i = 0; i < input_grad.numel(); ++i)
    norm += double(input_grad[i]) * double(input_grad[i]);
  norm = std::sqrt(norm);
  if (norm == 0.0) return nullptr;  // flat discriminator: nothing to add

  const std::size_t B = real_batch.dim(0);
  Tensor<T> xp = real_batch, xm = real_batch;
  for (std::size_t i = 0; i < real_batch.numel(); ++i) {
    const T step = T(fd_eps * double(input_grad[i]) / norm);
    xp[i] += step;
    xm[i] -= step;
  }
  auto* fp = ad::sum_all(t, logits_fn(t, t.constant(std::move(xp))));
  auto* fm = ad::sum_all(t, logits_fn(t, t.constant(std::move(xm))));
  const double coeff = gamma / double(B) * norm / (2.0 * fd_eps);
  return ad::scale(t, ad::sub(t, fp, fm), T(coeff));
}

// Amortized reconstruction of the synthesis stage:
//   x_hat = G(E_y(x), E_c(x_for_ec), E_u(x)).
// x_for_ec is the raw image by default; callers pass T(x) when the
// transformed-input variant is configured. The encoder output nodes are
// returned so the distillation terms reuse the same forward passes.
template <typename T>
struct AmortizedGraph {
  NodeRef<T> x_hat = nullptr;
  NodeRef<T> ey_out = nullptr;
  NodeRef<T> eu_out = nullptr;
};

template <typename T>
AmortizedGraph<T> amortized_reconstruction(Tape<T>& t, const Tensor<T>& x,
                                           const Tensor<T>& x_for_ec,
                                           nets::ModelBundle<T>& bundle,
                                           nets::Binder<T>& g_bind,
                                           nets::Binder<T>& ec_bind,
                                           nets::Binder<T>& ey_bind,
                                           nets::Binder<T>& eu_bind) {
  AmortizedGraph<T> g;
  Tensor<T> x1 = x, x2 = x;
  g.ey_out = bundle.Ey.forward(ey_bind, t.constant(std::move(x1)));
  g.eu_out = bundle.Eu.forward(eu_bind, t.constant(std::move(x2)));
  std::vector<NodeRef<T>> parts = {g.ey_out};
  if (bundle.has_ec) {
    Tensor<T> xc = x_for_ec;
    parts.push_back(bundle.Ec.forward(ec_bind, t.constant(std::move(xc))));
  }
  parts.push_back(g.eu_out);
  g.x_hat = bundle.G.forward(g_bind, ad::concat_cols(t, parts));
  return g;
}

template <typename T>
NodeRef<T> generation_loss(Tape<T>& t, const Tensor<T>& x,
                           const Tensor<T>& x_for_ec,
                           nets::ModelBundle<T>& bundle,
                           nets::Binder<T>& g_bind, nets::Binder<T>& ec_bind,
                           nets::Binder<T>& ey_bind, nets::Binder<T>& eu_bind,
                           const FeatureLossConfig& rec_cfg) {
  auto g = amortized_reconstruction(t, x, x_for_ec, bundle, g_bind, ec_bind,
                                    ey_bind, eu_bind);
  Tensor<T> target = x;
  return reconstruction_loss(t, g.x_hat, t.constant(std::move(target)),
                             rec_cfg);
}

// Minimizer side of the synthesis objective:
//   L_gen + lambda_enc * L_enc + lambda_adv * (-log sigma(D(x_hat))).
// The discriminator binder is usually non-trainable here; gradients still
// flow through its ops into the reconstruction.
template <typename T>
struct SynthesisGenGraph {
  NodeRef<T> total = nullptr;
  double gen = 0, enc = 0, adv_g = 0;
};

template <typename T>
SynthesisGenGraph<T> synthesis_generator_objective(
    Tape<T>& t, const Tensor<T>& x, const Tensor<T>& x_for_ec,
    const Tensor<T>& y_targets, const Tensor<T>& u_targets,
    nets::ModelBundle<T>& bundle, nets::Binder<T>& g_bind,
    nets::Binder<T>& ec_bind, nets::Binder<T>& ey_bind,
    nets::Binder<T>& eu_bind, nets::Binder<T>& d_bind,
    const FeatureLossConfig& rec_cfg, const LossWeights& weights) {
  weights.validate();
  SynthesisGenGraph<T> out;
  auto g = amortized_reconstruction(t, x, x_for_ec, bundle, g_bind, ec_bind,
                                    ey_bind, eu_bind);
  Tensor<T> target = x;
  auto* gen = reconstruction_loss(t, g.x_hat, t.constant(std::move(target)),
                                  rec_cfg);
  out.gen = double(gen->value[0]);
  NodeRef<T> total = gen;

  if (weights.lambda_enc > 0) {
    auto* enc =
        encoder_distillation_loss(t, g.ey_out, g.eu_out, y_targets, u_targets);
    out.enc = double(enc->value[0]);
    total = ad::add(t, total, ad::scale(t, enc, T(weights.lambda_enc)));
  }
  if (weights.lambda_adv > 0) {
    auto* fake_logits = bundle.D.forward(d_bind, g.x_hat);
    auto* adv_g = ad::mean_all(
        t, ad::softplus(t, ad::scale(t, fake_logits, T(-1))));
    out.adv_g = double(adv_g->value[0]);
    total = ad::add(t, total, ad::scale(t, adv_g, T(weights.lambda_adv)));
  }
  out.total = total;
  return out;
}

// Maximizer side: loss_D plus the R1 term when gamma > 0. Fake images are
// produced by the caller without gradients (the discriminator step must not
// move the generator or encoders).
template <typename T>
struct SynthesisDiscGraph {
  NodeRef<T> total = nullptr;
  double loss_d = 0, r1 = 0;
};

template <typename T>
SynthesisDiscGraph<T> synthesis_discriminator_objective(
    Tape<T>& t, const Tensor<T>& x_real, const Tensor<T>& x_fake,
    nets::ModelBundle<T>& bundle, nets::Binder<T>& d_bind, double r1_gamma,
    double r1_fd_eps = 1e-2) {
  SynthesisDiscGraph<T> out;
  Tensor<T> xr = x_real, xf = x_fake;
  auto* real_logits = bundle.D.forward(d_bind, t.constant(std::move(xr)));
  auto* fake_logits = bundle.D.forward(d_bind, t.constant(std::move(xf)));
  auto [loss_d, loss_g] = adversarial_losses(t, real_logits, fake_logits);
  (void)loss_g;
  out.loss_d = double(loss_d->value[0]);
  NodeRef<T> total = loss_d;

  if (r1_gamma > 0) {
    auto logits_fn = [&bundle, &d_bind](Tape<T>& tape, NodeRef<T> input) {
      (void)tape;
      return bundle.D.forward(d_bind, input);
    };
    auto fresh_fn = [&bundle](Tape<T>& tape, NodeRef<T> input) {
      nets::Binder<T> bind(tape, false);
      return bundle.D.forward(bind, input);
    };
    auto [r1_val, grad] = r1_penalty<T>(x_real, fresh_fn);
    out.r1 = r1_val;
    auto* surrogate =
        r1_surrogate(t, x_real, grad, r1_gamma, logits_fn, r1_fd_eps);
    if (surrogate) total = ad::add(t, total, surrogate);
  }
  out.total = total;
  return out;
}

// Both sides of the synthesis objective in one call; the trainer uses the
// two-step form directly, this wrapper reports the full breakdown.
template <typename T>
struct SynthesisBreakdown {
  double minimizer_total = 0, gen = 0, enc = 0, adv_g = 0;
  double maximizer_total = 0, loss_d = 0, r1 = 0;
};

template <typename T>
SynthesisBreakdown<T> synthesis_objective(
    const Tensor<T>& x, const Tensor<T>& x_for_ec, const Tensor<T>& y_targets,
    const Tensor<T>& u_targets, nets::ModelBundle<T>& bundle,
    const FeatureLossConfig& rec_cfg, const LossWeights& weights,
    double r1_gamma) {
  SynthesisBreakdown<T> out;
  {
    Tape<T> t;
    nets::Binder<T> g_bind(t, true), ec_bind(t, true), ey_bind(t, true),
        eu_bind(t, true), d_bind(t, false);
    auto gen = synthesis_generator_objective(
        t, x, x_for_ec, y_targets, u_targets, bundle, g_bind, ec_bind, ey_bind,
        eu_bind, d_bind, rec_cfg, weights);
    out.minimizer_total = double(gen.total->value[0]);
    out.gen = gen.gen;
    out.enc = gen.enc;
    out.adv_g = gen.adv_g;
  }
  {
    Tape<T> t;
    nets::Binder<T> g_bind(t, false), ec_bind(t, false), ey_bind(t, false),
        eu_bind(t, false), d_bind(t, true);
    auto amort = amortized_reconstruction(t, x, x_for_ec, bundle, g_bind,
                                          ec_bind, ey_bind, eu_bind);
    Tape<T> td;
    nets::Binder<T> d2(td, true);
    auto disc = synthesis_discriminator_objective(
        td, x, amort.x_hat->value, bundle, d2, r1_gamma);
    out.maximizer_total = double(disc.total->value[0]);
    out.loss_d = disc.loss_d;
    out.r1 = disc.r1;
  }
  return out;
}

}  // namespace overlord::loss

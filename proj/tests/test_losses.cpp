#include <catch2/catch_amalgamated.hpp>

#include "overlord/losses/losses.hpp"
#include "support/gradcheck.hpp"
#include "support/straightline.hpp"

using namespace overlord;
using namespace overlord::loss;
using nets::ArchConfig;
using nets::Binder;
using nets::Dims;
using nets::ModelBundle;

namespace {

// Well under 1000 parameters for G + E_c so full finite-difference sweeps of
// the objectives stay cheap.
ArchConfig micro_arch() {
  ArchConfig a;
  a.base_channels = 2;
  a.num_scales = 2;  // 8x8 output
  a.channel_cap = 4;
  a.enc_base_channels = 2;
  return a;
}

Dims micro_dims() {
  Dims d;
  d.d_y = 3;
  d.d_c = 2;
  d.d_u = 4;
  d.H = d.W = 8;
  return d;
}

Tensor<double> randn(Rng& rng, std::vector<std::size_t> shape,
                     double std = 1.0) {
  Tensor<double> t(std::move(shape));
  rng.fill_normal(t, 0.0, std);
  return t;
}

Tensor<double> rand_image_batch(Rng& rng, std::size_t b, std::size_t res) {
  Tensor<double> t({b, res, res, 3});
  for (std::size_t i = 0; i < t.numel(); ++i)
    t[i] = std::clamp(rng.normal(0.0, 0.5), -1.0, 1.0);
  return t;
}

}  // namespace

TEST_CASE("reconstruction loss basics", "[losses]") {
  Rng rng(1);
  auto x = rand_image_batch(rng, 2, 8);

  SECTION("identical images give 0 for every kind") {
    for (auto kind :
         {FeatureLossKind::kPixelL1, FeatureLossKind::kMultiscaleL1,
          FeatureLossKind::kFixedRandomFeatures}) {
      FeatureLossConfig cfg;
      cfg.kind = kind;
      ad::Tape<double> t;
      Tensor<double> a = x, b = x;
      auto* l = reconstruction_loss(t, t.constant(std::move(a)),
                                    t.constant(std::move(b)), cfg);
      CHECK(l->value[0] == 0.0);
    }
  }

  SECTION("constant images 0 vs 0.5 give pixel_l1 = 0.5") {
    FeatureLossConfig cfg;
    cfg.kind = FeatureLossKind::kPixelL1;
    ad::Tape<double> t;
    Tensor<double> a({1, 8, 8, 3}, 0.0), b({1, 8, 8, 3}, 0.5);
    auto* l = reconstruction_loss(t, t.constant(std::move(a)),
                                  t.constant(std::move(b)), cfg);
    CHECK(l->value[0] == Catch::Approx(0.5).epsilon(1e-12));
  }

  SECTION("multiscale_l1 matches the straight-line oracle") {
    FeatureLossConfig cfg;  // default multiscale
    auto y = rand_image_batch(rng, 2, 8);
    ad::Tape<double> t;
    Tensor<double> a = x, b = y;
    auto* l = reconstruction_loss(t, t.constant(std::move(a)),
                                  t.constant(std::move(b)), cfg);
    const double oracle = testsup::sl::multiscale_l1(x, y, cfg.scale_weights);
    CHECK(l->value[0] == Catch::Approx(oracle).epsilon(1e-9));
  }

  SECTION("fixed_random_features matches an independent recomputation") {
    FeatureLossConfig cfg;
    cfg.kind = FeatureLossKind::kFixedRandomFeatures;
    auto y = rand_image_batch(rng, 2, 8);
    ad::Tape<double> t;
    Tensor<double> a = x, b = y;
    auto* l = reconstruction_loss(t, t.constant(std::move(a)),
                                  t.constant(std::move(b)), cfg);

    // Independent path: same frozen weights, straight-line convs.
    detail::FrozenPyramid<double> net(cfg.feature_net_seed, 3);
    double oracle = 0;
    Tensor<double> fa = x, fb = y;
    for (int level = 0; level < 3; ++level) {
      fa = testsup::sl::lrelu(
          testsup::sl::conv2d(fa, net.w[level], net.b[level], 2, 1));
      fb = testsup::sl::lrelu(
          testsup::sl::conv2d(fb, net.w[level], net.b[level], 2, 1));
      double mse = 0;
      for (std::size_t i = 0; i < fa.numel(); ++i)
        mse += (fa[i] - fb[i]) * (fa[i] - fb[i]);
      oracle += mse / double(fa.numel()) / 3.0;
    }
    CHECK(l->value[0] == Catch::Approx(oracle).epsilon(1e-6));
  }

  SECTION("shape mismatch is an error") {
    FeatureLossConfig cfg;
    ad::Tape<double> t;
    Tensor<double> a({1, 8, 8, 3}), b({1, 4, 4, 3});
    CHECK_THROWS_AS(reconstruction_loss(t, t.constant(std::move(a)),
                                        t.constant(std::move(b)), cfg),
                    std::invalid_argument);
  }
}

TEST_CASE("disentanglement objective (Eq. 6 analog)", "[losses]") {
  FeatureLossConfig rec_cfg;
  rec_cfg.kind = FeatureLossKind::kPixelL1;

  SECTION("perfect reconstruction and lambda_b=0 give 0") {
    Rng rng(2);
    auto bundle = ModelBundle<double>::create(rng, micro_dims(), micro_arch(),
                                              /*with_ec=*/false);
    auto bank = latent::init_bank<double>(2, 4, 3, 3, rng, 0.3);

    // Render the generator's own output and use it as the target.
    Stage1Batch<double> batch;
    batch.labels = {0, 2};
    batch.indices = {0, 1};
    {
      ad::Tape<double> t;
      Binder<double> gb(t, false);
      Tensor<double> lat({2, bundle.latent_dim()});
      for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 3; ++j)
          lat.at2(i, j) = bank.y_embed.at2(batch.labels[i], j);
        for (std::size_t j = 0; j < 4; ++j)
          lat.at2(i, 3 + j) = bank.u_prime.at2(batch.indices[i], j);
      }
      batch.x = bundle.G.forward(gb, t.constant(std::move(lat)))->value;
    }

    ad::Tape<double> t;
    Binder<double> gb(t, true);
    Rng noise(3);
    auto g = disentanglement_objective(t, batch, bank, bundle, gb, nullptr,
                                       nullptr, rec_cfg, /*lambda_b=*/0.0,
                                       /*noise_std=*/0.0, noise);
    CHECK(g.total->value[0] == Catch::Approx(0.0).margin(1e-12));
    CHECK(g.rec == Catch::Approx(0.0).margin(1e-12));
  }

  SECTION("zero reconstruction error and lambda_b=1 reduce to the penalty") {
    Rng rng(4);
    Dims d = micro_dims();
    d.d_u = 2;
    auto bundle =
        ModelBundle<double>::create(rng, d, micro_arch(), /*with_ec=*/false);
    auto bank = latent::init_bank<double>(1, 2, 3, 3, rng, 0.0);
    bank.u_prime.at2(0, 0) = 3.0;
    bank.u_prime.at2(0, 1) = 4.0;

    Stage1Batch<double> batch;
    batch.labels = {1};
    batch.indices = {0};
    {
      ad::Tape<double> t;
      Binder<double> gb(t, false);
      Tensor<double> lat({1, bundle.latent_dim()});
      for (std::size_t j = 0; j < 3; ++j)
        lat.at2(0, j) = bank.y_embed.at2(1, j);
      lat.at2(0, 3) = 3.0;
      lat.at2(0, 4) = 4.0;
      batch.x = bundle.G.forward(gb, t.constant(std::move(lat)))->value;
    }

    ad::Tape<double> t;
    Binder<double> gb(t, true);
    Rng noise(5);
    auto g = disentanglement_objective(t, batch, bank, bundle, gb, nullptr,
                                       nullptr, rec_cfg, /*lambda_b=*/1.0,
                                       /*noise_std=*/0.0, noise);
    CHECK(g.total->value[0] == Catch::Approx(25.0).epsilon(1e-12));
  }

  SECTION("full objective matches a straight-line oracle") {
    Rng rng(6);
    auto bundle = ModelBundle<double>::create(rng, micro_dims(), micro_arch());
    auto bank = latent::init_bank<double>(4, 4, 3, 3, rng, 0.5);
    Rng ir(7);
    Stage1Batch<double> batch;
    batch.x = rand_image_batch(ir, 2, 8);
    batch.x_corr = rand_image_batch(ir, 2, 8);
    batch.labels = {2, 0};
    batch.indices = {1, 3};

    FeatureLossConfig ms_cfg;  // multiscale default
    const double lambda_b = 0.37, noise_std = 0.9;

    ad::Tape<double> t;
    Binder<double> gb(t, true), ecb(t, true);
    Rng noise(77);
    auto g = disentanglement_objective(t, batch, bank, bundle, gb, &ecb,
                                       nullptr, ms_cfg, lambda_b, noise_std,
                                       noise);

    // Oracle: replicate the noise draw, then recompute everything with
    // straight-line loops.
    Rng noise2(77);
    Tensor<double> u({2, 4});
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        u.at2(i, j) = bank.u_prime.at2(batch.indices[i], j);
    Tensor<double> z = Tensor<double>::zeros_like(u);
    noise2.fill_normal(z, 0.0, noise_std);
    Tensor<double> c = testsup::sl::encoder(bundle.Ec, batch.x_corr);
    Tensor<double> lat({2, bundle.latent_dim()});
    for (std::size_t i = 0; i < 2; ++i) {
      std::size_t off = 0;
      for (std::size_t j = 0; j < 3; ++j)
        lat.at2(i, off++) = bank.y_embed.at2(batch.labels[i], j);
      for (std::size_t j = 0; j < 2; ++j) lat.at2(i, off++) = c.at2(i, j);
      for (std::size_t j = 0; j < 4; ++j)
        lat.at2(i, off++) = u.at2(i, j) + z.at2(i, j);
    }
    Tensor<double> x_hat = testsup::sl::generator(bundle.G, lat);
    double oracle =
        testsup::sl::multiscale_l1(x_hat, batch.x, ms_cfg.scale_weights);
    double pen = 0;
    for (std::size_t i = 0; i < u.numel(); ++i) pen += u[i] * u[i];
    oracle += lambda_b * pen / 2.0;

    CHECK(g.total->value[0] == Catch::Approx(oracle).epsilon(1e-9));
  }

  SECTION("noise_std=0 and lambda_b=0 equal the plain reconstruction loss") {
    Rng rng(8);
    auto bundle = ModelBundle<double>::create(rng, micro_dims(), micro_arch());
    auto bank = latent::init_bank<double>(4, 4, 3, 3, rng, 0.5);
    Rng ir(9);
    Stage1Batch<double> batch;
    batch.x = rand_image_batch(ir, 2, 8);
    batch.x_corr = batch.x;
    batch.labels = {0, 1};
    batch.indices = {0, 1};

    ad::Tape<double> t;
    Binder<double> gb(t, true), ecb(t, true);
    Rng noise(10);
    auto g = disentanglement_objective(t, batch, bank, bundle, gb, &ecb,
                                       nullptr, rec_cfg, 0.0, 0.0, noise);
    CHECK(g.total->value[0] == Catch::Approx(g.rec).epsilon(1e-12));
  }
}

TEST_CASE("disentanglement objective gradients match finite differences",
          "[losses][grad]") {
  Rng rng(11);
  auto bundle = ModelBundle<double>::create(rng, micro_dims(), micro_arch());
  auto bank = latent::init_bank<double>(4, 4, 3, 3, rng, 0.5);
  Rng ir(12);
  Stage1Batch<double> batch;
  batch.x = rand_image_batch(ir, 2, 8);
  batch.x_corr = rand_image_batch(ir, 2, 8);
  batch.labels = {2, 1};
  batch.indices = {0, 3};
  FeatureLossConfig cfg;
  cfg.kind = FeatureLossKind::kPixelL1;  // keep |.| kinks likelihood low
  const double lambda_b = 0.25;

  // The noise draw must be identical across evaluations.
  auto build = [&](ad::Tape<double>& t, Binder<double>& gb,
                   Binder<double>& ecb) {
    Rng noise(1234);
    return disentanglement_objective(t, batch, bank, bundle, gb, &ecb, nullptr,
                                     cfg, lambda_b, 0.8, noise);
  };

  ad::Tape<double> t;
  Binder<double> gb(t, true), ecb(t, true);
  auto g = build(t, gb, ecb);
  t.backward(g.total);

  std::vector<Tensor<double>*> params;
  std::vector<Tensor<double>> analytic;
  for (auto& group : {bundle.params_g(), bundle.params_ec()})
    for (auto& [name, tensor] : group) {
      params.push_back(tensor);
      Tensor<double> grad = gb.grad_of(*tensor);
      if (grad.empty()) grad = ecb.grad_of(*tensor);
      if (grad.empty()) grad = Tensor<double>::zeros_like(*tensor);
      analytic.push_back(std::move(grad));
    }
  params.push_back(&bank.u_prime);
  {
    Tensor<double> gu = Tensor<double>::zeros_like(bank.u_prime);
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        gu.at2(batch.indices[i], j) = g.u_rows->grad.at2(i, j);
    analytic.push_back(std::move(gu));
  }
  params.push_back(&bank.y_embed);
  analytic.push_back(g.y_table->grad);

  auto eval = [&] {
    ad::Tape<double> t2;
    Binder<double> gb2(t2, true), ecb2(t2, true);
    return build(t2, gb2, ecb2).total->value[0];
  };
  auto res = testsup::check_gradients(params, analytic, eval, 1e-5);
  INFO(res.worst);
  CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("encoder distillation loss (Eq. 7 analog)", "[losses]") {
  SECTION("direct arithmetic: 1 + 4 = 5") {
    ad::Tape<double> t;
    Tensor<double> ey({1, 2}), eu({1, 1});
    Tensor<double> yt({1, 2}), ut({1, 1});
    yt.at2(0, 0) = 1;
    ut.at2(0, 0) = 2;
    auto* l = encoder_distillation_loss(t, t.constant(std::move(ey)),
                                        t.constant(std::move(eu)), yt, ut);
    CHECK(l->value[0] == Catch::Approx(5.0).epsilon(1e-12));
  }

  SECTION("exact targets give 0") {
    Rng rng(13);
    ad::Tape<double> t;
    auto yt = randn(rng, {3, 4});
    auto ut = randn(rng, {3, 2});
    Tensor<double> ey = yt, eu = ut;
    auto* l = encoder_distillation_loss(t, t.constant(std::move(ey)),
                                        t.constant(std::move(eu)), yt, ut);
    CHECK(l->value[0] == 0.0);
  }

  SECTION("random case matches a sum-of-squares oracle") {
    Rng rng(14);
    auto ey = randn(rng, {3, 4}), eu = randn(rng, {3, 2});
    auto yt = randn(rng, {3, 4}), ut = randn(rng, {3, 2});
    double oracle = 0;
    for (std::size_t i = 0; i < ey.numel(); ++i)
      oracle += (ey[i] - yt[i]) * (ey[i] - yt[i]);
    for (std::size_t i = 0; i < eu.numel(); ++i)
      oracle += (eu[i] - ut[i]) * (eu[i] - ut[i]);
    oracle /= 3.0;
    ad::Tape<double> t;
    Tensor<double> a = ey, b = eu;
    auto* l = encoder_distillation_loss(t, t.constant(std::move(a)),
                                        t.constant(std::move(b)), yt, ut);
    CHECK(l->value[0] == Catch::Approx(oracle).epsilon(1e-12));
  }

  SECTION("dimension mismatch is an error") {
    ad::Tape<double> t;
    Tensor<double> ey({1, 2}), eu({1, 1}), yt({1, 3}), ut({1, 1});
    CHECK_THROWS_AS(
        encoder_distillation_loss(t, t.constant(std::move(ey)),
                                  t.constant(std::move(eu)), yt, ut),
        std::invalid_argument);
  }
}

TEST_CASE("generation loss (Eq. 8 analog)", "[losses]") {
  Rng rng(15);
  auto bundle = ModelBundle<double>::create(rng, micro_dims(), micro_arch());
  Rng ir(16);
  auto x = rand_image_batch(ir, 2, 8);
  FeatureLossConfig cfg;

  SECTION("equals reconstruction_loss of the amortized output by construction") {
    ad::Tape<double> t;
    Binder<double> gb(t, false), ecb(t, false), eyb(t, false), eub(t, false);
    auto amort =
        amortized_reconstruction(t, x, x, bundle, gb, ecb, eyb, eub);
    Tensor<double> target = x;
    auto* rec = reconstruction_loss(t, amort.x_hat,
                                    t.constant(std::move(target)), cfg);

    ad::Tape<double> t2;
    Binder<double> gb2(t2, false), ecb2(t2, false), eyb2(t2, false),
        eub2(t2, false);
    auto* gen =
        generation_loss(t2, x, x, bundle, gb2, ecb2, eyb2, eub2, cfg);
    CHECK(gen->value[0] == Catch::Approx(rec->value[0]).epsilon(1e-12));

    // And the trivial case: a target equal to the reconstruction gives 0.
    ad::Tape<double> t3;
    Tensor<double> same = amort.x_hat->value;
    Tensor<double> same2 = amort.x_hat->value;
    auto* zero = reconstruction_loss(t3, t3.constant(std::move(same)),
                                     t3.constant(std::move(same2)), cfg);
    CHECK(zero->value[0] == 0.0);
  }

  SECTION("matches the straight-line composition oracle") {
    ad::Tape<double> t;
    Binder<double> gb(t, false), ecb(t, false), eyb(t, false), eub(t, false);
    auto xc = rand_image_batch(ir, 2, 8);  // transformed-input variant
    auto* gen = generation_loss(t, x, xc, bundle, gb, ecb, eyb, eub, cfg);

    Tensor<double> yv = testsup::sl::encoder(bundle.Ey, x);
    Tensor<double> cv = testsup::sl::encoder(bundle.Ec, xc);
    Tensor<double> uv = testsup::sl::encoder(bundle.Eu, x);
    Tensor<double> lat({2, bundle.latent_dim()});
    for (std::size_t i = 0; i < 2; ++i) {
      std::size_t off = 0;
      for (std::size_t j = 0; j < 3; ++j) lat.at2(i, off++) = yv.at2(i, j);
      for (std::size_t j = 0; j < 2; ++j) lat.at2(i, off++) = cv.at2(i, j);
      for (std::size_t j = 0; j < 4; ++j) lat.at2(i, off++) = uv.at2(i, j);
    }
    Tensor<double> x_hat = testsup::sl::generator(bundle.G, lat);
    const double oracle =
        testsup::sl::multiscale_l1(x_hat, x, cfg.scale_weights);
    CHECK(gen->value[0] == Catch::Approx(oracle).epsilon(1e-9));
  }
}

TEST_CASE("adversarial losses (Eq. 9 analog)", "[losses]") {
  SECTION("sigma = 0.5 on both sides gives loss_D = 2 log 2") {
    ad::Tape<double> t;
    Tensor<double> rl({4, 1}, 0.0), fl({4, 1}, 0.0);
    auto [d, g] = adversarial_losses(t, t.constant(std::move(rl)),
                                     t.constant(std::move(fl)));
    CHECK(d->value[0] == Catch::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
    CHECK(g->value[0] == Catch::Approx(std::log(2.0)).epsilon(1e-12));
  }

  SECTION("a perfect discriminator drives loss_D to 0") {
    ad::Tape<double> t;
    Tensor<double> rl({2, 1}, 40.0), fl({2, 1}, -40.0);
    auto [d, g] = adversarial_losses(t, t.constant(std::move(rl)),
                                     t.constant(std::move(fl)));
    CHECK(d->value[0] == Catch::Approx(0.0).margin(1e-12));
    (void)g;
  }

  SECTION("random logits match the softplus oracle") {
    Rng rng(17);
    auto rl = randn(rng, {16, 1}, 3.0);
    auto fl = randn(rng, {16, 1}, 3.0);
    ad::Tape<double> t;
    Tensor<double> a = rl, b = fl;
    auto [d, g] = adversarial_losses(t, t.constant(std::move(a)),
                                     t.constant(std::move(b)));
    double od = 0, og = 0;
    for (std::size_t i = 0; i < 16; ++i) {
      od += testsup::sl::softplus(-rl[i]) + testsup::sl::softplus(fl[i]);
      og += testsup::sl::softplus(-fl[i]);
    }
    od /= 16.0;
    og /= 16.0;
    CHECK(d->value[0] == Catch::Approx(od).epsilon(1e-9));
    CHECK(g->value[0] == Catch::Approx(og).epsilon(1e-9));
    CHECK(d->value[0] >= 0.0);
    CHECK(g->value[0] >= 0.0);
  }

  SECTION("invariant to batch permutation") {
    Rng rng(18);
    auto rl = randn(rng, {8, 1}), fl = randn(rng, {8, 1});
    Tensor<double> rl2 = rl, fl2 = fl;
    std::reverse(rl2.data(), rl2.data() + 8);
    std::reverse(fl2.data(), fl2.data() + 8);
    ad::Tape<double> t;
    Tensor<double> a = rl, b = fl, a2 = rl2, b2 = fl2;
    auto [d1, g1] = adversarial_losses(t, t.constant(std::move(a)),
                                       t.constant(std::move(b)));
    auto [d2, g2] = adversarial_losses(t, t.constant(std::move(a2)),
                                       t.constant(std::move(b2)));
    CHECK(d1->value[0] == Catch::Approx(d2->value[0]).epsilon(1e-13));
    CHECK(g1->value[0] == Catch::Approx(g2->value[0]).epsilon(1e-13));
  }
}

TEST_CASE("R1 penalty", "[losses]") {
  SECTION("a constant discriminator has zero penalty") {
    Rng rng(19);
    auto bundle = ModelBundle<double>::create(rng, micro_dims(), micro_arch());
    for (auto& [name, tensor] : bundle.params_d()) tensor->fill(0.0);
    Rng ir(20);
    auto x = rand_image_batch(ir, 2, 8);
    auto [val, grad] = r1_penalty<double>(x, [&](ad::Tape<double>& t,
                                                 ad::NodeRef<double> in) {
      Binder<double> bind(t, false);
      return bundle.D.forward(bind, in);
    });
    CHECK(val == Catch::Approx(0.0).margin(1e-18));
  }

  SECTION("a linear discriminator has penalty ||w||^2") {
    Rng rng(21);
    Tensor<double> w = randn(rng, {8 * 8 * 3, 1});
    Rng ir(22);
    auto x = rand_image_batch(ir, 3, 8);
    auto [val, grad] = r1_penalty<double>(
        x, [&](ad::Tape<double>& t, ad::NodeRef<double> in) {
          const std::size_t B = in->value.dim(0);
          auto* flat = t.make(in->value.reshaped({B, 8 * 8 * 3}), nullptr);
          auto* src = in;
          flat->backward = [flat, src] {
            ad::accumulate(src, flat->grad.reshaped(src->value.shape()));
          };
          Tensor<double> wc = w;
          Tensor<double> b({1}, 0.0);
          return ad::dense(t, flat, t.constant(std::move(wc)),
                           t.constant(std::move(b)));
        });
    double w2 = 0;
    for (std::size_t i = 0; i < w.numel(); ++i) w2 += w[i] * w[i];
    CHECK(val == Catch::Approx(w2).epsilon(1e-12));
  }

  SECTION("random tiny discriminator matches the FD gradient-norm oracle") {
    Rng rng(23);
    auto bundle = ModelBundle<double>::create(rng, micro_dims(), micro_arch());
    Rng ir(24);
    auto x = rand_image_batch(ir, 2, 8);
    auto logits_fn = [&](ad::Tape<double>& t, ad::NodeRef<double> in) {
      Binder<double> bind(t, false);
      return bundle.D.forward(bind, in);
    };
    auto [val, grad] = r1_penalty<double>(x, logits_fn);

    auto eval_sum = [&](const Tensor<double>& input) {
      ad::Tape<double> t;
      Tensor<double> xin = input;
      return ad::sum_all(t, logits_fn(t, t.constant(std::move(xin))))
          ->value[0];
    };
    const double h = 1e-5;
    double oracle = 0;
    Tensor<double> xp = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double orig = xp[i];
      xp[i] = orig + h;
      const double lp = eval_sum(xp);
      xp[i] = orig - h;
      const double lm = eval_sum(xp);
      xp[i] = orig;
      const double g = (lp - lm) / (2 * h);
      oracle += g * g;
    }
    oracle /= 2.0;  // batch mean
    CHECK(val == Catch::Approx(oracle).epsilon(1e-3));
  }

  SECTION("surrogate parameter gradient matches FD of (gamma/2) R1") {
    Rng rng(25);
    auto bundle = ModelBundle<double>::create(rng, micro_dims(), micro_arch());
    Rng ir(26);
    auto x = rand_image_batch(ir, 2, 8);
    const double gamma = 1.7;

    auto fresh_fn = [&](ad::Tape<double>& t, ad::NodeRef<double> in) {
      Binder<double> bind(t, false);
      return bundle.D.forward(bind, in);
    };

    ad::Tape<double> t;
    Binder<double> d_bind(t, true);
    auto bound_fn = [&](ad::Tape<double>& tape, ad::NodeRef<double> in) {
      (void)tape;
      return bundle.D.forward(d_bind, in);
    };
    auto [val, grad] = r1_penalty<double>(x, fresh_fn);
    auto* surrogate =
        r1_surrogate(t, x, grad, gamma, bound_fn, /*fd_eps=*/1e-6);
    REQUIRE(surrogate != nullptr);
    t.backward(surrogate);

    std::vector<Tensor<double>*> params;
    std::vector<Tensor<double>> analytic;
    for (auto& [name, tensor] : bundle.params_d()) {
      params.push_back(tensor);
      Tensor<double> g = d_bind.grad_of(*tensor);
      if (g.empty()) g = Tensor<double>::zeros_like(*tensor);
      analytic.push_back(std::move(g));
    }
    auto eval = [&] {
      auto [v, g2] = r1_penalty<double>(x, fresh_fn);
      return gamma / 2.0 * v;
    };
    auto res = testsup::check_gradients(params, analytic, eval, 1e-5, 1e-7);
    INFO(res.worst);
    CHECK(res.max_rel_err < 1e-3);
  }
}

TEST_CASE("synthesis objective (Eq. 10 analog)", "[losses]") {
  Rng rng(27);
  auto bundle = ModelBundle<double>::create(rng, micro_dims(), micro_arch());
  bundle.has_ey = bundle.has_eu = bundle.has_d = true;
  Rng ir(28);
  auto x = rand_image_batch(ir, 2, 8);
  auto y_targets = randn(ir, {2, 3}, 0.3);
  auto u_targets = randn(ir, {2, 4}, 0.3);
  FeatureLossConfig cfg;

  SECTION("lambda_enc = lambda_adv = 0 reduces to the generation loss") {
    LossWeights w;
    w.lambda_enc = 0;
    w.lambda_adv = 0;
    auto breakdown =
        synthesis_objective(x, x, y_targets, u_targets, bundle, cfg, w, 0.0);
    ad::Tape<double> t;
    Binder<double> gb(t, false), ecb(t, false), eyb(t, false), eub(t, false);
    auto* gen = generation_loss(t, x, x, bundle, gb, ecb, eyb, eub, cfg);
    CHECK(breakdown.minimizer_total ==
          Catch::Approx(gen->value[0]).epsilon(1e-12));
  }

  SECTION("composition matches an independent oracle") {
    LossWeights w;
    w.lambda_enc = 2.5;
    w.lambda_adv = 0.8;
    auto breakdown =
        synthesis_objective(x, x, y_targets, u_targets, bundle, cfg, w, 1.0);

    // Straight-line everything.
    Tensor<double> yv = testsup::sl::encoder(bundle.Ey, x);
    Tensor<double> cv = testsup::sl::encoder(bundle.Ec, x);
    Tensor<double> uv = testsup::sl::encoder(bundle.Eu, x);
    Tensor<double> lat({2, bundle.latent_dim()});
    for (std::size_t i = 0; i < 2; ++i) {
      std::size_t off = 0;
      for (std::size_t j = 0; j < 3; ++j) lat.at2(i, off++) = yv.at2(i, j);
      for (std::size_t j = 0; j < 2; ++j) lat.at2(i, off++) = cv.at2(i, j);
      for (std::size_t j = 0; j < 4; ++j) lat.at2(i, off++) = uv.at2(i, j);
    }
    Tensor<double> x_hat = testsup::sl::generator(bundle.G, lat);
    double oracle = testsup::sl::multiscale_l1(x_hat, x, cfg.scale_weights);
    double enc = 0;
    for (std::size_t i = 0; i < yv.numel(); ++i)
      enc += (yv[i] - y_targets[i]) * (yv[i] - y_targets[i]);
    for (std::size_t i = 0; i < uv.numel(); ++i)
      enc += (uv[i] - u_targets[i]) * (uv[i] - u_targets[i]);
    enc /= 2.0;
    oracle += w.lambda_enc * enc;
    Tensor<double> fake_logits = testsup::sl::discriminator(bundle.D, x_hat);
    double adv_g = 0;
    for (std::size_t i = 0; i < 2; ++i)
      adv_g += testsup::sl::softplus(-fake_logits[i]);
    adv_g /= 2.0;
    oracle += w.lambda_adv * adv_g;
    CHECK(breakdown.minimizer_total == Catch::Approx(oracle).epsilon(1e-9));

    // Maximizer side: adversarial loss on (real, fake) logits.
    Tensor<double> real_logits = testsup::sl::discriminator(bundle.D, x);
    double od = 0;
    for (std::size_t i = 0; i < 2; ++i)
      od += testsup::sl::softplus(-real_logits[i]) +
            testsup::sl::softplus(fake_logits[i]);
    od /= 2.0;
    CHECK(breakdown.loss_d == Catch::Approx(od).epsilon(1e-9));
    CHECK(breakdown.r1 >= 0.0);
  }
}

TEST_CASE("synthesis generator objective gradients match finite differences",
          "[losses][grad]") {
  Rng rng(29);
  auto bundle = ModelBundle<double>::create(rng, micro_dims(), micro_arch());
  Rng ir(30);
  auto x = rand_image_batch(ir, 2, 8);
  auto y_targets = randn(ir, {2, 3}, 0.3);
  auto u_targets = randn(ir, {2, 4}, 0.3);
  FeatureLossConfig cfg;
  cfg.kind = FeatureLossKind::kPixelL1;
  LossWeights w;
  w.lambda_enc = 1.3;
  w.lambda_adv = 0.6;

  auto build_value = [&] {
    ad::Tape<double> t;
    Binder<double> gb(t, true), ecb(t, true), eyb(t, true), eub(t, true),
        db(t, false);
    return synthesis_generator_objective(t, x, x, y_targets, u_targets,
                                         bundle, gb, ecb, eyb, eub, db, cfg, w)
        .total->value[0];
  };

  ad::Tape<double> t;
  Binder<double> gb(t, true), ecb(t, true), eyb(t, true), eub(t, true),
      db(t, false);
  auto g = synthesis_generator_objective(t, x, x, y_targets, u_targets, bundle,
                                         gb, ecb, eyb, eub, db, cfg, w);
  t.backward(g.total);

  std::vector<Tensor<double>*> params;
  std::vector<Tensor<double>> analytic;
  auto harvest = [&](nets::ParamRefs<double> group, Binder<double>& bind) {
    for (auto& [name, tensor] : group) {
      params.push_back(tensor);
      Tensor<double> gr = bind.grad_of(*tensor);
      if (gr.empty()) gr = Tensor<double>::zeros_like(*tensor);
      analytic.push_back(std::move(gr));
    }
  };
  harvest(bundle.params_g(), gb);
  harvest(bundle.params_ec(), ecb);
  harvest(bundle.params_ey(), eyb);
  harvest(bundle.params_eu(), eub);

  auto res = testsup::check_gradients(params, analytic, build_value, 1e-5);
  INFO(res.worst);
  CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("discriminator objective gradients match finite differences",
          "[losses][grad]") {
  Rng rng(31);
  auto bundle = ModelBundle<double>::create(rng, micro_dims(), micro_arch());
  Rng ir(32);
  auto x_real = rand_image_batch(ir, 2, 8);
  auto x_fake = rand_image_batch(ir, 2, 8);

  auto build_value = [&] {
    // loss_d + gamma/2 * r1, with exact r1 (the value the surrogate's
    // gradient corresponds to).
    ad::Tape<double> t;
    Binder<double> db(t, false);
    Tensor<double> xr = x_real, xf = x_fake;
    auto* rl = bundle.D.forward(db, t.constant(std::move(xr)));
    auto* fl = bundle.D.forward(db, t.constant(std::move(xf)));
    auto [loss_d, loss_g] = adversarial_losses(t, rl, fl);
    (void)loss_g;
    auto [r1, grad] = r1_penalty<double>(
        x_real, [&](ad::Tape<double>& t2, ad::NodeRef<double> in) {
          Binder<double> bind(t2, false);
          return bundle.D.forward(bind, in);
        });
    return loss_d->value[0] + 0.5 * r1;
  };

  ad::Tape<double> t;
  Binder<double> db(t, true);
  auto g = synthesis_discriminator_objective(t, x_real, x_fake, bundle, db,
                                             /*r1_gamma=*/1.0,
                                             /*r1_fd_eps=*/1e-6);
  t.backward(g.total);

  std::vector<Tensor<double>*> params;
  std::vector<Tensor<double>> analytic;
  for (auto& [name, tensor] : bundle.params_d()) {
    params.push_back(tensor);
    Tensor<double> gr = db.grad_of(*tensor);
    if (gr.empty()) gr = Tensor<double>::zeros_like(*tensor);
    analytic.push_back(std::move(gr));
  }
  auto res = testsup::check_gradients(params, analytic, build_value, 1e-5);
  INFO(res.worst);
  CHECK(res.max_rel_err < 1e-3);
}

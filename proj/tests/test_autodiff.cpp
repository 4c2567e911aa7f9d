#include <catch2/catch_amalgamated.hpp>

#include "overlord/ad/nn_ops.hpp"
#include "overlord/ad/ops.hpp"
#include "overlord/core/rng.hpp"
#include "support/gradcheck.hpp"

using namespace overlord;
using namespace overlord::ad;
using testsup::check_gradients;

namespace {

Tensor<double> randn(Rng& rng, std::vector<std::size_t> shape,
                     double std = 1.0) {
  Tensor<double> t(std::move(shape));
  rng.fill_normal(t, 0.0, std);
  return t;
}

}  // namespace

TEST_CASE("elementwise and reduction gradients match finite differences",
          "[autodiff]") {
  Rng rng(7);
  Tensor<double> a = randn(rng, {3, 4});
  Tensor<double> b = randn(rng, {3, 4});
  // Keep leaky-relu and abs inputs away from the kink.
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (std::abs(a[i]) < 0.05) a[i] += 0.2;

  auto build = [&](Tape<double>& t, std::vector<NodeRef<double>>& leaves) {
    auto* na = t.leaf(a);
    auto* nb = t.leaf(b);
    leaves = {na, nb};
    auto* x = mul(t, add(t, na, nb), sub(t, na, nb));
    x = leaky_relu(t, x, 0.2);
    x = add(t, x, tanh_op(t, nb));
    x = add(t, square(t, x), abs_op(t, na));
    x = add(t, x, softplus(t, scale(t, nb, 0.7)));
    return mean_all(t, x);
  };

  Tape<double> tape;
  std::vector<NodeRef<double>> leaves;
  auto* loss = build(tape, leaves);
  tape.backward(loss);
  std::vector<Tensor<double>> grads = {leaves[0]->grad, leaves[1]->grad};

  auto eval = [&] {
    Tape<double> t;
    std::vector<NodeRef<double>> l;
    return build(t, l)->value[0];
  };
  auto res = check_gradients({&a, &b}, grads, eval);
  INFO(res.worst);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("gather/concat/cross-entropy gradients", "[autodiff]") {
  Rng rng(11);
  Tensor<double> table = randn(rng, {5, 3});
  Tensor<double> feats = randn(rng, {4, 2});
  const std::vector<std::size_t> ids = {1, 4, 1, 0};
  const std::vector<std::size_t> labels = {0, 2, 1, 4};

  auto build = [&](Tape<double>& t, std::vector<NodeRef<double>>& leaves) {
    auto* nt = t.leaf(table);
    auto* nf = t.leaf(feats);
    leaves = {nt, nf};
    auto* g = gather_rows(t, nt, ids);
    auto* cat = concat_cols(t, {g, nf});  // [4, 5]
    return softmax_cross_entropy(t, cat, labels);
  };

  Tape<double> tape;
  std::vector<NodeRef<double>> leaves;
  auto* loss = build(tape, leaves);
  tape.backward(loss);
  std::vector<Tensor<double>> grads = {leaves[0]->grad, leaves[1]->grad};

  auto eval = [&] {
    Tape<double> t;
    std::vector<NodeRef<double>> l;
    return build(t, l)->value[0];
  };
  auto res = check_gradients({&table, &feats}, grads, eval);
  INFO(res.worst);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("dense and conv2d gradients", "[autodiff]") {
  Rng rng(13);
  Tensor<double> x = randn(rng, {2, 6, 6, 3}, 0.5);
  Tensor<double> w1 = randn(rng, {3, 3, 3, 4}, 0.3);
  Tensor<double> b1 = randn(rng, {4}, 0.1);
  Tensor<double> w2 = randn(rng, {3, 3, 4, 5}, 0.3);
  Tensor<double> b2 = randn(rng, {5}, 0.1);
  Tensor<double> wd = randn(rng, {45, 2}, 0.3);
  Tensor<double> bd = randn(rng, {2}, 0.1);

  auto build = [&](Tape<double>& t, std::vector<NodeRef<double>>& leaves) {
    auto* nx = t.leaf(x);
    auto* nw1 = t.leaf(w1);
    auto* nb1 = t.leaf(b1);
    auto* nw2 = t.leaf(w2);
    auto* nb2 = t.leaf(b2);
    auto* nwd = t.leaf(wd);
    auto* nbd = t.leaf(bd);
    leaves = {nx, nw1, nb1, nw2, nb2, nwd, nbd};
    auto* h = conv2d(t, nx, nw1, nb1, 1, 1);         // [2,6,6,4]
    h = leaky_relu(t, h, 0.2);
    h = conv2d(t, h, nw2, nb2, 2, 1);                // [2,3,3,5]
    h = tanh_op(t, h);
    auto* flat = t.make(h->value.reshaped({2, 45}), nullptr);
    flat->backward = [flat, h] {
      accumulate(h, flat->grad.reshaped(h->value.shape()));
    };
    auto* y = dense(t, flat, nwd, nbd);
    return mean_all(t, square(t, y));
  };

  Tape<double> tape;
  std::vector<NodeRef<double>> leaves;
  auto* loss = build(tape, leaves);
  tape.backward(loss);
  std::vector<Tensor<double>> grads;
  for (auto* l : leaves) grads.push_back(l->grad);

  auto eval = [&] {
    Tape<double> t;
    std::vector<NodeRef<double>> l;
    return build(t, l)->value[0];
  };
  auto res =
      check_gradients({&x, &w1, &b1, &w2, &b2, &wd, &bd}, grads, eval);
  INFO(res.worst);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("resample, modulation and minibatch stddev gradients", "[autodiff]") {
  Rng rng(17);
  Tensor<double> seed = randn(rng, {2, 2, 3});
  Tensor<double> s = randn(rng, {3, 3}, 0.4);
  Tensor<double> tmod = randn(rng, {3, 3}, 0.4);

  auto build = [&](Tape<double>& t, std::vector<NodeRef<double>>& leaves) {
    auto* ns = t.leaf(seed);
    auto* nsc = t.leaf(s);
    auto* nsh = t.leaf(tmod);
    leaves = {ns, nsc, nsh};
    auto* x = broadcast_batch(t, ns, 3);     // [3,2,2,3]
    x = upsample2(t, x);                     // [3,4,4,3]
    x = scale_shift(t, x, nsc, nsh);
    x = minibatch_stddev(t, x);              // [3,4,4,4]
    x = avgpool2(t, x);                      // [3,2,2,4]
    return mean_all(t, square(t, x));
  };

  Tape<double> tape;
  std::vector<NodeRef<double>> leaves;
  auto* loss = build(tape, leaves);
  tape.backward(loss);
  std::vector<Tensor<double>> grads;
  for (auto* l : leaves) grads.push_back(l->grad);

  auto eval = [&] {
    Tape<double> t;
    std::vector<NodeRef<double>> l;
    return build(t, l)->value[0];
  };
  auto res = check_gradients({&seed, &s, &tmod}, grads, eval);
  INFO(res.worst);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("conv2d forward matches a straight-line loop oracle", "[autodiff]") {
  Rng rng(23);
  Tensor<double> x = randn(rng, {2, 5, 5, 3});
  Tensor<double> w = randn(rng, {3, 3, 3, 4});
  Tensor<double> b = randn(rng, {4});

  Tape<double> t;
  auto* out = conv2d(t, t.constant(x), t.constant(w), t.constant(b), 2, 1);

  // Independent direct convolution.
  const std::size_t Ho = 3, Wo = 3;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox)
        for (std::size_t co = 0; co < 4; ++co) {
          double acc = b[co];
          for (std::size_t ky = 0; ky < 3; ++ky)
            for (std::size_t kx = 0; kx < 3; ++kx)
              for (std::size_t ci = 0; ci < 3; ++ci) {
                const std::ptrdiff_t iy = std::ptrdiff_t(oy * 2 + ky) - 1;
                const std::ptrdiff_t ix = std::ptrdiff_t(ox * 2 + kx) - 1;
                if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
                acc += x.at4(n, iy, ix, ci) * w.at4(ky, kx, ci, co);
              }
          CHECK_THAT(out->value.at4(n, oy, ox, co),
                     Catch::Matchers::WithinRel(acc, 1e-12) ||
                         Catch::Matchers::WithinAbs(acc, 1e-12));
        }
}

TEST_CASE("forward passes are bitwise deterministic", "[autodiff]") {
  auto run = [] {
    Rng rng(99);
    Tensor<float> x(std::vector<std::size_t>{2, 8, 8, 3});
    rng.fill_normal(x, 0, 1);
    Tensor<float> w(std::vector<std::size_t>{3, 3, 3, 8});
    rng.fill_normal(w, 0, 0.2);
    Tensor<float> b(std::vector<std::size_t>{8});
    Tape<float> t;
    auto* out = conv2d(t, t.constant(x), t.constant(w), t.constant(b), 1, 1);
    out = minibatch_stddev(t, out);
    return out->value;
  };
  auto a = run();
  auto b = run();
  REQUIRE(bitwise_equal(a, b));
}

#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "overlord/ad/nn_ops.hpp"
#include "overlord/core/rng.hpp"
#include "overlord/core/serialize.hpp"

namespace overlord::nets {

using ad::NodeRef;
using ad::Tape;

// Latent sizes and image geometry shared by every network in a bundle.
struct Dims {
  std::size_t d_y = 32;
  std::size_t d_c = 16;
  std::size_t d_u = 16;
  std::size_t H = 32, W = 32, C = 3;
};

// Width/depth knobs. latent_concat and use_noise_injection are fixed design
// choices of this architecture family, kept visible for checkpoint echo.
struct ArchConfig {
  std::size_t base_channels = 32;      // generator width unit
  std::size_t num_scales = 4;          // output res = 4 * 2^(num_scales-1)
  std::size_t channel_cap = 128;
  std::size_t enc_base_channels = 16;  // encoder/discriminator width unit
  bool latent_concat = true;
  bool use_noise_injection = false;

  std::size_t resolution() const { return 4u << (num_scales - 1); }
  std::size_t gen_channels(std::size_t scale) const {
    const std::size_t want = base_channels
                             << (num_scales - 1 - std::min(scale, num_scales - 1));
    return std::min(channel_cap, want);
  }
};

// Named references to every parameter tensor of a network, in stable order.
template <typename T>
using ParamRefs = std::vector<std::pair<std::string, Tensor<T>*>>;

// Binds persistent parameter tensors to tape leaves for one forward build.
// Each tensor gets exactly one leaf per tape, so shared parameters (e.g. a
// generator used twice in an objective) accumulate gradients correctly.
template <typename T>
class Binder {
 public:
  Binder(Tape<T>& tape, bool trainable) : tape_(tape), trainable_(trainable) {}

  NodeRef<T> operator()(Tensor<T>& t) {
    auto it = leaves_.find(&t);
    if (it != leaves_.end()) return it->second;
    NodeRef<T> n = tape_.leaf(t, trainable_);
    leaves_.emplace(&t, n);
    return n;
  }

  // Gradient for a bound tensor; empty tensor if it never received one.
  Tensor<T> grad_of(const Tensor<T>& t) const {
    auto it = leaves_.find(const_cast<Tensor<T>*>(&t));
    if (it == leaves_.end() || !it->second->has_grad())
      return Tensor<T>();
    return it->second->grad;
  }

  Tape<T>& tape() { return tape_; }
  bool trainable() const { return trainable_; }

 private:
  Tape<T>& tape_;
  bool trainable_;
  std::unordered_map<Tensor<T>*, NodeRef<T>> leaves_;
};

namespace init {
template <typename T>
Tensor<T> he_normal(Rng& rng, std::vector<std::size_t> shape,
                    std::size_t fan_in) {
  Tensor<T> t(std::move(shape));
  rng.fill_normal(t, 0.0, std::sqrt(2.0 / double(fan_in)));
  return t;
}
template <typename T>
Tensor<T> lecun_normal(Rng& rng, std::vector<std::size_t> shape,
                       std::size_t fan_in) {
  Tensor<T> t(std::move(shape));
  rng.fill_normal(t, 0.0, std::sqrt(1.0 / double(fan_in)));
  return t;
}
}  // namespace init

template <typename T>
struct Conv2dLayer {
  Tensor<T> w, b;
  std::size_t stride = 1, pad = 1;

  void init(Rng& rng, std::size_t kh, std::size_t kw, std::size_t ci,
            std::size_t co, std::size_t stride_, std::size_t pad_,
            bool head = false) {
    const std::size_t fan_in = kh * kw * ci;
    w = head ? init::lecun_normal<T>(rng, {kh, kw, ci, co}, fan_in)
             : init::he_normal<T>(rng, {kh, kw, ci, co}, fan_in);
    b = Tensor<T>({co});
    stride = stride_;
    pad = pad_;
  }

  NodeRef<T> forward(Binder<T>& bind, NodeRef<T> x) {
    return ad::conv2d(bind.tape(), x, bind(w), bind(b), stride, pad);
  }

  void collect(const std::string& prefix, ParamRefs<T>& out) {
    out.emplace_back(prefix + ".w", &w);
    out.emplace_back(prefix + ".b", &b);
  }
};

template <typename T>
struct DenseLayer {
  Tensor<T> w, b;

  void init(Rng& rng, std::size_t din, std::size_t dout, bool head = false) {
    w = head ? init::lecun_normal<T>(rng, {din, dout}, din)
             : init::he_normal<T>(rng, {din, dout}, din);
    b = Tensor<T>({dout});
  }
  void init_zero(std::size_t din, std::size_t dout) {
    w = Tensor<T>({din, dout});
    b = Tensor<T>({dout});
  }

  NodeRef<T> forward(Binder<T>& bind, NodeRef<T> x) {
    return ad::dense(bind.tape(), x, bind(w), bind(b));
  }

  void collect(const std::string& prefix, ParamRefs<T>& out) {
    out.emplace_back(prefix + ".w", &w);
    out.emplace_back(prefix + ".b", &b);
  }
};

// Conv followed by a per-channel affine driven by the latent code
// (scale/shift modulation). The modulation maps are zero-initialized so a
// fresh generator starts as an unmodulated decoder.
template <typename T>
struct ModulatedConv {
  Conv2dLayer<T> conv;
  DenseLayer<T> mod_scale, mod_shift;

  void init(Rng& rng, std::size_t ci, std::size_t co, std::size_t latent_dim) {
    conv.init(rng, 3, 3, ci, co, 1, 1);
    mod_scale.init_zero(latent_dim, co);
    mod_shift.init_zero(latent_dim, co);
  }

  NodeRef<T> forward(Binder<T>& bind, NodeRef<T> x, NodeRef<T> latent) {
    auto* h = conv.forward(bind, x);
    auto* s = mod_scale.forward(bind, latent);
    auto* t = mod_shift.forward(bind, latent);
    h = ad::scale_shift(bind.tape(), h, s, t);
    return ad::leaky_relu(bind.tape(), h, T(0.2));
  }

  void collect(const std::string& prefix, ParamRefs<T>& out) {
    conv.collect(prefix + ".conv", out);
    mod_scale.collect(prefix + ".mod_s", out);
    mod_shift.collect(prefix + ".mod_t", out);
  }
};

// Decoder from a learned constant spatial seed; each scale upsamples and
// applies one modulated conv. No noise injection, no encoder skips: all
// image content flows through the latent code.
template <typename T>
struct Generator {
  ArchConfig arch;
  std::size_t latent_dim = 0;
  Tensor<T> seed;  // [4,4,ch(0)]
  std::vector<ModulatedConv<T>> blocks;
  Conv2dLayer<T> to_rgb;

  void init(Rng& rng, const ArchConfig& a, std::size_t latent_dim_,
            std::size_t image_channels) {
    arch = a;
    latent_dim = latent_dim_;
    seed = Tensor<T>({4, 4, a.gen_channels(0)});
    rng.fill_normal(seed, 0.0, 1.0);
    blocks.clear();
    blocks.resize(a.num_scales);
    blocks[0].init(rng, a.gen_channels(0), a.gen_channels(0), latent_dim);
    for (std::size_t i = 1; i < a.num_scales; ++i)
      blocks[i].init(rng, a.gen_channels(i - 1), a.gen_channels(i), latent_dim);
    to_rgb.init(rng, 1, 1, a.gen_channels(a.num_scales - 1), image_channels,
                1, 0, /*head=*/true);
  }

  // latent: [B, latent_dim] -> image [B, H, W, C] in [-1, 1].
  NodeRef<T> forward(Binder<T>& bind, NodeRef<T> latent) {
    if (latent->value.dim(1) != latent_dim)
      throw std::invalid_argument(
          "generator: latent dim mismatch, expected " +
          std::to_string(latent_dim) + " got " +
          std::to_string(latent->value.dim(1)));
    const std::size_t B = latent->value.dim(0);
    auto* x = ad::broadcast_batch(bind.tape(), bind(seed), B);
    x = blocks[0].forward(bind, x, latent);
    for (std::size_t i = 1; i < blocks.size(); ++i) {
      x = ad::upsample2(bind.tape(), x);
      x = blocks[i].forward(bind, x, latent);
    }
    x = to_rgb.forward(bind, x);
    return ad::tanh_op(bind.tape(), x);
  }

  void collect(const std::string& prefix, ParamRefs<T>& out) {
    out.emplace_back(prefix + ".seed", &seed);
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].collect(prefix + ".block" + std::to_string(i), out);
    to_rgb.collect(prefix + ".to_rgb", out);
  }
};

// Shared downsampling template for E_c / E_y / E_u and the oracle and
// leakage classifiers; only the head width differs.
template <typename T>
struct Encoder {
  std::size_t in_res = 0, out_dim = 0;
  Conv2dLayer<T> stem;
  std::vector<Conv2dLayer<T>> downs;  // stride-2 until 4x4
  Conv2dLayer<T> final4;              // 4x4 valid conv -> 1x1
  DenseLayer<T> head;
  std::size_t feat_dim = 0;

  void init(Rng& rng, std::size_t res, std::size_t image_channels,
            std::size_t base, std::size_t out_dim_) {
    in_res = res;
    out_dim = out_dim_;
    stem.init(rng, 3, 3, image_channels, base, 1, 1);
    downs.clear();
    std::size_t ch = base, r = res;
    while (r > 4) {
      const std::size_t next = std::min<std::size_t>(4 * base, ch * 2);
      downs.emplace_back();
      downs.back().init(rng, 3, 3, ch, next, 2, 1);
      ch = next;
      r /= 2;
    }
    feat_dim = ch;
    final4.init(rng, 4, 4, ch, feat_dim, 1, 0);
    head.init(rng, feat_dim, out_dim, /*head=*/true);
  }

  NodeRef<T> forward(Binder<T>& bind, NodeRef<T> image) {
    check_input(image->value);
    auto& t = bind.tape();
    auto* h = ad::leaky_relu(t, stem.forward(bind, image), T(0.2));
    for (auto& d : downs) h = ad::leaky_relu(t, d.forward(bind, h), T(0.2));
    h = ad::leaky_relu(t, final4.forward(bind, h), T(0.2));  // [B,1,1,F]
    auto* flat = reshape_to_rows(t, h, feat_dim);
    return head.forward(bind, flat);
  }

  // Activations entering the head; the frozen-oracle feature space.
  NodeRef<T> features(Binder<T>& bind, NodeRef<T> image) {
    check_input(image->value);
    auto& t = bind.tape();
    auto* h = ad::leaky_relu(t, stem.forward(bind, image), T(0.2));
    for (auto& d : downs) h = ad::leaky_relu(t, d.forward(bind, h), T(0.2));
    h = ad::leaky_relu(t, final4.forward(bind, h), T(0.2));
    return reshape_to_rows(t, h, feat_dim);
  }

  void collect(const std::string& prefix, ParamRefs<T>& out) {
    stem.collect(prefix + ".stem", out);
    for (std::size_t i = 0; i < downs.size(); ++i)
      downs[i].collect(prefix + ".down" + std::to_string(i), out);
    final4.collect(prefix + ".final4", out);
    head.collect(prefix + ".head", out);
  }

 private:
  void check_input(const Tensor<T>& v) const {
    if (v.rank() != 4 || v.dim(1) != in_res || v.dim(2) != in_res)
      throw std::invalid_argument("encoder: expected [B," +
                                  std::to_string(in_res) + "," +
                                  std::to_string(in_res) + ",C] input");
  }

  static NodeRef<T> reshape_to_rows(Tape<T>& t, NodeRef<T> h,
                                    std::size_t cols) {
    const std::size_t B = h->value.dim(0);
    auto* flat = t.make(h->value.reshaped({B, cols}), nullptr);
    flat->backward = [flat, h] {
      ad::accumulate(h, flat->grad.reshaped(h->value.shape()));
    };
    return flat;
  }
};

// Downsampling classifier with a minibatch-stddev feature before the last
// convolution; outputs one unbounded logit per image.
template <typename T>
struct Discriminator {
  std::size_t in_res = 0;
  Conv2dLayer<T> stem;
  std::vector<Conv2dLayer<T>> downs;
  Conv2dLayer<T> post_stddev;  // 3x3 on [4,4,ch+1]
  Conv2dLayer<T> final4;
  DenseLayer<T> head;
  std::size_t feat_dim = 0;

  void init(Rng& rng, std::size_t res, std::size_t image_channels,
            std::size_t base) {
    in_res = res;
    stem.init(rng, 3, 3, image_channels, base, 1, 1);
    downs.clear();
    std::size_t ch = base, r = res;
    while (r > 4) {
      const std::size_t next = std::min<std::size_t>(4 * base, ch * 2);
      downs.emplace_back();
      downs.back().init(rng, 3, 3, ch, next, 2, 1);
      ch = next;
      r /= 2;
    }
    post_stddev.init(rng, 3, 3, ch + 1, ch, 1, 1);
    feat_dim = ch;
    final4.init(rng, 4, 4, ch, feat_dim, 1, 0);
    head.init(rng, feat_dim, 1, /*head=*/true);
  }

  // [B,H,W,C] -> [B,1] logits.
  NodeRef<T> forward(Binder<T>& bind, NodeRef<T> image) {
    if (image->value.dim(1) != in_res || image->value.dim(2) != in_res)
      throw std::invalid_argument("discriminator: input resolution mismatch");
    auto& t = bind.tape();
    auto* h = ad::leaky_relu(t, stem.forward(bind, image), T(0.2));
    for (auto& d : downs) h = ad::leaky_relu(t, d.forward(bind, h), T(0.2));
    h = ad::minibatch_stddev(t, h);
    h = ad::leaky_relu(t, post_stddev.forward(bind, h), T(0.2));
    h = ad::leaky_relu(t, final4.forward(bind, h), T(0.2));
    const std::size_t B = h->value.dim(0);
    auto* flat = t.make(h->value.reshaped({B, feat_dim}), nullptr);
    flat->backward = [flat, h] {
      ad::accumulate(h, flat->grad.reshaped(h->value.shape()));
    };
    return head.forward(bind, flat);
  }

  void collect(const std::string& prefix, ParamRefs<T>& out) {
    stem.collect(prefix + ".stem", out);
    for (std::size_t i = 0; i < downs.size(); ++i)
      downs[i].collect(prefix + ".down" + std::to_string(i), out);
    post_stddev.collect(prefix + ".post_stddev", out);
    final4.collect(prefix + ".final4", out);
    head.collect(prefix + ".head", out);
  }
};

// Everything trainable for one run. The correlated branch can be absent
// (the no-x^corr ablation); E_y/E_u/D exist once the synthesis stage ran.
template <typename T>
struct ModelBundle {
  Dims dims;
  ArchConfig arch;
  bool has_ec = true, has_ey = false, has_eu = false, has_d = false;

  Generator<T> G;
  Encoder<T> Ec, Ey, Eu;
  Discriminator<T> D;

  std::size_t latent_dim() const {
    return dims.d_y + (has_ec ? dims.d_c : 0) + dims.d_u;
  }

  static ModelBundle create(Rng& rng, const Dims& dims, const ArchConfig& arch,
                            bool with_ec = true) {
    if (arch.resolution() != dims.H || dims.H != dims.W)
      throw std::invalid_argument("bundle: arch resolution != image size");
    ModelBundle b;
    b.dims = dims;
    b.arch = arch;
    b.has_ec = with_ec;
    b.G.init(rng, arch, b.latent_dim(), dims.C);
    if (with_ec)
      b.Ec.init(rng, dims.H, dims.C, arch.enc_base_channels, dims.d_c);
    b.Ey.init(rng, dims.H, dims.C, arch.enc_base_channels, dims.d_y);
    b.Eu.init(rng, dims.H, dims.C, arch.enc_base_channels, dims.d_u);
    b.D.init(rng, dims.H, dims.C, arch.enc_base_channels);
    return b;
  }

  // Parameter registries, grouped per network.
  ParamRefs<T> params_g() {
    ParamRefs<T> r;
    G.collect("G", r);
    return r;
  }
  ParamRefs<T> params_ec() {
    ParamRefs<T> r;
    if (has_ec) Ec.collect("Ec", r);
    return r;
  }
  ParamRefs<T> params_ey() {
    ParamRefs<T> r;
    Ey.collect("Ey", r);
    return r;
  }
  ParamRefs<T> params_eu() {
    ParamRefs<T> r;
    Eu.collect("Eu", r);
    return r;
  }
  ParamRefs<T> params_d() {
    ParamRefs<T> r;
    D.collect("D", r);
    return r;
  }

  std::size_t param_count() {
    std::size_t n = 0;
    for (auto& group :
         {params_g(), params_ec(), params_ey(), params_eu(), params_d()})
      for (auto& [name, t] : group) n += t->numel();
    return n;
  }
};

// Closed-form parameter count for the architecture; bookkeeping cross-check
// for ModelBundle::param_count().
inline std::size_t expected_param_count(const ArchConfig& a, const Dims& dims,
                                        bool with_ec) {
  const std::size_t latent =
      dims.d_y + (with_ec ? dims.d_c : 0) + dims.d_u;
  auto conv_params = [](std::size_t kh, std::size_t kw, std::size_t ci,
                        std::size_t co) { return kh * kw * ci * co + co; };
  auto dense_params = [](std::size_t di, std::size_t dd) {
    return di * dd + dd;
  };
  auto mod_conv = [&](std::size_t ci, std::size_t co) {
    return conv_params(3, 3, ci, co) + 2 * dense_params(latent, co);
  };

  // Generator.
  std::size_t n = 4 * 4 * a.gen_channels(0);
  n += mod_conv(a.gen_channels(0), a.gen_channels(0));
  for (std::size_t i = 1; i < a.num_scales; ++i)
    n += mod_conv(a.gen_channels(i - 1), a.gen_channels(i));
  n += conv_params(1, 1, a.gen_channels(a.num_scales - 1), dims.C);

  // Encoder template.
  auto encoder_params = [&](std::size_t out_dim) {
    std::size_t e = conv_params(3, 3, dims.C, a.enc_base_channels);
    std::size_t ch = a.enc_base_channels, r = a.resolution();
    while (r > 4) {
      const std::size_t next = std::min(4 * a.enc_base_channels, ch * 2);
      e += conv_params(3, 3, ch, next);
      ch = next;
      r /= 2;
    }
    e += conv_params(4, 4, ch, ch);
    e += dense_params(ch, out_dim);
    return e;
  };
  if (with_ec) n += encoder_params(dims.d_c);
  n += encoder_params(dims.d_y);
  n += encoder_params(dims.d_u);

  // Discriminator.
  {
    std::size_t e = conv_params(3, 3, dims.C, a.enc_base_channels);
    std::size_t ch = a.enc_base_channels, r = a.resolution();
    while (r > 4) {
      const std::size_t next = std::min(4 * a.enc_base_channels, ch * 2);
      e += conv_params(3, 3, ch, next);
      ch = next;
      r /= 2;
    }
    e += conv_params(3, 3, ch + 1, ch);
    e += conv_params(4, 4, ch, ch);
    e += dense_params(ch, 1);
    n += e;
  }
  return n;
}

}  // namespace overlord::nets

#pragma once

// Straight-line (plain nested loop) reimplementations of the network
// forward passes and objective compositions. These never touch the tape or
// the im2col path; they exist so the objective values produced by the
// library can be checked against an independent computation.

#include <cmath>
#include <vector>

#include "overlord/losses/losses.hpp"
#include "overlord/nets/nets.hpp"

namespace testsup::sl {

using overlord::Tensor;

inline Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& w,
                             const Tensor<double>& b, std::size_t stride,
                             std::size_t pad) {
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), Ci = x.dim(3);
  const std::size_t Kh = w.dim(0), Kw = w.dim(1), Co = w.dim(3);
  const std::size_t Ho = (H + 2 * pad - Kh) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - Kw) / stride + 1;
  Tensor<double> out({B, Ho, Wo, Co});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox)
        for (std::size_t co = 0; co < Co; ++co) {
          double acc = b[co];
          for (std::size_t ky = 0; ky < Kh; ++ky)
            for (std::size_t kx = 0; kx < Kw; ++kx) {
              const std::ptrdiff_t iy = std::ptrdiff_t(oy * stride + ky) - pad;
              const std::ptrdiff_t ix = std::ptrdiff_t(ox * stride + kx) - pad;
              if (iy < 0 || iy >= std::ptrdiff_t(H) || ix < 0 ||
                  ix >= std::ptrdiff_t(W))
                continue;
              for (std::size_t ci = 0; ci < Ci; ++ci)
                acc += x.at4(n, iy, ix, ci) * w.at4(ky, kx, ci, co);
            }
          out.at4(n, oy, ox, co) = acc;
        }
  return out;
}

inline Tensor<double> lrelu(Tensor<double> x, double a = 0.2) {
  for (std::size_t i = 0; i < x.numel(); ++i)
    if (x[i] < 0) x[i] *= a;
  return x;
}

inline Tensor<double> tanh(Tensor<double> x) {
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = std::tanh(x[i]);
  return x;
}

inline Tensor<double> dense(const Tensor<double>& x, const Tensor<double>& w,
                            const Tensor<double>& b) {
  const std::size_t B = x.dim(0), din = x.dim(1), dout = w.dim(1);
  Tensor<double> out({B, dout});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t j = 0; j < dout; ++j) {
      double acc = b[j];
      for (std::size_t i = 0; i < din; ++i) acc += x.at2(n, i) * w.at2(i, j);
      out.at2(n, j) = acc;
    }
  return out;
}

inline Tensor<double> upsample2(const Tensor<double>& x) {
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  Tensor<double> out({B, H * 2, W * 2, C});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t y = 0; y < 2 * H; ++y)
      for (std::size_t xw = 0; xw < 2 * W; ++xw)
        for (std::size_t c = 0; c < C; ++c)
          out.at4(n, y, xw, c) = x.at4(n, y / 2, xw / 2, c);
  return out;
}

inline Tensor<double> avgpool2(const Tensor<double>& x) {
  const std::size_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  Tensor<double> out({B, H / 2, W / 2, C});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t y = 0; y < H / 2; ++y)
      for (std::size_t xw = 0; xw < W / 2; ++xw)
        for (std::size_t c = 0; c < C; ++c)
          out.at4(n, y, xw, c) =
              (x.at4(n, 2 * y, 2 * xw, c) + x.at4(n, 2 * y, 2 * xw + 1, c) +
               x.at4(n, 2 * y + 1, 2 * xw, c) +
               x.at4(n, 2 * y + 1, 2 * xw + 1, c)) /
              4.0;
  return out;
}

// Generator forward identical in math to nets::Generator::forward.
inline Tensor<double> generator(overlord::nets::Generator<double>& G,
                                const Tensor<double>& latent) {
  using overlord::nets::ModulatedConv;
  const std::size_t B = latent.dim(0);
  const std::size_t H0 = G.seed.dim(0), W0 = G.seed.dim(1),
                    C0 = G.seed.dim(2);
  Tensor<double> x({B, H0, W0, C0});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t i = 0; i < G.seed.numel(); ++i)
      x[n * G.seed.numel() + i] = G.seed[i];

  auto run_block = [&](ModulatedConv<double>& blk, const Tensor<double>& in) {
    Tensor<double> h = conv2d(in, blk.conv.w, blk.conv.b, 1, 1);
    Tensor<double> s = dense(latent, blk.mod_scale.w, blk.mod_scale.b);
    Tensor<double> tm = dense(latent, blk.mod_shift.w, blk.mod_shift.b);
    const std::size_t C = h.dim(3);
    for (std::size_t n = 0; n < B; ++n)
      for (std::size_t y = 0; y < h.dim(1); ++y)
        for (std::size_t xw = 0; xw < h.dim(2); ++xw)
          for (std::size_t c = 0; c < C; ++c)
            h.at4(n, y, xw, c) =
                h.at4(n, y, xw, c) * (1.0 + s.at2(n, c)) + tm.at2(n, c);
    return lrelu(std::move(h));
  };

  x = run_block(G.blocks[0], x);
  for (std::size_t i = 1; i < G.blocks.size(); ++i)
    x = run_block(G.blocks[i], upsample2(x));
  x = conv2d(x, G.to_rgb.w, G.to_rgb.b, 1, 0);
  return tanh(std::move(x));
}

// Encoder forward identical in math to nets::Encoder::forward.
inline Tensor<double> encoder(overlord::nets::Encoder<double>& E,
                              const Tensor<double>& img) {
  Tensor<double> h = lrelu(conv2d(img, E.stem.w, E.stem.b, 1, 1));
  for (auto& d : E.downs) h = lrelu(conv2d(h, d.w, d.b, 2, 1));
  h = lrelu(conv2d(h, E.final4.w, E.final4.b, 1, 0));  // [B,1,1,F]
  Tensor<double> flat = h.reshaped({h.dim(0), E.feat_dim});
  return dense(flat, E.head.w, E.head.b);
}

// Discriminator forward identical in math to nets::Discriminator::forward,
// including the minibatch-stddev channel.
inline Tensor<double> discriminator(overlord::nets::Discriminator<double>& D,
                                    const Tensor<double>& img) {
  Tensor<double> h = lrelu(conv2d(img, D.stem.w, D.stem.b, 1, 1));
  for (auto& d : D.downs) h = lrelu(conv2d(h, d.w, d.b, 2, 1));

  const std::size_t B = h.dim(0), H = h.dim(1), W = h.dim(2), C = h.dim(3);
  const std::size_t F = H * W * C;
  std::vector<double> mean(F, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f) mean[f] += h[b * F + f];
  for (auto& m : mean) m /= double(B);
  double avg_sd = 0;
  for (std::size_t f = 0; f < F; ++f) {
    double v = 0;
    for (std::size_t b = 0; b < B; ++b) {
      const double d = h[b * F + f] - mean[f];
      v += d * d;
    }
    avg_sd += std::sqrt(v / double(B));
  }
  avg_sd /= double(F);
  Tensor<double> hs({B, H, W, C + 1});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        for (std::size_t c = 0; c < C; ++c)
          hs.at4(b, y, x, c) = h.at4(b, y, x, c);
        hs.at4(b, y, x, C) = avg_sd;
      }

  h = lrelu(conv2d(hs, D.post_stddev.w, D.post_stddev.b, 1, 1));
  h = lrelu(conv2d(h, D.final4.w, D.final4.b, 1, 0));
  Tensor<double> flat = h.reshaped({B, D.feat_dim});
  return dense(flat, D.head.w, D.head.b);
}

inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double mean_abs(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += std::abs(a[i] - b[i]);
  return s / double(a.numel());
}

inline double multiscale_l1(const Tensor<double>& a, const Tensor<double>& b,
                            const std::array<double, 3>& wts) {
  Tensor<double> xa = a, xb = b;
  double total = wts[0] * mean_abs(xa, xb);
  xa = avgpool2(xa);
  xb = avgpool2(xb);
  total += wts[1] * mean_abs(xa, xb);
  xa = avgpool2(xa);
  xb = avgpool2(xb);
  total += wts[2] * mean_abs(xa, xb);
  return total;
}

}  // namespace testsup::sl

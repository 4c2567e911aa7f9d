#pragma once

#define EIGEN_DONT_PARALLELIZE 1
#include <Eigen/Core>

#include <cstring>
#include <stdexcept>
#include <vector>

#include "overlord/ad/ops.hpp"

namespace overlord::ad {

namespace detail {

template <typename T>
using MatMap = Eigen::Map<
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using CMatMap = Eigen::Map<
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// C (+)= A[m,k] * B[k,n], all row-major.
template <typename T>
inline void gemm_nn(const T* A, const T* B, T* C, std::size_t m, std::size_t k,
                    std::size_t n, bool acc) {
  CMatMap<T> a(A, m, k), b(B, k, n);
  MatMap<T> c(C, m, n);
  if (acc)
    c.noalias() += a * b;
  else
    c.noalias() = a * b;
}

// C (+)= A[k,m]^T * B[k,n]
template <typename T>
inline void gemm_tn(const T* A, const T* B, T* C, std::size_t m, std::size_t k,
                    std::size_t n, bool acc) {
  CMatMap<T> a(A, k, m), b(B, k, n);
  MatMap<T> c(C, m, n);
  if (acc)
    c.noalias() += a.transpose() * b;
  else
    c.noalias() = a.transpose() * b;
}

// C (+)= A[m,k] * B[n,k]^T
template <typename T>
inline void gemm_nt(const T* A, const T* B, T* C, std::size_t m, std::size_t k,
                    std::size_t n, bool acc) {
  CMatMap<T> a(A, m, k), b(B, n, k);
  MatMap<T> c(C, m, n);
  if (acc)
    c.noalias() += a * b.transpose();
  else
    c.noalias() = a * b.transpose();
}

struct ConvDims {
  std::size_t B, H, W, Ci, Kh, Kw, Co, stride, pad, Ho, Wo;
};

template <typename T>
inline ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& w,
                          std::size_t stride, std::size_t pad) {
  if (x.rank() != 4 || w.rank() != 4)
    throw std::invalid_argument("conv2d: expects NHWC input, [kh,kw,ci,co] weights");
  ConvDims d;
  d.B = x.dim(0); d.H = x.dim(1); d.W = x.dim(2); d.Ci = x.dim(3);
  d.Kh = w.dim(0); d.Kw = w.dim(1); d.Co = w.dim(3);
  if (w.dim(2) != d.Ci)
    throw std::invalid_argument("conv2d: channel mismatch");
  d.stride = stride; d.pad = pad;
  d.Ho = (d.H + 2 * pad - d.Kh) / stride + 1;
  d.Wo = (d.W + 2 * pad - d.Kw) / stride + 1;
  return d;
}

// col is [Ho*Wo, Kh*Kw*Ci] row-major for one sample.
template <typename T>
inline void im2col(const T* x, const ConvDims& d, T* col) {
  const std::size_t row_len = d.Kh * d.Kw * d.Ci;
  for (std::size_t oy = 0; oy < d.Ho; ++oy) {
    for (std::size_t ox = 0; ox < d.Wo; ++ox) {
      T* dst = col + (oy * d.Wo + ox) * row_len;
      for (std::size_t ky = 0; ky < d.Kh; ++ky) {
        const std::ptrdiff_t iy = std::ptrdiff_t(oy * d.stride + ky) - d.pad;
        for (std::size_t kx = 0; kx < d.Kw; ++kx, dst += d.Ci) {
          const std::ptrdiff_t ix = std::ptrdiff_t(ox * d.stride + kx) - d.pad;
          if (iy < 0 || iy >= std::ptrdiff_t(d.H) || ix < 0 ||
              ix >= std::ptrdiff_t(d.W)) {
            std::memset(dst, 0, d.Ci * sizeof(T));
          } else {
            std::memcpy(dst, x + (std::size_t(iy) * d.W + ix) * d.Ci,
                        d.Ci * sizeof(T));
          }
        }
      }
    }
  }
}

template <typename T>
inline void col2im_acc(const T* col, const ConvDims& d, T* gx) {
  const std::size_t row_len = d.Kh * d.Kw * d.Ci;
  for (std::size_t oy = 0; oy < d.Ho; ++oy) {
    for (std::size_t ox = 0; ox < d.Wo; ++ox) {
      const T* src = col + (oy * d.Wo + ox) * row_len;
      for (std::size_t ky = 0; ky < d.Kh; ++ky) {
        const std::ptrdiff_t iy = std::ptrdiff_t(oy * d.stride + ky) - d.pad;
        for (std::size_t kx = 0; kx < d.Kw; ++kx, src += d.Ci) {
          const std::ptrdiff_t ix = std::ptrdiff_t(ox * d.stride + kx) - d.pad;
          if (iy < 0 || iy >= std::ptrdiff_t(d.H) || ix < 0 ||
              ix >= std::ptrdiff_t(d.W))
            continue;
          T* dst = gx + (std::size_t(iy) * d.W + ix) * d.Ci;
          for (std::size_t c = 0; c < d.Ci; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

}  // namespace detail

// y = x[B,din] * W[din,dout] + b[dout]
template <typename T>
NodeRef<T> dense(Tape<T>& tape, NodeRef<T> x, NodeRef<T> w, NodeRef<T> b) {
  const std::size_t B = x->value.dim(0), din = x->value.dim(1);
  const std::size_t dout = w->value.dim(1);
  if (w->value.dim(0) != din || b->value.numel() != dout)
    throw std::invalid_argument("dense: dimension mismatch");
  Tensor<T> out({B, dout});
  detail::gemm_nn(x->value.data(), w->value.data(), out.data(), B, din, dout,
                  false);
  for (std::size_t r = 0; r < B; ++r)
    for (std::size_t j = 0; j < dout; ++j) out.at2(r, j) += b->value[j];
  if (!detail::any_rg<T>({x, w, b})) return tape.constant(std::move(out));
  NodeRef<T> n = tape.make(std::move(out), nullptr);
  n->backward = [n, x, w, b, B, din, dout] {
    if (x->requires_grad)
      detail::gemm_nt(n->grad.data(), w->value.data(), x->ensure_grad().data(),
                      B, dout, din, true);
    if (w->requires_grad)
      detail::gemm_tn(x->value.data(), n->grad.data(), w->ensure_grad().data(),
                      din, B, dout, true);
    if (b->requires_grad) {
      Tensor<T>& gb = b->ensure_grad();
      for (std::size_t r = 0; r < B; ++r)
        for (std::size_t j = 0; j < dout; ++j) gb[j] += n->grad.at2(r, j);
    }
  };
  return n;
}

// NHWC conv; weights [kh,kw,ci,co]. im2col + GEMM per sample; the column
// buffer is rebuilt in backward instead of cached (memory over speed).
template <typename T>
NodeRef<T> conv2d(Tape<T>& tape, NodeRef<T> x, NodeRef<T> w, NodeRef<T> b,
                  std::size_t stride, std::size_t pad) {
  const detail::ConvDims d = detail::conv_dims(x->value, w->value, stride, pad);
  if (b->value.numel() != d.Co)
    throw std::invalid_argument("conv2d: bias size mismatch");
  const std::size_t row_len = d.Kh * d.Kw * d.Ci;
  const std::size_t out_hw = d.Ho * d.Wo;
  Tensor<T> out({d.B, d.Ho, d.Wo, d.Co});
  {
    Tensor<T> col({out_hw, row_len});
    for (std::size_t s = 0; s < d.B; ++s) {
      detail::im2col(x->value.data() + s * d.H * d.W * d.Ci, d, col.data());
      detail::gemm_nn(col.data(), w->value.data(),
                      out.data() + s * out_hw * d.Co, out_hw, row_len, d.Co,
                      false);
    }
  }
  for (std::size_t s = 0; s < d.B; ++s) {
    T* o = out.data() + s * out_hw * d.Co;
    for (std::size_t p = 0; p < out_hw; ++p)
      for (std::size_t c = 0; c < d.Co; ++c) o[p * d.Co + c] += b->value[c];
  }
  if (!detail::any_rg<T>({x, w, b})) return tape.constant(std::move(out));
  NodeRef<T> n = tape.make(std::move(out), nullptr);
  n->backward = [n, x, w, b, d, row_len, out_hw] {
    Tensor<T> col({out_hw, row_len});
    Tensor<T> dcol({out_hw, row_len});
    const bool need_x = x->requires_grad, need_w = w->requires_grad;
    if (need_x) x->ensure_grad();
    if (need_w) w->ensure_grad();
    for (std::size_t s = 0; s < d.B; ++s) {
      const T* go = n->grad.data() + s * out_hw * d.Co;
      if (need_w) {
        detail::im2col(x->value.data() + s * d.H * d.W * d.Ci, d, col.data());
        detail::gemm_tn(col.data(), go, w->grad.data(), row_len, out_hw, d.Co,
                        true);
      }
      if (need_x) {
        detail::gemm_nt(go, w->value.data(), dcol.data(), out_hw, d.Co,
                        row_len, false);
        detail::col2im_acc(dcol.data(), d,
                           x->grad.data() + s * d.H * d.W * d.Ci);
      }
    }
    if (b->requires_grad) {
      Tensor<T>& gb = b->ensure_grad();
      for (std::size_t s = 0; s < d.B; ++s) {
        const T* go = n->grad.data() + s * out_hw * d.Co;
        for (std::size_t p = 0; p < out_hw; ++p)
          for (std::size_t c = 0; c < d.Co; ++c) gb[c] += go[p * d.Co + c];
      }
    }
  };
  return n;
}

// Nearest-neighbour 2x upsample.
template <typename T>
NodeRef<T> upsample2(Tape<T>& tape, NodeRef<T> x) {
  const std::size_t B = x->value.dim(0), H = x->value.dim(1),
                    W = x->value.dim(2), C = x->value.dim(3);
  Tensor<T> out({B, H * 2, W * 2, C});
  for (std::size_t s = 0; s < B; ++s)
    for (std::size_t h = 0; h < H * 2; ++h)
      for (std::size_t w = 0; w < W * 2; ++w)
        for (std::size_t c = 0; c < C; ++c)
          out.at4(s, h, w, c) = x->value.at4(s, h / 2, w / 2, c);
  if (!x->requires_grad) return tape.constant(std::move(out));
  NodeRef<T> n = tape.make(std::move(out), nullptr);
  n->backward = [n, x, B, H, W, C] {
    Tensor<T>& gx = x->ensure_grad();
    for (std::size_t s = 0; s < B; ++s)
      for (std::size_t h = 0; h < H * 2; ++h)
        for (std::size_t w = 0; w < W * 2; ++w)
          for (std::size_t c = 0; c < C; ++c)
            gx.at4(s, h / 2, w / 2, c) += n->grad.at4(s, h, w, c);
  };
  return n;
}

// 2x2 average pooling, stride 2. Even spatial dims required.
template <typename T>
NodeRef<T> avgpool2(Tape<T>& tape, NodeRef<T> x) {
  const std::size_t B = x->value.dim(0), H = x->value.dim(1),
                    W = x->value.dim(2), C = x->value.dim(3);
  if (H % 2 || W % 2) throw std::invalid_argument("avgpool2: odd spatial dims");
  Tensor<T> out({B, H / 2, W / 2, C});
  for (std::size_t s = 0; s < B; ++s)
    for (std::size_t h = 0; h < H / 2; ++h)
      for (std::size_t w = 0; w < W / 2; ++w)
        for (std::size_t c = 0; c < C; ++c)
          out.at4(s, h, w, c) =
              (x->value.at4(s, 2 * h, 2 * w, c) +
               x->value.at4(s, 2 * h, 2 * w + 1, c) +
               x->value.at4(s, 2 * h + 1, 2 * w, c) +
               x->value.at4(s, 2 * h + 1, 2 * w + 1, c)) /
              T(4);
  if (!x->requires_grad) return tape.constant(std::move(out));
  NodeRef<T> n = tape.make(std::move(out), nullptr);
  n->backward = [n, x, B, H, W, C] {
    Tensor<T>& gx = x->ensure_grad();
    for (std::size_t s = 0; s < B; ++s)
      for (std::size_t h = 0; h < H / 2; ++h)
        for (std::size_t w = 0; w < W / 2; ++w)
          for (std::size_t c = 0; c < C; ++c) {
            const T g = n->grad.at4(s, h, w, c) / T(4);
            gx.at4(s, 2 * h, 2 * w, c) += g;
            gx.at4(s, 2 * h, 2 * w + 1, c) += g;
            gx.at4(s, 2 * h + 1, 2 * w, c) += g;
            gx.at4(s, 2 * h + 1, 2 * w + 1, c) += g;
          }
  };
  return n;
}

// Per-sample, per-channel affine: out = x * (1 + s) + t, broadcast over H,W.
// This is the latent-code modulation applied after each generator conv.
template <typename T>
NodeRef<T> scale_shift(Tape<T>& tape, NodeRef<T> x, NodeRef<T> s_node,
                       NodeRef<T> t_node) {
  const std::size_t B = x->value.dim(0), H = x->value.dim(1),
                    W = x->value.dim(2), C = x->value.dim(3);
  if (s_node->value.dim(0) != B || s_node->value.dim(1) != C ||
      t_node->value.dim(0) != B || t_node->value.dim(1) != C)
    throw std::invalid_argument("scale_shift: modulation shape mismatch");
  Tensor<T> out({B, H, W, C});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w)
        for (std::size_t c = 0; c < C; ++c)
          out.at4(b, h, w, c) =
              x->value.at4(b, h, w, c) * (T(1) + s_node->value.at2(b, c)) +
              t_node->value.at2(b, c);
  if (!detail::any_rg<T>({x, s_node, t_node}))
    return tape.constant(std::move(out));
  NodeRef<T> n = tape.make(std::move(out), nullptr);
  n->backward = [n, x, s_node, t_node, B, H, W, C] {
    if (x->requires_grad) {
      Tensor<T>& gx = x->ensure_grad();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t w = 0; w < W; ++w)
            for (std::size_t c = 0; c < C; ++c)
              gx.at4(b, h, w, c) += n->grad.at4(b, h, w, c) *
                                    (T(1) + s_node->value.at2(b, c));
    }
    if (s_node->requires_grad) {
      Tensor<T>& gs = s_node->ensure_grad();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t w = 0; w < W; ++w)
            for (std::size_t c = 0; c < C; ++c)
              gs.at2(b, c) +=
                  n->grad.at4(b, h, w, c) * x->value.at4(b, h, w, c);
    }
    if (t_node->requires_grad) {
      Tensor<T>& gt = t_node->ensure_grad();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t w = 0; w < W; ++w)
            for (std::size_t c = 0; c < C; ++c)
              gt.at2(b, c) += n->grad.at4(b, h, w, c);
    }
  };
  return n;
}

// Broadcasts a learned [H,W,C] block to [B,H,W,C] (generator constant input).
template <typename T>
NodeRef<T> broadcast_batch(Tape<T>& tape, NodeRef<T> x, std::size_t B) {
  if (x->value.rank() != 3)
    throw std::invalid_argument("broadcast_batch: expects [H,W,C]");
  const std::size_t H = x->value.dim(0), W = x->value.dim(1),
                    C = x->value.dim(2);
  Tensor<T> out({B, H, W, C});
  const std::size_t block = H * W * C;
  for (std::size_t b = 0; b < B; ++b)
    std::memcpy(out.data() + b * block, x->value.data(), block * sizeof(T));
  if (!x->requires_grad) return tape.constant(std::move(out));
  NodeRef<T> n = tape.make(std::move(out), nullptr);
  n->backward = [n, x, B, block] {
    Tensor<T>& gx = x->ensure_grad();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < block; ++i)
        gx[i] += n->grad[b * block + i];
  };
  return n;
}

// Appends one channel holding the batch-wide mean feature stddev
// (the discriminator's minibatch-stddev feature). A batch of identical
// images yields an exactly-zero feature; the backward pass guards the
// sqrt at zero variance with a zero subgradient.
template <typename T>
NodeRef<T> minibatch_stddev(Tape<T>& tape, NodeRef<T> x) {
  const std::size_t B = x->value.dim(0), H = x->value.dim(1),
                    W = x->value.dim(2), C = x->value.dim(3);
  const std::size_t F = H * W * C;
  Tensor<T> mean({F}), sd({F});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f) mean[f] += x->value[b * F + f];
  for (std::size_t f = 0; f < F; ++f) mean[f] /= T(B);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f) {
      const T dlt = x->value[b * F + f] - mean[f];
      sd[f] += dlt * dlt;
    }
  T avg_sd = T(0);
  for (std::size_t f = 0; f < F; ++f) {
    sd[f] = std::sqrt(sd[f] / T(B));
    avg_sd += sd[f];
  }
  avg_sd /= T(F);

  Tensor<T> out({B, H, W, C + 1});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        for (std::size_t c = 0; c < C; ++c)
          out.at4(b, h, w, c) = x->value.at4(b, h, w, c);
        out.at4(b, h, w, C) = avg_sd;
      }
  if (!x->requires_grad) return tape.constant(std::move(out));
  NodeRef<T> n = tape.make(std::move(out), nullptr);
  n->backward = [n, x, mean, sd, B, H, W, C, F] {
    Tensor<T>& gx = x->ensure_grad();
    // Identity path.
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w)
          for (std::size_t c = 0; c < C; ++c)
            gx.at4(b, h, w, c) += n->grad.at4(b, h, w, c);
    // Stddev path: d(avg_sd)/dx[b,f] = (x[b,f]-mean[f]) / (B*F*sd[f]).
    T g_avg = T(0);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) g_avg += n->grad.at4(b, h, w, C);
    const T scale = g_avg / (T(B) * T(F));
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t f = 0; f < F; ++f) {
        if (sd[f] <= T(0)) continue;  // zero-variance feature: subgradient 0
        gx[b * F + f] += scale * (x->value[b * F + f] - mean[f]) / sd[f];
      }
  };
  return n;
}

}  // namespace overlord::ad

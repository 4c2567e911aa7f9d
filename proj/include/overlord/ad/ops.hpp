#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include "overlord/ad/graph.hpp"

namespace overlord::ad {

namespace detail {
template <typename T>
inline bool any_rg(std::initializer_list<NodeRef<T>> parents) {
  for (auto* p : parents)
    if (p->requires_grad) return true;
  return false;
}

template <typename T>
inline void check_same_shape(const NodeRef<T> a, const NodeRef<T> b,
                             const char* op) {
  if (!a->value.same_shape(b->value))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a->value.shape_str() + " vs " +
                                b->value.shape_str());
}
}  // namespace detail

template <typename T>
NodeRef<T> add(Tape<T>& tape, NodeRef<T> a, NodeRef<T> b) {
  detail::check_same_shape(a, b, "add");
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
  if (!detail::any_rg<T>({a, b})) return tape.constant(std::move(out));
  NodeRef<T> n = tape.make(std::move(out), nullptr);
  n->backward = [n, a, b] {
    accumulate(a, n->grad);
    accumulate(b, n->grad);
  };
  return n;
}

template <typename T>
NodeRef<T> sub(Tape<T>& tape, NodeRef<T> a, NodeRef<T> b) {
  detail::check_same_shape(a, b, "sub");
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
  if (!detail::any_rg<T>({a, b})) return tape.constant(std::move(out));
  NodeRef<T> n = tape.make(std::move(out), nullptr);
  n->backward = [n, a, b] {
    accumulate(a, n->grad);
    if (b->requires_grad) {
      Tensor<T>& gb = b->ensure_grad();
      for (std::size_t i = 0; i < n->grad.numel(); ++i) gb[i] -= n->grad[i];
    }
  };
  return n;
}

template <typename T>
NodeRef<T> mul(Tape<T>& tape, NodeRef<T> a, NodeRef<T> b) {
  detail::check_same_shape(a, b, "mul");
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
  if (!detail::any_rg<T>({a, b})) return tape.constant(std::move(out));
  NodeRef<T> n = tape.make(std::move(out), nullptr);
  n->backward = [n, a, b] {
    if (a->requires_grad) {
      Tensor<T>& ga = a->ensure_grad();
      for (std::size_t i = 0; i < n->grad.numel(); ++i)
        ga[i] += n->grad[i] * b->value[i];
    }
    if (b->requires_grad) {
      Tensor<T>& gb = b->ensure_grad();
      for (std::size_t i = 0; i < n->grad.numel(); ++i)
        gb[i] += n->grad[i] * a->value[i];
    }
  };
  return n;
}

template <typename T>
NodeRef<T> scale(Tape<T>& tape, NodeRef<T> a, T c) {
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c;
  if (!a->requires_grad) return tape.constant(std::move(out));
  NodeRef<T> n = tape.make(std::move(out), nullptr);
  n->backward = [n, a, c] {
    Tensor<T>& ga = a->ensure_grad();
    for (std::size_t i = 0; i < n->grad.numel(); ++i) ga[i] += c * n->grad[i];
  };
  return n;
}

template <typename T>
NodeRef<T> leaky_relu(Tape<T>& tape, NodeRef<T> a, T alpha) {
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i)
    if (out[i] < T(0)) out[i] *= alpha;
  if (!a->requires_grad) return tape.constant(std::move(out));
  NodeRef<T> n = tape.make(std::move(out), nullptr);
  n->backward = [n, a, alpha] {
    Tensor<T>& ga = a->ensure_grad();
    for (std::size_t i = 0; i < n->grad.numel(); ++i)
      ga[i] += n->grad[i] * (a->value[i] >= T(0) ? T(1) : alpha);
  };
  return n;
}

template <typename T>
NodeRef<T> tanh_op(Tape<T>& tape, NodeRef<T> a) {
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
  if (!a->requires_grad) return tape.constant(std::move(out));
  NodeRef<T> n = tape.make(std::move(out), nullptr);
  n->backward = [n, a] {
    Tensor<T>& ga = a->ensure_grad();
    for (std::size_t i = 0; i < n->grad.numel(); ++i)
      ga[i] += n->grad[i] * (T(1) - n->value[i] * n->value[i]);
  };
  return n;
}

template <typename T>
NodeRef<T> abs_op(Tape<T>& tape, NodeRef<T> a) {
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::abs(out[i]);
  if (!a->requires_grad) return tape.constant(std::move(out));
  NodeRef<T> n = tape.make(std::move(out), nullptr);
  n->backward = [n, a] {
    Tensor<T>& ga = a->ensure_grad();
    for (std::size_t i = 0; i < n->grad.numel(); ++i) {
      const T x = a->value[i];
      const T s = x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
      ga[i] += n->grad[i] * s;
    }
  };
  return n;
}

template <typename T>
NodeRef<T> square(Tape<T>& tape, NodeRef<T> a) {
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= out[i];
  if (!a->requires_grad) return tape.constant(std::move(out));
  NodeRef<T> n = tape.make(std::move(out), nullptr);
  n->backward = [n, a] {
    Tensor<T>& ga = a->ensure_grad();
    for (std::size_t i = 0; i < n->grad.numel(); ++i)
      ga[i] += n->grad[i] * T(2) * a->value[i];
  };
  return n;
}

// softplus(x) = log(1 + e^x), computed without overflow.
template <typename T>
NodeRef<T> softplus(Tape<T>& tape, NodeRef<T> a) {
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const T x = out[i];
    out[i] = std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
  }
  if (!a->requires_grad) return tape.constant(std::move(out));
  NodeRef<T> n = tape.make(std::move(out), nullptr);
  n->backward = [n, a] {
    Tensor<T>& ga = a->ensure_grad();
    for (std::size_t i = 0; i < n->grad.numel(); ++i) {
      const T x = a->value[i];
      const T sig = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                              : std::exp(x) / (T(1) + std::exp(x));
      ga[i] += n->grad[i] * sig;
    }
  };
  return n;
}

template <typename T>
NodeRef<T> sum_all(Tape<T>& tape, NodeRef<T> a) {
  T acc = T(0);
  for (std::size_t i = 0; i < a->value.numel(); ++i) acc += a->value[i];
  if (!a->requires_grad) return tape.constant(Tensor<T>::scalar(acc));
  NodeRef<T> n = tape.make(Tensor<T>::scalar(acc), nullptr);
  n->backward = [n, a] {
    Tensor<T>& ga = a->ensure_grad();
    const T g = n->grad[0];
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g;
  };
  return n;
}

template <typename T>
NodeRef<T> mean_all(Tape<T>& tape, NodeRef<T> a) {
  return scale(tape, sum_all(tape, a), T(1) / T(a->value.numel()));
}

// Rows of `table` selected by ids; gradient scatter-adds back into the rows.
template <typename T>
NodeRef<T> gather_rows(Tape<T>& tape, NodeRef<T> table,
                       const std::vector<std::size_t>& ids) {
  if (table->value.rank() != 2)
    throw std::invalid_argument("gather_rows: table must be 2-d");
  const std::size_t rows = table->value.dim(0), d = table->value.dim(1);
  Tensor<T> out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= rows) throw std::out_of_range("gather_rows: id out of range");
    for (std::size_t j = 0; j < d; ++j)
      out.at2(i, j) = table->value.at2(ids[i], j);
  }
  if (!table->requires_grad) return tape.constant(std::move(out));
  NodeRef<T> n = tape.make(std::move(out), nullptr);
  n->backward = [n, table, ids] {
    Tensor<T>& gt = table->ensure_grad();
    const std::size_t d = table->value.dim(1);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < d; ++j)
        gt.at2(ids[i], j) += n->grad.at2(i, j);
  };
  return n;
}

// Concatenates [B, d_i] blocks along the column axis.
template <typename T>
NodeRef<T> concat_cols(Tape<T>& tape, const std::vector<NodeRef<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
  const std::size_t rows = parts[0]->value.dim(0);
  std::size_t total = 0;
  for (auto* p : parts) {
    if (p->value.rank() != 2 || p->value.dim(0) != rows)
      throw std::invalid_argument("concat_cols: incompatible shapes");
    total += p->value.dim(1);
  }
  Tensor<T> out({rows, total});
  std::size_t off = 0;
  for (auto* p : parts) {
    const std::size_t d = p->value.dim(1);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < d; ++j)
        out.at2(r, off + j) = p->value.at2(r, j);
    off += d;
  }
  bool rg = false;
  for (auto* p : parts) rg = rg || p->requires_grad;
  if (!rg) return tape.constant(std::move(out));
  NodeRef<T> n = tape.make(std::move(out), nullptr);
  std::vector<NodeRef<T>> ps = parts;
  n->backward = [n, ps, rows] {
    std::size_t off = 0;
    for (auto* p : ps) {
      const std::size_t d = p->value.dim(1);
      if (p->requires_grad) {
        Tensor<T>& gp = p->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j)
            gp.at2(r, j) += n->grad.at2(r, off + j);
      }
      off += d;
    }
  };
  return n;
}

// Mean softmax cross entropy against integer labels; log-sum-exp shifted.
template <typename T>
NodeRef<T> softmax_cross_entropy(Tape<T>& tape, NodeRef<T> logits,
                                 const std::vector<std::size_t>& labels) {
  const std::size_t B = logits->value.dim(0), K = logits->value.dim(1);
  if (labels.size() != B)
    throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  T loss = T(0);
  for (std::size_t b = 0; b < B; ++b) {
    T mx = logits->value.at2(b, 0);
    for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, logits->value.at2(b, k));
    T lse = T(0);
    for (std::size_t k = 0; k < K; ++k)
      lse += std::exp(logits->value.at2(b, k) - mx);
    lse = std::log(lse) + mx;
    loss += lse - logits->value.at2(b, labels[b]);
  }
  loss /= T(B);
  if (!logits->requires_grad) return tape.constant(Tensor<T>::scalar(loss));
  NodeRef<T> n = tape.make(Tensor<T>::scalar(loss), nullptr);
  n->backward = [n, logits, labels, B, K] {
    Tensor<T>& gl = logits->ensure_grad();
    const T g = n->grad[0] / T(B);
    for (std::size_t b = 0; b < B; ++b) {
      T mx = logits->value.at2(b, 0);
      for (std::size_t k = 1; k < K; ++k)
        mx = std::max(mx, logits->value.at2(b, k));
      T z = T(0);
      for (std::size_t k = 0; k < K; ++k)
        z += std::exp(logits->value.at2(b, k) - mx);
      for (std::size_t k = 0; k < K; ++k) {
        const T p = std::exp(logits->value.at2(b, k) - mx) / z;
        gl.at2(b, k) += g * (p - (k == labels[b] ? T(1) : T(0)));
      }
    }
  };
  return n;
}

}  // namespace overlord::ad

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "overlord/core/tensor.hpp"

namespace overlord::train {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moment buffers for one parameter tensor.
template <typename T>
struct AdamState {
  Tensor<T> m, v;
  std::int64_t t = 0;

  void ensure(const Tensor<T>& param) {
    if (m.empty()) {
      m = Tensor<T>::zeros_like(param);
      v = Tensor<T>::zeros_like(param);
    }
  }
};

template <typename T>
inline void adam_step(Tensor<T>& param, const Tensor<T>& grad,
                      AdamState<T>& state, const AdamConfig& cfg) {
  state.ensure(param);
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t));
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double g = double(grad[i]);
    const double m = cfg.beta1 * double(state.m[i]) + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * double(state.v[i]) + (1.0 - cfg.beta2) * g * g;
    state.m[i] = T(m);
    state.v[i] = T(v);
    param[i] -= T(cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps));
  }
}

// Adam over rows of an embedding table. Each row keeps its own step count:
// rows are only updated when they appear in a minibatch, so a shared count
// would skew the bias correction of rarely sampled rows.
template <typename T>
struct RowAdamState {
  Tensor<T> m, v;
  std::vector<std::int64_t> t;

  void ensure(const Tensor<T>& table) {
    if (m.empty()) {
      m = Tensor<T>::zeros_like(table);
      v = Tensor<T>::zeros_like(table);
      t.assign(table.dim(0), 0);
    }
  }
};

template <typename T>
inline void adam_step_rows(Tensor<T>& table, const Tensor<T>& grad,
                           const std::vector<std::size_t>& rows,
                           RowAdamState<T>& state, const AdamConfig& cfg) {
  state.ensure(table);
  const std::size_t d = table.dim(1);
  for (std::size_t r : rows) {
    ++state.t[r];
    const double bc1 = 1.0 - std::pow(cfg.beta1, double(state.t[r]));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(state.t[r]));
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t i = r * d + j;
      const double g = double(grad[i]);
      const double m = cfg.beta1 * double(state.m[i]) + (1.0 - cfg.beta1) * g;
      const double v =
          cfg.beta2 * double(state.v[i]) + (1.0 - cfg.beta2) * g * g;
      state.m[i] = T(m);
      state.v[i] = T(v);
      table[i] -= T(cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps));
    }
  }
}

}  // namespace overlord::train

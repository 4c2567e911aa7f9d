#pragma once

#include <stdexcept>
#include <string>

#include "overlord/ad/ops.hpp"
#include "overlord/core/rng.hpp"
#include "overlord/core/serialize.hpp"

namespace overlord::latent {

using ad::NodeRef;
using ad::Tape;

// The directly-optimized latents of the disentanglement stage: one free
// vector u' per training image and one embedding per labeled-attribute value.
template <typename T>
struct LatentBank {
  Tensor<T> u_prime;  // [N, d_u]
  Tensor<T> y_embed;  // [K, d_y]

  std::size_t n() const { return u_prime.dim(0); }
  std::size_t d_u() const { return u_prime.dim(1); }
  std::size_t k() const { return y_embed.dim(0); }
  std::size_t d_y() const { return y_embed.dim(1); }
};

struct BottleneckConfig {
  double noise_std = 1.0;  // std of the additive Gaussian z
  double lambda_b = 0.001;

  void validate() const {
    if (noise_std < 0 || lambda_b < 0)
      throw std::invalid_argument("bottleneck: negative noise_std or lambda_b");
  }
};

// Every entry i.i.d. Gaussian(0, init_std^2). Random init is the point:
// fresh codes carry no information about any attribute.
template <typename T>
LatentBank<T> init_bank(std::size_t n, std::size_t d_u, std::size_t k,
                        std::size_t d_y, Rng& rng, double init_std) {
  if (n < 1 || d_u < 1 || k < 1 || d_y < 1)
    throw std::invalid_argument("init_bank: dims must be >= 1");
  LatentBank<T> bank;
  bank.u_prime = Tensor<T>({n, d_u});
  bank.y_embed = Tensor<T>({k, d_y});
  rng.fill_normal(bank.u_prime, 0.0, init_std);
  rng.fill_normal(bank.y_embed, 0.0, init_std);
  return bank;
}

// u = u' + z, z ~ N(0, noise_std^2), resampled on every call in row-major
// order. Evaluation paths pass noise_std = 0, which is an exact identity.
template <typename T>
Tensor<T> noisy_bottleneck(const Tensor<T>& u_prime_batch, Rng& rng,
                           double noise_std) {
  if (noise_std < 0)
    throw std::invalid_argument("noisy_bottleneck: negative noise_std");
  Tensor<T> out = u_prime_batch;
  if (noise_std == 0.0) return out;
  for (std::size_t i = 0; i < out.numel(); ++i)
    out[i] += T(rng.normal(0.0, noise_std));
  return out;
}

// Tape form: adds a freshly sampled constant noise tensor to the node, so
// the gradient passes through to u' unchanged.
template <typename T>
NodeRef<T> noisy_bottleneck(Tape<T>& tape, NodeRef<T> u_prime_batch, Rng& rng,
                            double noise_std) {
  if (noise_std == 0.0) return u_prime_batch;
  Tensor<T> z = Tensor<T>::zeros_like(u_prime_batch->value);
  rng.fill_normal(z, 0.0, noise_std);
  return ad::add(tape, u_prime_batch, tape.constant(std::move(z)));
}

// Batch mean of squared row norms. The batch-mean convention (not a dataset
// sum) keeps lambda_b calibrated independently of batch size.
template <typename T>
T bottleneck_penalty(const Tensor<T>& u_prime_batch) {
  const std::size_t b = u_prime_batch.dim(0);
  T acc = T(0);
  for (std::size_t i = 0; i < u_prime_batch.numel(); ++i)
    acc += u_prime_batch[i] * u_prime_batch[i];
  return acc / T(b);
}

template <typename T>
NodeRef<T> bottleneck_penalty(Tape<T>& tape, NodeRef<T> u_prime_batch) {
  const std::size_t b = u_prime_batch->value.dim(0);
  return ad::scale(tape, ad::sum_all(tape, ad::square(tape, u_prime_batch)),
                   T(1) / T(b));
}

inline constexpr char kBankMagic[9] = "OVLB0001";

template <typename T>
void save_bank(const std::string& path, const LatentBank<T>& bank) {
  io::Writer w(path);
  w.magic(kBankMagic);
  w.u32(std::uint32_t(bank.n()));
  w.u32(std::uint32_t(bank.d_u()));
  w.u32(std::uint32_t(bank.k()));
  w.u32(std::uint32_t(bank.d_y()));
  auto dump = [&w](const Tensor<T>& t) {
    if constexpr (std::is_same_v<T, float>) {
      w.f32_array(t.data(), t.numel());
    } else {
      for (std::size_t i = 0; i < t.numel(); ++i) w.f32(float(t[i]));
    }
  };
  dump(bank.u_prime);
  dump(bank.y_embed);
  w.close();
}

template <typename T>
LatentBank<T> load_bank(const std::string& path) {
  io::Reader r(path);
  r.expect_magic(kBankMagic);
  const std::size_t n = r.u32(), d_u = r.u32(), k = r.u32(), d_y = r.u32();
  LatentBank<T> bank;
  bank.u_prime = Tensor<T>({n, d_u});
  bank.y_embed = Tensor<T>({k, d_y});
  auto fill = [&r](Tensor<T>& t) {
    if constexpr (std::is_same_v<T, float>) {
      r.f32_array(t.data(), t.numel());
    } else {
      for (std::size_t i = 0; i < t.numel(); ++i) t[i] = T(r.f32());
    }
  };
  fill(bank.u_prime);
  fill(bank.y_embed);
  return bank;
}

// Class row of the label-embedding table (stage-1 "table mode" for y).
template <typename T>
Tensor<T> label_embedding(const LatentBank<T>& bank, std::size_t label) {
  if (label >= bank.k())
    throw std::out_of_range("label_embedding: label " + std::to_string(label) +
                            " out of range [0," + std::to_string(bank.k()) +
                            ")");
  Tensor<T> row({bank.d_y()});
  for (std::size_t j = 0; j < bank.d_y(); ++j)
    row[j] = bank.y_embed.at2(label, j);
  return row;
}

}  // namespace overlord::latent

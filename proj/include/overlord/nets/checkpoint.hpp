#pragma once

// Model container format (magic OVLM0001):
//   magic[8]
//   arch echo: base_channels, num_scales, channel_cap, enc_base_channels u32,
//              latent_concat u8, use_noise_injection u8
//   dims: d_y, d_c, d_u, H, W, C  u32
//   presence flags: has_ec, has_ey, has_eu, has_d  u8
//   block count u32, then per parameter block:
//     name (u32 length + bytes), rank u32, dims u32[], float32 data
// Loading validates the arch/dims echo and every block shape by name.

#include <string>

#include "overlord/nets/nets.hpp"

namespace overlord::nets {

inline constexpr char kModelMagic[9] = "OVLM0001";

template <typename T>
void save_bundle(const std::string& path, ModelBundle<T>& bundle) {
  io::Writer w(path);
  w.magic(kModelMagic);
  w.u32(std::uint32_t(bundle.arch.base_channels));
  w.u32(std::uint32_t(bundle.arch.num_scales));
  w.u32(std::uint32_t(bundle.arch.channel_cap));
  w.u32(std::uint32_t(bundle.arch.enc_base_channels));
  w.u8(bundle.arch.latent_concat ? 1 : 0);
  w.u8(bundle.arch.use_noise_injection ? 1 : 0);
  w.u32(std::uint32_t(bundle.dims.d_y));
  w.u32(std::uint32_t(bundle.dims.d_c));
  w.u32(std::uint32_t(bundle.dims.d_u));
  w.u32(std::uint32_t(bundle.dims.H));
  w.u32(std::uint32_t(bundle.dims.W));
  w.u32(std::uint32_t(bundle.dims.C));
  w.u8(bundle.has_ec ? 1 : 0);
  w.u8(bundle.has_ey ? 1 : 0);
  w.u8(bundle.has_eu ? 1 : 0);
  w.u8(bundle.has_d ? 1 : 0);

  ParamRefs<T> all;
  for (auto group : {bundle.params_g(), bundle.params_ec(), bundle.params_ey(),
                     bundle.params_eu(), bundle.params_d()})
    for (auto& p : group) all.push_back(p);

  w.u32(std::uint32_t(all.size()));
  for (auto& [name, tensor] : all) {
    w.str(name);
    w.u32(std::uint32_t(tensor->rank()));
    for (std::size_t i = 0; i < tensor->rank(); ++i)
      w.u32(std::uint32_t(tensor->dim(i)));
    if constexpr (std::is_same_v<T, float>) {
      w.f32_array(tensor->data(), tensor->numel());
    } else {
      for (std::size_t i = 0; i < tensor->numel(); ++i)
        w.f32(float((*tensor)[i]));
    }
  }
  w.close();
}

template <typename T>
ModelBundle<T> load_bundle(const std::string& path) {
  io::Reader r(path);
  r.expect_magic(kModelMagic);
  ArchConfig arch;
  arch.base_channels = r.u32();
  arch.num_scales = r.u32();
  arch.channel_cap = r.u32();
  arch.enc_base_channels = r.u32();
  arch.latent_concat = r.u8() != 0;
  arch.use_noise_injection = r.u8() != 0;
  Dims dims;
  dims.d_y = r.u32();
  dims.d_c = r.u32();
  dims.d_u = r.u32();
  dims.H = r.u32();
  dims.W = r.u32();
  dims.C = r.u32();
  const bool has_ec = r.u8() != 0;
  const bool has_ey = r.u8() != 0;
  const bool has_eu = r.u8() != 0;
  const bool has_d = r.u8() != 0;

  Rng dummy(0);
  ModelBundle<T> bundle = ModelBundle<T>::create(dummy, dims, arch, has_ec);
  bundle.has_ey = has_ey;
  bundle.has_eu = has_eu;
  bundle.has_d = has_d;

  std::map<std::string, Tensor<T>*> by_name;
  for (auto group : {bundle.params_g(), bundle.params_ec(), bundle.params_ey(),
                     bundle.params_eu(), bundle.params_d()})
    for (auto& [name, tensor] : group) by_name[name] = tensor;

  const std::uint32_t n_blocks = r.u32();
  std::size_t filled = 0;
  for (std::uint32_t i = 0; i < n_blocks; ++i) {
    const std::string name = r.str();
    const std::uint32_t rank = r.u32();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = r.u32();
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error(path + ": unknown parameter block '" + name +
                               "'");
    if (it->second->shape() != shape)
      throw std::runtime_error(path + ": shape mismatch for block '" + name +
                               "'");
    if constexpr (std::is_same_v<T, float>) {
      r.f32_array(it->second->data(), it->second->numel());
    } else {
      for (std::size_t j = 0; j < it->second->numel(); ++j)
        (*it->second)[j] = T(r.f32());
    }
    ++filled;
  }
  if (filled != by_name.size())
    throw std::runtime_error(path + ": checkpoint is missing " +
                             std::to_string(by_name.size() - filled) +
                             " parameter blocks");
  return bundle;
}

// --- single-image conveniences (no gradients) ---

template <typename T>
Tensor<T> generate_one(ModelBundle<T>& bundle, const Tensor<T>& y_vec,
                       const Tensor<T>& c_vec, const Tensor<T>& u_vec) {
  const Dims& d = bundle.dims;
  if (y_vec.numel() != d.d_y || u_vec.numel() != d.d_u ||
      (bundle.has_ec && c_vec.numel() != d.d_c))
    throw std::invalid_argument("generate: latent part dims do not match bundle");
  Tape<T> tape;
  Binder<T> bind(tape, /*trainable=*/false);
  Tensor<T> latent({1, bundle.latent_dim()});
  std::size_t off = 0;
  for (std::size_t i = 0; i < d.d_y; ++i) latent[off++] = y_vec[i];
  if (bundle.has_ec)
    for (std::size_t i = 0; i < d.d_c; ++i) latent[off++] = c_vec[i];
  for (std::size_t i = 0; i < d.d_u; ++i) latent[off++] = u_vec[i];
  auto* img = bundle.G.forward(bind, tape.constant(std::move(latent)));
  return img->value.reshaped({d.H, d.W, d.C});
}

template <typename T>
Tensor<T> encode_one(Encoder<T>& enc, const Tensor<T>& image) {
  Tape<T> tape;
  Binder<T> bind(tape, /*trainable=*/false);
  Tensor<T> batch = image.reshaped(
      {1, image.dim(0), image.dim(1), image.dim(2)});
  auto* out = enc.forward(bind, tape.constant(std::move(batch)));
  return out->value.reshaped({enc.out_dim});
}

template <typename T>
T discriminate_one(ModelBundle<T>& bundle, const Tensor<T>& image) {
  Tape<T> tape;
  Binder<T> bind(tape, false);
  Tensor<T> batch =
      image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
  auto* out = bundle.D.forward(bind, tape.constant(std::move(batch)));
  return out->value[0];
}

}  // namespace overlord::nets

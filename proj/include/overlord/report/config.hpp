#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "overlord/eval/pipeline.hpp"
#include "overlord/train/trainer.hpp"

namespace overlord::report {

// Flat `key = value` configuration with dotted namespaces, `#` comments and
// a closed key set: unknown keys are errors, every key has a default, and
// the resolved snapshot is diff-able text.
class RunConfig {
 public:
  enum class Type { kString, kDouble, kSize, kBool };

  struct KeySpec {
    const char* name;
    Type type;
    const char* default_value;
  };

  static const std::vector<KeySpec>& registry() {
    static const std::vector<KeySpec> keys = {
        {"data.kind", Type::kString, "synthetic"},
        {"data.k", Type::kSize, "3"},
        {"data.m", Type::kSize, "6"},
        {"data.corr_per_class", Type::kSize, "2"},
        {"data.n_train", Type::kSize, "2000"},
        {"data.n_eval", Type::kSize, "500"},
        {"data.image_size", Type::kSize, "32"},
        {"data.with_masks", Type::kBool, "true"},
        {"data.image_dir", Type::kString, ""},
        {"data.labels_file", Type::kString, ""},
        {"data.masks_dir", Type::kString, ""},
        {"dims.d_y", Type::kSize, "32"},
        {"dims.d_c", Type::kSize, "16"},
        {"dims.d_u", Type::kSize, "16"},
        {"arch.base_channels", Type::kSize, "32"},
        {"arch.num_scales", Type::kSize, "4"},
        {"arch.channel_cap", Type::kSize, "128"},
        {"arch.enc_base", Type::kSize, "16"},
        {"t.mode", Type::kString, "random_spatial"},
        {"t.flip_prob", Type::kDouble, "0.5"},
        {"t.max_angle", Type::kDouble, "30"},
        {"t.crop_min", Type::kDouble, "0.7"},
        {"loss.kind", Type::kString, "multiscale_l1"},
        {"loss.lambda_b", Type::kDouble, "0.001"},
        {"loss.lambda_enc", Type::kDouble, "10"},
        {"loss.lambda_adv", Type::kDouble, "1"},
        {"loss.r1_gamma", Type::kDouble, "1"},
        {"loss.eq8_input", Type::kString, "raw_x"},
        {"lr.latent", Type::kDouble, "0.01"},
        {"lr.generator", Type::kDouble, "0.001"},
        {"lr.encoder", Type::kDouble, "0.0001"},
        {"lr.stage2", Type::kDouble, "0.0001"},
        {"train.epochs_stage1", Type::kSize, "200"},
        {"train.epochs_stage2", Type::kSize, "100"},
        {"train.batch_size", Type::kSize, "32"},
        {"train.seed", Type::kSize, "1"},
        {"train.noise_std", Type::kDouble, "1"},
        {"train.init_std", Type::kDouble, "0.05"},
        {"train.ey_in_stage1", Type::kBool, "false"},
        {"train.log_every", Type::kSize, "20"},
        {"train.checkpoint_every", Type::kSize, "500"},
        {"train.probe_curve", Type::kBool, "true"},
        {"eval.refs_per_source", Type::kSize, "10"},
        {"eval.max_sources", Type::kSize, "500"},
        {"eval.t_inference", Type::kString, "identity"},
    };
    return keys;
  }

  RunConfig() {
    for (const auto& k : registry()) values_[k.name] = k.default_value;
  }

  static RunConfig defaults() { return RunConfig(); }

  // Line-oriented parse. Unknown keys and unparsable values name the line.
  static RunConfig parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    RunConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      cfg.apply_line(line, path, line_no);
    }
    return cfg;
  }

  void apply_line(std::string line, const std::string& path,
                  std::size_t line_no) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) return;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(loc(path, line_no) +
                               ": expected `key = value`");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const KeySpec* spec = find_key(key);
    if (spec == nullptr)
      throw std::runtime_error(loc(path, line_no) + ": unknown key '" + key +
                               "'");
    if (!value_ok(spec->type, value))
      throw std::runtime_error(loc(path, line_no) + ": cannot parse value '" +
                               value + "' for key '" + key + "'");
    values_[key] = value;
  }

  void set(const std::string& key, const std::string& value) {
    const KeySpec* spec = find_key(key);
    if (spec == nullptr)
      throw std::invalid_argument("config: unknown key '" + key + "'");
    if (!value_ok(spec->type, value))
      throw std::invalid_argument("config: bad value '" + value + "' for '" +
                                  key + "'");
    values_[key] = value;
  }

  const std::string& str(const std::string& key) const {
    return values_.at(key);
  }
  double real(const std::string& key) const { return std::stod(str(key)); }
  std::size_t size(const std::string& key) const {
    return std::size_t(std::stoull(str(key)));
  }
  bool flag(const std::string& key) const {
    const std::string& v = str(key);
    return v == "true" || v == "1" || v == "yes";
  }

  // Full resolved snapshot, keys in registry order.
  void write_snapshot(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("config: cannot write " + path);
    for (const auto& k : registry())
      out << k.name << " = " << values_.at(k.name) << "\n";
  }

  // --- typed views -------------------------------------------------------

  synth::CorrelationSpec correlation_spec() const {
    synth::CorrelationSpec spec;
    spec.k = size("data.k");
    spec.m = size("data.m");
    const std::size_t per = size("data.corr_per_class");
    if (spec.m != spec.k * per)
      throw std::invalid_argument(
          "config: data.m must equal data.k * data.corr_per_class");
    spec.allowed.assign(spec.k, {});
    for (std::size_t y = 0; y < spec.k; ++y)
      for (std::size_t c = 0; c < per; ++c)
        spec.allowed[y].push_back(y * per + c);
    spec.validate();
    return spec;
  }

  nets::Dims dims() const {
    nets::Dims d;
    d.d_y = size("dims.d_y");
    d.d_c = size("dims.d_c");
    d.d_u = size("dims.d_u");
    d.H = d.W = size("data.image_size");
    d.C = 3;
    return d;
  }

  nets::ArchConfig arch() const {
    nets::ArchConfig a;
    a.base_channels = size("arch.base_channels");
    a.num_scales = size("arch.num_scales");
    a.channel_cap = size("arch.channel_cap");
    a.enc_base_channels = size("arch.enc_base");
    if (a.resolution() != size("data.image_size"))
      throw std::invalid_argument(
          "config: arch.num_scales does not produce data.image_size (4 * "
          "2^(num_scales-1))");
    return a;
  }

  train::TrainConfig train_config() const {
    train::TrainConfig t;
    t.lr_latent = real("lr.latent");
    t.lr_generator = real("lr.generator");
    t.lr_encoder = real("lr.encoder");
    t.lr_stage2 = real("lr.stage2");
    t.epochs_stage1 = size("train.epochs_stage1");
    t.epochs_stage2 = size("train.epochs_stage2");
    t.batch_size = size("train.batch_size");
    t.weights.lambda_b = real("loss.lambda_b");
    t.weights.lambda_enc = real("loss.lambda_enc");
    t.weights.lambda_adv = real("loss.lambda_adv");
    t.rec.kind = loss::feature_loss_from_string(str("loss.kind"));
    t.noise_std = real("train.noise_std");
    t.init_std = real("train.init_std");
    t.r1_gamma = real("loss.r1_gamma");
    t.eq8_raw_x = str("loss.eq8_input") == "raw_x";
    if (str("loss.eq8_input") != "raw_x" &&
        str("loss.eq8_input") != "transformed_x")
      throw std::invalid_argument(
          "config: loss.eq8_input must be raw_x or transformed_x");
    t.ey_in_stage1 = flag("train.ey_in_stage1");
    t.t_mode = transform::transform_mode_from_string(str("t.mode"));
    t.t_cfg.flip_prob = real("t.flip_prob");
    t.t_cfg.max_angle = real("t.max_angle");
    t.t_cfg.crop_min = real("t.crop_min");
    t.dims = dims();
    t.arch = arch();
    t.seed = size("train.seed");
    t.log_every = std::max<std::size_t>(1, size("train.log_every"));
    t.checkpoint_every = size("train.checkpoint_every");
    t.probe_curve = flag("train.probe_curve");
    t.validate();
    return t;
  }

  eval::ReportOptions report_options() const {
    eval::ReportOptions o;
    o.refs_per_source = size("eval.refs_per_source");
    o.max_sources = size("eval.max_sources");
    o.seed = size("train.seed");
    o.t_inference =
        transform::transform_mode_from_string(str("eval.t_inference"));
    return o;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }
  static std::string loc(const std::string& path, std::size_t line) {
    return path + ":" + std::to_string(line);
  }
  static const KeySpec* find_key(const std::string& name) {
    for (const auto& k : registry())
      if (name == k.name) return &k;
    return nullptr;
  }
  static bool value_ok(Type type, const std::string& v) {
    switch (type) {
      case Type::kString:
        return true;
      case Type::kBool:
        return v == "true" || v == "false" || v == "1" || v == "0" ||
               v == "yes" || v == "no";
      case Type::kDouble: {
        try {
          std::size_t pos = 0;
          std::stod(v, &pos);
          return pos == v.size();
        } catch (...) {
          return false;
        }
      }
      case Type::kSize: {
        if (v.empty()) return false;
        for (char c : v)
          if (!std::isdigit(static_cast<unsigned char>(c))) return false;
        return true;
      }
    }
    return false;
  }

  std::map<std::string, std::string> values_;
};

}  // namespace overlord::report

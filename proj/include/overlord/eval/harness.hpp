#pragma once

#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "overlord/data/dataset.hpp"
#include "overlord/eval/frechet.hpp"
#include "overlord/eval/probes.hpp"
#include "overlord/losses/losses.hpp"
#include "overlord/nets/nets.hpp"

namespace overlord::eval {

// ---------------------------------------------------------------------------
// Batched helpers over the encoder template.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> encoder_outputs(nets::Encoder<T>& net, const Tensor<T>& images,
                          std::size_t batch = 64) {
  const std::size_t n = images.dim(0);
  const std::size_t hw = images.dim(1) * images.dim(2) * images.dim(3);
  Tensor<T> out({n, net.out_dim});
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t b = std::min(batch, n - start);
    Tensor<T> chunk({b, images.dim(1), images.dim(2), images.dim(3)});
    std::copy_n(images.data() + start * hw, b * hw, chunk.data());
    ad::Tape<T> t;
    nets::Binder<T> bind(t, false);
    auto* o = net.forward(bind, t.constant(std::move(chunk)));
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < net.out_dim; ++j)
        out.at2(start + i, j) = o->value.at2(i, j);
  }
  return out;
}

template <typename T>
Tensor<T> encoder_features(nets::Encoder<T>& net, const Tensor<T>& images,
                           std::size_t batch = 64) {
  const std::size_t n = images.dim(0);
  const std::size_t hw = images.dim(1) * images.dim(2) * images.dim(3);
  Tensor<T> out({n, net.feat_dim});
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t b = std::min(batch, n - start);
    Tensor<T> chunk({b, images.dim(1), images.dim(2), images.dim(3)});
    std::copy_n(images.data() + start * hw, b * hw, chunk.data());
    ad::Tape<T> t;
    nets::Binder<T> bind(t, false);
    auto* o = net.features(bind, t.constant(std::move(chunk)));
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < net.feat_dim; ++j)
        out.at2(start + i, j) = o->value.at2(i, j);
  }
  return out;
}

template <typename T>
std::vector<std::size_t> classify(nets::Encoder<T>& net,
                                  const Tensor<T>& images) {
  Tensor<T> logits = encoder_outputs(net, images);
  std::vector<std::size_t> out(logits.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < net.out_dim; ++k)
      if (logits.at2(i, k) > logits.at2(i, best)) best = k;
    out[i] = best;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Small conv classifier / regressor training (oracles, leakage classifier).
// ---------------------------------------------------------------------------

struct ConvFitOptions {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::size_t enc_base = 16;
  double held_out_frac = 0.2;
  // Light corruption of training inputs so frozen oracles stay reliable on
  // slightly blurry generated images.
  bool augment = false;
  double noise_std = 0.04;
  double blur_prob = 0.3;
};

// Appends two channels holding normalized pixel coordinates in [-1,1].
// Pose regression needs them: sub-pixel position readout from plain conv
// features does not reach the oracle accuracy gate.
template <typename T>
Tensor<T> with_coord_channels(const Tensor<T>& images) {
  const std::size_t n = images.dim(0), h = images.dim(1), w = images.dim(2),
                    c = images.dim(3);
  Tensor<T> out({n, h, w, c + 2});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const T* src = images.data() + ((i * h + y) * w + x) * c;
        T* dst = out.data() + ((i * h + y) * w + x) * (c + 2);
        for (std::size_t ch = 0; ch < c; ++ch) dst[ch] = src[ch];
        dst[c] = T(2.0 * double(x) / double(w - 1) - 1.0);
        dst[c + 1] = T(2.0 * double(y) / double(h - 1) - 1.0);
      }
  return out;
}

namespace harness_detail {

template <typename T>
Tensor<T> blur_batch(const Tensor<T>& batch) {
  ad::Tape<T> t;
  Tensor<T> x = batch;
  auto* down = ad::avgpool2(t, t.constant(std::move(x)));
  return ad::upsample2(t, down)->value;
}

template <typename T>
void augment_batch(Tensor<T>& batch, Rng& rng, const ConvFitOptions& opt) {
  if (!opt.augment) return;
  if (rng.bernoulli(opt.blur_prob)) batch = blur_batch(batch);
  for (std::size_t i = 0; i < batch.numel(); ++i)
    batch[i] = T(std::clamp(double(batch[i]) + rng.normal(0, opt.noise_std),
                            -1.0, 1.0));
}

}  // namespace harness_detail

// Trains the shared encoder template as a k-way classifier; returns the
// held-out accuracy next to the trained network.
template <typename T>
std::pair<nets::Encoder<T>, double> fit_conv_classifier(
    const Tensor<T>& images, const std::vector<std::size_t>& labels,
    std::size_t k, Rng& rng, const ConvFitOptions& opt = {}) {
  const std::size_t n = images.dim(0);
  const std::size_t hw = images.dim(1) * images.dim(2) * images.dim(3);
  nets::Encoder<T> net;
  net.init(rng, images.dim(1), images.dim(3), opt.enc_base, k);

  const auto perm = rng.permutation(n);
  const std::size_t n_train = n - std::size_t(double(n) * opt.held_out_frac);

  std::vector<train::AdamState<T>> states;
  train::AdamConfig adam_cfg;
  adam_cfg.lr = opt.lr;
  auto refs = [&] {
    nets::ParamRefs<T> r;
    net.collect("cls", r);
    return r;
  };
  states.resize(refs().size());

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    const auto order = rng.permutation(n_train);
    for (std::size_t start = 0; start < n_train; start += opt.batch_size) {
      const std::size_t b = std::min(opt.batch_size, n_train - start);
      Tensor<T> x({b, images.dim(1), images.dim(2), images.dim(3)});
      std::vector<std::size_t> y(b);
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t src = perm[order[start + i]];
        std::copy_n(images.data() + src * hw, hw, x.data() + i * hw);
        y[i] = labels[src];
      }
      harness_detail::augment_batch(x, rng, opt);
      ad::Tape<T> t;
      nets::Binder<T> bind(t, true);
      auto* logits = net.forward(bind, t.constant(std::move(x)));
      auto* loss = ad::softmax_cross_entropy(t, logits, y);
      t.backward(loss);
      auto params = refs();
      for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T> g = bind.grad_of(*params[i].second);
        if (!g.empty())
          train::adam_step(*params[i].second, g, states[i], adam_cfg);
      }
    }
  }

  // Held-out accuracy on clean inputs.
  const std::size_t n_test = n - n_train;
  double acc = 1.0;
  if (n_test > 0) {
    Tensor<T> x({n_test, images.dim(1), images.dim(2), images.dim(3)});
    std::vector<std::size_t> y(n_test);
    for (std::size_t i = 0; i < n_test; ++i) {
      const std::size_t src = perm[n_train + i];
      std::copy_n(images.data() + src * hw, hw, x.data() + i * hw);
      y[i] = labels[src];
    }
    acc = accuracy<T>(classify(net, x), y);
  }
  return {std::move(net), acc};
}

// Same template trained for regression (pose oracle); returns normalized
// held-out error (RMSE / per-component std). Inputs get coordinate
// channels when `add_coords` is set (appended after augmentation, so the
// coordinates stay clean); targets should be standardized by the caller
// (the normalized error metric is scale-invariant either way).
template <typename T>
std::pair<nets::Encoder<T>, double> fit_conv_regressor(
    const Tensor<T>& images, const Tensor<T>& targets, Rng& rng,
    const ConvFitOptions& opt = {}, bool add_coords = false) {
  const std::size_t n = images.dim(0), p = targets.dim(1);
  const std::size_t hw = images.dim(1) * images.dim(2) * images.dim(3);
  nets::Encoder<T> net;
  net.init(rng, images.dim(1), images.dim(3) + (add_coords ? 2 : 0),
           opt.enc_base, p);

  const auto perm = rng.permutation(n);
  const std::size_t n_train = n - std::size_t(double(n) * opt.held_out_frac);

  std::vector<train::AdamState<T>> states;
  train::AdamConfig adam_cfg;
  adam_cfg.lr = opt.lr;
  auto refs = [&] {
    nets::ParamRefs<T> r;
    net.collect("reg", r);
    return r;
  };
  states.resize(refs().size());

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    const auto order = rng.permutation(n_train);
    for (std::size_t start = 0; start < n_train; start += opt.batch_size) {
      const std::size_t b = std::min(opt.batch_size, n_train - start);
      Tensor<T> x({b, images.dim(1), images.dim(2), images.dim(3)});
      Tensor<T> y({b, p});
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t src = perm[order[start + i]];
        std::copy_n(images.data() + src * hw, hw, x.data() + i * hw);
        for (std::size_t j = 0; j < p; ++j) y.at2(i, j) = targets.at2(src, j);
      }
      harness_detail::augment_batch(x, rng, opt);
      if (add_coords) x = with_coord_channels(x);
      ad::Tape<T> t;
      nets::Binder<T> bind(t, true);
      auto* out = net.forward(bind, t.constant(std::move(x)));
      auto* loss = ad::mean_all(
          t, ad::square(t, ad::sub(t, out, t.constant(std::move(y)))));
      t.backward(loss);
      auto params = refs();
      for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T> g = bind.grad_of(*params[i].second);
        if (!g.empty())
          train::adam_step(*params[i].second, g, states[i], adam_cfg);
      }
    }
  }

  // Normalized held-out error.
  const std::size_t n_test = n - n_train;
  double err = 0.0;
  if (n_test > 0) {
    Tensor<T> x({n_test, images.dim(1), images.dim(2), images.dim(3)});
    Tensor<T> y({n_test, p});
    for (std::size_t i = 0; i < n_test; ++i) {
      const std::size_t src = perm[n_train + i];
      std::copy_n(images.data() + src * hw, hw, x.data() + i * hw);
      for (std::size_t j = 0; j < p; ++j) y.at2(i, j) = targets.at2(src, j);
    }
    if (add_coords) x = with_coord_channels(x);
    Tensor<T> pred = encoder_outputs(net, x);
    for (std::size_t j = 0; j < p; ++j) {
      double mean = 0, var = 0, se = 0;
      for (std::size_t i = 0; i < n_test; ++i) mean += double(y.at2(i, j));
      mean /= double(n_test);
      for (std::size_t i = 0; i < n_test; ++i) {
        var += (double(y.at2(i, j)) - mean) * (double(y.at2(i, j)) - mean);
        se += (double(pred.at2(i, j)) - double(y.at2(i, j))) *
              (double(pred.at2(i, j)) - double(y.at2(i, j)));
      }
      err += var > 0 ? std::sqrt(se / var) : 0.0;
    }
    err /= double(p);
  }
  return {std::move(net), err};
}

// ---------------------------------------------------------------------------
// Frozen oracle predictors for the synthetic benchmark.
// ---------------------------------------------------------------------------

struct OracleTargets {
  double classifier_acc = 0.97;
  double pose_err = 0.1;
  std::size_t max_rounds = 3;  // each round adds `epochs` more training
};

template <typename T = float>
struct OracleSet {
  nets::Encoder<T> y_classifier;
  nets::Encoder<T> corr_classifier;
  nets::Encoder<T> pose_regressor;  // coordinate-augmented input
  std::vector<double> pose_mean, pose_std;  // target standardization
  double y_acc = 0, corr_acc = 0, pose_error = 1;
  std::size_t k = 0, m = 0;

  Tensor<T> features(const Tensor<T>& images) {
    return encoder_features(y_classifier, images);
  }

  // Pose predictions in the original (de-standardized) units.
  Tensor<T> predict_pose(const Tensor<T>& images) {
    Tensor<T> pred =
        encoder_outputs(pose_regressor, with_coord_channels(images));
    for (std::size_t i = 0; i < pred.dim(0); ++i)
      for (std::size_t j = 0; j < pred.dim(1); ++j)
        pred.at2(i, j) =
            T(double(pred.at2(i, j)) * pose_std[j] + pose_mean[j]);
    return pred;
  }
};

// Trains the three frozen oracles on ground-truth factors until the build
// targets hold, with light input corruption so they stay accurate on
// generated imagery. Throws if the targets are out of reach.
template <typename T = float>
OracleSet<T> fit_oracles(const data::Dataset<T>& ds, Rng& rng,
                         const OracleTargets& targets = {},
                         std::size_t corr_count = 6) {
  if (!ds.has_factors())
    throw std::invalid_argument("fit_oracles: dataset lacks ground-truth factors");
  OracleSet<T> o;
  o.k = ds.k;
  o.m = corr_count;

  std::vector<std::size_t> corr_labels(ds.size());
  Tensor<T> pose({ds.size(), synth::kPoseDim});
  for (std::size_t i = 0; i < ds.size(); ++i) {
    corr_labels[i] = ds.factors[i].corr;
    const auto pv = synth::pose_vector(ds.factors[i]);
    for (std::size_t j = 0; j < synth::kPoseDim; ++j)
      pose.at2(i, j) = T(pv[j]);
  }
  // Standardize pose targets so every component gets equal training weight.
  o.pose_mean.assign(synth::kPoseDim, 0.0);
  o.pose_std.assign(synth::kPoseDim, 1.0);
  for (std::size_t j = 0; j < synth::kPoseDim; ++j) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) m += double(pose.at2(i, j));
    m /= double(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i)
      v += (double(pose.at2(i, j)) - m) * (double(pose.at2(i, j)) - m);
    v = std::sqrt(v / double(ds.size()));
    o.pose_mean[j] = m;
    o.pose_std[j] = v > 0 ? v : 1.0;
    for (std::size_t i = 0; i < ds.size(); ++i)
      pose.at2(i, j) = T((double(pose.at2(i, j)) - m) / o.pose_std[j]);
  }

  ConvFitOptions opt;
  opt.augment = true;

  for (std::size_t round = 1; round <= targets.max_rounds; ++round) {
    ConvFitOptions this_opt = opt;
    this_opt.epochs = opt.epochs * round;
    Rng ry = Rng::stream(rng.next_u64(), 1);
    auto [y_net, y_acc] =
        fit_conv_classifier(ds.images, ds.labels, ds.k, ry, this_opt);
    Rng rc = Rng::stream(rng.next_u64(), 2);
    auto [c_net, c_acc] =
        fit_conv_classifier(ds.images, corr_labels, corr_count, rc, this_opt);
    Rng rp = Rng::stream(rng.next_u64(), 3);
    auto [p_net, p_err] = fit_conv_regressor(ds.images, pose, rp, this_opt,
                                             /*add_coords=*/true);
    o.y_classifier = std::move(y_net);
    o.corr_classifier = std::move(c_net);
    o.pose_regressor = std::move(p_net);
    o.y_acc = y_acc;
    o.corr_acc = c_acc;
    o.pose_error = p_err;
    if (y_acc >= targets.classifier_acc && c_acc >= targets.classifier_acc &&
        p_err <= targets.pose_err)
      return o;
  }
  throw std::runtime_error(
      "fit_oracles: targets unreachable in budget (y_acc=" +
      std::to_string(o.y_acc) + ", corr_acc=" + std::to_string(o.corr_acc) +
      ", pose_err=" + std::to_string(o.pose_error) +
      "); grow the oracle or simplify the benchmark");
}

// ---------------------------------------------------------------------------
// Protocol metrics.
// ---------------------------------------------------------------------------

struct LeakageResult {
  double accuracy = 0;
  double chance = 0;
  bool coverage_ok = true;
};

// Trains a fresh conv classifier to predict the SOURCE label from translated
// images; held-out accuracy near chance means the source does not leak.
template <typename T>
LeakageResult source_leakage_accuracy(
    const Tensor<T>& translations, const std::vector<std::size_t>& source_labels,
    const std::vector<std::size_t>& target_labels, std::size_t k, Rng& rng,
    const ConvFitOptions& opt_in = {}) {
  LeakageResult res;
  res.chance = 1.0 / double(k);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (std::size_t i = 0; i < source_labels.size(); ++i)
    if (i < target_labels.size() && source_labels[i] != target_labels[i])
      seen.insert({source_labels[i], target_labels[i]});
  res.coverage_ok = seen.size() == k * (k - 1);

  ConvFitOptions opt = opt_in;
  auto [net, acc] =
      fit_conv_classifier(translations, source_labels, k, rng, opt);
  res.accuracy = acc;
  return res;
}

struct DeskFidResult {
  std::vector<double> per_class;
  double mean = 0;
  std::vector<bool> small_sample_flag;
};

// Conditional Frechet score over frozen oracle features: per target class,
// the distance between real images of that class and translations into it.
template <typename T>
DeskFidResult desk_fid(const Tensor<T>& real_images,
                       const std::vector<std::size_t>& real_labels,
                       const Tensor<T>& generated_images,
                       const std::vector<std::size_t>& generated_target_labels,
                       OracleSet<T>& oracles, std::size_t k) {
  DeskFidResult res;
  Tensor<T> real_feats = oracles.features(real_images);
  Tensor<T> gen_feats = oracles.features(generated_images);
  const std::size_t d = real_feats.dim(1);

  for (std::size_t cls = 0; cls < k; ++cls) {
    auto rows_of = [&](const std::vector<std::size_t>& labels) {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == cls) rows.push_back(i);
      return rows;
    };
    const auto r_rows = rows_of(real_labels);
    const auto g_rows = rows_of(generated_target_labels);
    if (r_rows.size() < 2 || g_rows.size() < 2)
      throw std::invalid_argument("desk_fid: class " + std::to_string(cls) +
                                  " has fewer than 2 samples");
    auto gather = [&](const Tensor<T>& feats,
                      const std::vector<std::size_t>& rows) {
      Tensor<T> out({rows.size(), d});
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < d; ++j)
          out.at2(i, j) = feats.at2(rows[i], j);
      return out;
    };
    res.per_class.push_back(
        frechet_distance(gather(real_feats, r_rows), gather(gen_feats, g_rows)));
    res.small_sample_flag.push_back(r_rows.size() < 2 * d ||
                                    g_rows.size() < 2 * d);
  }
  for (double v : res.per_class) res.mean += v;
  res.mean /= double(res.per_class.size());
  return res;
}

struct DiversityResult {
  double score = 0;
  std::size_t skipped_singletons = 0;
};

// Mean pairwise feature distance among translations of the same source,
// averaged over sources. Sets with fewer than two translations are skipped.
template <typename T>
DiversityResult diversity_score(const std::vector<Tensor<T>>& translation_sets,
                                OracleSet<T>& oracles) {
  DiversityResult res;
  double total = 0;
  std::size_t counted = 0;
  for (const Tensor<T>& set : translation_sets) {
    const std::size_t n = set.dim(0);
    if (n < 2) {
      ++res.skipped_singletons;
      continue;
    }
    Tensor<T> feats = oracles.features(set);
    const std::size_t d = feats.dim(1);
    double acc = 0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        double dist = 0;
        for (std::size_t c = 0; c < d; ++c) {
          const double delta = double(feats.at2(i, c)) - double(feats.at2(j, c));
          dist += delta * delta;
        }
        acc += std::sqrt(dist);
        ++pairs;
      }
    total += acc / double(pairs);
    ++counted;
  }
  res.score = counted > 0 ? total / double(counted) : 0.0;
  return res;
}

// ---------------------------------------------------------------------------
// The aggregate report.
// ---------------------------------------------------------------------------

struct FactorTransfer {
  double pose_err = 0;          // oracle pose error on translations
  double pose_err_recon = 0;    // same oracle on reconstructions
  double y_acc = 0;             // reference y recovered by the oracle
  double corr_acc = 0;          // reference corr recovered by the oracle
};

struct EvalReport {
  std::optional<double> probe_acc_y_from_u;
  std::optional<double> pose_regression_err;  // normalized, 1.0 = uninformative
  std::optional<double> pose_regression_r2;
  std::optional<double> leakage_acc;
  std::vector<double> frechet_by_domain;
  std::optional<double> frechet_mean;
  std::optional<double> diversity;
  std::optional<FactorTransfer> factor_transfer;
  double chance_level = 0;
};

}  // namespace overlord::eval

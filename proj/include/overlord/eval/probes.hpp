#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <set>
#include <stdexcept>
#include <vector>

#include "overlord/ad/nn_ops.hpp"
#include "overlord/core/rng.hpp"
#include "overlord/nets/nets.hpp"
#include "overlord/train/adam.hpp"

namespace overlord::eval {

// Fixed-recipe two-layer MLP probe: one hidden layer of width 128, 200
// epochs of Adam. The recipe is frozen so probe accuracies are comparable
// across runs; it is a measurement instrument, not a tunable model.
struct ProbeRecipe {
  std::size_t hidden = 128;
  std::size_t epochs = 200;
  std::size_t batch_size = 128;
  double lr = 1e-3;
};

template <typename T>
struct Probe {
  Tensor<T> w1, b1, w2, b2;
  std::size_t in_dim = 0, classes = 0;

  // Logits for a batch of codes.
  Tensor<T> logits(const Tensor<T>& codes) const {
    ad::Tape<T> t;
    Tensor<T> x = codes;
    Tensor<T> cw1 = w1, cb1 = b1, cw2 = w2, cb2 = b2;
    auto* h = ad::dense(t, t.constant(std::move(x)),
                        t.constant(std::move(cw1)), t.constant(std::move(cb1)));
    h = ad::leaky_relu(t, h, T(0.2));
    auto* out = ad::dense(t, h, t.constant(std::move(cw2)),
                          t.constant(std::move(cb2)));
    return out->value;
  }

  std::vector<std::size_t> predict(const Tensor<T>& codes) const {
    Tensor<T> lg = logits(codes);
    std::vector<std::size_t> out(codes.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < classes; ++k)
        if (lg.at2(i, k) > lg.at2(i, best)) best = k;
      out[i] = best;
    }
    return out;
  }
};

template <typename T>
double accuracy(const std::vector<std::size_t>& pred,
                const std::vector<std::size_t>& truth) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == truth[i]) ++hit;
  return double(hit) / double(pred.size());
}

// Trains the probe on a split and reports held-out accuracy.
template <typename T>
std::pair<Probe<T>, double> train_probe(const Tensor<T>& codes,
                                        const std::vector<std::size_t>& labels,
                                        double held_out_frac, Rng& rng,
                                        const ProbeRecipe& recipe = {}) {
  const std::size_t n = codes.dim(0), d = codes.dim(1);
  if (labels.size() != n)
    throw std::invalid_argument("train_probe: label count mismatch");
  std::set<std::size_t> classes(labels.begin(), labels.end());
  if (classes.size() < 2)
    throw std::invalid_argument("train_probe: needs at least two classes");
  const std::size_t k = *std::max_element(labels.begin(), labels.end()) + 1;
  if (n < 10 * k)
    throw std::invalid_argument("train_probe: needs at least 10 samples per class");

  const auto perm = rng.permutation(n);
  const std::size_t n_train =
      n - std::size_t(double(n) * held_out_frac);

  Probe<T> probe;
  probe.in_dim = d;
  probe.classes = k;
  probe.w1 = nets::init::he_normal<T>(rng, {d, recipe.hidden}, d);
  probe.b1 = Tensor<T>({recipe.hidden});
  probe.w2 = nets::init::lecun_normal<T>(rng, {recipe.hidden, k}, recipe.hidden);
  probe.b2 = Tensor<T>({k});

  train::AdamConfig adam_cfg;
  adam_cfg.lr = recipe.lr;
  train::AdamState<T> s1, s2, s3, s4;

  for (std::size_t epoch = 0; epoch < recipe.epochs; ++epoch) {
    const auto order = rng.permutation(n_train);
    for (std::size_t start = 0; start < n_train; start += recipe.batch_size) {
      const std::size_t b = std::min(recipe.batch_size, n_train - start);
      Tensor<T> x({b, d});
      std::vector<std::size_t> y(b);
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t src = perm[order[start + i]];
        for (std::size_t j = 0; j < d; ++j) x.at2(i, j) = codes.at2(src, j);
        y[i] = labels[src];
      }
      ad::Tape<T> t;
      auto* w1 = t.leaf(probe.w1);
      auto* b1 = t.leaf(probe.b1);
      auto* w2 = t.leaf(probe.w2);
      auto* b2 = t.leaf(probe.b2);
      auto* h = ad::dense(t, t.constant(std::move(x)), w1, b1);
      h = ad::leaky_relu(t, h, T(0.2));
      auto* logits = ad::dense(t, h, w2, b2);
      auto* loss = ad::softmax_cross_entropy(t, logits, y);
      t.backward(loss);
      train::adam_step(probe.w1, w1->grad, s1, adam_cfg);
      train::adam_step(probe.b1, b1->grad, s2, adam_cfg);
      train::adam_step(probe.w2, w2->grad, s3, adam_cfg);
      train::adam_step(probe.b2, b2->grad, s4, adam_cfg);
    }
  }

  // Held-out evaluation.
  const std::size_t n_test = n - n_train;
  double acc = 0.0;
  if (n_test > 0) {
    Tensor<T> x({n_test, d});
    std::vector<std::size_t> y(n_test);
    for (std::size_t i = 0; i < n_test; ++i) {
      const std::size_t src = perm[n_train + i];
      for (std::size_t j = 0; j < d; ++j) x.at2(i, j) = codes.at2(src, j);
      y[i] = labels[src];
    }
    acc = accuracy<T>(probe.predict(x), y);
  }
  return {std::move(probe), acc};
}

// Least-squares linear regression from codes to pose, reported as RMSE
// normalized by the per-component std of the targets (1.0 = uninformative).
// In-sample by design: the code dimension is tiny next to the sample count,
// and constant codes then give exactly 1.0 (the regressor predicts the mean).
template <typename T>
double pose_regression_probe(const Tensor<T>& codes,
                             const Tensor<T>& pose_gt) {
  const std::size_t n = codes.dim(0), d = codes.dim(1), p = pose_gt.dim(1);
  if (pose_gt.dim(0) != n)
    throw std::invalid_argument("pose_regression_probe: row count mismatch");

  using Mat = Eigen::MatrixXd;
  using Vec = Eigen::VectorXd;
  Mat x(n, d), y(n, p);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) x(i, j) = double(codes.at2(i, j));
    for (std::size_t j = 0; j < p; ++j) y(i, j) = double(pose_gt.at2(i, j));
  }
  const Vec x_mean = x.colwise().mean();
  const Vec y_mean = y.colwise().mean();
  x.rowwise() -= x_mean.transpose();
  y.rowwise() -= y_mean.transpose();
  // SVD solve: rank-deficient codes (e.g. constant columns) cleanly fall
  // back to predicting the mean.
  Eigen::BDCSVD<Mat> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Mat beta = svd.solve(y);
  const Mat resid = y - x * beta;  // both already centered

  double total = 0;
  for (std::size_t j = 0; j < p; ++j) {
    const double var = y.col(j).squaredNorm() / double(n);
    const double se = resid.col(j).squaredNorm() / double(n);
    total += var > 0 ? std::sqrt(se / var) : 0.0;
  }
  return total / double(p);
}

}  // namespace overlord::eval

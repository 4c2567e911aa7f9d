#pragma once

#include <Eigen/Dense>

#include <stdexcept>

#include "overlord/core/tensor.hpp"

namespace overlord::eval {

// Frechet distance between two Gaussians given exact moments:
//   ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).
// The matrix square root is taken via the symmetrized product
// S_a^{1/2} S_b S_a^{1/2}, whose eigendecomposition is stable for PSD
// inputs; tiny negative eigenvalues from roundoff are clamped to zero.
inline double frechet_from_moments(const Eigen::VectorXd& mu_a,
                                   const Eigen::MatrixXd& cov_a,
                                   const Eigen::VectorXd& mu_b,
                                   const Eigen::MatrixXd& cov_b) {
  if (mu_a.size() != mu_b.size() || cov_a.rows() != cov_b.rows())
    throw std::invalid_argument("frechet: dimension mismatch");
  const double mean_term = (mu_a - mu_b).squaredNorm();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_a(cov_a);
  Eigen::VectorXd eva = es_a.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd sqrt_a =
      es_a.eigenvectors() * eva.asDiagonal() * es_a.eigenvectors().transpose();

  const Eigen::MatrixXd inner = sqrt_a * cov_b * sqrt_a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_i(
      0.5 * (inner + inner.transpose()));
  const double tr_sqrt = es_i.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  return mean_term + cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
}

// Empirical moments of a feature set (unbiased covariance, plus a small
// ridge for small-sample stability).
template <typename T>
void feature_moments(const Tensor<T>& feats, Eigen::VectorXd& mu,
                     Eigen::MatrixXd& cov, double ridge = 1e-6) {
  const std::size_t n = feats.dim(0), d = feats.dim(1);
  if (n < 2) throw std::invalid_argument("feature_moments: needs >= 2 rows");
  Eigen::MatrixXd x(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x(i, j) = double(feats.at2(i, j));
  mu = x.colwise().mean();
  x.rowwise() -= mu.transpose();
  cov = x.transpose() * x / double(n - 1);
  cov += ridge * Eigen::MatrixXd::Identity(d, d);
}

template <typename T>
double frechet_distance(const Tensor<T>& feats_a, const Tensor<T>& feats_b) {
  if (feats_a.dim(1) != feats_b.dim(1))
    throw std::invalid_argument("frechet_distance: feature dim mismatch");
  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd cov_a, cov_b;
  feature_moments(feats_a, mu_a, cov_a);
  feature_moments(feats_b, mu_b, cov_b);
  return frechet_from_moments(mu_a, cov_a, mu_b, cov_b);
}

}  // namespace overlord::eval

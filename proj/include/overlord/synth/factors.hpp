#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "overlord/core/rng.hpp"

namespace overlord::synth {

// Ground-truth generative factors of one sample: labeled attribute y,
// correlated pattern id, and the uncorrelated pose.
struct FactorTuple {
  std::size_t y = 0;     // [0, K)
  std::size_t corr = 0;  // [0, M)
  double dx = 0, dy = 0; // [-1, 1]
  double theta = 0;      // [0, 2*pi)
  double scale = 1.0;    // [0.5, 1.0]
};

struct PoseIntervals {
  double dx_min = -0.45, dx_max = 0.45;
  double dy_min = -0.45, dy_max = 0.45;
  double theta_min = 0.0, theta_max = 2.0 * M_PI;
  double scale_min = 0.55, scale_max = 0.95;
};

// Correlation structure between the labeled attribute and the pattern id.
// The pose distribution is shared by all classes, so pose is independent of
// y by construction.
struct CorrelationSpec {
  std::size_t k = 3;
  std::size_t m = 6;
  std::vector<std::vector<std::size_t>> allowed;  // per-class permitted corr
  PoseIntervals pose;

  void validate() const {
    if (k < 1 || m < 1 || allowed.size() != k)
      throw std::invalid_argument("CorrelationSpec: bad class/pattern counts");
    std::vector<bool> covered(m, false);
    for (const auto& set : allowed) {
      if (set.empty())
        throw std::invalid_argument("CorrelationSpec: empty allowed set");
      for (std::size_t c : set) {
        if (c >= m)
          throw std::invalid_argument("CorrelationSpec: corr id out of range");
        covered[c] = true;
      }
    }
    for (bool c : covered)
      if (!c)
        throw std::invalid_argument(
            "CorrelationSpec: allowed sets do not cover all corr values");
    if (pose.dx_min < -1 || pose.dx_max > 1 || pose.dy_min < -1 ||
        pose.dy_max > 1 || pose.scale_min < 0.5 || pose.scale_max > 1.0)
      throw std::invalid_argument("CorrelationSpec: pose intervals out of range");
  }

  // K=3 classes, two disjoint patterns each: the desk-scale analog of a
  // three-domain dataset whose within-domain appearance varies.
  static CorrelationSpec default_benchmark() {
    CorrelationSpec s;
    s.k = 3;
    s.m = 6;
    s.allowed = {{0, 1}, {2, 3}, {4, 5}};
    return s;
  }

  bool is_corr_allowed(std::size_t y, std::size_t corr) const {
    for (std::size_t c : allowed[y])
      if (c == corr) return true;
    return false;
  }
};

// y uniform over classes, corr uniform over allowed[y], pose independent of
// both. Draw order is fixed (y, corr, dx, dy, theta, scale) so seeded
// sequences are reproducible.
inline FactorTuple sample_factors(Rng& rng, const CorrelationSpec& spec) {
  FactorTuple f;
  f.y = rng.below(spec.k);
  const auto& opts = spec.allowed[f.y];
  f.corr = opts[rng.below(opts.size())];
  f.dx = rng.uniform(spec.pose.dx_min, spec.pose.dx_max);
  f.dy = rng.uniform(spec.pose.dy_min, spec.pose.dy_max);
  f.theta = rng.uniform(spec.pose.theta_min, spec.pose.theta_max);
  f.scale = rng.uniform(spec.pose.scale_min, spec.pose.scale_max);
  return f;
}

// Pose as a regression target: theta enters as (cos, sin) to avoid the
// wrap-around discontinuity.
inline std::vector<double> pose_vector(const FactorTuple& f) {
  return {f.dx, f.dy, std::cos(f.theta), std::sin(f.theta), f.scale};
}
inline constexpr std::size_t kPoseDim = 5;

}  // namespace overlord::synth

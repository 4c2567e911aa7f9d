#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>

#include "overlord/core/tensor.hpp"

namespace overlord {

// Deterministic RNG. The engine is std::mt19937_64 (fully specified by the
// standard); the uniform/normal mappings are implemented here instead of
// relying on std distributions, whose algorithms are implementation-defined.
// Reproducibility contract: a given (seed, stream) pair and draw sequence
// yields the same values on every run.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Derives an independent stream from a base seed and a stream tag.
  static Rng stream(std::uint64_t seed, std::uint64_t tag) {
    return Rng(splitmix64(seed ^ splitmix64(tag + 0x9e3779b97f4a7c15ULL)));
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return double(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller; caches the second deviate.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void fill_normal(Tensor<T>& t, double mean, double std) {
    for (std::size_t i = 0; i < t.numel(); ++i)
      t[i] = static_cast<T>(normal(mean, std));
  }

  // Fisher-Yates permutation of [0, n).
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = below(i);
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Stable stream tags; keeping them in one place avoids accidental collisions.
namespace rng_tag {
inline constexpr std::uint64_t kDataset = 1;
inline constexpr std::uint64_t kBankInit = 2;
inline constexpr std::uint64_t kModelInit = 3;
inline constexpr std::uint64_t kNoise = 4;
inline constexpr std::uint64_t kTransform = 5;
inline constexpr std::uint64_t kBatchOrder = 6;
inline constexpr std::uint64_t kProbe = 7;
inline constexpr std::uint64_t kEval = 8;
inline constexpr std::uint64_t kOracle = 9;
}  // namespace rng_tag

}  // namespace overlord

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "overlord/latent/bank.hpp"
#include "support/gradcheck.hpp"

using namespace overlord;
using namespace overlord::latent;

TEST_CASE("bank initialization", "[bank]") {
  SECTION("init_std=0 gives an all-zero bank") {
    Rng rng(1);
    auto bank = init_bank<float>(4, 3, 2, 5, rng, 0.0);
    for (std::size_t i = 0; i < bank.u_prime.numel(); ++i)
      REQUIRE(bank.u_prime[i] == 0.0f);
    for (std::size_t i = 0; i < bank.y_embed.numel(); ++i)
      REQUIRE(bank.y_embed[i] == 0.0f);
  }

  SECTION("moments of a large bank match the sampling distribution") {
    Rng rng(2);
    auto bank = init_bank<double>(10000, 64, 3, 8, rng, 1.0);
    double sum = 0, sq = 0;
    const std::size_t n = bank.u_prime.numel();
    for (std::size_t i = 0; i < n; ++i) {
      sum += bank.u_prime[i];
      sq += bank.u_prime[i] * bank.u_prime[i];
    }
    const double mean = sum / double(n);
    const double std = std::sqrt(sq / double(n) - mean * mean);
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(std - 1.0) < 0.02);
  }

  SECTION("bad dimensions are rejected") {
    Rng rng(3);
    CHECK_THROWS_AS(init_bank<float>(0, 4, 2, 4, rng, 0.1),
                    std::invalid_argument);
  }
}

TEST_CASE("noisy bottleneck", "[bank]") {
  SECTION("noise_std=0 is the identity") {
    Rng rng(4);
    Tensor<float> u({5, 3});
    rng.fill_normal(u, 0, 1);
    auto out = noisy_bottleneck(u, rng, 0.0);
    REQUIRE(bitwise_equal(u, out));
  }

  SECTION("Monte-Carlo moments of the added noise") {
    Rng rng(5);
    const std::size_t draws = 10000, d = 4;
    Tensor<double> u({1, d});  // u' fixed at zero
    std::vector<double> sum(d, 0), sq(d, 0);
    for (std::size_t i = 0; i < draws; ++i) {
      auto out = noisy_bottleneck(u, rng, 1.0);
      for (std::size_t j = 0; j < d; ++j) {
        sum[j] += out[j];
        sq[j] += out[j] * out[j];
      }
    }
    for (std::size_t j = 0; j < d; ++j) {
      const double mean = sum[j] / draws;
      const double std = std::sqrt(sq[j] / draws - mean * mean);
      CHECK(std::abs(mean) < 0.03);       // mean of (u - u') per coordinate
      CHECK(std::abs(std - 1.0) < 0.03);  // std per coordinate
    }
  }

  SECTION("negative noise_std is rejected") {
    Rng rng(6);
    Tensor<float> u({2, 2});
    CHECK_THROWS_AS(noisy_bottleneck(u, rng, -0.5), std::invalid_argument);
  }
}

TEST_CASE("bottleneck penalty arithmetic", "[bank]") {
  SECTION("all-zero batch gives 0") {
    Tensor<double> u({3, 4});
    CHECK(bottleneck_penalty(u) == 0.0);
  }
  SECTION("single row [3,4] gives 25") {
    Tensor<double> u({1, 2});
    u[0] = 3;
    u[1] = 4;
    CHECK(bottleneck_penalty(u) == Catch::Approx(25.0));
  }
  SECTION("rows [1,1],[2,0] give (2+4)/2 = 3 under the batch-mean convention") {
    Tensor<double> u({2, 2});
    u[0] = 1;
    u[1] = 1;
    u[2] = 2;
    u[3] = 0;
    CHECK(bottleneck_penalty(u) == Catch::Approx(3.0));
  }
  SECTION("nonnegative; zero only for the all-zero batch") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
      Tensor<double> u({4, 3});
      rng.fill_normal(u, 0, 0.5);
      const double p = bottleneck_penalty(u);
      REQUIRE(p >= 0.0);
      bool all_zero = true;
      for (std::size_t i = 0; i < u.numel(); ++i)
        all_zero = all_zero && u[i] == 0.0;
      REQUIRE((p > 0.0) != all_zero);
    }
  }
}

TEST_CASE("penalty gradient is 2u'/B (finite differences)", "[bank]") {
  Rng rng(8);
  Tensor<double> u({3, 5});
  rng.fill_normal(u, 0, 1);

  ad::Tape<double> tape;
  auto* leaf = tape.leaf(u);
  tape.backward(bottleneck_penalty(tape, leaf));

  for (std::size_t i = 0; i < u.numel(); ++i) {
    const double analytic = leaf->grad[i];
    const double expect = 2.0 * u[i] / 3.0;
    REQUIRE(analytic == Catch::Approx(expect).epsilon(1e-12));
  }

  auto eval = [&] {
    ad::Tape<double> t;
    return bottleneck_penalty(t, t.leaf(u))->value[0];
  };
  auto res = testsup::check_gradients({&u}, {leaf->grad}, eval);
  INFO(res.worst);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("bank checkpoint round-trips bitwise", "[bank]") {
  namespace fs = std::filesystem;
  Rng rng(9);
  auto bank = init_bank<float>(17, 6, 3, 4, rng, 0.05);
  const auto path = fs::temp_directory_path() / "ovl_test_bank.ovlb";
  save_bank(path.string(), bank);
  auto back = load_bank<float>(path.string());
  REQUIRE(bitwise_equal(bank.u_prime, back.u_prime));
  REQUIRE(bitwise_equal(bank.y_embed, back.y_embed));
  fs::remove(path);
}

TEST_CASE("label embedding lookup", "[bank]") {
  Rng rng(10);
  auto bank = init_bank<float>(4, 2, 3, 5, rng, 0.1);

  SECTION("same label returns the shared row") {
    auto a = label_embedding(bank, 1);
    auto b = label_embedding(bank, 1);
    REQUIRE(bitwise_equal(a, b));
    for (std::size_t j = 0; j < 5; ++j)
      REQUIRE(a[j] == bank.y_embed.at2(1, j));
  }
  SECTION("zero-init table returns the zero vector") {
    Rng r2(11);
    auto zbank = init_bank<float>(4, 2, 3, 5, r2, 0.0);
    auto v = label_embedding(zbank, 2);
    for (std::size_t j = 0; j < 5; ++j) REQUIRE(v[j] == 0.0f);
  }
  SECTION("out-of-range label is an error") {
    CHECK_THROWS_AS(label_embedding(bank, 3), std::out_of_range);
  }
}

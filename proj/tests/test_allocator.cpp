#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "pbr/allocator.hpp"
#include "pbr/common.hpp"
#include "pbr/random.hpp"

using namespace pbr;
using Catch::Approx;

namespace {

std::vector<double> random_probs(Rng& rng, std::size_t R) {
  std::vector<double> p(R);
  for (auto& v : p) v = uniform(rng, 0.0, 1.0);
  const double s = std::accumulate(p.begin(), p.end(), 0.0);
  for (auto& v : p) v /= s;
  return p;
}

}  // namespace

TEST_CASE("allocator: gamma sum", "[allocator]") {
  const std::vector<double> p{0.5, 0.3, 0.2};
  const auto g = gamma_sum(p);
  for (std::size_t i = 0; i < 3; ++i) REQUIRE(g[i] == Approx(p[i]).margin(1e-15));
  REQUIRE(gamma_sum(std::vector<double>{2, 2}) == std::vector<double>{0.5, 0.5});

  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> q(1 + t % 9);
    for (auto& v : q) v = uniform(rng, 0, 5);
    const auto s = gamma_sum(q);
    REQUIRE(std::accumulate(s.begin(), s.end(), 0.0) == Approx(1.0).margin(1e-9));
  }

  bool degenerate = false;
  const auto u = gamma_sum(std::vector<double>{0, 0, 0, 0}, &degenerate);
  REQUIRE(degenerate);
  for (double v : u) REQUIRE(v == 0.25);
}

TEST_CASE("allocator: gamma std", "[allocator]") {
  REQUIRE(gamma_std(std::vector<double>{0.3, 0.3, 0.3}) == std::vector<double>{0, 0, 0});
  const auto g = gamma_std(std::vector<double>{0, 1});
  REQUIRE(g[0] == Approx(-1.0).margin(1e-15));
  REQUIRE(g[1] == Approx(1.0).margin(1e-15));
  REQUIRE_THROWS_AS(gamma_std(std::vector<double>{0.4}), ParameterError);

  const auto z = gamma_std(std::vector<double>{0.1, 0.5, 0.2, 0.15, 0.05});
  const double mean = std::accumulate(z.begin(), z.end(), 0.0) / 5.0;
  double var = 0.0;
  for (double v : z) var += (v - mean) * (v - mean) / 5.0;
  REQUIRE(mean == Approx(0.0).margin(1e-9));
  REQUIRE(std::sqrt(var) == Approx(1.0).margin(1e-9));
}

TEST_CASE("allocator: gamma exp", "[allocator]") {
  const auto g = gamma_exp(std::vector<double>{0.8, 0.2});
  REQUIRE(g[0] == Approx(std::exp(-0.4)).margin(1e-12));
  REQUIRE(g[1] == Approx(std::exp(-1.6)).margin(1e-12));
  REQUIRE(g[0] == Approx(0.6703).margin(1e-4));
  REQUIRE(g[1] == Approx(0.2019).margin(1e-4));

  REQUIRE(gamma_exp(std::vector<double>{1.0, 0.0, 0.0})[0] == Approx(1.0).margin(1e-15));
  const auto flat = gamma_exp(std::vector<double>{0.25, 0.25, 0.25, 0.25});
  for (double v : flat) REQUIRE(v == flat[0]);

  bool degenerate = false;
  const auto hot = gamma_exp(std::vector<double>{1.0}, &degenerate);
  REQUIRE(degenerate);
  REQUIRE(hot == std::vector<double>{1.0});
  const auto hot2 = gamma_exp(std::vector<double>{1.0, 1.0}, &degenerate);
  REQUIRE(degenerate);
  REQUIRE(hot2 == std::vector<double>{1.0, 0.0});
}

TEST_CASE("allocator: hand-evaluated quotas", "[allocator]") {
  REQUIRE(allocate(std::vector<double>{0.6}, Gamma::kSum, 7, 16) == std::vector<std::size_t>{7});
  REQUIRE(allocate(std::vector<double>{0.6}, Gamma::kStd, 70, 16) == std::vector<std::size_t>{16});
  REQUIRE(allocate(std::vector<double>{0.75, 0.25}, Gamma::kSum, 8, 16) == std::vector<std::size_t>{6, 2});
  REQUIRE(allocate(std::vector<double>{0.9, 0.1}, Gamma::kSum, 100, 16) == std::vector<std::size_t>{16, 10});
  REQUIRE(allocate(std::vector<double>{0.9, 0.1, 0.0}, Gamma::kNone, 10, 16) == std::vector<std::size_t>{3, 3, 3});
  // Half rounds away from zero.
  REQUIRE(allocate(std::vector<double>{0.5, 0.5}, Gamma::kNone, 5, 16) == std::vector<std::size_t>{3, 3});
  // gamma std clamps negatives.
  REQUIRE(allocate(std::vector<double>{0.0, 1.0}, Gamma::kStd, 10, 16) == std::vector<std::size_t>{0, 10});
}

TEST_CASE("allocator: degenerate inputs fall back to even quotas", "[allocator]") {
  bool degenerate = false;
  const auto q = allocate(std::vector<double>{0.2, 0.2, 0.2}, Gamma::kStd, 9, 16, &degenerate);
  REQUIRE(degenerate);
  REQUIRE(q == std::vector<std::size_t>{3, 3, 3});
  REQUIRE_THROWS_AS(allocate(std::vector<double>{0.5}, Gamma::kSum, 0, 16), ParameterError);
  REQUIRE_THROWS_AS(allocate(std::vector<double>{}, Gamma::kSum, 4, 16), ParameterError);
}

TEST_CASE("allocator: quota invariants", "[allocator]") {
  Rng rng(12);
  for (int t = 0; t < 2000; ++t) {
    const std::size_t R = 1 + uniform_index(rng, 12);
    const std::size_t T = 1 + uniform_index(rng, 200);
    const std::size_t N = 1 + uniform_index(rng, 64);
    const auto p = random_probs(rng, R);
    for (auto gamma : {Gamma::kNone, Gamma::kSum, Gamma::kStd, Gamma::kExp}) {
      const auto q = allocate(p, gamma, T, N);
      REQUIRE(q.size() == R);
      const auto total = std::accumulate(q.begin(), q.end(), std::size_t{0});
      REQUIRE(total <= T + R);
      for (auto s : q) REQUIRE(s <= N);
      if (gamma == Gamma::kSum || gamma == Gamma::kExp) {
        for (std::size_t a = 0; a < R; ++a)
          for (std::size_t b = 0; b < R; ++b)
            if (p[a] >= p[b]) REQUIRE(q[a] >= q[b]);
      }
      if (gamma == Gamma::kStd && R >= 2) {
        const auto g = gamma_std(p);
        for (std::size_t a = 0; a < R; ++a)
          for (std::size_t b = 0; b < R; ++b)
            if (g[a] > 0 && g[b] > 0 && p[a] >= p[b]) REQUIRE(q[a] >= q[b]);
      }
    }
    // Scale consistency of gamma sum.
    std::vector<double> scaled = p;
    for (auto& v : scaled) v *= 7.5;
    REQUIRE(allocate(scaled, Gamma::kSum, T, N) == allocate(p, Gamma::kSum, T, N));
  }
}

TEST_CASE("allocator: tag strings", "[allocator]") {
  for (auto g : {Gamma::kNone, Gamma::kSum, Gamma::kStd, Gamma::kExp}) REQUIRE(parse_gamma(to_string(g)) == g);
  REQUIRE_THROWS_AS(parse_gamma("median"), ConfigError);
}

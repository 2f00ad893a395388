#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <stabkit/rng.hpp>
#include <stabkit/transport.hpp>

#include "support/dense_transport_oracle.hpp"

using namespace stabkit;
using stabkit_test::dense_transport_oracle;

namespace {

Tensor random_map(int h, int w, Rng& rng, double density = 0.6) {
  Tensor a = Tensor::zeros({h, w});
  for (std::int64_t i = 0; i < a.size(); ++i)
    if (rng.uniform() < density) a.data()[i] = rng.uniform(-1.0, 1.0);
  return a;
}

}  // namespace

TEST_CASE("prune_edges geometry") {
  SUBCASE("gamma=0.4: no pixel pair is close enough") {
    CHECK(prune_edges(4, 4, 0.4).empty());
  }
  SUBCASE("gamma=0.5: exactly the 4-neighbor pairs") {
    auto edges = prune_edges(5, 7, 0.5);
    CHECK(static_cast<int>(edges.size()) == 5 * 6 + 7 * 4);  // h*(w-1) + w*(h-1)
    for (const auto& e : edges) CHECK(e.distance == doctest::Approx(1.0));
  }
  SUBCASE("8x8 grid, gamma=2: count equals brute-force enumeration") {
    auto edges = prune_edges(8, 8, 2.0);
    int expect = 0;
    for (int i = 0; i < 64; ++i)
      for (int j = i + 1; j < 64; ++j) {
        double dy = i / 8 - j / 8, dx = i % 8 - j % 8;
        if (std::sqrt(dy * dy + dx * dx) <= 4.0) ++expect;
      }
    CHECK(static_cast<int>(edges.size()) == expect);
    for (const auto& e : edges) CHECK(e.distance <= 4.0 + 1e-12);
  }
  SUBCASE("gamma must be positive") {
    CHECK_THROWS_AS(prune_edges(4, 4, 0.0), std::invalid_argument);
  }
}

TEST_CASE("transport_distance analytic cases") {
  SUBCASE("zero map costs nothing") {
    auto [cost, sol] = transport_distance(Tensor::zeros({4, 4}), 1.0);
    CHECK(cost == 0.0);
    CHECK(sol.certified);
  }
  SUBCASE("single positive pixel: destroy only, cost 5*gamma") {
    for (double gamma : {0.5, 1.0, 2.5}) {
      Tensor a = Tensor::zeros({4, 4});
      a.data()[5] = 5.0;
      auto [cost, sol] = transport_distance(a, gamma);
      CHECK(cost == doctest::Approx(5.0 * gamma));
      CHECK(sol.consumed[5] == doctest::Approx(5.0));
      CHECK(sol.moved.empty());
    }
  }
  SUBCASE("unit dipole: min(distance, 2*gamma), both sides of the threshold") {
    Tensor a = Tensor::zeros({1, 8});
    a.data()[0] = 1.0;
    a.data()[5] = -1.0;  // distance 5
    // moving wins: 2*gamma = 6 > 5
    auto [cost_move, sol_move] = transport_distance(a, 3.0);
    CHECK(cost_move == doctest::Approx(5.0));
    CHECK(sol_move.moved.size() == 1);
    // destroy + create wins: 2*gamma = 4 < 5 (the edge is pruned entirely)
    auto [cost_dc, sol_dc] = transport_distance(a, 2.0);
    CHECK(cost_dc == doctest::Approx(4.0));
    CHECK(sol_dc.moved.empty());
    CHECK(sol_dc.consumed[0] == doctest::Approx(1.0));
    CHECK(sol_dc.produced[5] == doctest::Approx(1.0));
  }
  SUBCASE("non-finite input rejected") {
    Tensor a = Tensor::zeros({2, 2});
    a.data()[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(transport_distance(a, 1.0), std::invalid_argument);
  }
}

TEST_CASE("pruned solution matches the dense LP oracle") {
  Rng rng(31);
  for (double gamma : {0.8, 1.5, 3.0}) {
    for (int trial = 0; trial < 6; ++trial) {
      Tensor a = random_map(4, 4, rng);
      auto [cost, sol] = transport_distance(a, gamma);
      double oracle = dense_transport_oracle(a, gamma);
      CHECK(cost == doctest::Approx(oracle).epsilon(1e-9));
      CHECK(std::abs(cost - oracle) < 1e-6);
      CHECK(sol.max_conservation_residual < 1e-8);
      CHECK(sol.certified);
    }
  }
}

TEST_CASE("transport metric properties") {
  Rng rng(7);
  SUBCASE("identical inputs give zero") {
    Tensor z = random_map(4, 4, rng, 1.0);
    CHECK(transport_metric(z, z, 1.0) == 0.0);
  }
  SUBCASE("symmetry: both directions solved and compared") {
    for (int trial = 0; trial < 8; ++trial) {
      Tensor z1 = random_map(4, 4, rng, 1.0);
      Tensor z2 = random_map(4, 4, rng, 1.0);
      double ab = transport_metric(z1, z2, 1.2);
      double ba = transport_metric(z2, z1, 1.2);
      CHECK(ab == doctest::Approx(ba).epsilon(1e-9));
    }
  }
  SUBCASE("triangle inequality on 50 random triples") {
    for (int trial = 0; trial < 50; ++trial) {
      Tensor z1 = random_map(3, 4, rng, 1.0);
      Tensor z2 = random_map(3, 4, rng, 1.0);
      Tensor z3 = random_map(3, 4, rng, 1.0);
      double d12 = transport_metric(z1, z2, 1.0);
      double d13 = transport_metric(z1, z3, 1.0);
      double d32 = transport_metric(z3, z2, 1.0);
      CHECK(d12 <= d13 + d32 + 1e-9);
    }
  }
  SUBCASE("shape mismatch rejected") {
    CHECK_THROWS_AS(transport_metric(Tensor::zeros({2, 2}), Tensor::zeros({3, 3}), 1.0),
                    std::invalid_argument);
  }
}

TEST_CASE("cost is homogeneous of degree 1 and bounded by destroy-everything") {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor a = random_map(4, 4, rng);
    double gamma = 1.3;
    double base = transport_distance(a, gamma).first;
    for (double c : {2.0, -3.0, 0.25}) {
      Tensor scaled = Tensor::zeros({4, 4});
      for (std::int64_t i = 0; i < a.size(); ++i) scaled.data()[i] = c * a.data()[i];
      CHECK(transport_distance(scaled, gamma).first ==
            doctest::Approx(std::abs(c) * base).epsilon(1e-9));
    }
    double l1 = 0.0;
    for (std::int64_t i = 0; i < a.size(); ++i) l1 += std::abs(a.data()[i]);
    CHECK(base <= gamma * l1 + 1e-9);
  }
}

TEST_CASE("multi-channel metric sums per-channel distances") {
  Rng rng(13);
  Tensor z1 = Tensor::zeros({2, 3, 3});
  Tensor z2 = Tensor::zeros({2, 3, 3});
  for (std::int64_t i = 0; i < z1.size(); ++i) {
    z1.data()[i] = rng.uniform(0.0, 1.0);
    z2.data()[i] = rng.uniform(0.0, 1.0);
  }
  double whole = transport_metric(z1, z2, 1.0);
  double per = 0.0;
  for (int c = 0; c < 2; ++c) {
    Tensor a = Tensor::zeros({3, 3});
    for (int i = 0; i < 9; ++i) a.data()[i] = z1.data()[c * 9 + i] - z2.data()[c * 9 + i];
    per += transport_distance(a, 1.0).first;
  }
  CHECK(whole == doctest::Approx(per));
}

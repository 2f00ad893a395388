#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include <stabkit/bounds.hpp>

using namespace stabkit;

namespace {

BoundInstance make_instance(Rng& rng, int tau, int d, double lambda, NormKind zeta) {
  return random_instance(rng, tau, d, lambda, zeta);
}

}  // namespace

TEST_CASE("evaluate_u") {
  Rng rng(1);
  BoundInstance inst = make_instance(rng, 4, 2, 0.7, NormKind::l2);

  SUBCASE("prediction equals ground truth: only the stability term survives") {
    double expect = 0.0;
    for (int t = 0; t + 1 < inst.tau(); ++t)
      expect += inst.lambda * point_norm(point_sub(inst.y[t], inst.y[t + 1]), inst.zeta);
    CHECK(evaluate_u(inst, inst.y) == doctest::Approx(expect));
  }
  SUBCASE("collapse: stability term is zero") {
    std::vector<Point> collapse(inst.tau(), inst.y_hat_1);
    double expect = 0.0;
    for (int t = 0; t < inst.tau(); ++t)
      expect += point_norm(point_sub(inst.y_hat_1, inst.y[t]), inst.zeta);
    CHECK(evaluate_u(inst, collapse) == doctest::Approx(expect));
  }
  SUBCASE("random prediction equals the loop oracle") {
    for (auto zeta : {NormKind::l1, NormKind::l2}) {
      inst.zeta = zeta;
      std::vector<Point> yh(inst.tau(), Point(2));
      for (auto& p : yh)
        for (auto& v : p) v = rng.uniform(-1.0, 1.0);
      double oracle = 0.0;
      for (int t = 0; t < inst.tau(); ++t) {
        double n = 0.0;
        for (int k = 0; k < 2; ++k) {
          double dd = yh[t][k] - inst.y[t][k];
          n += zeta == NormKind::l1 ? std::abs(dd) : dd * dd;
        }
        oracle += zeta == NormKind::l1 ? n : std::sqrt(n);
      }
      for (int t = 0; t + 1 < inst.tau(); ++t) {
        double n = 0.0;
        for (int k = 0; k < 2; ++k) {
          double dd = yh[t][k] - yh[t + 1][k];
          n += zeta == NormKind::l1 ? std::abs(dd) : dd * dd;
        }
        oracle += inst.lambda * (zeta == NormKind::l1 ? n : std::sqrt(n));
      }
      CHECK(evaluate_u(inst, yh) == doctest::Approx(oracle));
    }
  }
}

TEST_CASE("minimize_u") {
  Rng rng(2);

  SUBCASE("lambda=0 returns the ground truth exactly") {
    BoundInstance inst = make_instance(rng, 5, 2, 0.0, NormKind::l2);
    auto res = minimize_u(inst, false, 8, 3);
    CHECK(res.solver_ok);
    for (int t = 0; t < inst.tau(); ++t)
      for (int k = 0; k < 2; ++k) CHECK(res.y_hat[t][k] == doctest::Approx(inst.y[t][k]));
  }
  SUBCASE("lambda=0.4 below the oracle bound returns ground truth within 1e-4") {
    for (auto zeta : {NormKind::l1, NormKind::l2}) {
      BoundInstance inst = make_instance(rng, 4, 2, 0.4, zeta);
      auto res = minimize_u(inst, false, 20, 5);
      CHECK(res.solver_ok);
      for (int t = 0; t < inst.tau(); ++t)
        for (int k = 0; k < 2; ++k)
          CHECK(std::abs(res.y_hat[t][k] - inst.y[t][k]) < 1e-4);
    }
  }
  SUBCASE("lambda=tau above the collapse bound returns the repeated first prediction") {
    for (auto zeta : {NormKind::l1, NormKind::l2}) {
      BoundInstance inst = make_instance(rng, 4, 2, 4.0, zeta);
      auto res = minimize_u(inst, true, 20, 7);
      CHECK(res.solver_ok);
      for (int t = 0; t < inst.tau(); ++t)
        for (int k = 0; k < 2; ++k)
          CHECK(std::abs(res.y_hat[t][k] - inst.y_hat_1[k]) < 1e-4);
    }
  }
  SUBCASE("tau < 2 rejected") {
    BoundInstance inst;
    inst.y = {{0.5}};
    CHECK_THROWS_AS(minimize_u(inst, false), std::invalid_argument);
  }
}

TEST_CASE("oracle bound verification") {
  SUBCASE("lambda=0.49 passes on every instance") {
    auto report = verify_oracle_bound(30, 0.49, {2, 6}, {1, 3}, 21);
    CHECK(report.total == 30);
    CHECK(report.pass_fraction() == 1.0);
    CHECK(report.solver_failures == 0);
  }
  SUBCASE("lambda=0 passes trivially") {
    auto report = verify_oracle_bound(10, 0.0, {2, 4}, {1, 2}, 22);
    CHECK(report.pass_fraction() == 1.0);
  }
  SUBCASE("lambda >= 1/2 rejected as a precondition") {
    CHECK_THROWS_AS(verify_oracle_bound(1, 0.5, {2, 3}, {1, 1}), std::invalid_argument);
  }
  SUBCASE("lambda=0.8 tightness: smoothing beats the ground truth on y=(0,1,0)") {
    // 1-D grid oracle over all three free predictions
    BoundInstance inst;
    inst.y = {{0.0}, {1.0}, {0.0}};
    inst.lambda = 0.8;
    inst.zeta = NormKind::l1;
    double u_gt = evaluate_u(inst, inst.y);
    double best = 1e300;
    for (int a = -500; a <= 1500; a += 10)
      for (int b = -500; b <= 1500; b += 10)
        for (int c = -500; c <= 1500; c += 10) {
          std::vector<Point> yh = {{a / 1000.0}, {b / 1000.0}, {c / 1000.0}};
          best = std::min(best, evaluate_u(inst, yh));
        }
    CHECK(best < u_gt - 1e-6);  // the ground truth is NOT the minimizer here
  }
}

TEST_CASE("collapse bound verification") {
  SUBCASE("tau=3, lambda=2.5") {
    auto report = verify_collapse_bound(20, 2.5, 3, 31);
    CHECK(report.pass_fraction() == 1.0);
    CHECK(report.solver_failures == 0);
  }
  SUBCASE("tau=8, lambda=8") {
    auto report = verify_collapse_bound(8, 8.0, 8, 33);
    CHECK(report.pass_fraction() == 1.0);
  }
  SUBCASE("lambda <= tau-1 rejected as a precondition") {
    CHECK_THROWS_AS(verify_collapse_bound(1, 2.0, 3), std::invalid_argument);
  }
  SUBCASE("tau=2, lambda=1.5, 1-D agrees with an exhaustive grid") {
    Rng rng(4);
    BoundInstance inst = make_instance(rng, 2, 1, 1.5, NormKind::l1);
    auto res = minimize_u(inst, true, 10, 9);
    // grid over the single free prediction at resolution 1e-3
    double best = 1e300, arg = 0.0;
    for (int i = -500; i <= 1500; ++i) {
      double v = i / 1000.0;
      std::vector<Point> yh = {inst.y_hat_1, {v}};
      double u = evaluate_u(inst, yh);
      if (u < best) {
        best = u;
        arg = v;
      }
    }
    CHECK(std::abs(arg - inst.y_hat_1[0]) < 1e-3 + 1e-12);
    CHECK(std::abs(res.y_hat[1][0] - inst.y_hat_1[0]) < 1e-4);
    CHECK(res.u <= best + 1e-9);
  }
}

TEST_CASE("convexity of u") {
  Rng rng(6);
  SUBCASE("no violations on 1000 random pairs, both norms") {
    for (auto zeta : {NormKind::l1, NormKind::l2}) {
      BoundInstance inst = make_instance(rng, 4, 2, 0.9, zeta);
      auto report = verify_convexity(inst, 1000, 41);
      CHECK(report.total == 1000);
      CHECK(report.violations == 0);
    }
  }
  SUBCASE("endpoints and r in {0,1} give equality") {
    BoundInstance inst = make_instance(rng, 3, 2, 0.5, NormKind::l2);
    std::vector<Point> yh = inst.y;
    double u = evaluate_u(inst, yh);
    // r=1 combination of (yh, y) with itself is the same evaluation
    CHECK(evaluate_u(inst, yh) == doctest::Approx(u));
  }
}

TEST_CASE("absolute homogeneity: u(c q) = |c| u(q)") {
  Rng rng(8);
  for (auto zeta : {NormKind::l1, NormKind::l2}) {
    BoundInstance inst = make_instance(rng, 4, 3, 0.6, zeta);
    std::vector<Point> yh(inst.tau(), Point(3));
    for (auto& p : yh)
      for (auto& v : p) v = rng.uniform(-1.0, 1.0);
    double u1 = evaluate_u(inst, yh);
    for (double c : {-2.5, 0.3, 7.0}) {
      BoundInstance scaled = inst;
      for (auto& p : scaled.y)
        for (auto& v : p) v *= c;
      std::vector<Point> yhs = yh;
      for (auto& p : yhs)
        for (auto& v : p) v *= c;
      CHECK(evaluate_u(scaled, yhs) == doctest::Approx(std::abs(c) * u1));
    }
  }
}

TEST_CASE("oracle and collapse regimes are mutually exclusive for tau >= 2") {
  for (int tau = 2; tau <= 10; ++tau) CHECK(tau - 1 > 0.5);
}

TEST_CASE("landscape grid") {
  BoundInstance inst;
  inst.y = {{0.2}, {0.7}, {0.4}};
  inst.y_hat_1 = {0.2};
  inst.zeta = NormKind::l1;

  SUBCASE("argmin tracks the regime") {
    auto g0 = landscape_grid(inst, 0.0, 0.0, 1.0, 0.01);
    CHECK(g0.argmin_y2 == doctest::Approx(0.7));
    CHECK(g0.argmin_y3 == doctest::Approx(0.4));
    auto g1 = landscape_grid(inst, 0.4, 0.0, 1.0, 0.01);
    CHECK(g1.argmin_y2 == doctest::Approx(0.7));
    CHECK(g1.argmin_y3 == doctest::Approx(0.4));
    auto g2 = landscape_grid(inst, 2.5, 0.0, 1.0, 0.01);
    CHECK(g2.argmin_y2 == doctest::Approx(0.2));
    CHECK(g2.argmin_y3 == doctest::Approx(0.2));
  }
  SUBCASE("grid values match direct evaluation") {
    auto g = landscape_grid(inst, 0.4, 0.0, 1.0, 0.25);
    CHECK(g.n == 5);
    std::vector<Point> yh = {{0.2}, {0.5}, {0.75}};
    BoundInstance check = inst;
    check.lambda = 0.4;
    CHECK(g.u[2 * 5 + 3] == doctest::Approx(evaluate_u(check, yh)));
  }
  SUBCASE("CSV and SVG emission") {
    auto dir = std::filesystem::temp_directory_path() / "stabkit_landscape";
    std::filesystem::create_directories(dir);
    auto g = landscape_grid(inst, 0.4, 0.0, 1.0, 0.02);
    write_landscape_csv(dir / "grid.csv", g);
    write_landscape_svg(dir / "grid.svg", g, "unified loss");
    CHECK(std::filesystem::file_size(dir / "grid.csv") > 1000);
    CHECK(std::filesystem::file_size(dir / "grid.svg") > 500);
    std::filesystem::remove_all(dir);
  }
  SUBCASE("wrong shape rejected") {
    BoundInstance bad;
    bad.y = {{0.1, 0.2}, {0.3, 0.4}, {0.5, 0.6}};
    bad.y_hat_1 = {0.1, 0.2};
    CHECK_THROWS_AS(landscape_grid(bad, 0.4, 0.0, 1.0, 0.1), std::invalid_argument);
  }
}

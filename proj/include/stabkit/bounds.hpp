#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <json.hpp>

#include "stabkit/rng.hpp"
#include "stabkit/svg.hpp"

namespace stabkit {

// Numeric verification of the loss-landscape theory: where the ground truth
// is the global minimizer of u (oracle regime), where repeating the first
// prediction is (collapse regime), and that u is convex.

enum class NormKind { l1, l2 };

using Point = std::vector<double>;

inline double point_norm(const Point& v, NormKind kind) {
  double acc = 0.0;
  if (kind == NormKind::l1) {
    for (double x : v) acc += std::abs(x);
    return acc;
  }
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

inline Point point_sub(const Point& a, const Point& b) {
  Point out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

struct BoundInstance {
  std::vector<Point> y;  // tau ground-truth points, each d-dimensional
  Point y_hat_1;         // fixed first prediction (collapse setting)
  double lambda = 0.4;
  NormKind zeta = NormKind::l2;

  int tau() const { return static_cast<int>(y.size()); }
  int dim() const { return static_cast<int>(y.empty() ? 0 : y[0].size()); }

  void validate() const {
    if (tau() < 2) throw std::invalid_argument("bound instance needs tau >= 2");
    if (lambda < 0) throw std::invalid_argument("bound instance needs lambda >= 0");
    for (const auto& p : y)
      if (static_cast<int>(p.size()) != dim())
        throw std::invalid_argument("bound instance points disagree in dimension");
  }
};

// u(y_hat, y) = sum_t zeta(y_hat_t - y_t) + lambda * sum_t zeta(y_hat_t - y_hat_{t+1})
inline double evaluate_u(const BoundInstance& inst, const std::vector<Point>& y_hat) {
  if (y_hat.size() != inst.y.size())
    throw std::invalid_argument("evaluate_u: prediction length mismatch");
  double acc = 0.0;
  for (int t = 0; t < inst.tau(); ++t) acc += point_norm(point_sub(y_hat[t], inst.y[t]), inst.zeta);
  for (int t = 0; t + 1 < inst.tau(); ++t)
    acc += inst.lambda * point_norm(point_sub(y_hat[t], y_hat[t + 1]), inst.zeta);
  return acc;
}

namespace bounds_detail {

inline void add_subgradient(Point& g, const Point& v, double w, NormKind kind) {
  if (kind == NormKind::l1) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i] > 0)
        g[i] += w;
      else if (v[i] < 0)
        g[i] -= w;
    }
    return;
  }
  double n = point_norm(v, NormKind::l2);
  if (n == 0.0) return;  // zero subgradient at the kink
  for (std::size_t i = 0; i < v.size(); ++i) g[i] += w * v[i] / n;
}

// exact minimizer of sum_i w_i |x - p_i| : smallest point whose cumulative
// weight reaches half the total
inline double weighted_median(std::vector<std::pair<double, double>> pw) {
  std::sort(pw.begin(), pw.end());
  double total = 0.0;
  for (auto& [p, w] : pw) total += w;
  double cum = 0.0;
  for (auto& [p, w] : pw) {
    cum += w;
    if (cum * 2.0 >= total - 1e-15) return p;
  }
  return pw.back().first;
}

// weighted geometric median of up to three anchor points: anchor optimality
// test first, Weiszfeld iterations otherwise
inline Point weber_point(std::vector<Point> pts, std::vector<double> wts) {
  // merge coincident anchors
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size();) {
      if (pts[i] == pts[j]) {
        wts[i] += wts[j];
        pts.erase(pts.begin() + j);
        wts.erase(wts.begin() + j);
      } else {
        ++j;
      }
    }
  if (pts.size() == 1) return pts[0];

  const std::size_t d = pts[0].size();
  auto anchor_pull = [&](std::size_t i) {
    Point pull(d, 0.0);
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (j == i) continue;
      Point v = point_sub(pts[j], pts[i]);
      double n = point_norm(v, NormKind::l2);
      for (std::size_t k = 0; k < d; ++k) pull[k] += wts[j] * v[k] / n;
    }
    return point_norm(pull, NormKind::l2);
  };
  for (std::size_t i = 0; i < pts.size(); ++i)
    if (anchor_pull(i) <= wts[i] + 1e-14) return pts[i];

  Point x(d, 0.0);
  double wsum = 0.0;
  for (std::size_t j = 0; j < pts.size(); ++j) {
    wsum += wts[j];
    for (std::size_t k = 0; k < d; ++k) x[k] += wts[j] * pts[j][k];
  }
  for (auto& v : x) v /= wsum;
  for (int it = 0; it < 200; ++it) {
    Point num(d, 0.0);
    double den = 0.0;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      double n = point_norm(point_sub(x, pts[j]), NormKind::l2);
      if (n < 1e-14) return pts[j];  // landed on an anchor already tested
      double c = wts[j] / n;
      den += c;
      for (std::size_t k = 0; k < d; ++k) num[k] += c * pts[j][k];
    }
    Point next(d);
    double move = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      next[k] = num[k] / den;
      move += std::abs(next[k] - x[k]);
    }
    x = std::move(next);
    if (move < 1e-14) break;
  }
  return x;
}

}  // namespace bounds_detail

struct MinimizeResult {
  std::vector<Point> y_hat;
  double u = 0.0;
  bool solver_ok = true;       // all restarts agreed within tolerance (u is convex)
  double restart_spread = 0.0;
};

// Global minimization of u: Adam on the subgradient from random restarts,
// then exact block polishing (weighted median for L1, Weber point for L2),
// plus the two candidate points {ground truth, collapse}. Ties within 1e-10
// in u resolve toward the candidate so flat L1 valleys return the exact
// point. Restart disagreement beyond 1e-6 is flagged as solver failure.
inline MinimizeResult minimize_u(const BoundInstance& inst, bool fix_first, int restarts = 20,
                                 std::uint64_t seed = 1) {
  inst.validate();
  const int tau = inst.tau(), d = inst.dim();
  const int t0 = fix_first ? 1 : 0;
  if (fix_first && static_cast<int>(inst.y_hat_1.size()) != d)
    throw std::invalid_argument("minimize_u: fix_first needs a d-dimensional y_hat_1");

  double lo = 1e300, hi = -1e300;
  for (const auto& p : inst.y)
    for (double v : p) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (fix_first)
    for (double v : inst.y_hat_1) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  double range = std::max(1e-6, hi - lo);

  auto solve_block = [&](const std::vector<Point>& anchors, const std::vector<double>& weights) {
    Point next(d);
    if (inst.zeta == NormKind::l1) {
      for (int k = 0; k < d; ++k) {
        std::vector<std::pair<double, double>> pw;
        for (std::size_t a = 0; a < anchors.size(); ++a)
          pw.emplace_back(anchors[a][k], weights[a]);
        next[k] = bounds_detail::weighted_median(std::move(pw));
      }
    } else {
      next = bounds_detail::weber_point(anchors, weights);
    }
    return next;
  };

  // Exact minimization over the run [s..e] moved as one point. Single
  // blocks alone can lock on fused plateaus (adjacent predictions equal but
  // off-optimum), so the polish also sweeps maximal equal runs.
  auto move_run = [&](std::vector<Point>& x, int s, int e) {
    std::vector<Point> anchors;
    std::vector<double> weights;
    for (int t = s; t <= e; ++t) {
      anchors.push_back(inst.y[t]);
      weights.push_back(1.0);
    }
    if (s > 0) {
      anchors.push_back(x[s - 1]);
      weights.push_back(inst.lambda);
    }
    if (e + 1 < tau) {
      anchors.push_back(x[e + 1]);
      weights.push_back(inst.lambda);
    }
    Point next = solve_block(anchors, weights);
    double moved = 0.0;
    for (int k = 0; k < d; ++k) moved += std::abs(next[k] - x[s][k]);
    for (int t = s; t <= e; ++t) x[t] = next;
    return moved;
  };

  auto block_polish = [&](std::vector<Point>& x) {
    for (int sweep = 0; sweep < 400; ++sweep) {
      double moved = 0.0;
      for (int t = t0; t < tau; ++t) moved += move_run(x, t, t);
      int t = t0;
      while (t < tau) {
        int e = t;
        while (e + 1 < tau && x[e + 1] == x[t]) ++e;
        if (e > t) moved += move_run(x, t, e);
        t = e + 1;
      }
      if (moved < 1e-13) break;
    }
  };

  auto run_restart = [&](std::uint64_t s) {
    Rng rng(s);
    std::vector<Point> x(tau, Point(d));
    for (int t = 0; t < tau; ++t)
      for (int k = 0; k < d; ++k) x[t][k] = rng.uniform(lo - 0.2 * range, hi + 0.2 * range);
    if (fix_first) x[0] = inst.y_hat_1;

    // Adam over the subgradient with a decaying step
    std::vector<Point> m(tau, Point(d, 0.0)), v(tau, Point(d, 0.0));
    double lr = 0.2 * range;
    for (int it = 1; it <= 600; ++it) {
      if (it % 100 == 0) lr *= 0.5;
      std::vector<Point> g(tau, Point(d, 0.0));
      for (int t = 0; t < tau; ++t)
        bounds_detail::add_subgradient(g[t], point_sub(x[t], inst.y[t]), 1.0, inst.zeta);
      for (int t = 0; t + 1 < tau; ++t) {
        Point diff = point_sub(x[t], x[t + 1]);
        bounds_detail::add_subgradient(g[t], diff, inst.lambda, inst.zeta);
        for (double& dv : diff) dv = -dv;
        bounds_detail::add_subgradient(g[t + 1], diff, inst.lambda, inst.zeta);
      }
      double bc1 = 1.0 - std::pow(0.9, it), bc2 = 1.0 - std::pow(0.999, it);
      for (int t = t0; t < tau; ++t)
        for (int k = 0; k < d; ++k) {
          m[t][k] = 0.9 * m[t][k] + 0.1 * g[t][k];
          v[t][k] = 0.999 * v[t][k] + 0.001 * g[t][k] * g[t][k];
          x[t][k] -= lr * (m[t][k] / bc1) / (std::sqrt(v[t][k] / bc2) + 1e-12);
        }
    }
    block_polish(x);
    return x;
  };

  std::vector<Point> gt = inst.y;
  if (fix_first) gt[0] = inst.y_hat_1;
  std::vector<Point> collapse(tau, fix_first ? inst.y_hat_1 : inst.y[0]);

  MinimizeResult best;
  best.y_hat = gt;
  best.u = evaluate_u(inst, gt);
  double u_collapse = evaluate_u(inst, collapse);
  if (u_collapse < best.u) {
    best.u = u_collapse;
    best.y_hat = collapse;
  }

  double worst_restart = -1e300;
  for (int r = 0; r < restarts; ++r) {
    auto x = run_restart(seed * 1000003ULL + r);
    double u = evaluate_u(inst, x);
    worst_restart = std::max(worst_restart, u);
    if (u < best.u - 1e-10) {  // candidates win ties
      best.u = u;
      best.y_hat = std::move(x);
    }
  }
  best.restart_spread = worst_restart - best.u;
  best.solver_ok = best.restart_spread <= 1e-6 * std::max(1.0, std::abs(best.u));
  return best;
}

// ---------------------------------------------------------------------------
// verification drivers
// ---------------------------------------------------------------------------

struct BoundReport {
  int total = 0;
  int passed = 0;
  int solver_failures = 0;
  std::vector<BoundInstance> counterexamples;  // kept for inspection (first few)

  double pass_fraction() const { return total == 0 ? 0.0 : static_cast<double>(passed) / total; }

  nlohmann::json to_json() const {
    return {{"total", total},
            {"passed", passed},
            {"pass_fraction", pass_fraction()},
            {"solver_failures", solver_failures}};
  }
};

inline BoundInstance random_instance(Rng& rng, int tau, int d, double lambda, NormKind zeta) {
  BoundInstance inst;
  inst.lambda = lambda;
  inst.zeta = zeta;
  inst.y.resize(tau, Point(d));
  for (auto& p : inst.y)
    for (auto& v : p) v = rng.uniform(0.0, 1.0);
  inst.y_hat_1.resize(d);
  for (auto& v : inst.y_hat_1) v = rng.uniform(0.0, 1.0);
  return inst;
}

// For lambda < 1/2 the ground truth must be the unique global minimizer.
inline BoundReport verify_oracle_bound(int n_instances, double lambda,
                                       std::pair<int, int> tau_range,
                                       std::pair<int, int> d_range, std::uint64_t seed = 7) {
  if (lambda >= 0.5)
    throw std::invalid_argument("verify_oracle_bound: lambda must sit below the oracle bound 1/2");
  BoundReport report;
  Rng rng(seed);
  for (int i = 0; i < n_instances; ++i) {
    int tau = tau_range.first + static_cast<int>(rng.index(tau_range.second - tau_range.first + 1));
    int d = d_range.first + static_cast<int>(rng.index(d_range.second - d_range.first + 1));
    NormKind zeta = rng.uniform() < 0.5 ? NormKind::l1 : NormKind::l2;
    BoundInstance inst = random_instance(rng, tau, d, lambda, zeta);
    auto res = minimize_u(inst, /*fix_first=*/false, 20, seed + i);
    if (!res.solver_ok) ++report.solver_failures;
    double err = 0.0;
    for (int t = 0; t < tau; ++t)
      for (int k = 0; k < d; ++k) err = std::max(err, std::abs(res.y_hat[t][k] - inst.y[t][k]));
    ++report.total;
    if (res.solver_ok && err <= 1e-4)
      ++report.passed;
    else if (report.counterexamples.size() < 5)
      report.counterexamples.push_back(inst);
  }
  return report;
}

// For lambda > tau-1 with the first prediction fixed, the repeated first
// prediction must be the global minimizer.
inline BoundReport verify_collapse_bound(int n_instances, double lambda, int tau,
                                         std::uint64_t seed = 11, int d = 2,
                                         NormKind zeta = NormKind::l2) {
  if (lambda <= tau - 1)
    throw std::invalid_argument("verify_collapse_bound: lambda must exceed tau - 1");
  BoundReport report;
  Rng rng(seed);
  for (int i = 0; i < n_instances; ++i) {
    NormKind kind = i % 2 == 0 ? zeta : (zeta == NormKind::l2 ? NormKind::l1 : NormKind::l2);
    BoundInstance inst = random_instance(rng, tau, d, lambda, kind);
    auto res = minimize_u(inst, /*fix_first=*/true, 20, seed + i);
    if (!res.solver_ok) ++report.solver_failures;
    double err = 0.0;
    for (int t = 0; t < tau; ++t)
      for (int k = 0; k < d; ++k)
        err = std::max(err, std::abs(res.y_hat[t][k] - inst.y_hat_1[k]));
    ++report.total;
    if (res.solver_ok && err <= 1e-4)
      ++report.passed;
    else if (report.counterexamples.size() < 5)
      report.counterexamples.push_back(inst);
  }
  return report;
}

// Jensen's inequality on random pairs of the joint (y_hat, y) input.
struct ConvexityReport {
  int total = 0;
  int violations = 0;
  double worst_violation = 0.0;

  nlohmann::json to_json() const {
    return {{"total", total}, {"violations", violations}, {"worst_violation", worst_violation}};
  }
};

inline ConvexityReport verify_convexity(const BoundInstance& inst, int n_pairs,
                                        std::uint64_t seed = 13) {
  inst.validate();
  const int tau = inst.tau(), d = inst.dim();
  ConvexityReport report;
  Rng rng(seed);
  auto u_joint = [&](const std::vector<Point>& yh, const std::vector<Point>& yy) {
    BoundInstance tmp = inst;
    tmp.y = yy;
    return evaluate_u(tmp, yh);
  };
  auto random_state = [&] {
    std::pair<std::vector<Point>, std::vector<Point>> q;
    q.first.assign(tau, Point(d));
    q.second.assign(tau, Point(d));
    for (auto* side : {&q.first, &q.second})
      for (auto& p : *side)
        for (auto& v : p) v = rng.uniform(-1.0, 1.0);
    return q;
  };
  for (int i = 0; i < n_pairs; ++i) {
    auto qa = random_state();
    auto qb = random_state();
    double r = rng.uniform(0.0, 1.0);
    std::vector<Point> yh(tau, Point(d)), yy(tau, Point(d));
    for (int t = 0; t < tau; ++t)
      for (int k = 0; k < d; ++k) {
        yh[t][k] = r * qa.first[t][k] + (1 - r) * qb.first[t][k];
        yy[t][k] = r * qa.second[t][k] + (1 - r) * qb.second[t][k];
      }
    double lhs = u_joint(yh, yy);
    double rhs = r * u_joint(qa.first, qa.second) + (1 - r) * u_joint(qb.first, qb.second);
    ++report.total;
    double violation = lhs - rhs;
    if (violation > 1e-12) {
      ++report.violations;
      report.worst_violation = std::max(report.worst_violation, violation);
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Landscape slice of u over (y_hat_2, y_hat_3) with y_hat_1 fixed
// ---------------------------------------------------------------------------

struct LandscapeGrid {
  double lo = 0.0, hi = 1.0, step = 1e-3;
  int n = 0;                  // samples per axis
  std::vector<double> u;      // row-major: u[i2*n + i3]
  double argmin_y2 = 0.0, argmin_y3 = 0.0, u_min = 0.0;
};

inline LandscapeGrid landscape_grid(const BoundInstance& inst, double lambda, double lo, double hi,
                                    double step) {
  if (inst.dim() != 1 || inst.tau() != 3)
    throw std::invalid_argument("landscape_grid needs a 1-D tau=3 instance");
  if (inst.y_hat_1.size() != 1)
    throw std::invalid_argument("landscape_grid needs the fixed first prediction");
  LandscapeGrid grid;
  grid.lo = lo;
  grid.hi = hi;
  grid.step = step;
  grid.n = static_cast<int>(std::round((hi - lo) / step)) + 1;
  grid.u.resize(static_cast<std::size_t>(grid.n) * grid.n);
  const double y1h = inst.y_hat_1[0];
  const double y1 = inst.y[0][0], y2 = inst.y[1][0], y3 = inst.y[2][0];
  auto zeta = [&](double v) { return std::abs(v); };  // 1-D: L1 and L2 coincide
  grid.u_min = 1e300;
  for (int i2 = 0; i2 < grid.n; ++i2) {
    double a = lo + i2 * step;
    double head = zeta(y1h - y1) + zeta(a - y2) + lambda * zeta(y1h - a);
    for (int i3 = 0; i3 < grid.n; ++i3) {
      double b = lo + i3 * step;
      double u = head + zeta(b - y3) + lambda * zeta(a - b);
      grid.u[static_cast<std::size_t>(i2) * grid.n + i3] = u;
      if (u < grid.u_min) {
        grid.u_min = u;
        grid.argmin_y2 = a;
        grid.argmin_y3 = b;
      }
    }
  }
  return grid;
}

inline void write_landscape_csv(const std::filesystem::path& path, const LandscapeGrid& grid) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  for (int i2 = 0; i2 < grid.n; ++i2) {
    for (int i3 = 0; i3 < grid.n; ++i3)
      out << (i3 ? "," : "") << grid.u[static_cast<std::size_t>(i2) * grid.n + i3];
    out << "\n";
  }
}

inline void write_landscape_svg(const std::filesystem::path& path, const LandscapeGrid& grid,
                                const std::string& title) {
  // downsample for plotting (the CSV keeps full resolution) and transpose so
  // y_hat_2 runs along x and y_hat_3 along y
  int stride = std::max(1, grid.n / 240);
  int n = (grid.n + stride - 1) / stride;
  std::vector<double> v(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      v[static_cast<std::size_t>(i) * n + j] =
          grid.u[static_cast<std::size_t>(j * stride) * grid.n + i * stride];
  write_svg_contour(path, v, n, grid.lo, grid.hi, title, grid.argmin_y2, grid.argmin_y3);
}

}  // namespace stabkit

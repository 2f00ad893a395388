#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <tuple>
#include <vector>

#include "stabkit/tensor.hpp"

namespace stabkit {

// Transport distance between two feature-map channels: mass moves from
// positive to negative pixels at cost proportional to Euclidean distance,
// or is created/destroyed at unit cost gamma. Edges longer than 2*gamma are
// pruned: destroying at one end and recreating at the other is cheaper.

struct TransportEdge {
  int from = 0, to = 0;  // pixel indices, row-major
  double distance = 0.0;
};

// All unordered pixel pairs within Euclidean distance 2*gamma (from < to).
inline std::vector<TransportEdge> prune_edges(int h, int w, double gamma) {
  if (gamma <= 0) throw std::invalid_argument("prune_edges: gamma must be positive");
  std::vector<TransportEdge> edges;
  const double limit = 2.0 * gamma;
  const int r = static_cast<int>(std::floor(limit));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int dy = 0; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          if (dy == 0 && dx <= 0) continue;  // enumerate each pair once
          double d = std::sqrt(double(dy) * dy + double(dx) * dx);
          if (d > limit) continue;
          int ny = y + dy, nx = x + dx;
          if (ny >= h || nx < 0 || nx >= w) continue;
          edges.push_back({y * w + x, ny * w + nx, d});
        }
  return edges;
}

// ---------------------------------------------------------------------------
// network simplex for uncapacitated min-cost flow with node supplies
// ---------------------------------------------------------------------------

// Spanning-tree simplex with a block-search pivot rule. The initial basis is
// an artificial star at a root node with a cost exceeding any path cost, so
// artificial arcs leave the basis unless the instance is infeasible. Tree
// structure (parent, depth, potentials) is rebuilt from the root after each
// pivot; at the scales this solver targets the rebuild is not the
// bottleneck.
class MinCostFlowNetworkSimplex {
 public:
  explicit MinCostFlowNetworkSimplex(int n_nodes)
      : n_(n_nodes), supply_(n_nodes, 0.0) {}

  void set_supply(int node, double b) { supply_[node] = b; }

  int add_arc(int u, int v, double cost) {
    if (cost < 0) throw std::invalid_argument("network simplex expects nonnegative costs");
    tail_.push_back(u);
    head_.push_back(v);
    cost_.push_back(cost);
    return static_cast<int>(tail_.size()) - 1;
  }

  struct Result {
    bool optimal = false;
    double cost = 0.0;
    double max_reduced_cost_violation = 0.0;  // complementary-slackness certificate
    double max_artificial_flow = 0.0;         // feasibility certificate
    std::string error;
  };

  Result solve() {
    const int root = n_;
    const int n_real_arcs = static_cast<int>(tail_.size());
    double cost_scale = 1.0, cost_sum = 1.0;
    for (double c : cost_) {
      cost_scale = std::max(cost_scale, c);
      cost_sum += c;
    }
    double big = cost_sum + 1.0;

    flow_.assign(tail_.size(), 0.0);
    in_tree_.assign(tail_.size(), 0);
    for (int i = 0; i < n_; ++i) {
      if (supply_[i] >= 0) {
        tail_.push_back(i);
        head_.push_back(root);
      } else {
        tail_.push_back(root);
        head_.push_back(i);
      }
      cost_.push_back(big);
      flow_.push_back(std::abs(supply_[i]));
      in_tree_.push_back(1);
    }

    adj_.assign(n_ + 1, {});
    for (int a = n_real_arcs; a < static_cast<int>(tail_.size()); ++a) {
      adj_[tail_[a]].push_back(a);
      adj_[head_[a]].push_back(a);
    }
    rebuild_tree(root);

    const double eps = 1e-11 * cost_scale;
    const int n_arcs = static_cast<int>(tail_.size());
    const int block = std::max(64, static_cast<int>(std::sqrt(double(n_arcs))) + 1);
    long max_pivots = 200L * (n_arcs + n_ + 1) + 1000;
    int scan = 0;

    Result res;
    for (long pivot = 0;; ++pivot) {
      if (pivot > max_pivots) {
        res.error = "pivot limit exceeded";
        return res;
      }
      // block search for the most negative reduced cost
      int entering = -1;
      double best = -eps;
      int inspected = 0;
      while (inspected < n_arcs) {
        int stop = std::min(inspected + block, n_arcs);
        for (; inspected < stop; ++inspected) {
          int a = scan;
          scan = scan + 1 == n_arcs ? 0 : scan + 1;
          if (in_tree_[a]) continue;
          double rc = cost_[a] - pi_[tail_[a]] + pi_[head_[a]];
          if (rc < best) {
            best = rc;
            entering = a;
          }
        }
        if (entering >= 0) break;
      }
      if (entering < 0) break;  // optimal

      // cycle: entering (u -> v) plus the tree path v .. u
      int u = tail_[entering], v = head_[entering];
      int a = u, b = v;
      while (a != b) {
        if (depth_[a] >= depth_[b])
          a = parent_[a];
        else
          b = parent_[b];
      }
      const int lca = a;
      double theta = std::numeric_limits<double>::infinity();
      int leaving = -1;
      for (int x = u; x != lca; x = parent_[x]) {  // cycle runs parent -> x here
        int f = pred_[x];
        if (tail_[f] == x && flow_[f] < theta) {
          theta = flow_[f];
          leaving = f;
        }
      }
      for (int x = v; x != lca; x = parent_[x]) {  // cycle runs x -> parent here
        int f = pred_[x];
        if (head_[f] == x && flow_[f] < theta) {
          theta = flow_[f];
          leaving = f;
        }
      }
      if (leaving < 0) {
        res.error = "unbounded pivot (negative-cost cycle?)";
        return res;
      }

      flow_[entering] += theta;
      for (int x = u; x != lca; x = parent_[x]) {
        int f = pred_[x];
        flow_[f] += tail_[f] == x ? -theta : theta;
      }
      for (int x = v; x != lca; x = parent_[x]) {
        int f = pred_[x];
        flow_[f] += head_[f] == x ? -theta : theta;
      }

      in_tree_[leaving] = 0;
      in_tree_[entering] = 1;
      detach_arc(leaving);
      adj_[tail_[entering]].push_back(entering);
      adj_[head_[entering]].push_back(entering);
      rebuild_tree(root);
    }

    res.optimal = true;
    for (int a = 0; a < n_real_arcs; ++a) {
      res.cost += cost_[a] * flow_[a];
      double rc = cost_[a] - pi_[tail_[a]] + pi_[head_[a]];
      if (!in_tree_[a] && rc < 0)
        res.max_reduced_cost_violation = std::max(res.max_reduced_cost_violation, -rc);
    }
    for (int a = n_real_arcs; a < n_arcs; ++a)
      res.max_artificial_flow = std::max(res.max_artificial_flow, flow_[a]);
    return res;
  }

  double flow(int arc) const { return flow_[arc]; }

 private:
  void detach_arc(int arc) {
    for (int node : {tail_[arc], head_[arc]}) {
      auto& v = adj_[node];
      v.erase(std::find(v.begin(), v.end(), arc));
    }
  }

  void rebuild_tree(int root) {
    parent_.assign(n_ + 1, -1);
    pred_.assign(n_ + 1, -1);
    depth_.assign(n_ + 1, 0);
    pi_.assign(n_ + 1, 0.0);
    std::vector<int> stack = {root};
    std::vector<char> seen(n_ + 1, 0);
    seen[root] = 1;
    while (!stack.empty()) {
      int x = stack.back();
      stack.pop_back();
      for (int arc : adj_[x]) {
        int y = tail_[arc] == x ? head_[arc] : tail_[arc];
        if (seen[y]) continue;
        seen[y] = 1;
        parent_[y] = x;
        pred_[y] = arc;
        depth_[y] = depth_[x] + 1;
        // zero reduced cost on tree arcs: cost - pi[tail] + pi[head] = 0
        pi_[y] = tail_[arc] == y ? cost_[arc] + pi_[x] : pi_[x] - cost_[arc];
        stack.push_back(y);
      }
    }
  }

  int n_;
  std::vector<double> supply_;
  std::vector<int> tail_, head_;
  std::vector<double> cost_, flow_;
  std::vector<char> in_tree_;
  std::vector<std::vector<int>> adj_;
  std::vector<int> parent_, pred_, depth_;
  std::vector<double> pi_;
};

// ---------------------------------------------------------------------------
// transport problem on a signed difference map
// ---------------------------------------------------------------------------

struct TransportSolution {
  std::vector<std::tuple<int, int, double>> moved;  // (from pixel, to pixel, mass)
  std::vector<double> produced;                     // p_i >= 0
  std::vector<double> consumed;                     // c_i >= 0
  double cost = 0.0;
  bool certified = false;
  double max_conservation_residual = 0.0;
  double duality_violation = 0.0;
};

namespace transport_detail {

inline std::pair<int, int> require_hw(const Tensor& a, const char* op) {
  if (a.shape().size() == 2) return {a.shape()[0], a.shape()[1]};
  if (a.shape().size() == 3 && a.shape()[0] == 1) return {a.shape()[1], a.shape()[2]};
  throw_shape_error(op, a, "[h,w]");
}

}  // namespace transport_detail

inline std::pair<double, TransportSolution> transport_distance(const Tensor& a, double gamma) {
  if (gamma <= 0) throw std::invalid_argument("transport_distance: gamma must be positive");
  auto [h, w] = transport_detail::require_hw(a, "transport_distance");
  const int hw = h * w;
  for (std::int64_t i = 0; i < a.size(); ++i)
    if (!std::isfinite(a.data()[i]))
      throw std::invalid_argument("transport_distance: non-finite input at index " +
                                  std::to_string(i));

  std::vector<int> node_of(hw, -1);
  std::vector<int> pixel_of;
  std::vector<char> positive;
  double total = 0.0;
  for (int i = 0; i < hw; ++i) {
    double v = a.data()[i];
    if (v == 0.0) continue;
    node_of[i] = static_cast<int>(pixel_of.size());
    pixel_of.push_back(i);
    positive.push_back(v > 0.0);
    total += v;
  }
  const int n_pix = static_cast<int>(pixel_of.size());
  const int virt = n_pix;  // create/destroy hub

  TransportSolution sol;
  sol.produced.assign(hw, 0.0);
  sol.consumed.assign(hw, 0.0);
  if (n_pix == 0) {
    sol.certified = true;
    return {0.0, sol};
  }

  MinCostFlowNetworkSimplex mcf(n_pix + 1);
  for (int k = 0; k < n_pix; ++k) mcf.set_supply(k, a.data()[pixel_of[k]]);
  mcf.set_supply(virt, -total);

  struct ArcInfo {
    int kind;  // 0 move, 1 destroy, 2 create
    int from_pixel, to_pixel;
  };
  std::vector<ArcInfo> info;
  const double limit = 2.0 * gamma;
  const int r = static_cast<int>(std::floor(limit));
  for (int k = 0; k < n_pix; ++k) {
    if (!positive[k]) continue;
    int y = pixel_of[k] / w, x = pixel_of[k] % w;
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) {
        if (dy == 0 && dx == 0) continue;
        double d = std::sqrt(double(dy) * dy + double(dx) * dx);
        if (d > limit) continue;
        int ny = y + dy, nx = x + dx;
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        int j = node_of[ny * w + nx];
        if (j < 0 || positive[j]) continue;
        mcf.add_arc(k, j, d);
        info.push_back({0, pixel_of[k], ny * w + nx});
      }
  }
  for (int k = 0; k < n_pix; ++k) {
    if (positive[k]) {
      mcf.add_arc(k, virt, gamma);  // destroy
      info.push_back({1, pixel_of[k], -1});
    } else {
      mcf.add_arc(virt, k, gamma);  // create
      info.push_back({2, -1, pixel_of[k]});
    }
  }

  auto res = mcf.solve();
  if (!res.optimal) throw std::runtime_error("transport_distance: solver failed: " + res.error);

  std::vector<double> divergence(hw, 0.0);
  for (std::size_t arc = 0; arc < info.size(); ++arc) {
    double f = mcf.flow(static_cast<int>(arc));
    if (f <= 0.0) continue;
    switch (info[arc].kind) {
      case 0:
        sol.moved.emplace_back(info[arc].from_pixel, info[arc].to_pixel, f);
        divergence[info[arc].from_pixel] += f;
        divergence[info[arc].to_pixel] -= f;
        break;
      case 1:
        sol.consumed[info[arc].from_pixel] += f;
        break;
      case 2:
        sol.produced[info[arc].to_pixel] += f;
        break;
    }
  }
  // a_i + p_i - c_i - net outflow = 0 at every pixel
  for (int i = 0; i < hw; ++i) {
    double residual = a.data()[i] + sol.produced[i] - sol.consumed[i] - divergence[i];
    sol.max_conservation_residual = std::max(sol.max_conservation_residual, std::abs(residual));
  }
  sol.cost = res.cost;
  sol.duality_violation = res.max_reduced_cost_violation;
  sol.certified = res.max_reduced_cost_violation <= 1e-9 * (1.0 + gamma) &&
                  res.max_artificial_flow <= 1e-9 &&
                  sol.max_conservation_residual <= 1e-8;
  if (!sol.certified)
    throw std::runtime_error("transport_distance: optimality certificate failed");
  return {sol.cost, sol};
}

// delta(z1, z2) = T(z1 - z2); multi-channel inputs sum per-channel costs.
inline double transport_metric(const Tensor& z1, const Tensor& z2, double gamma) {
  if (!same_shape(z1, z2)) throw_shape_error("transport_metric", z1, z2);
  if (z1.shape().size() == 2 || (z1.shape().size() == 3 && z1.shape()[0] == 1)) {
    Tensor a = Tensor::zeros(z1.shape());
    for (std::int64_t i = 0; i < a.size(); ++i) a.data()[i] = z1.data()[i] - z2.data()[i];
    return transport_distance(a, gamma).first;
  }
  if (z1.shape().size() != 3) throw_shape_error("transport_metric", z1, "[C,h,w]");
  const int c = z1.shape()[0], h = z1.shape()[1], w = z1.shape()[2];
  double acc = 0.0;
  for (int ci = 0; ci < c; ++ci) {
    Tensor a = Tensor::zeros({h, w});
    for (int i = 0; i < h * w; ++i)
      a.data()[i] = z1.data()[ci * h * w + i] - z2.data()[ci * h * w + i];
    acc += transport_distance(a, gamma).first;
  }
  return acc;
}

}  // namespace stabkit

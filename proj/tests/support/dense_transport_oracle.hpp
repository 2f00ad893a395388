#pragma once

// Test-only oracle: min-cost flow by successive shortest paths over the
// DENSE transport graph (every positive-negative pixel pair, no pruning),
// with Bellman-Ford on the residual network. Deliberately a different
// algorithm from the library's network simplex; keep it independent.

#include <limits>
#include <vector>

#include <stabkit/tensor.hpp>

namespace stabkit_test {

inline double dense_transport_oracle(const stabkit::Tensor& a, double gamma) {
  const int h = a.shape()[0], w = a.shape()[1], hw = h * w;
  std::vector<int> pix;
  std::vector<char> pos;
  double total = 0.0;
  for (int i = 0; i < hw; ++i) {
    if (a.data()[i] == 0.0) continue;
    pix.push_back(i);
    pos.push_back(a.data()[i] > 0.0);
    total += a.data()[i];
  }
  const int n_pix = static_cast<int>(pix.size());
  if (n_pix == 0) return 0.0;
  const int V = n_pix, S = n_pix + 1, T = n_pix + 2, N = n_pix + 3;
  const double INF = std::numeric_limits<double>::infinity();

  struct Arc {
    int to;
    double cap, cost;
    int rev;
  };
  std::vector<std::vector<Arc>> g(N);
  auto add = [&](int u, int v, double cap, double cost) {
    g[u].push_back({v, cap, cost, static_cast<int>(g[v].size())});
    g[v].push_back({u, 0.0, -cost, static_cast<int>(g[u].size()) - 1});
  };

  double need = 0.0;
  for (int k = 0; k < n_pix; ++k) {
    double v = a.data()[pix[k]];
    if (pos[k]) {
      add(S, k, v, 0.0);
      need += v;
      add(k, V, INF, gamma);  // destroy
    } else {
      add(k, T, -v, 0.0);
      add(V, k, INF, gamma);  // create
    }
  }
  if (total > 0)
    add(V, T, total, 0.0);
  else if (total < 0) {
    add(S, V, -total, 0.0);
    need += -total;
  }
  for (int i = 0; i < n_pix; ++i) {
    if (!pos[i]) continue;
    int yi = pix[i] / w, xi = pix[i] % w;
    for (int j = 0; j < n_pix; ++j) {
      if (pos[j]) continue;
      int yj = pix[j] / w, xj = pix[j] % w;
      add(i, j, INF, std::hypot(double(yi - yj), double(xi - xj)));
    }
  }

  double cost = 0.0, routed = 0.0;
  while (routed < need - 1e-12) {
    std::vector<double> dist(N, INF);
    std::vector<int> from_node(N, -1), from_arc(N, -1);
    dist[S] = 0.0;
    for (int it = 0; it < N; ++it) {
      bool changed = false;
      for (int u = 0; u < N; ++u) {
        if (dist[u] == INF) continue;
        for (std::size_t k = 0; k < g[u].size(); ++k) {
          const Arc& arc = g[u][k];
          if (arc.cap <= 1e-15) continue;
          if (dist[u] + arc.cost < dist[arc.to] - 1e-15) {
            dist[arc.to] = dist[u] + arc.cost;
            from_node[arc.to] = u;
            from_arc[arc.to] = static_cast<int>(k);
            changed = true;
          }
        }
      }
      if (!changed) break;
    }
    if (dist[T] == INF) return INF;  // infeasible: callers treat as failure
    double push = need - routed;
    for (int x = T; x != S; x = from_node[x])
      push = std::min(push, g[from_node[x]][from_arc[x]].cap);
    for (int x = T; x != S; x = from_node[x]) {
      Arc& arc = g[from_node[x]][from_arc[x]];
      arc.cap -= push;
      g[x][arc.rev].cap += push;
      cost += push * arc.cost;
    }
    routed += push;
  }
  return cost;
}

}  // namespace stabkit_test

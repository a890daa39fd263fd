#include <algorithm>
#include <map>
#include <queue>

#include "neurotoken/error.hpp"
#include "neurotoken/features.hpp"

namespace neurotoken::features {

int BinaryGraph::degree(int i) const {
  int d = 0;
  for (int j = 0; j < n; ++j) d += edge(i, j) ? 1 : 0;
  return d;
}

int BinaryGraph::edge_count() const {
  int m = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) m += edge(i, j) ? 1 : 0;
  }
  return m;
}

double modularity_of(const BinaryGraph& g, std::span<const int> community) {
  const double m = g.edge_count();
  require(m > 0, ErrorKind::NoEdges, "modularity is undefined without edges");
  std::map<int, double> internal;
  std::map<int, double> degree_sum;
  for (int i = 0; i < g.n; ++i) {
    const int ci = community[static_cast<std::size_t>(i)];
    degree_sum[ci] += g.degree(i);
    for (int j = i + 1; j < g.n; ++j) {
      if (g.edge(i, j) && community[static_cast<std::size_t>(j)] == ci) internal[ci] += 1.0;
    }
  }
  double q = 0.0;
  for (const auto& [c, d] : degree_sum) {
    const double a = d / (2.0 * m);
    q += internal[c] / m - a * a;
  }
  return q;
}

namespace {

// Weighted undirected graph used across Louvain levels. Self-loop weight is
// stored once in `loops` and counts twice towards the node degree.
struct LevelGraph {
  int n = 0;
  std::vector<std::map<int, double>> neighbors;
  std::vector<double> loops;

  double degree(int i) const {
    double d = 2.0 * loops[static_cast<std::size_t>(i)];
    for (const auto& [j, w] : neighbors[static_cast<std::size_t>(i)]) d += w;
    return d;
  }
};

// One pass of local moves until no node changes community. Returns whether
// anything moved.
bool local_moves(const LevelGraph& g, double two_m, std::vector<int>& community) {
  std::vector<double> degree(static_cast<std::size_t>(g.n));
  std::vector<double> total(static_cast<std::size_t>(g.n), 0.0);
  for (int i = 0; i < g.n; ++i) {
    degree[static_cast<std::size_t>(i)] = g.degree(i);
    total[static_cast<std::size_t>(community[static_cast<std::size_t>(i)])] += degree[static_cast<std::size_t>(i)];
  }
  bool any_move = false;
  bool moved = true;
  while (moved) {
    moved = false;
    for (int i = 0; i < g.n; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const int current = community[ui];
      std::map<int, double> links;
      for (const auto& [j, w] : g.neighbors[ui]) links[community[static_cast<std::size_t>(j)]] += w;
      total[static_cast<std::size_t>(current)] -= degree[ui];
      auto gain = [&](int c) {
        return links[c] - total[static_cast<std::size_t>(c)] * degree[ui] / two_m;
      };
      // Strict improvement only; ascending community order breaks ties low.
      int best = current;
      double best_gain = gain(current);
      for (const auto& entry : links) {
        const double candidate = gain(entry.first);
        if (candidate > best_gain + 1e-12) {
          best = entry.first;
          best_gain = candidate;
        }
      }
      total[static_cast<std::size_t>(best)] += degree[ui];
      if (best != current) {
        community[ui] = best;
        moved = true;
        any_move = true;
      }
    }
  }
  return any_move;
}

}  // namespace

Partition modularity(const BinaryGraph& g) {
  require(g.edge_count() > 0, ErrorKind::NoEdges, "graph has no edges");
  LevelGraph level;
  level.n = g.n;
  level.neighbors.resize(static_cast<std::size_t>(g.n));
  level.loops.assign(static_cast<std::size_t>(g.n), 0.0);
  for (int i = 0; i < g.n; ++i) {
    for (int j = 0; j < g.n; ++j) {
      if (i != j && g.edge(i, j)) level.neighbors[static_cast<std::size_t>(i)][j] = 1.0;
    }
  }
  const double two_m = 2.0 * g.edge_count();

  // membership[v] = node of the current level that original vertex v maps to.
  std::vector<int> membership(static_cast<std::size_t>(g.n));
  for (int v = 0; v < g.n; ++v) membership[static_cast<std::size_t>(v)] = v;

  while (true) {
    std::vector<int> community(static_cast<std::size_t>(level.n));
    for (int i = 0; i < level.n; ++i) community[static_cast<std::size_t>(i)] = i;
    if (!local_moves(level, two_m, community)) break;

    // Renumber communities by first appearance and aggregate.
    std::vector<int> dense(community.size());
    {
      std::map<int, int> first;
      int next_id = 0;
      for (std::size_t i = 0; i < community.size(); ++i) {
        auto [it, inserted] = first.emplace(community[i], next_id);
        if (inserted) ++next_id;
        dense[i] = it->second;
      }
    }
    const int n_next = *std::max_element(dense.begin(), dense.end()) + 1;
    LevelGraph next;
    next.n = n_next;
    next.neighbors.resize(static_cast<std::size_t>(n_next));
    next.loops.assign(static_cast<std::size_t>(n_next), 0.0);
    for (int i = 0; i < level.n; ++i) {
      const int ci = dense[static_cast<std::size_t>(i)];
      next.loops[static_cast<std::size_t>(ci)] += level.loops[static_cast<std::size_t>(i)];
      for (const auto& [j, w] : level.neighbors[static_cast<std::size_t>(i)]) {
        const int cj = dense[static_cast<std::size_t>(j)];
        if (ci == cj) {
          next.loops[static_cast<std::size_t>(ci)] += 0.5 * w;  // each internal edge seen from both ends
        } else {
          next.neighbors[static_cast<std::size_t>(ci)][cj] += w;
        }
      }
    }
    for (auto& m : membership) m = dense[static_cast<std::size_t>(m)];
    if (n_next == level.n) break;
    level = std::move(next);
  }

  Partition out;
  std::map<int, int> first;
  int next_id = 0;
  out.community.resize(static_cast<std::size_t>(g.n));
  for (int v = 0; v < g.n; ++v) {
    auto [it, inserted] = first.emplace(membership[static_cast<std::size_t>(v)], next_id);
    if (inserted) ++next_id;
    out.community[static_cast<std::size_t>(v)] = it->second;
  }
  out.q = modularity_of(g, out.community);
  return out;
}

double global_efficiency(const BinaryGraph& g) {
  require(g.n >= 2, ErrorKind::PreconditionViolation, "global efficiency needs at least 2 nodes");
  double total = 0.0;
  std::vector<int> dist(static_cast<std::size_t>(g.n));
  for (int s = 0; s < g.n; ++s) {
    std::fill(dist.begin(), dist.end(), -1);
    std::queue<int> frontier;
    dist[static_cast<std::size_t>(s)] = 0;
    frontier.push(s);
    while (!frontier.empty()) {
      const int u = frontier.front();
      frontier.pop();
      for (int v = 0; v < g.n; ++v) {
        if (g.edge(u, v) && dist[static_cast<std::size_t>(v)] < 0) {
          dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + 1;
          frontier.push(v);
        }
      }
    }
    for (int t = 0; t < g.n; ++t) {
      if (t != s && dist[static_cast<std::size_t>(t)] > 0) total += 1.0 / dist[static_cast<std::size_t>(t)];
    }
  }
  return total / (static_cast<double>(g.n) * (g.n - 1));
}

double avg_clustering(const BinaryGraph& g) {
  require(g.n >= 3, ErrorKind::PreconditionViolation, "clustering needs at least 3 nodes");
  double total = 0.0;
  for (int i = 0; i < g.n; ++i) {
    std::vector<int> nbrs;
    for (int j = 0; j < g.n; ++j) {
      if (g.edge(i, j)) nbrs.push_back(j);
    }
    const auto d = static_cast<double>(nbrs.size());
    if (nbrs.size() < 2) continue;
    double triangles = 0.0;
    for (std::size_t a = 0; a < nbrs.size(); ++a) {
      for (std::size_t b = a + 1; b < nbrs.size(); ++b) triangles += g.edge(nbrs[a], nbrs[b]) ? 1.0 : 0.0;
    }
    total += 2.0 * triangles / (d * (d - 1.0));
  }
  return total / g.n;
}

}  // namespace neurotoken::features

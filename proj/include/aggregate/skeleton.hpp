#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "aggregate/delaunay.hpp"
#include "aggregate/errors.hpp"
#include "aggregate/geometry.hpp"

namespace aggr {

/// Rooted tree over the samples of a deformable element. Sample positions
/// are defined relative to the parent by a rotated bone offset.
struct SkeletonTree {
  int root = 0;
  std::vector<int> parent;               // -1 for the root
  std::vector<Vec3> offset;              // Y0[s] - Y0[parent[s]], zero at the root
  std::vector<std::vector<int>> children;
  std::vector<int> order;                // root first; parents precede children

  int size() const { return static_cast<int>(parent.size()); }
};

/// Minimum spanning tree of the Delaunay edges of the samples.
inline std::vector<Edge> build_skeleton(const std::vector<Vec3>& samples, std::uint64_t seed = 0) {
  if (samples.size() < 2) throw ValidationError("skeleton needs at least two samples");
  return minimum_spanning_tree(samples, delaunay_edges(samples, seed));
}

inline std::vector<std::vector<int>> adjacency(int n, const std::vector<Edge>& edges) {
  std::vector<std::vector<int>> adj(n);
  for (const auto& [a, b] : edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  return adj;
}

namespace detail {

// Edge-count distances and DFS predecessors from `start` (iterative DFS; in
// a tree any traversal gives the same distances).
inline void tree_distances(const std::vector<std::vector<int>>& adj, int start,
                           std::vector<int>& dist, std::vector<int>& pred) {
  const int n = static_cast<int>(adj.size());
  dist.assign(n, -1);
  pred.assign(n, -1);
  std::vector<int> stack{start};
  dist[start] = 0;
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    for (int w : adj[v])
      if (dist[w] < 0) {
        dist[w] = dist[v] + 1;
        pred[w] = v;
        stack.push_back(w);
      }
  }
}

inline int furthest(const std::vector<int>& dist) {
  return static_cast<int>(std::max_element(dist.begin(), dist.end()) - dist.begin());
}

}  // namespace detail

/// Root minimising the height of the rooted tree: walk half the diameter
/// back from one end of a longest path (found by two furthest-vertex
/// searches).
inline int select_root(int n, const std::vector<Edge>& edges) {
  if (n <= 1) return 0;
  const auto adj = adjacency(n, edges);
  std::vector<int> dist, pred;
  detail::tree_distances(adj, 0, dist, pred);
  const int y = detail::furthest(dist);
  detail::tree_distances(adj, y, dist, pred);
  const int z = detail::furthest(dist);
  const int diameter = dist[z];
  int v = z;
  for (int step = 0; step < diameter / 2; ++step) v = pred[v];
  return v;
}

/// Height (max edge count to a leaf) of the tree rooted at `root`.
inline int rooted_height(int n, const std::vector<Edge>& edges, int root) {
  std::vector<int> dist, pred;
  detail::tree_distances(adjacency(n, edges), root, dist, pred);
  return *std::max_element(dist.begin(), dist.end());
}

inline SkeletonTree root_skeleton(const std::vector<Vec3>& samples, const std::vector<Edge>& edges,
                                  int root) {
  const int n = static_cast<int>(samples.size());
  if (static_cast<int>(edges.size()) != n - 1)
    throw ValidationError("skeleton edges do not form a tree");
  SkeletonTree t;
  t.root = root;
  t.parent.assign(n, -1);
  t.offset.assign(n, Vec3::Zero());
  t.children.assign(n, {});
  const auto adj = adjacency(n, edges);
  std::vector<bool> seen(n, false);
  t.order.push_back(root);
  seen[root] = true;
  for (std::size_t head = 0; head < t.order.size(); ++head) {
    const int v = t.order[head];
    for (int w : adj[v])
      if (!seen[w]) {
        seen[w] = true;
        t.parent[w] = v;
        t.offset[w] = samples[w] - samples[v];
        if (t.offset[w].squaredNorm() == 0.0)
          throw ValidationError("skeleton has a zero-length bone (duplicate samples)");
        t.children[v].push_back(w);
        t.order.push_back(w);
      }
  }
  if (static_cast<int>(t.order.size()) != n) throw ValidationError("skeleton is not connected");
  return t;
}

inline SkeletonTree make_skeleton(const std::vector<Vec3>& samples, std::uint64_t seed = 0) {
  const auto edges = build_skeleton(samples, seed);
  return root_skeleton(samples, edges, select_root(static_cast<int>(samples.size()), edges));
}

}  // namespace aggr

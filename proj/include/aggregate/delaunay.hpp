#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "aggregate/geometry.hpp"

namespace aggr {

using Edge = std::pair<int, int>;

namespace detail {

template <int D>
struct Simplex {
  std::array<int, D + 1> v;
  Eigen::Matrix<long double, D, 1> center;
  long double radius2 = 0;
  bool alive = true;
};

// Bowyer-Watson over points already normalised to roughly unit extent.
template <int D>
std::vector<Edge> bowyer_watson(const std::vector<Eigen::Matrix<long double, D, 1>>& input) {
  using Pt = Eigen::Matrix<long double, D, 1>;
  const int n = static_cast<int>(input.size());
  std::vector<Pt> pts = input;

  const long double big = 1000.0L;
  if constexpr (D == 2) {
    pts.push_back(Pt(0, 2 * big));
    pts.push_back(Pt(-1.7320508075688772L * big, -big));
    pts.push_back(Pt(1.7320508075688772L * big, -big));
  } else {
    pts.push_back(Pt(big, big, big));
    pts.push_back(Pt(big, -big, -big));
    pts.push_back(Pt(-big, big, -big));
    pts.push_back(Pt(-big, -big, big));
  }

  auto make = [&](const std::array<int, D + 1>& v, Simplex<D>& s) {
    Eigen::Matrix<long double, D, D> a;
    Pt rhs;
    for (int r = 0; r < D; ++r) {
      Pt d = pts[v[r + 1]] - pts[v[0]];
      a.row(r) = 2 * d.transpose();
      rhs[r] = d.squaredNorm();
    }
    Eigen::FullPivLU<Eigen::Matrix<long double, D, D>> lu(a);
    if (!lu.isInvertible()) return false;
    Pt c = lu.solve(rhs);
    s.v = v;
    s.center = c + pts[v[0]];
    s.radius2 = c.squaredNorm();
    s.alive = true;
    return true;
  };

  std::vector<Simplex<D>> simplices;
  {
    std::array<int, D + 1> v;
    for (int k = 0; k <= D; ++k) v[k] = n + k;
    Simplex<D> s;
    make(v, s);
    simplices.push_back(s);
  }

  for (int p = 0; p < n; ++p) {
    std::map<std::array<int, D>, int> facets;
    for (auto& s : simplices) {
      if (!s.alive) continue;
      if ((pts[p] - s.center).squaredNorm() < s.radius2 * (1 + 1e-15L)) {
        s.alive = false;
        for (int skip = 0; skip <= D; ++skip) {
          std::array<int, D> f;
          for (int k = 0, j = 0; k <= D; ++k)
            if (k != skip) f[j++] = s.v[k];
          std::sort(f.begin(), f.end());
          ++facets[f];
        }
      }
    }
    for (const auto& [f, count] : facets) {
      if (count != 1) continue;
      std::array<int, D + 1> v;
      std::copy(f.begin(), f.end(), v.begin());
      v[D] = p;
      Simplex<D> s;
      if (make(v, s)) simplices.push_back(s);
    }
    std::erase_if(simplices, [](const Simplex<D>& s) { return !s.alive; });
  }

  std::set<Edge> edges;
  for (const auto& s : simplices) {
    if (std::any_of(s.v.begin(), s.v.end(), [n](int i) { return i >= n; })) continue;
    for (int a = 0; a <= D; ++a)
      for (int b = a + 1; b <= D; ++b)
        edges.insert({std::min(s.v[a], s.v[b]), std::max(s.v[a], s.v[b])});
  }
  return {edges.begin(), edges.end()};
}

}  // namespace detail

/// Edges of the Delaunay triangulation of `points`, as index pairs (i < j)
/// in lexicographic order. Planar and collinear inputs are triangulated in
/// their own affine hull. Coordinates are perturbed by 1e-9 of the bounding
/// box diagonal (seeded) to break co-spherical ties.
inline std::vector<Edge> delaunay_edges(const std::vector<Vec3>& points, std::uint64_t seed = 0) {
  const int n = static_cast<int>(points.size());
  if (n < 2) return {};
  if (n == 2) return {{0, 1}};

  Aabb box;
  for (const auto& p : points) box.expand(p);
  const double scale = box.diagonal() > 0 ? box.diagonal() : 1.0;
  Eigen::MatrixXd centered(n, 3);
  for (int i = 0; i < n; ++i) centered.row(i) = ((points[i] - box.center()) / scale).transpose();

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  int dim = 0;
  for (int k = 0; k < 3; ++k)
    if (sv[k] > 1e-7 * std::max(sv[0], 1e-300)) ++dim;
  const Eigen::MatrixXd proj = centered * svd.matrixV();

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-1e-9, 1e-9);

  if (dim <= 1) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return proj(a, 0) < proj(b, 0); });
    std::vector<Edge> edges;
    for (int k = 0; k + 1 < n; ++k)
      edges.push_back({std::min(order[k], order[k + 1]), std::max(order[k], order[k + 1])});
    std::sort(edges.begin(), edges.end());
    return edges;
  }
  if (dim == 2) {
    std::vector<Eigen::Matrix<long double, 2, 1>> pts(n);
    for (int i = 0; i < n; ++i)
      pts[i] = Eigen::Matrix<long double, 2, 1>(proj(i, 0) + jitter(rng), proj(i, 1) + jitter(rng));
    return detail::bowyer_watson<2>(pts);
  }
  std::vector<Eigen::Matrix<long double, 3, 1>> pts(n);
  for (int i = 0; i < n; ++i)
    pts[i] = Eigen::Matrix<long double, 3, 1>(proj(i, 0) + jitter(rng), proj(i, 1) + jitter(rng),
                                              proj(i, 2) + jitter(rng));
  return detail::bowyer_watson<3>(pts);
}

// ---------------------------------------------------------------------------

class UnionFind {
 public:
  explicit UnionFind(int n = 0) : parent_(n), rank_(n, 0) {
    std::iota(parent_.begin(), parent_.end(), 0);
  }

  int find(int x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  /// Returns false when both were already in the same set.
  bool merge(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    if (rank_[a] == rank_[b]) ++rank_[a];
    return true;
  }

  int size() const { return static_cast<int>(parent_.size()); }

  int components() {
    int c = 0;
    for (int i = 0; i < size(); ++i) c += find(i) == i;
    return c;
  }

 private:
  std::vector<int> parent_;
  std::vector<int> rank_;
};

/// Kruskal over `edges` weighted by Euclidean length. Ties are broken by edge
/// order, so the result is deterministic.
inline std::vector<Edge> minimum_spanning_tree(const std::vector<Vec3>& points,
                                               std::vector<Edge> edges) {
  std::stable_sort(edges.begin(), edges.end(), [&](const Edge& a, const Edge& b) {
    return (points[a.first] - points[a.second]).squaredNorm() <
           (points[b.first] - points[b.second]).squaredNorm();
  });
  UnionFind uf(static_cast<int>(points.size()));
  std::vector<Edge> tree;
  for (const auto& e : edges)
    if (uf.merge(e.first, e.second)) tree.push_back(e);
  return tree;
}

}  // namespace aggr

#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <set>
#include <vector>

#include <Eigen/Dense>

#include "aggregate/delaunay.hpp"
#include "aggregate/element.hpp"
#include "aggregate/errors.hpp"
#include "aggregate/sensitivity.hpp"

namespace aggr {

/// Springs between samples of distinct elements.
struct ConnectivityGraph {
  struct Spring {
    int i, j;       // world sample ids, i < j
    double rest;    // W_ij
    double length;  // length when the graph was built
    bool active() const { return length > rest; }
  };
  std::vector<Spring> springs;
  int num_elements = 0;
  UnionFind merged{0};  // element-level union-find after construction
};

/// Kruskal-like selection over Delaunay edges by increasing length: an edge
/// between two elements is kept if they are not yet connected, or if either
/// element has at most one neighbouring element so far.
inline ConnectivityGraph build_connectivity_graph(const Points& positions, const std::vector<double>& radii,
                                                  const std::vector<int>& element, std::uint64_t seed = 0) {
  ConnectivityGraph g;
  int ne = 0;
  for (int e : element) ne = std::max(ne, e + 1);
  g.num_elements = ne;
  g.merged = UnionFind(ne);
  if (ne < 2) return g;

  std::vector<Vec3> pts(positions.cols());
  for (Eigen::Index s = 0; s < positions.cols(); ++s) pts[s] = positions.col(s);
  auto edges = delaunay_edges(pts, seed);
  std::vector<double> len(edges.size());
  for (std::size_t k = 0; k < edges.size(); ++k) len[k] = (pts[edges[k].first] - pts[edges[k].second]).norm();
  std::vector<std::size_t> order(edges.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return len[a] < len[b]; });

  std::vector<std::set<int>> neighbours(ne);
  for (std::size_t k : order) {
    const auto [i, j] = edges[k];
    const int ei = element[i], ej = element[j];
    if (ei == ej) continue;
    if (g.merged.find(ei) != g.merged.find(ej) || neighbours[ei].size() <= 1 || neighbours[ej].size() <= 1) {
      g.springs.push_back({i, j, len[k], len[k]});
      g.merged.merge(ei, ej);
      neighbours[ei].insert(ej);
      neighbours[ej].insert(ei);
    }
  }
  for (auto& s : g.springs) s.rest = 0.9 * (radii[s.i] + radii[s.j]);
  return g;
}

/// E = sum 1/2 (|x_i - x_j| - W_ij)^2 over the active springs, and dE/dx.
/// A spring is active when it was built longer than its target: pairs that
/// already overlap that much are left alone, since pushing them apart undoes
/// overlaps the stiffness optimisation created.
inline double spring_energy(const ConnectivityGraph& g, const Points& x, Points* gradient = nullptr) {
  double e = 0.0;
  if (gradient) gradient->setZero(3, x.cols());
  for (const auto& s : g.springs) {
    if (!s.active()) continue;
    const Vec3 d = x.col(s.i) - x.col(s.j);
    const double len = d.norm();
    const double stretch = len - s.rest;
    e += 0.5 * stretch * stretch;
    if (gradient && len > 0) {
      const Vec3 f = stretch * d / len;
      gradient->col(s.i) += f;
      gradient->col(s.j) -= f;
    }
  }
  return e;
}

/// Number of element groups when two elements touch iff some pair of their
/// samples satisfies |x_i - x_j| <= r_i + r_j.
inline int contact_components(const Points& positions, const std::vector<double>& radii,
                              const std::vector<int>& element) {
  int ne = 0;
  for (int e : element) ne = std::max(ne, e + 1);
  UnionFind uf(ne);
  int groups = ne;
  for (Eigen::Index i = 0; i < positions.cols(); ++i)
    for (Eigen::Index j = i + 1; j < positions.cols(); ++j)
      if (element[i] != element[j] && (positions.col(i) - positions.col(j)).norm() <= radii[i] + radii[j])
        groups -= uf.merge(element[i], element[j]) ? 1 : 0;
  return groups;
}

struct ConnectivityResult {
  double energy_before = 0.0;
  double energy_after = 0.0;
  int steps = 0;
};

/// Minimises the spring energy over the element parameters with projected
/// L-BFGS (memory 5) and a backtracking line search; every accepted step
/// decreases the energy and stays inside [lower, upper]. `constrain`, when
/// given, maps each trial layout onto a further admissible set; a trial it
/// rejects by throwing GeometryError counts as a failed line-search step.
inline ConnectivityResult optimize_connectivity(
    const ConnectivityGraph& g, std::vector<ElementInstance>& instances,
    const std::vector<ElementPrototype>& prototypes, const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
    int steps = 10, const std::function<void(std::vector<ElementInstance>&)>& constrain = {}) {
  const ParamLayout layout = make_layout(instances, prototypes);
  auto evaluate = [&](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
    std::vector<ElementInstance> trial = instances;
    unpack_parameters(x, layout, trial);
    const WorldSamples ws = world_sample_positions(trial, prototypes);
    Points gp;
    const double e = spring_energy(g, ws.positions, grad ? &gp : nullptr);
    if (grad) *grad = chain_to_params(gp, ws, trial, prototypes, layout);
    return e;
  };
  // Returns false when `constrain` rejects the point.
  auto project = [&](Eigen::VectorXd& x) {
    x = x.cwiseMax(lower).cwiseMin(upper);
    if (!constrain) return true;
    std::vector<ElementInstance> trial = instances;
    unpack_parameters(x, layout, trial);
    try {
      constrain(trial);
    } catch (const GeometryError&) {
      return false;
    }
    x = pack_parameters(trial, layout).cwiseMax(lower).cwiseMin(upper);
    return true;
  };

  ConnectivityResult res;
  Eigen::VectorXd x = pack_parameters(instances, layout), grad;
  double e = evaluate(x, &grad);
  res.energy_before = res.energy_after = e;
  std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> memory;  // (s, y)
  for (int it = 0; it < steps; ++it) {
    if (grad.norm() < 1e-10) break;
    // Two-loop recursion for the quasi-Newton direction.
    Eigen::VectorXd q = grad;
    std::vector<double> a(memory.size());
    for (int k = static_cast<int>(memory.size()) - 1; k >= 0; --k) {
      a[k] = memory[k].first.dot(q) / memory[k].second.dot(memory[k].first);
      q -= a[k] * memory[k].second;
    }
    if (!memory.empty()) q *= memory.back().first.dot(memory.back().second) / memory.back().second.squaredNorm();
    for (std::size_t k = 0; k < memory.size(); ++k) {
      const double bk = memory[k].second.dot(q) / memory[k].second.dot(memory[k].first);
      q += (a[k] - bk) * memory[k].first;
    }
    Eigen::VectorXd dir = -q;
    if (dir.dot(grad) >= 0) {
      dir = -grad;
      memory.clear();
    }
    double step = 1.0;
    Eigen::VectorXd x_new, g_new;
    double e_new = e;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls, step *= 0.5) {
      x_new = x + step * dir;
      if (!project(x_new)) continue;
      e_new = evaluate(x_new, &g_new);
      if (e_new <= e + 1e-4 * grad.dot(x_new - x) && e_new < e) {
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    const Eigen::VectorXd s = x_new - x, y = g_new - grad;
    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
      memory.emplace_back(s, y);
      if (memory.size() > 5) memory.pop_front();
    }
    x = x_new;
    grad = g_new;
    e = e_new;
    ++res.steps;
  }
  unpack_parameters(x, layout, instances);
  res.energy_after = e;
  return res;
}

}  // namespace aggr

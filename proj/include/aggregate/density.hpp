#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "aggregate/element.hpp"
#include "aggregate/geometry.hpp"
#include "aggregate/grid.hpp"

namespace aggr {

struct DensityParams {
  double alpha = 1.0;  // influence-radius multiplier
  double beta = 1.0;   // sharpness
  bool use_indicator = true;
};

/// Support radius of a sample kernel: the kernel is cut to zero beyond it.
inline double support_radius(double radius, const DensityParams& params) {
  return 3.0 * params.alpha * radius;
}

/// Smoothed Heaviside kernel of one sample without the indicator factor.
inline double sample_density(const Vec3& center, double radius, const Vec3& x, const DensityParams& params) {
  const double u = (x - center).squaredNorm();
  const double cut = support_radius(radius, params);
  if (u >= cut * cut) return 0.0;
  return 0.5 + 0.5 * std::tanh(params.beta * (radius * radius - u / (params.alpha * params.alpha)));
}

/// d(phi_s)/d(x_s): chain rule through u = |x - x_s|^2, with
/// d(phi)/du = -beta / (2 alpha^2) (1 - tanh^2) and du/dx_s = -2 (x - x_s).
inline Vec3 sample_density_gradient(const Vec3& center, double radius, const Vec3& x,
                                    const DensityParams& params) {
  const Vec3 d = x - center;
  const double u = d.squaredNorm();
  const double cut = support_radius(radius, params);
  if (u >= cut * cut) return Vec3::Zero();
  const double a2 = params.alpha * params.alpha;
  const double th = std::tanh(params.beta * (radius * radius - u / a2));
  const double dphi_du = -params.beta / (2.0 * a2) * (1.0 - th * th);
  return -2.0 * dphi_du * d;
}

/// Uniform spatial hash over world samples. A query returns, in increasing
/// id order, every sample whose support may contain the point.
class SampleIndex {
 public:
  SampleIndex(const WorldSamples& samples, const DensityParams& params) : samples_(&samples) {
    double rmax = 0.0;
    for (double r : samples.radii) rmax = std::max(rmax, r);
    cell_ = std::max(support_radius(rmax, params), 1e-12);
    for (int s = 0; s < samples.size(); ++s) buckets_[key(bucket_of(samples.position(s)))].push_back(s);
  }

  std::vector<int> query(const Vec3& x) const {
    std::vector<int> out;
    const auto b = bucket_of(x);
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          auto it = buckets_.find(key({b[0] + dx, b[1] + dy, b[2] + dz}));
          if (it != buckets_.end()) out.insert(out.end(), it->second.begin(), it->second.end());
        }
    std::sort(out.begin(), out.end());
    return out;
  }

  const WorldSamples& samples() const { return *samples_; }

 private:
  std::array<std::int64_t, 3> bucket_of(const Vec3& x) const {
    return {static_cast<std::int64_t>(std::floor(x.x() / cell_)), static_cast<std::int64_t>(std::floor(x.y() / cell_)),
            static_cast<std::int64_t>(std::floor(x.z() / cell_))};
  }
  // 21 bits per axis; buckets further than 2^20 cells from the origin alias.
  static std::uint64_t key(const std::array<std::int64_t, 3>& b) {
    constexpr std::int64_t bias = 1 << 20;
    constexpr std::uint64_t mask = (1u << 21) - 1;
    return (static_cast<std::uint64_t>(b[0] + bias) & mask) |
           (static_cast<std::uint64_t>(b[1] + bias) & mask) << 21 |
           (static_cast<std::uint64_t>(b[2] + bias) & mask) << 42;
  }

  const WorldSamples* samples_;
  double cell_ = 1.0;
  std::unordered_map<std::uint64_t, std::vector<int>> buckets_;
};

/// Per-element indicator functions, indexed by instance.
using Occupancies = std::vector<ElementOccupancy>;

inline Occupancies make_occupancies(const std::vector<ElementInstance>& instances,
                                    const std::vector<ElementPrototype>& prototypes) {
  Occupancies occ;
  occ.reserve(instances.size());
  for (const auto& e : instances) occ.emplace_back(e, prototypes[e.prototype]);
  return occ;
}

struct PointDensity {
  double value = 0.0;
  int argmax = -1;  // -1 when no sample contributes
};

/// phi(x) = max over samples of phi_s(x); ties go to the lowest sample id.
/// `occupancy` may be null (indicator disabled).
inline PointDensity total_density(const Vec3& x, const SampleIndex& index, const DensityParams& params,
                                  const Occupancies* occupancy = nullptr) {
  const WorldSamples& ws = index.samples();
  PointDensity best;
  for (int s : index.query(x)) {
    double v = sample_density(ws.position(s), ws.radii[s], x, params);
    if (v <= best.value) continue;
    if (params.use_indicator && occupancy && !(*occupancy)[ws.element[s]].contains(x)) continue;
    best.value = v;
    best.argmax = s;
  }
  return best;
}

/// 2-point Gauss-Legendre offsets along one axis, relative to the cell centre.
inline std::array<Vec3, 8> quadrature_offsets(double h) {
  const double o = h / (2.0 * std::sqrt(3.0));
  std::array<Vec3, 8> q;
  for (int k = 0; k < 8; ++k) q[k] = Vec3(k & 1 ? o : -o, k & 2 ? o : -o, k & 4 ? o : -o);
  return q;
}

struct DensityGrid {
  HexMesh grid;
  Eigen::VectorXd rho;                // per cell, in [0, 1]
  std::vector<double> point_density;  // 8 per cell
  std::vector<int> argmax;            // 8 per cell, -1 for none
  std::vector<int> active_cells;      // cells visited, ascending
};

/// Cells whose box meets some sample's support box.
inline std::vector<int> cells_near_samples(const WorldSamples& ws, const HexMesh& grid, const DensityParams& params) {
  std::vector<char> mark(grid.num_cells(), 0);
  for (int s = 0; s < ws.size(); ++s) {
    const double reach = support_radius(ws.radii[s], params);
    const Vec3 lo = (ws.position(s) - Vec3::Constant(reach) - grid.origin) / grid.h;
    const Vec3 hi = (ws.position(s) + Vec3::Constant(reach) - grid.origin) / grid.h;
    std::array<int, 3> a, b;
    bool empty = false;
    for (int d = 0; d < 3; ++d) {
      a[d] = std::max(0, static_cast<int>(std::floor(lo[d])));
      b[d] = std::min(grid.dims[d] - 1, static_cast<int>(std::floor(hi[d])));
      empty |= a[d] > b[d];
    }
    if (empty) continue;
    for (int k = a[2]; k <= b[2]; ++k)
      for (int j = a[1]; j <= b[1]; ++j)
        for (int i = a[0]; i <= b[0]; ++i) mark[grid.cell_index(i, j, k)] = 1;
  }
  std::vector<int> cells;
  for (int c = 0; c < grid.num_cells(); ++c)
    if (mark[c]) cells.push_back(c);
  return cells;
}

/// Cell densities as the 8-point quadrature average of phi. Only cells near
/// some sample are evaluated; the rest stay empty.
inline DensityGrid rasterize_densities(const WorldSamples& ws, const HexMesh& grid, const DensityParams& params,
                                       const Occupancies* occupancy = nullptr) {
  DensityGrid out;
  out.grid = grid;
  out.rho = Eigen::VectorXd::Zero(grid.num_cells());
  out.point_density.assign(8 * static_cast<std::size_t>(grid.num_cells()), 0.0);
  out.argmax.assign(8 * static_cast<std::size_t>(grid.num_cells()), -1);
  if (ws.size() == 0) return out;
  out.active_cells = cells_near_samples(ws, grid, params);
  const SampleIndex index(ws, params);
  const auto offsets = quadrature_offsets(grid.h);
  const int n = static_cast<int>(out.active_cells.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (int a = 0; a < n; ++a) {
    const int c = out.active_cells[a];
    const Vec3 center = grid.cell_center(c);
    double sum = 0.0;
    for (int k = 0; k < 8; ++k) {
      const PointDensity p = total_density(center + offsets[k], index, params, occupancy);
      out.point_density[8 * c + k] = p.value;
      out.argmax[8 * c + k] = p.argmax;
      sum += p.value;
    }
    out.rho[c] = sum / 8.0;
  }
  return out;
}

/// Sparse d(rho_i)/d(p_s): one 3-vector per (cell, sample) pair.
struct DensityJacobian {
  struct Entry {
    int cell;
    int sample;
    Vec3 d;
  };
  std::vector<Entry> entries;  // sorted by cell, then sample
};

/// Derivative through the max: each quadrature point contributes only via
/// its argmax sample. The indicator is held constant.
inline DensityJacobian density_position_jacobian(const DensityGrid& dg, const WorldSamples& ws,
                                                 const DensityParams& params) {
  DensityJacobian jac;
  const auto offsets = quadrature_offsets(dg.grid.h);
  std::vector<std::pair<int, Vec3>> local;
  for (int c : dg.active_cells) {
    local.clear();
    const Vec3 center = dg.grid.cell_center(c);
    for (int k = 0; k < 8; ++k) {
      const int s = dg.argmax[8 * c + k];
      if (s < 0) continue;
      const Vec3 g = sample_density_gradient(ws.position(s), ws.radii[s], center + offsets[k], params) / 8.0;
      auto it = std::find_if(local.begin(), local.end(), [s](const auto& p) { return p.first == s; });
      if (it == local.end()) local.emplace_back(s, g);
      else it->second += g;
    }
    std::sort(local.begin(), local.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [s, g] : local)
      if (g.squaredNorm() > 0) jac.entries.push_back({c, s, g});
  }
  return jac;
}

}  // namespace aggr

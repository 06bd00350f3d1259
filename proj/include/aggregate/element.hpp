#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "aggregate/errors.hpp"
#include "aggregate/geometry.hpp"
#include "aggregate/rotation.hpp"
#include "aggregate/scene.hpp"
#include "aggregate/skeleton.hpp"

namespace aggr {

/// Immutable geometry of one element type, in its local frame.
struct ElementPrototype {
  std::string id;
  TriangleMesh mesh;                  // may be empty for sample-only prototypes
  std::vector<Vec3> samples;          // Y0
  std::vector<double> radii;          // local units
  Mat3 transform = Mat3::Identity();  // initial fixed transform A
  std::optional<SkeletonTree> skeleton;
  VoxelGrid<std::uint8_t> occupancy;  // empty when there is no mesh
  double omega_limit = 0.3 * std::numbers::pi;

  int size() const { return static_cast<int>(samples.size()); }
  bool deformable() const { return skeleton.has_value(); }
};

/// Degrees of freedom of one placed element.
struct ElementInstance {
  int prototype = 0;
  Vec3 translation = Vec3::Zero();
  Vec3 rotation = Vec3::Zero();  // exponential map
  std::vector<Vec3> omega;       // per-sample joint rotations; empty for rigid elements
  Mat3 fixed = Mat3::Identity(); // accumulated fixed transform A
};

struct SampleSet {
  std::vector<Vec3> points;
  std::vector<double> radii;
};

/// Samples spread inside a closed mesh by Lloyd relaxation over
/// rejection-sampled interior candidates. Radius: half the distance to the
/// nearest other sample, clamped to the distance to the surface.
inline SampleSet sample_prototype(const TriangleMesh& mesh, int m, std::uint64_t seed,
                                  int lloyd_iterations = 30) {
  if (m < 1) throw ValidationError("sample count must be at least 1");
  if (!is_closed(mesh)) throw GeometryError("prototype mesh is not closed");
  const Aabb box = mesh.bounds();
  const std::size_t wanted = std::max<std::size_t>(50 * static_cast<std::size_t>(m), 4000);
  const std::size_t max_draws = std::max<std::size_t>(200 * wanted, 1000000);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<Vec3> candidates;
  candidates.reserve(wanted);
  for (std::size_t draw = 0; draw < max_draws && candidates.size() < wanted; ++draw) {
    const Vec3 p = box.min + box.extent().cwiseProduct(Vec3(u01(rng), u01(rng), u01(rng)));
    if (inside_mesh(mesh, p)) candidates.push_back(p);
  }
  if (candidates.size() < wanted)
    throw GeometryError("could not draw enough interior points for " + std::to_string(m) + " samples");

  std::vector<Vec3> pts(candidates.begin(), candidates.begin() + m);
  std::vector<int> owner(candidates.size());
  for (int it = 0; it < lloyd_iterations; ++it) {
    std::vector<Vec3> sum(m, Vec3::Zero());
    std::vector<int> count(m, 0);
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int s = 0; s < m; ++s) {
        const double d = (candidates[c] - pts[s]).squaredNorm();
        if (d < bd) {
          bd = d;
          best = s;
        }
      }
      owner[c] = best;
      sum[best] += candidates[c];
      ++count[best];
    }
    for (int s = 0; s < m; ++s)
      if (count[s] > 0) pts[s] = sum[s] / count[s];
  }
  // Centroids of non-convex cells can leave the mesh; fall back to the
  // closest interior candidate owned by the cell.
  for (int s = 0; s < m; ++s) {
    if (inside_mesh(mesh, pts[s])) continue;
    double bd = std::numeric_limits<double>::infinity();
    Vec3 best = pts[s];
    for (std::size_t c = 0; c < candidates.size(); ++c)
      if (owner[c] == s && (candidates[c] - pts[s]).squaredNorm() < bd) {
        bd = (candidates[c] - pts[s]).squaredNorm();
        best = candidates[c];
      }
    pts[s] = best;
  }

  SampleSet out;
  out.points = pts;
  out.radii.resize(m);
  for (int s = 0; s < m; ++s) {
    double nearest = std::numeric_limits<double>::infinity();
    for (int o = 0; o < m; ++o)
      if (o != s) nearest = std::min(nearest, (pts[o] - pts[s]).norm());
    out.radii[s] = std::min(0.5 * nearest, unsigned_distance(mesh, pts[s]));
    if (!(out.radii[s] > 0)) throw GeometryError("sample lies on the mesh surface or coincides with another");
  }
  return out;
}

inline TriangleMesh prototype_mesh(const PrototypeSpec& spec, const std::string& base_dir) {
  switch (spec.primitive) {
    case PrimitiveKind::kSphere: return make_icosphere(spec.primitive_size[0], 2);
    case PrimitiveKind::kBox:
      return make_box_mesh(Vec3(spec.primitive_size[0], spec.primitive_size[1], spec.primitive_size[2]));
    case PrimitiveKind::kCylinder: return make_cylinder_mesh(spec.primitive_size[0], spec.primitive_size[1]);
    case PrimitiveKind::kNone: break;
  }
  TriangleMesh mesh = read_obj((std::filesystem::path(base_dir) / spec.mesh_path).string());
  const Vec3 c = mesh.bounds().center();
  for (auto& v : mesh.vertices) v -= c;
  return mesh;
}

/// Builds samples, skeleton and occupancy for one inventory line.
inline ElementPrototype make_prototype(const PrototypeSpec& spec, const std::string& base_dir,
                                       std::uint64_t seed) {
  ElementPrototype p;
  p.id = spec.id;
  p.mesh = prototype_mesh(spec, base_dir);
  p.transform = spec.transform;
  p.omega_limit = spec.omega_limit;
  if (!spec.explicit_samples.empty()) {
    for (const auto& s : spec.explicit_samples) {
      p.samples.emplace_back(s[0], s[1], s[2]);
      p.radii.push_back(s[3]);
    }
  } else {
    auto set = sample_prototype(p.mesh, spec.sample_count, seed);
    p.samples = std::move(set.points);
    p.radii = std::move(set.radii);
  }
  if (spec.deformable && p.size() >= 2) p.skeleton = make_skeleton(p.samples, seed);
  p.occupancy = voxelize_occupancy(p.mesh, spec.occupancy_resolution);
  return p;
}

/// Uniform scale factor of A; throws when A scales anisotropically and
/// `require_uniform` is set.
inline double uniform_scale(const Mat3& a, bool require_uniform) {
  const double s = std::cbrt(std::abs(a.determinant()));
  if (require_uniform) {
    const Mat3 ata = a.transpose() * a;
    if ((ata - s * s * Mat3::Identity()).norm() > 1e-9 * s * s)
      throw ValidationError("non-uniform scale in the fixed transform of a deformable element");
  }
  return s;
}

inline ElementInstance make_instance(int prototype_index, const ElementPrototype& p) {
  ElementInstance e;
  e.prototype = prototype_index;
  e.fixed = p.transform;
  if (p.deformable()) e.omega.assign(p.size(), Vec3::Zero());
  return e;
}

/// Y(theta): rest samples for rigid elements; for deformable ones each sample
/// is its parent's position plus the rotated bone offset, root fixed.
inline std::vector<Vec3> local_sample_positions(const ElementInstance& e, const ElementPrototype& p) {
  if (!p.deformable()) return p.samples;
  const auto& tree = *p.skeleton;
  std::vector<Vec3> y(p.size());
  y[tree.root] = p.samples[tree.root];
  for (int s : tree.order)
    if (s != tree.root) y[s] = rotation_from_expmap(e.omega[s]) * tree.offset[s] + y[tree.parent[s]];
  return y;
}

/// World-space samples of all elements, concatenated in instance order.
struct WorldSamples {
  Points positions;                 // 3 x |S|
  std::vector<double> radii;        // world units
  std::vector<int> element;         // owning instance
  std::vector<int> local;           // index within the prototype
  std::vector<int> first;           // first sample of each instance; size = instances + 1

  int size() const { return static_cast<int>(radii.size()); }
  Vec3 position(int s) const { return positions.col(s); }
};

inline WorldSamples world_sample_positions(const std::vector<ElementInstance>& instances,
                                           const std::vector<ElementPrototype>& prototypes) {
  WorldSamples w;
  int total = 0;
  w.first.push_back(0);
  for (const auto& e : instances) {
    total += prototypes[e.prototype].size();
    w.first.push_back(total);
  }
  w.positions.resize(3, total);
  w.radii.reserve(total);
  for (std::size_t ei = 0; ei < instances.size(); ++ei) {
    const auto& e = instances[ei];
    const auto& p = prototypes[e.prototype];
    const double scale = uniform_scale(e.fixed, p.deformable());
    const Mat3 ra = rotation_from_expmap(e.rotation) * e.fixed;
    const auto y = local_sample_positions(e, p);
    for (int s = 0; s < p.size(); ++s) {
      w.positions.col(w.first[ei] + s) = ra * y[s] + e.translation;
      w.radii.push_back(p.radii[s] * scale);
      w.element.push_back(static_cast<int>(ei));
      w.local.push_back(s);
    }
  }
  return w;
}

/// Folds a large rotation into the fixed transform (A <- R A, gamma <- 0)
/// once its angle reaches pi. Returns true if the instance changed.
inline bool reparameterize_rotation(ElementInstance& e) {
  if (e.rotation.norm() < std::numbers::pi) return false;
  e.fixed = rotation_from_expmap(e.rotation) * e.fixed;
  e.rotation.setZero();
  return true;
}

/// chi_e(x) for one placed element, with the world-to-local map and the
/// current local sample positions cached.
class ElementOccupancy {
 public:
  ElementOccupancy(const ElementInstance& e, const ElementPrototype& p)
      : proto_(&p), translation_(e.translation) {
    to_local_ = (rotation_from_expmap(e.rotation) * e.fixed).inverse();
    if (p.deformable() || p.occupancy.empty()) local_samples_ = local_sample_positions(e, p);
  }

  /// Rigid elements use the voxelised mesh; deformable ones (and mesh-less
  /// prototypes) the union of their sample balls.
  bool contains(const Vec3& x) const {
    const Vec3 local = to_local_ * (x - translation_);
    if (!local_samples_.empty()) {
      for (std::size_t s = 0; s < local_samples_.size(); ++s)
        if ((local - local_samples_[s]).squaredNorm() <= proto_->radii[s] * proto_->radii[s]) return true;
      return false;
    }
    return nearest_voxel<std::uint8_t>(proto_->occupancy, local, 0) != 0;
  }

 private:
  const ElementPrototype* proto_;
  Vec3 translation_;
  Mat3 to_local_;
  std::vector<Vec3> local_samples_;
};

inline bool occupancy_query(const ElementInstance& e, const ElementPrototype& p, const Vec3& x) {
  return ElementOccupancy(e, p).contains(x);
}

/// Rigidly transformed prototype mesh (R A v + t).
inline TriangleMesh transformed_mesh(const ElementInstance& e, const ElementPrototype& p) {
  TriangleMesh m = p.mesh;
  const Mat3 ra = rotation_from_expmap(e.rotation) * e.fixed;
  for (auto& v : m.vertices) v = ra * v + e.translation;
  return m;
}

}  // namespace aggr

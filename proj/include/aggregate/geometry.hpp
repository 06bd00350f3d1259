#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "aggregate/errors.hpp"

namespace aggr {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Points = Eigen::Matrix<double, 3, Eigen::Dynamic>;

struct Aabb {
  Vec3 min = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 max = Vec3::Constant(-std::numeric_limits<double>::infinity());

  void expand(const Vec3& p) {
    min = min.cwiseMin(p);
    max = max.cwiseMax(p);
  }
  bool empty() const { return (max.array() < min.array()).any(); }
  Vec3 extent() const { return max - min; }
  Vec3 center() const { return 0.5 * (min + max); }
  double diagonal() const { return empty() ? 0.0 : extent().norm(); }
  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
  bool intersects(const Aabb& o) const {
    return (min.array() <= o.max.array()).all() && (o.min.array() <= max.array()).all();
  }
};

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;

  Aabb bounds() const {
    Aabb box;
    for (const auto& v : vertices) box.expand(v);
    return box;
  }
};

// ---------------------------------------------------------------------------
// OBJ

/// Reads vertices and faces. Polygons with more than three corners are
/// rejected; texture and normal indices ("f 1/2/3") are ignored.
inline TriangleMesh parse_obj(std::istream& in, const std::string& name = "<obj>") {
  TriangleMesh mesh;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag) || tag[0] == '#') continue;
    if (tag == "v") {
      Vec3 v;
      if (!(ls >> v.x() >> v.y() >> v.z()))
        throw GeometryError(name + ":" + std::to_string(lineno) + ": bad vertex");
      mesh.vertices.push_back(v);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ls >> tok) {
        int i = 0;
        try {
          i = std::stoi(tok.substr(0, tok.find('/')));
        } catch (const std::exception&) {
          throw GeometryError(name + ":" + std::to_string(lineno) + ": bad face index \"" + tok + "\"");
        }
        if (i < 0) i = static_cast<int>(mesh.vertices.size()) + i + 1;
        idx.push_back(i - 1);
      }
      if (idx.size() < 3) throw GeometryError(name + ":" + std::to_string(lineno) + ": face needs 3 vertices");
      for (int i : idx)
        if (i < 0 || i >= static_cast<int>(mesh.vertices.size()))
          throw GeometryError(name + ":" + std::to_string(lineno) + ": face index out of range");
      // Polygons are fanned from their first vertex.
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) mesh.triangles.push_back({idx[0], idx[k], idx[k + 1]});
    }
  }
  return mesh;
}

inline TriangleMesh read_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, "cannot open mesh file");
  return parse_obj(in, path);
}

/// Appends `mesh` to an OBJ stream. `vertex_offset` is the number of vertices
/// already written to the stream (OBJ indices are global and 1-based).
inline void write_obj(std::ostream& out, const TriangleMesh& mesh, std::size_t vertex_offset = 0,
                      const std::string& group = {}) {
  out.precision(17);
  if (!group.empty()) out << "o " << group << "\n";
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << "\n";
  for (const auto& t : mesh.triangles)
    out << "f " << t[0] + 1 + vertex_offset << ' ' << t[1] + 1 + vertex_offset << ' '
        << t[2] + 1 + vertex_offset << "\n";
}

/// Every undirected edge is shared by exactly two triangles.
inline bool is_closed(const TriangleMesh& mesh) {
  if (mesh.triangles.empty()) return false;
  std::map<std::pair<int, int>, int> edges;
  for (const auto& t : mesh.triangles)
    for (int k = 0; k < 3; ++k) {
      int a = t[k], b = t[(k + 1) % 3];
      ++edges[{std::min(a, b), std::max(a, b)}];
    }
  return std::all_of(edges.begin(), edges.end(), [](const auto& e) { return e.second == 2; });
}

// ---------------------------------------------------------------------------
// Primitive meshes (outward-facing, closed)

inline TriangleMesh make_box_mesh(const Vec3& half) {
  TriangleMesh m;
  for (int i = 0; i < 8; ++i)
    m.vertices.emplace_back((i & 1 ? 1 : -1) * half.x(), (i & 2 ? 1 : -1) * half.y(),
                            (i & 4 ? 1 : -1) * half.z());
  m.triangles = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                 {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  return m;
}

inline TriangleMesh make_icosphere(double radius, int subdivisions = 2) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  TriangleMesh m;
  m.vertices = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  m.triangles = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                 {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                 {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                 {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (auto& v : m.vertices) v.normalize();
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
      auto key = std::make_pair(std::min(a, b), std::max(a, b));
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      m.vertices.push_back((m.vertices[a] + m.vertices[b]).normalized());
      int id = static_cast<int>(m.vertices.size()) - 1;
      mid.emplace(key, id);
      return id;
    };
    std::vector<std::array<int, 3>> next;
    for (const auto& f : m.triangles) {
      int a = midpoint(f[0], f[1]), b = midpoint(f[1], f[2]), c = midpoint(f[2], f[0]);
      next.push_back({f[0], a, c});
      next.push_back({f[1], b, a});
      next.push_back({f[2], c, b});
      next.push_back({a, b, c});
    }
    m.triangles = std::move(next);
  }
  for (auto& v : m.vertices) v *= radius;
  return m;
}

/// Closed cylinder along z centred at the origin.
inline TriangleMesh make_cylinder_mesh(double radius, double height, int segments = 32) {
  TriangleMesh m;
  const double hz = 0.5 * height;
  for (int i = 0; i < segments; ++i) {
    double a = 2.0 * std::numbers::pi * i / segments;
    m.vertices.emplace_back(radius * std::cos(a), radius * std::sin(a), -hz);
    m.vertices.emplace_back(radius * std::cos(a), radius * std::sin(a), hz);
  }
  int bottom = static_cast<int>(m.vertices.size());
  m.vertices.emplace_back(0, 0, -hz);
  int top = bottom + 1;
  m.vertices.emplace_back(0, 0, hz);
  for (int i = 0; i < segments; ++i) {
    int j = (i + 1) % segments;
    int b0 = 2 * i, t0 = 2 * i + 1, b1 = 2 * j, t1 = 2 * j + 1;
    m.triangles.push_back({b0, b1, t0});
    m.triangles.push_back({t0, b1, t1});
    m.triangles.push_back({bottom, b1, b0});
    m.triangles.push_back({top, t0, t1});
  }
  return m;
}

// ---------------------------------------------------------------------------
// Distance and inside/outside queries

/// Closest point on triangle (a, b, c) to p (Ericson, Real-Time Collision
/// Detection, 5.1.5).
inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  Vec3 ab = b - a, ac = c - a, ap = p - a;
  double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;
  Vec3 bp = p - b;
  double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;
  double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + ab * (d1 / (d1 - d3));
  Vec3 cp = p - c;
  double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;
  double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + ac * (d2 / (d2 - d6));
  double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0)
    return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

inline double unsigned_distance(const TriangleMesh& mesh, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& t : mesh.triangles) {
    const Vec3 q = closest_point_on_triangle(p, mesh.vertices[t[0]], mesh.vertices[t[1]],
                                             mesh.vertices[t[2]]);
    best = std::min(best, (q - p).squaredNorm());
  }
  return std::sqrt(best);
}

/// Generalized winding number: ~1 inside a closed outward-oriented mesh,
/// ~0 outside. Solid angles by Van Oosterom and Strackee.
inline double winding_number(const TriangleMesh& mesh, const Vec3& p) {
  double total = 0.0;
  for (const auto& t : mesh.triangles) {
    Vec3 a = mesh.vertices[t[0]] - p, b = mesh.vertices[t[1]] - p, c = mesh.vertices[t[2]] - p;
    double la = a.norm(), lb = b.norm(), lc = c.norm();
    double num = a.dot(b.cross(c));
    double den = la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
    total += 2.0 * std::atan2(num, den);
  }
  return total / (4.0 * std::numbers::pi);
}

inline bool inside_mesh(const TriangleMesh& mesh, const Vec3& p) {
  return winding_number(mesh, p) > 0.5;
}

// ---------------------------------------------------------------------------
// Voxel grids

/// Values stored at voxel centres origin + (i + 0.5) * spacing.
template <typename T>
struct VoxelGrid {
  Vec3 origin = Vec3::Zero();
  double spacing = 1.0;
  std::array<int, 3> dims{0, 0, 0};
  std::vector<T> data;

  std::size_t index(int i, int j, int k) const {
    return static_cast<std::size_t>(i) +
           static_cast<std::size_t>(dims[0]) * (static_cast<std::size_t>(j) +
                                                static_cast<std::size_t>(dims[1]) * k);
  }
  Vec3 center(int i, int j, int k) const {
    return origin + spacing * Vec3(i + 0.5, j + 0.5, k + 0.5);
  }
  Aabb bounds() const {
    Aabb b;
    b.min = origin;
    b.max = origin + spacing * Vec3(dims[0], dims[1], dims[2]);
    return b;
  }
  bool empty() const { return data.empty(); }
};

/// Cubic voxels covering `box` padded by two voxels, with `resolution` voxels
/// along the longest axis of `box`.
template <typename T>
VoxelGrid<T> make_voxel_grid(const Aabb& box, int resolution) {
  VoxelGrid<T> g;
  const double longest = box.extent().maxCoeff();
  g.spacing = longest / resolution;
  for (int a = 0; a < 3; ++a) {
    g.dims[a] = static_cast<int>(std::ceil(box.extent()[a] / g.spacing - 1e-9)) + 4;
    g.origin[a] = box.center()[a] - 0.5 * g.dims[a] * g.spacing;
  }
  g.data.assign(static_cast<std::size_t>(g.dims[0]) * g.dims[1] * g.dims[2], T{});
  return g;
}

/// Nearest-voxel lookup; outside the grid returns `outside`.
template <typename T>
T nearest_voxel(const VoxelGrid<T>& g, const Vec3& p, T outside) {
  Vec3 q = (p - g.origin) / g.spacing;
  std::array<int, 3> ijk;
  for (int a = 0; a < 3; ++a) {
    if (!(q[a] >= 0.0) || q[a] >= g.dims[a]) return outside;
    ijk[a] = static_cast<int>(q[a]);
  }
  return g.data[g.index(ijk[0], ijk[1], ijk[2])];
}

/// Trilinear interpolation of voxel-centre samples. Points beyond the outer
/// ring of centres are clamped onto it and the clamp distance is added, which
/// keeps the result positive and growing away from the grid.
inline double trilinear(const VoxelGrid<double>& g, const Vec3& p) {
  Vec3 q = (p - g.origin) / g.spacing - Vec3::Constant(0.5);
  Vec3 clamped;
  for (int a = 0; a < 3; ++a) clamped[a] = std::clamp(q[a], 0.0, static_cast<double>(g.dims[a] - 1));
  const double extra = (q - clamped).norm() * g.spacing;
  std::array<int, 3> i0;
  Vec3 f;
  for (int a = 0; a < 3; ++a) {
    i0[a] = std::min(static_cast<int>(clamped[a]), g.dims[a] - 2);
    f[a] = clamped[a] - i0[a];
  }
  double v = 0.0;
  for (int c = 0; c < 8; ++c) {
    int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
    double w = (dx ? f.x() : 1 - f.x()) * (dy ? f.y() : 1 - f.y()) * (dz ? f.z() : 1 - f.z());
    v += w * g.data[g.index(i0[0] + dx, i0[1] + dy, i0[2] + dz)];
  }
  return v + extra;
}

/// Signed distance samples of a closed mesh: sign from the winding number,
/// magnitude from the exact point-triangle distance.
inline VoxelGrid<double> voxelize_sdf(const TriangleMesh& mesh, int resolution) {
  if (!is_closed(mesh)) throw GeometryError("signed distance requires a closed mesh");
  auto g = make_voxel_grid<double>(mesh.bounds(), resolution);
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        const Vec3 p = g.center(i, j, k);
        const double d = unsigned_distance(mesh, p);
        g.data[g.index(i, j, k)] = inside_mesh(mesh, p) ? -d : d;
      }
  return g;
}

/// Inside/outside flags at voxel centres by crossing parity along +x rows.
/// Rows are nudged off the voxel centres by a tiny irrational offset so rays
/// do not graze mesh edges.
inline VoxelGrid<std::uint8_t> voxelize_occupancy(const TriangleMesh& mesh, int resolution) {
  if (!is_closed(mesh)) throw GeometryError("occupancy requires a closed mesh");
  auto g = make_voxel_grid<std::uint8_t>(mesh.bounds(), resolution);
  const double dy = 1.2345678e-7 * g.spacing, dz = 2.7182818e-7 * g.spacing;
  std::vector<double> hits;
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j) {
      const Vec3 c = g.center(0, j, k);
      const double y = c.y() + dy, z = c.z() + dz;
      hits.clear();
      for (const auto& t : mesh.triangles) {
        const Vec3& a = mesh.vertices[t[0]];
        const Vec3& b = mesh.vertices[t[1]];
        const Vec3& d = mesh.vertices[t[2]];
        // Barycentrics of (y, z) in the triangle projected onto the yz-plane.
        const double det = (b.y() - a.y()) * (d.z() - a.z()) - (d.y() - a.y()) * (b.z() - a.z());
        if (det == 0.0) continue;
        const double u = ((y - a.y()) * (d.z() - a.z()) - (d.y() - a.y()) * (z - a.z())) / det;
        const double v = ((b.y() - a.y()) * (z - a.z()) - (y - a.y()) * (b.z() - a.z())) / det;
        if (u < 0 || v < 0 || u + v > 1) continue;
        hits.push_back(a.x() + u * (b.x() - a.x()) + v * (d.x() - a.x()));
      }
      std::sort(hits.begin(), hits.end());
      std::size_t h = 0;
      for (int i = 0; i < g.dims[0]; ++i) {
        const double x = g.center(i, j, k).x();
        while (h < hits.size() && hits[h] < x) ++h;
        g.data[g.index(i, j, k)] = (h % 2) ? 1 : 0;
      }
    }
  return g;
}

}  // namespace aggr

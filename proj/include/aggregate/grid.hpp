#pragma once

#include <array>
#include <cstddef>

#include "aggregate/errors.hpp"
#include "aggregate/geometry.hpp"

namespace aggr {

/// Regular grid of cubic H8 cells. Nodes and cells are numbered
/// lexicographically with x fastest; dof 3*node + axis.
struct HexMesh {
  std::array<int, 3> dims{1, 1, 1};  // cells per axis
  Vec3 origin = Vec3::Zero();
  double h = 1.0;

  HexMesh() = default;
  HexMesh(std::array<int, 3> dims, Vec3 origin, double h) : dims(dims), origin(origin), h(h) {
    for (int d : dims)
      if (d < 1) throw ValidationError("grid needs at least one cell per axis");
    if (!(h > 0)) throw ValidationError("grid cell size must be positive");
  }

  int num_cells() const { return dims[0] * dims[1] * dims[2]; }
  int num_nodes() const { return (dims[0] + 1) * (dims[1] + 1) * (dims[2] + 1); }
  int num_dofs() const { return 3 * num_nodes(); }
  double cell_volume() const { return h * h * h; }

  int cell_index(int i, int j, int k) const { return i + dims[0] * (j + dims[1] * k); }
  std::array<int, 3> cell_coords(int c) const {
    return {c % dims[0], (c / dims[0]) % dims[1], c / (dims[0] * dims[1])};
  }
  int node_index(int i, int j, int k) const {
    return i + (dims[0] + 1) * (j + (dims[1] + 1) * k);
  }
  std::array<int, 3> node_coords(int n) const {
    return {n % (dims[0] + 1), (n / (dims[0] + 1)) % (dims[1] + 1),
            n / ((dims[0] + 1) * (dims[1] + 1))};
  }
  Vec3 node_position(int n) const {
    auto c = node_coords(n);
    return origin + h * Vec3(c[0], c[1], c[2]);
  }
  Vec3 cell_center(int c) const {
    auto ijk = cell_coords(c);
    return origin + h * Vec3(ijk[0] + 0.5, ijk[1] + 0.5, ijk[2] + 0.5);
  }

  /// Local node a (bit 0: +x, bit 1: +y, bit 2: +z) of cell c.
  std::array<int, 8> cell_nodes(int c) const {
    auto [i, j, k] = cell_coords(c);
    std::array<int, 8> n;
    for (int a = 0; a < 8; ++a) n[a] = node_index(i + (a & 1), j + ((a >> 1) & 1), k + ((a >> 2) & 1));
    return n;
  }
  std::array<int, 24> cell_dofs(int c) const {
    auto n = cell_nodes(c);
    std::array<int, 24> d;
    for (int a = 0; a < 8; ++a)
      for (int x = 0; x < 3; ++x) d[3 * a + x] = 3 * n[a] + x;
    return d;
  }

  Aabb bounds() const {
    Aabb b;
    b.min = origin;
    b.max = origin + h * Vec3(dims[0], dims[1], dims[2]);
    return b;
  }
};

}  // namespace aggr

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <Eigen/Geometry>
#include <gtest/gtest.h>

#include "aggregate/delaunay.hpp"
#include "aggregate/geometry.hpp"
#include "aggregate/rotation.hpp"
#include "aggregate/skeleton.hpp"

using namespace aggr;

namespace {

double signed_volume(const TriangleMesh& m) {
  double v = 0.0;
  for (const auto& t : m.triangles) v += m.vertices[t[0]].dot(m.vertices[t[1]].cross(m.vertices[t[2]])) / 6.0;
  return v;
}

double box_distance(const Vec3& half, const Vec3& p) {
  const Vec3 q = p.cwiseAbs() - half;
  return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
}

// Prim's algorithm on the complete graph.
double brute_mst_length(const std::vector<Vec3>& pts) {
  const int n = static_cast<int>(pts.size());
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<bool> in(n, false);
  best[0] = 0;
  double total = 0;
  for (int it = 0; it < n; ++it) {
    int u = -1;
    for (int v = 0; v < n; ++v)
      if (!in[v] && (u < 0 || best[v] < best[u])) u = v;
    in[u] = true;
    total += best[u];
    for (int v = 0; v < n; ++v)
      if (!in[v]) best[v] = std::min(best[v], (pts[u] - pts[v]).norm());
  }
  return total;
}

std::vector<Vec3> random_points(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Vec3> p(n);
  for (auto& v : p) v = Vec3(u(rng), u(rng), u(rng));
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// Meshes and distance queries

TEST(Mesh, PrimitivesAreClosedAndOutward) {
  const auto box = make_box_mesh(Vec3(1, 2, 3));
  EXPECT_TRUE(is_closed(box));
  EXPECT_NEAR(signed_volume(box), 48.0, 1e-12);

  const int n = 32;
  const auto cyl = make_cylinder_mesh(1.5, 2.0, n);
  EXPECT_TRUE(is_closed(cyl));
  // Prism over a regular n-gon.
  EXPECT_NEAR(signed_volume(cyl), 0.5 * n * 1.5 * 1.5 * std::sin(2 * std::numbers::pi / n) * 2.0, 1e-12);

  const auto ico = make_icosphere(2.0, 2);
  EXPECT_TRUE(is_closed(ico));
  const double v = signed_volume(ico), sphere = 4.0 / 3.0 * std::numbers::pi * 8.0;
  EXPECT_LT(v, sphere);
  EXPECT_GT(v, 0.95 * sphere);
  for (const auto& p : ico.vertices) EXPECT_NEAR(p.norm(), 2.0, 1e-12);
}

TEST(Mesh, OpenMeshIsNotClosed) {
  auto box = make_box_mesh(Vec3::Ones());
  box.triangles.pop_back();
  EXPECT_FALSE(is_closed(box));
  EXPECT_THROW(voxelize_sdf(box, 8), GeometryError);
  EXPECT_THROW(voxelize_occupancy(box, 8), GeometryError);
}

TEST(Mesh, ClosestPointMatchesDenseSampling) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2, 2);
  const Vec3 a(0, 0, 0), b(1, 0.2, 0), c(0.3, 1, 0.4);
  const int k = 200;
  for (int trial = 0; trial < 50; ++trial) {
    const Vec3 p(u(rng), u(rng), u(rng));
    const double d = (closest_point_on_triangle(p, a, b, c) - p).norm();
    double sampled = std::numeric_limits<double>::infinity();
    for (int i = 0; i <= k; ++i)
      for (int j = 0; i + j <= k; ++j) {
        const Vec3 q = a + (b - a) * (double(i) / k) + (c - a) * (double(j) / k);
        sampled = std::min(sampled, (q - p).norm());
      }
    EXPECT_LE(d, sampled + 1e-12);
    EXPECT_GE(d, sampled - 2.0 / k);
  }
}

TEST(Mesh, BoxDistanceAndWindingNumber) {
  const Vec3 half(1, 2, 0.5);
  const auto box = make_box_mesh(half);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec3 p(u(rng), u(rng), u(rng));
    const double sd = box_distance(half, p);
    if (std::abs(sd) < 1e-6) continue;
    EXPECT_NEAR(unsigned_distance(box, p), std::abs(sd), 1e-12);
    EXPECT_NEAR(winding_number(box, p), sd < 0 ? 1.0 : 0.0, 1e-9);
    EXPECT_EQ(inside_mesh(box, p), sd < 0);
  }
}

TEST(Obj, ParsesPolygonsAndNegativeIndices) {
  std::istringstream in(
      "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1/1 2/2/2 3/3/3 4/4/4\nf -4 -2 -1\n");
  const auto m = parse_obj(in);
  ASSERT_EQ(m.vertices.size(), 4u);
  ASSERT_EQ(m.triangles.size(), 3u);
  EXPECT_EQ(m.triangles[0], (std::array<int, 3>{0, 1, 2}));
  EXPECT_EQ(m.triangles[1], (std::array<int, 3>{0, 2, 3}));
  EXPECT_EQ(m.triangles[2], (std::array<int, 3>{0, 2, 3}));
}

TEST(Obj, RejectsBadInput) {
  std::istringstream bad_index("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n");
  EXPECT_THROW(parse_obj(bad_index), GeometryError);
  std::istringstream bad_vertex("v 0 0\n");
  EXPECT_THROW(parse_obj(bad_vertex), GeometryError);
  std::istringstream bad_token("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 x 3\n");
  EXPECT_THROW(parse_obj(bad_token), GeometryError);
  EXPECT_THROW(read_obj("/nonexistent/file.obj"), ParseError);
}

TEST(Obj, WriteReadRoundTrip) {
  const auto ico = make_icosphere(1.3, 1);
  std::stringstream ss;
  write_obj(ss, ico);
  const auto back = parse_obj(ss);
  ASSERT_EQ(back.vertices.size(), ico.vertices.size());
  ASSERT_EQ(back.triangles, ico.triangles);
  for (std::size_t i = 0; i < ico.vertices.size(); ++i) EXPECT_EQ(back.vertices[i], ico.vertices[i]);
}

TEST(Voxel, OccupancyOfBoxMatchesAnalytic) {
  const Vec3 half(1, 0.5, 0.75);
  const auto box = make_box_mesh(half);
  const auto g = voxelize_occupancy(box, 24);
  int mismatches = 0;
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        const double sd = box_distance(half, g.center(i, j, k));
        if (std::abs(sd) < 1e-9) continue;
        mismatches += (g.data[g.index(i, j, k)] != 0) != (sd < 0);
      }
  EXPECT_EQ(mismatches, 0);
  EXPECT_TRUE(g.bounds().contains(box.bounds().min));
  EXPECT_TRUE(g.bounds().contains(box.bounds().max));
}

TEST(Voxel, OccupancyOfSphereMatchesWindingNumber) {
  const auto ico = make_icosphere(1.0, 2);
  const auto g = voxelize_occupancy(ico, 16);
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i) {
        const Vec3 p = g.center(i, j, k);
        if (unsigned_distance(ico, p) < 1e-6) continue;
        EXPECT_EQ(g.data[g.index(i, j, k)] != 0, inside_mesh(ico, p)) << p.transpose();
      }
}

TEST(Voxel, SignedDistanceOfBox) {
  const Vec3 half(1, 1, 1);
  const auto g = voxelize_sdf(make_box_mesh(half), 16);
  for (int k = 0; k < g.dims[2]; ++k)
    for (int j = 0; j < g.dims[1]; ++j)
      for (int i = 0; i < g.dims[0]; ++i)
        EXPECT_NEAR(g.data[g.index(i, j, k)], box_distance(half, g.center(i, j, k)), 1e-12);
  // Trilinear interpolation reproduces the field exactly where it is linear
  // (along a face normal, away from edges).
  EXPECT_NEAR(trilinear(g, Vec3(0.1, 0.05, 1.2)), 0.2, 1e-9);
  // Far outside: positive and growing.
  EXPECT_GT(trilinear(g, Vec3(10, 0, 0)), trilinear(g, Vec3(5, 0, 0)));
}

TEST(Voxel, NearestVoxelOutsideReturnsDefault) {
  auto g = make_voxel_grid<std::uint8_t>(Aabb{Vec3::Zero(), Vec3::Ones()}, 4);
  std::fill(g.data.begin(), g.data.end(), 1);
  EXPECT_EQ(nearest_voxel<std::uint8_t>(g, Vec3(0.5, 0.5, 0.5), 0), 1);
  EXPECT_EQ(nearest_voxel<std::uint8_t>(g, Vec3(50, 0.5, 0.5), 0), 0);
  EXPECT_EQ(nearest_voxel<std::uint8_t>(g, Vec3(std::nan(""), 0.5, 0.5), 7), 7);
}

// ---------------------------------------------------------------------------
// Rotations

TEST(Rotation, ZeroIsIdentity) { EXPECT_EQ(rotation_from_expmap(Vec3::Zero()), Mat3::Identity()); }

TEST(Rotation, MatchesAngleAxis) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec3 v = 2.0 * Vec3(n01(rng), n01(rng), n01(rng));
    const Mat3 ref = Eigen::AngleAxisd(v.norm(), v.normalized()).toRotationMatrix();
    EXPECT_LT((rotation_from_expmap(v) - ref).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Rotation, SmallAngleBranchIsContinuous) {
  const Vec3 axis = Vec3(1, -2, 0.5).normalized();
  for (double t : {1e-12, 1e-9, 0.99e-8, 1.01e-8, 1e-7, 1e-5}) {
    const Vec3 v = t * axis;
    const Mat3 ref = Eigen::AngleAxisd(t, axis).toRotationMatrix();
    EXPECT_LT((rotation_from_expmap(v) - ref).cwiseAbs().maxCoeff(), 1e-15) << t;
  }
}

TEST(Rotation, DerivativeMatchesCentralDifferences) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> n01(0, 1);
  const double h = 1e-6;
  for (int trial = 0; trial < 100; ++trial) {
    Vec3 v = Vec3(n01(rng), n01(rng), n01(rng));
    if (trial % 10 == 0) v *= 1e-9;  // small-angle branch
    for (int i = 0; i < 3; ++i) {
      const Vec3 e = h * Vec3::Unit(i);
      const Mat3 fd = (rotation_from_expmap(v + e) - rotation_from_expmap(v - e)) / (2 * h);
      const Mat3 an = rotation_expmap_derivative(v, i);
      EXPECT_LT((an - fd).norm(), 1e-6 * std::max(1.0, an.norm())) << v.transpose();
    }
  }
}

TEST(Rotation, DerivativeAtZeroIsGenerator) {
  for (int i = 0; i < 3; ++i) EXPECT_LT((rotation_expmap_derivative(Vec3::Zero(), i) - skew(Vec3::Unit(i))).norm(), 1e-15);
}

// ---------------------------------------------------------------------------
// Delaunay, union-find, MST

TEST(Delaunay, SmallConfigurations) {
  EXPECT_TRUE(delaunay_edges({}).empty());
  EXPECT_TRUE(delaunay_edges({Vec3::Zero()}).empty());
  EXPECT_EQ(delaunay_edges({Vec3::Zero(), Vec3::Ones()}), (std::vector<Edge>{{0, 1}}));
  // Tetrahedron: complete graph.
  const auto tet = delaunay_edges({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)});
  EXPECT_EQ(tet.size(), 6u);
  // Collinear points: a chain in order along the line.
  const auto line = delaunay_edges({Vec3(0, 0, 0), Vec3(2, 2, 2), Vec3(1, 1, 1), Vec3(3, 3, 3)});
  EXPECT_EQ(line, (std::vector<Edge>{{0, 2}, {1, 2}, {1, 3}}));
  // Planar unit square with a slightly perturbed corner: 4 sides and 1 diagonal.
  const auto sq = delaunay_edges({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(1.01, 1, 0), Vec3(0, 1, 0)});
  EXPECT_EQ(sq.size(), 5u);
}

TEST(Delaunay, CubeCornersIncludeAllCubeEdges) {
  std::vector<Vec3> cube;
  for (int i = 0; i < 8; ++i) cube.emplace_back(i & 1, (i >> 1) & 1, (i >> 2) & 1);
  const auto edges = delaunay_edges(cube);
  const std::set<Edge> set(edges.begin(), edges.end());
  for (int a = 0; a < 8; ++a)
    for (int b = a + 1; b < 8; ++b)
      if (std::popcount(static_cast<unsigned>(a ^ b)) == 1) {
        EXPECT_TRUE(set.count({a, b})) << a << "-" << b;
      }
}

TEST(Delaunay, ContainsEuclideanMinimumSpanningTree) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const auto pts = random_points(5 + trial * 3, rng);
    const auto edges = delaunay_edges(pts, trial);
    for (const auto& [a, b] : edges) EXPECT_LT(a, b);
    EXPECT_TRUE(std::is_sorted(edges.begin(), edges.end()));
    const auto tree = minimum_spanning_tree(pts, edges);
    EXPECT_EQ(tree.size(), pts.size() - 1);
    double len = 0;
    for (const auto& [a, b] : tree) len += (pts[a] - pts[b]).norm();
    EXPECT_NEAR(len, brute_mst_length(pts), 1e-12);
  }
}

TEST(UnionFind, MergesAndCounts) {
  UnionFind uf(5);
  EXPECT_EQ(uf.components(), 5);
  EXPECT_TRUE(uf.merge(0, 1));
  EXPECT_FALSE(uf.merge(1, 0));
  EXPECT_TRUE(uf.merge(3, 4));
  EXPECT_EQ(uf.components(), 3);
  EXPECT_EQ(uf.find(0), uf.find(1));
  EXPECT_NE(uf.find(0), uf.find(3));
}

// ---------------------------------------------------------------------------
// Skeleton trees

TEST(Skeleton, RootOfPathAndStar) {
  EXPECT_EQ(select_root(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}}), 2);
  EXPECT_EQ(select_root(5, {{3, 0}, {3, 1}, {3, 2}, {3, 4}}), 3);
  EXPECT_EQ(select_root(1, {}), 0);
}

TEST(Skeleton, RootMinimisesHeightOnRandomTrees) {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 2 + trial;
    std::vector<Edge> edges;
    for (int v = 1; v < n; ++v) edges.push_back({std::uniform_int_distribution<int>(0, v - 1)(rng), v});
    int best = n;
    for (int r = 0; r < n; ++r) best = std::min(best, rooted_height(n, edges, r));
    EXPECT_EQ(rooted_height(n, edges, select_root(n, edges)), best);
  }
}

TEST(Skeleton, BuildsRootedMst) {
  std::mt19937_64 rng(23);
  const auto pts = random_points(15, rng);
  const SkeletonTree t = make_skeleton(pts, 1);
  ASSERT_EQ(t.size(), 15);
  EXPECT_EQ(t.parent[t.root], -1);
  EXPECT_EQ(t.order.front(), t.root);
  std::vector<int> position(t.size());
  for (int k = 0; k < t.size(); ++k) position[t.order[k]] = k;
  double len = 0;
  for (int s = 0; s < t.size(); ++s) {
    if (s == t.root) continue;
    EXPECT_LT(position[t.parent[s]], position[s]);  // parents first
    EXPECT_EQ(t.offset[s], pts[s] - pts[t.parent[s]]);
    len += t.offset[s].norm();
  }
  EXPECT_NEAR(len, brute_mst_length(pts), 1e-12);
}

TEST(Skeleton, Errors) {
  EXPECT_THROW(build_skeleton({Vec3::Zero()}), ValidationError);
  const std::vector<Vec3> pts{Vec3::Zero(), Vec3::UnitX(), Vec3::UnitY()};
  EXPECT_THROW(root_skeleton(pts, {{0, 1}}, 0), ValidationError);  // disconnected
}

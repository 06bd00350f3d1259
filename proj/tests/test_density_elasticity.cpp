#include <cmath>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "aggregate/density.hpp"
#include "aggregate/elasticity.hpp"

using namespace aggr;

namespace {

WorldSamples make_samples(const std::vector<Vec3>& pts, const std::vector<double>& radii) {
  WorldSamples ws;
  ws.positions.resize(3, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t s = 0; s < pts.size(); ++s) {
    ws.positions.col(s) = pts[s];
    ws.element.push_back(static_cast<int>(s));
    ws.local.push_back(0);
    ws.first.push_back(static_cast<int>(s));
  }
  ws.first.push_back(static_cast<int>(pts.size()));
  ws.radii = radii;
  return ws;
}

// Independent K0: Voigt B^T D B summed over 2x2x2 Gauss points.
Matrix24 quadrature_k0(double h, double E, double nu) {
  Eigen::Matrix<double, 6, 6> D = Eigen::Matrix<double, 6, 6>::Zero();
  const double c = E / ((1 + nu) * (1 - 2 * nu));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) D(i, j) = c * (i == j ? 1 - nu : nu);
  for (int i = 3; i < 6; ++i) D(i, i) = c * (1 - 2 * nu) / 2;
  const double g[2] = {0.5 - 0.5 / std::sqrt(3.0), 0.5 + 0.5 / std::sqrt(3.0)};
  Matrix24 K = Matrix24::Zero();
  for (int qi = 0; qi < 8; ++qi) {
    const double xi[3] = {g[qi & 1], g[(qi >> 1) & 1], g[(qi >> 2) & 1]};
    Eigen::Matrix<double, 6, 24> B = Eigen::Matrix<double, 6, 24>::Zero();
    for (int a = 0; a < 8; ++a) {
      double dN[3];
      for (int d = 0; d < 3; ++d) {
        dN[d] = 1.0 / h;
        for (int e = 0; e < 3; ++e) {
          const bool bit = (a >> e) & 1;
          if (e == d) dN[d] *= bit ? 1.0 : -1.0;
          else dN[d] *= bit ? xi[e] : 1 - xi[e];
        }
      }
      B(0, 3 * a) = dN[0];
      B(1, 3 * a + 1) = dN[1];
      B(2, 3 * a + 2) = dN[2];
      B(3, 3 * a) = dN[1];
      B(3, 3 * a + 1) = dN[0];
      B(4, 3 * a + 1) = dN[2];
      B(4, 3 * a + 2) = dN[1];
      B(5, 3 * a) = dN[2];
      B(5, 3 * a + 2) = dN[0];
    }
    K += B.transpose() * D * B * (h * h * h / 8.0);
  }
  return K;
}

struct Cantilever {
  HexMesh grid;
  Eigen::VectorXd force;
  std::vector<char> fixed;
};

// x = 0 face clamped, unit downward load spread over the x = max, z = 0 edge.
Cantilever cantilever(std::array<int, 3> dims) {
  Cantilever c{HexMesh(dims, Vec3::Zero(), 1.0), {}, {}};
  c.force = Eigen::VectorXd::Zero(c.grid.num_dofs());
  c.fixed.assign(c.grid.num_dofs(), 0);
  int loaded = 0;
  for (int n = 0; n < c.grid.num_nodes(); ++n) {
    const auto ijk = c.grid.node_coords(n);
    if (ijk[0] == 0)
      for (int a = 0; a < 3; ++a) c.fixed[3 * n + a] = 1;
    if (ijk[0] == dims[0] && ijk[2] == 0) ++loaded;
  }
  for (int n = 0; n < c.grid.num_nodes(); ++n) {
    const auto ijk = c.grid.node_coords(n);
    if (ijk[0] == dims[0] && ijk[2] == 0) c.force[3 * n + 2] = -1.0 / loaded;
  }
  return c;
}

Eigen::VectorXd random_rho(int n, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.2, 1.0);
  Eigen::VectorXd r(n);
  for (int i = 0; i < n; ++i) r[i] = u(rng);
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Density

TEST(Density, KernelValues) {
  const DensityParams p{1.0, 2.0, false};
  EXPECT_NEAR(sample_density(Vec3::Zero(), 1.0, Vec3::Zero(), p), 0.5 + 0.5 * std::tanh(2.0), 1e-15);
  EXPECT_NEAR(sample_density(Vec3::Zero(), 1.0, Vec3::Zero(), p), 0.982014, 1e-6);
  const DensityParams q{1.7, 3.0, false};
  EXPECT_DOUBLE_EQ(sample_density(Vec3::Zero(), 0.8, Vec3(0, 1.7 * 0.8, 0), q), 0.5);
  EXPECT_EQ(sample_density(Vec3::Zero(), 0.8, Vec3(3 * 1.7 * 0.8, 0, 0), q), 0.0);
  EXPECT_EQ(sample_density(Vec3::Zero(), 0.8, Vec3(5, 0, 0), q), 0.0);
}

TEST(Density, KernelGradientMatchesFiniteDifferences) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  const DensityParams p{1.3, 2.0, false};
  EXPECT_EQ(sample_density_gradient(Vec3(1, 2, 3), 1.0, Vec3(1, 2, 3), p), Vec3::Zero());
  for (int k = 0; k < 50; ++k) {
    const Vec3 c(u(rng), u(rng), u(rng)), x(u(rng), u(rng), u(rng));
    const Vec3 g = sample_density_gradient(c, 1.0, x, p);
    const double h = 1e-6;
    for (int a = 0; a < 3; ++a) {
      Vec3 cp = c, cm = c;
      cp[a] += h;
      cm[a] -= h;
      const double fd = (sample_density(cp, 1.0, x, p) - sample_density(cm, 1.0, x, p)) / (2 * h);
      EXPECT_NEAR(g[a], fd, 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
  // Moving the sample towards x raises the density at x.
  const Vec3 g = sample_density_gradient(Vec3::Zero(), 1.0, Vec3(1.3, 0, 0), p);
  EXPECT_GT(g.x(), 0.0);
}

TEST(Density, MaxAndTieBreak) {
  const DensityParams p{1.0, 2.0, false};
  const WorldSamples ws = make_samples({Vec3(-1, 0, 0), Vec3(1, 0, 0), Vec3(20, 0, 0)}, {1.0, 1.0, 1.0});
  const SampleIndex index(ws, p);
  const PointDensity mid = total_density(Vec3::Zero(), index, p);
  EXPECT_EQ(mid.argmax, 0);
  EXPECT_DOUBLE_EQ(mid.value, sample_density(Vec3(1, 0, 0), 1.0, Vec3::Zero(), p));
  EXPECT_EQ(total_density(Vec3(19.5, 0, 0), index, p).argmax, 2);
  const PointDensity none = total_density(Vec3(10, 0, 0), index, p);
  EXPECT_EQ(none.argmax, -1);
  EXPECT_EQ(none.value, 0.0);
}

TEST(Density, RasterizationBasics) {
  const HexMesh grid({8, 8, 8}, Vec3::Zero(), 1.0);
  const DensityParams p{1.0, 2.0, false};
  const WorldSamples big = make_samples({Vec3(4, 4, 4)}, {3.0});
  const DensityGrid dg = rasterize_densities(big, grid, p);
  EXPECT_NEAR(dg.rho[grid.cell_index(4, 4, 4)], 1.0, 1e-12);
  const WorldSamples small = make_samples({Vec3(0.5, 0.5, 0.5)}, {0.3});
  const DensityGrid ds = rasterize_densities(small, grid, p);
  EXPECT_EQ(ds.rho[grid.cell_index(7, 7, 7)], 0.0);
  for (int c = 0; c < grid.num_cells(); ++c) {
    EXPECT_GE(ds.rho[c], 0.0);
    EXPECT_LE(ds.rho[c], 1.0);
  }
}

TEST(Density, CellAverageMatchesDenseQuadrature) {
  const HexMesh grid({8, 8, 8}, Vec3::Zero(), 1.0);
  const DensityParams p{1.0, 2.0, false};
  const Vec3 center = grid.cell_center(grid.cell_index(3, 4, 5));
  const WorldSamples ws = make_samples({center}, {0.6});
  const DensityGrid dg = rasterize_densities(ws, grid, p);
  for (int c : {grid.cell_index(3, 4, 5), grid.cell_index(4, 4, 5), grid.cell_index(4, 5, 6)}) {
    const int m = 40;  // midpoint rule, 64000 points per cell
    double sum = 0;
    const Vec3 lo = grid.cell_center(c) - Vec3::Constant(0.5);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j)
        for (int k = 0; k < m; ++k)
          sum += sample_density(center, 0.6, lo + Vec3(i + 0.5, j + 0.5, k + 0.5) / m, p);
    EXPECT_NEAR(dg.rho[c], sum / (m * m * m), 0.05);
  }
}

TEST(Density, JacobianMatchesFiniteDifferences) {
  const HexMesh grid({8, 8, 8}, Vec3::Zero(), 1.0);
  const DensityParams p{1.2, 2.0, false};
  WorldSamples ws = make_samples({Vec3(3.3, 4.1, 3.7)}, {1.1});
  const DensityGrid dg = rasterize_densities(ws, grid, p);
  const DensityJacobian jac = density_position_jacobian(dg, ws, p);
  std::vector<Vec3> analytic(grid.num_cells(), Vec3::Zero());
  for (const auto& e : jac.entries) {
    EXPECT_EQ(e.sample, 0);
    analytic[e.cell] += e.d;
  }
  const double h = 1e-6;
  double worst = 0;
  for (int a = 0; a < 3; ++a) {
    WorldSamples plus = ws, minus = ws;
    plus.positions(a, 0) += h;
    minus.positions(a, 0) -= h;
    const Eigen::VectorXd fd =
        (rasterize_densities(plus, grid, p).rho - rasterize_densities(minus, grid, p).rho) / (2 * h);
    for (int c = 0; c < grid.num_cells(); ++c)
      worst = std::max(worst, std::abs(fd[c] - analytic[c][a]) / std::max(1e-3, std::abs(fd[c])));
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Density, DisjointSupportsGiveBlockJacobian) {
  const HexMesh grid({12, 4, 4}, Vec3::Zero(), 1.0);
  const DensityParams p{1.0, 2.0, false};
  const WorldSamples ws = make_samples({Vec3(2, 2, 2), Vec3(10, 2, 2)}, {0.5, 0.5});
  const DensityGrid dg = rasterize_densities(ws, grid, p);
  const DensityJacobian jac = density_position_jacobian(dg, ws, p);
  ASSERT_FALSE(jac.entries.empty());
  for (const auto& e : jac.entries) {
    const double x = grid.cell_center(e.cell).x();
    EXPECT_EQ(e.sample, x < 6 ? 0 : 1);
  }
}

// ---------------------------------------------------------------------------
// Elasticity

TEST(Elasticity, BaseStiffnessMatchesQuadrature) {
  for (double h : {1.0, 0.37}) {
    const Matrix24 k = base_stiffness_k0(h, 1.0, 0.3);
    const Matrix24 ref = quadrature_k0(h, 1.0, 0.3);
    EXPECT_LT((k - ref).cwiseAbs().maxCoeff(), 1e-10);
  }
  const Matrix24 k = base_stiffness_k0(1.0, 2.5, 0.2);
  EXPECT_LT((k - quadrature_k0(1.0, 2.5, 0.2)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Elasticity, BaseStiffnessHasSixRigidModes) {
  const Matrix24 k = base_stiffness_k0(1.0, 1.0, 0.3);
  EXPECT_LT((k - k.transpose()).cwiseAbs().maxCoeff(), 1e-14);
  Eigen::SelfAdjointEigenSolver<Matrix24> es(k);
  int zeros = 0;
  for (int i = 0; i < 24; ++i) {
    EXPECT_GT(es.eigenvalues()[i], -1e-12);
    if (std::abs(es.eigenvalues()[i]) < 1e-10) ++zeros;
  }
  EXPECT_EQ(zeros, 6);
  Vector24 v = Vector24::Zero();
  for (int a = 0; a < 8; ++a) v[3 * a] = v[3 * a + 2] = 1.0;
  EXPECT_LT((k * v).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Elasticity, SingleCellSolversAgree) {
  const HexMesh grid({1, 1, 1}, Vec3::Zero(), 1.0);
  Eigen::VectorXd f = Eigen::VectorXd::Zero(grid.num_dofs());
  std::vector<char> fixed(grid.num_dofs(), 0);
  for (int n = 0; n < 8; ++n) {
    if (grid.node_coords(n)[2] == 0)
      for (int a = 0; a < 3; ++a) fixed[3 * n + a] = 1;
    else f[3 * n + 2] = 0.25;
  }
  const Eigen::VectorXd rho = Eigen::VectorXd::Ones(1);
  const MaterialModel mat;
  SolveOptions cg, dense;
  dense.solver = LinearSolver::kDense;
  const FemState a = assemble_and_solve(grid, rho, f, fixed, mat, cg);
  const FemState b = assemble_and_solve(grid, rho, f, fixed, mat, dense);
  EXPECT_LT((a.u - b.u).norm(), 1e-8 * b.u.norm());
  EXPECT_GT(b.u.norm(), 0.0);
  EXPECT_NEAR(compliance(a), compliance_cell_sum(grid, rho, a, mat), 1e-8 * compliance(a));
  for (int d = 0; d < grid.num_dofs(); ++d) {
    if (fixed[d]) {
      EXPECT_EQ(a.u[d], 0.0);
    }
  }
}

TEST(Elasticity, SolversAgreeOnCantilever) {
  const Cantilever c = cantilever({6, 4, 5});
  const Eigen::VectorXd rho = random_rho(c.grid.num_cells(), 11);
  const MaterialModel mat;
  SolveOptions cg, dense, sparse;
  dense.solver = LinearSolver::kDense;
  sparse.solver = LinearSolver::kSparseCholesky;
  const FemState a = assemble_and_solve(c.grid, rho, c.force, c.fixed, mat, cg);
  const FemState b = assemble_and_solve(c.grid, rho, c.force, c.fixed, mat, dense);
  const FemState s = assemble_and_solve(c.grid, rho, c.force, c.fixed, mat, sparse);
  EXPECT_LE(a.residual, 1e-8);
  EXPECT_LT((a.u - b.u).norm(), 1e-7 * b.u.norm());
  EXPECT_LT((s.u - b.u).norm(), 1e-10 * b.u.norm());
  EXPECT_NEAR(compliance(b), compliance_cell_sum(c.grid, rho, b, mat), 1e-8 * compliance(b));

  // Matrix-free apply against the assembled sparse matrix.
  const Matrix24 k0 = base_stiffness_k0(1.0, 1.0, 0.3);
  Eigen::VectorXd scale(c.grid.num_cells());
  for (int i = 0; i < scale.size(); ++i) scale[i] = mat.scale(rho[i]);
  int nfree = 0;
  const auto map = detail::free_dof_map(c.fixed, nfree);
  Eigen::SparseMatrix<double> K(nfree, nfree);
  const auto trip = detail::free_triplets(c.grid, k0, scale, map);
  K.setFromTriplets(trip.begin(), trip.end());
  Eigen::VectorXd x = Eigen::VectorXd::Random(c.grid.num_dofs()), y, xf(nfree);
  for (int d = 0; d < c.grid.num_dofs(); ++d)
    if (map[d] >= 0) xf[map[d]] = x[d];
  apply_stiffness(c.grid, k0, scale, c.fixed, x, y);
  const Eigen::VectorXd yf = K * xf;
  for (int d = 0; d < c.grid.num_dofs(); ++d) {
    if (map[d] >= 0) EXPECT_NEAR(y[d], yf[map[d]], 1e-12);
    else EXPECT_EQ(y[d], x[d]);
  }
}

TEST(Elasticity, ZeroLoadAndScaling) {
  const Cantilever c = cantilever({3, 2, 2});
  const MaterialModel mat;
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(c.grid.num_cells());
  const FemState zero = assemble_and_solve(c.grid, ones, Eigen::VectorXd::Zero(c.grid.num_dofs()), c.fixed, mat);
  EXPECT_EQ(zero.u.norm(), 0.0);
  EXPECT_EQ(compliance(zero), 0.0);
  EXPECT_EQ(compliance_density_gradient(c.grid, zero, mat).norm(), 0.0);

  SolveOptions dense;
  dense.solver = LinearSolver::kDense;
  const FemState one = assemble_and_solve(c.grid, ones, c.force, c.fixed, mat, dense);
  const FemState two = assemble_and_solve(c.grid, ones, 2.0 * c.force, c.fixed, mat, dense);
  EXPECT_NEAR(compliance(two), 4.0 * compliance(one), 1e-10 * compliance(two));

  const FemState soft =
      assemble_and_solve(c.grid, Eigen::VectorXd::Zero(c.grid.num_cells()), c.force, c.fixed, mat, dense);
  EXPECT_LT((soft.u * mat.ersatz - one.u).norm(), 1e-8 * one.u.norm());
}

TEST(Elasticity, AdjointGradientMatchesFiniteDifferences) {
  const Cantilever c = cantilever({4, 4, 4});
  const Eigen::VectorXd rho = random_rho(c.grid.num_cells(), 5);
  const MaterialModel mat;
  SolveOptions dense;
  dense.solver = LinearSolver::kDense;
  const FemState st = assemble_and_solve(c.grid, rho, c.force, c.fixed, mat, dense);
  const Eigen::VectorXd g = compliance_density_gradient(c.grid, st, mat);
  EXPECT_LE(g.maxCoeff(), 0.0);
  const double h = 1e-6;
  for (int i = 0; i < c.grid.num_cells(); ++i) {
    Eigen::VectorXd rp = rho, rm = rho;
    rp[i] += h;
    rm[i] -= h;
    const double fd = (compliance(assemble_and_solve(c.grid, rp, c.force, c.fixed, mat, dense)) -
                       compliance(assemble_and_solve(c.grid, rm, c.force, c.fixed, mat, dense))) /
                      (2 * h);
    EXPECT_LE(std::abs(g[i] - fd), 1e-4 * std::abs(fd)) << "cell " << i;
  }
}

TEST(Elasticity, NonConvergenceReportsResidual) {
  const Cantilever c = cantilever({6, 3, 3});
  SolveOptions cg;
  cg.max_iterations = 3;
  try {
    assemble_and_solve(c.grid, Eigen::VectorXd::Ones(c.grid.num_cells()), c.force, c.fixed, MaterialModel{}, cg);
    FAIL() << "expected SolverError";
  } catch (const SolverError& e) {
    EXPECT_GT(e.residual, 1e-8);
  }
}

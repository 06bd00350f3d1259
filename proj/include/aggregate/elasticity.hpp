#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "aggregate/errors.hpp"
#include "aggregate/grid.hpp"

namespace aggr {

using Matrix24 = Eigen::Matrix<double, 24, 24>;
using Vector24 = Eigen::Matrix<double, 24, 1>;

/// Linear interpolation between the ersatz floor and the base material:
/// E(rho) = E0 (eps + (1 - eps) rho).
struct MaterialModel {
  double young = 1.0;
  double poisson = 0.3;
  double ersatz = 1e-6;

  double scale(double rho) const { return ersatz + (1.0 - ersatz) * rho; }
  double slope() const { return 1.0 - ersatz; }
};

/// Stiffness of one trilinear H8 cube of side h (dofs ordered node-major,
/// local node bits as in HexMesh::cell_nodes).
///
/// Integrated exactly in tensor-product form: with C_ikjl the isotropic
/// elasticity tensor, K[a i, b j] = sum_kl C_ikjl * I_kl(a, b), and
/// I_kl(a, b) = int dN_a/dx_k dN_b/dx_l is a product of 1-D integrals of
/// linear hat functions.
inline Matrix24 base_stiffness_k0(double h, double young, double poisson) {
  const double lambda = young * poisson / ((1 + poisson) * (1 - 2 * poisson));
  const double mu = young / (2 * (1 + poisson));
  auto sign = [](int bit) { return bit ? 1.0 : -1.0; };
  // 1-D integrals over [0, h] of L_p^(dp) * L_q^(dq), where dp/dq select the
  // derivative.
  auto integral = [&](int p, bool dp, int q, bool dq) {
    if (!dp && !dq) return h * (p == q ? 1.0 / 3.0 : 1.0 / 6.0);
    if (dp && !dq) return 0.5 * sign(p);
    if (!dp && dq) return 0.5 * sign(q);
    return sign(p) * sign(q) / h;
  };
  auto grad_integral = [&](int a, int b, int k, int l) {
    double v = 1.0;
    for (int m = 0; m < 3; ++m) v *= integral((a >> m) & 1, m == k, (b >> m) & 1, m == l);
    return v;
  };
  Matrix24 k0;
  for (int a = 0; a < 8; ++a)
    for (int b = 0; b < 8; ++b) {
      double ii[3][3];
      for (int k = 0; k < 3; ++k)
        for (int l = 0; l < 3; ++l) ii[k][l] = grad_integral(a, b, k, l);
      const double trace = ii[0][0] + ii[1][1] + ii[2][2];
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
          k0(3 * a + i, 3 * b + j) = lambda * ii[i][j] + mu * ((i == j ? trace : 0.0) + ii[j][i]);
    }
  return k0;
}

struct FemState {
  Eigen::VectorXd u;
  Eigen::VectorXd force;
  std::vector<char> fixed;  // per dof
  double residual = 0.0;    // relative, on free dofs
  int iterations = 0;
  double compliance_value = 0.0;
};

enum class LinearSolver { kConjugateGradient, kDense, kSparseCholesky };

struct SolveOptions {
  LinearSolver solver = LinearSolver::kConjugateGradient;
  double tolerance = 1e-8;
  int max_iterations = 20000;
  const Eigen::VectorXd* initial_guess = nullptr;  // CG warm start
};

/// y = K(rho) x restricted to free dofs (fixed rows and columns act as
/// identity). Cells are swept in 8 colour classes so that no two cells of a
/// class share a node.
inline void apply_stiffness(const HexMesh& grid, const Matrix24& k0, const Eigen::VectorXd& cell_scale,
                            const std::vector<char>& fixed, const Eigen::VectorXd& x, Eigen::VectorXd& y) {
  y.setZero(x.size());
  for (int color = 0; color < 8; ++color) {
    const int ci = color & 1, cj = (color >> 1) & 1, ck = (color >> 2) & 1;
    const int nx = (grid.dims[0] - ci + 1) / 2, ny = (grid.dims[1] - cj + 1) / 2, nz = (grid.dims[2] - ck + 1) / 2;
    const int count = nx * ny * nz;
#pragma omp parallel for schedule(static)
    for (int t = 0; t < count; ++t) {
      const int i = ci + 2 * (t % nx), j = cj + 2 * ((t / nx) % ny), k = ck + 2 * (t / (nx * ny));
      const int c = grid.cell_index(i, j, k);
      const auto dofs = grid.cell_dofs(c);
      Vector24 ue;
      for (int a = 0; a < 24; ++a) ue[a] = fixed[dofs[a]] ? 0.0 : x[dofs[a]];
      const Vector24 fe = cell_scale[c] * (k0 * ue);
      for (int a = 0; a < 24; ++a) y[dofs[a]] += fe[a];
    }
  }
  for (Eigen::Index d = 0; d < x.size(); ++d)
    if (fixed[d]) y[d] = x[d];
}

namespace detail {

inline std::vector<int> free_dof_map(const std::vector<char>& fixed, int& count) {
  std::vector<int> map(fixed.size(), -1);
  count = 0;
  for (std::size_t d = 0; d < fixed.size(); ++d)
    if (!fixed[d]) map[d] = count++;
  return map;
}

inline std::vector<Eigen::Triplet<double>> free_triplets(const HexMesh& grid, const Matrix24& k0,
                                                         const Eigen::VectorXd& cell_scale,
                                                         const std::vector<int>& map) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(grid.num_cells()) * 576);
  for (int c = 0; c < grid.num_cells(); ++c) {
    const auto dofs = grid.cell_dofs(c);
    for (int a = 0; a < 24; ++a) {
      const int r = map[dofs[a]];
      if (r < 0) continue;
      for (int b = 0; b < 24; ++b) {
        const int col = map[dofs[b]];
        if (col >= 0) trip.emplace_back(r, col, cell_scale[c] * k0(a, b));
      }
    }
  }
  return trip;
}

}  // namespace detail

/// Solves K(rho) u = f with u = 0 on fixed dofs.
inline FemState assemble_and_solve(const HexMesh& grid, const Eigen::VectorXd& rho, const Eigen::VectorXd& force,
                                   const std::vector<char>& fixed, const MaterialModel& material,
                                   const SolveOptions& options = {}) {
  const Matrix24 k0 = base_stiffness_k0(grid.h, material.young, material.poisson);
  Eigen::VectorXd scale(grid.num_cells());
  for (int c = 0; c < grid.num_cells(); ++c) scale[c] = material.scale(rho[c]);

  FemState st;
  st.force = force;
  st.fixed = fixed;
  const int n = grid.num_dofs();
  Eigen::VectorXd rhs = force;
  for (int d = 0; d < n; ++d)
    if (fixed[d]) rhs[d] = 0.0;
  const double rhs_norm = rhs.norm();
  st.u = Eigen::VectorXd::Zero(n);
  if (rhs_norm == 0.0) return st;

  auto residual_of = [&](const Eigen::VectorXd& u) {
    Eigen::VectorXd ku;
    apply_stiffness(grid, k0, scale, fixed, u, ku);
    return (rhs - ku).norm() / rhs_norm;
  };

  if (options.solver != LinearSolver::kConjugateGradient) {
    int nfree = 0;
    const auto map = detail::free_dof_map(fixed, nfree);
    Eigen::VectorXd b(nfree);
    for (int d = 0; d < n; ++d)
      if (map[d] >= 0) b[map[d]] = rhs[d];
    const auto trip = detail::free_triplets(grid, k0, scale, map);
    Eigen::VectorXd x;
    if (options.solver == LinearSolver::kDense) {
      Eigen::MatrixXd k = Eigen::MatrixXd::Zero(nfree, nfree);
      for (const auto& t : trip) k(t.row(), t.col()) += t.value();
      Eigen::LLT<Eigen::MatrixXd> llt(k);
      if (llt.info() != Eigen::Success) throw SolverError("stiffness matrix is not positive definite", 1.0);
      x = llt.solve(b);
    } else {
      Eigen::SparseMatrix<double> k(nfree, nfree);
      k.setFromTriplets(trip.begin(), trip.end());
      Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt(k);
      if (llt.info() != Eigen::Success) throw SolverError("stiffness matrix is not positive definite", 1.0);
      x = llt.solve(b);
    }
    for (int d = 0; d < n; ++d)
      if (map[d] >= 0) st.u[d] = x[map[d]];
    st.residual = residual_of(st.u);
    st.compliance_value = st.u.dot(force);
    return st;
  }

  // Jacobi-preconditioned conjugate gradients.
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  for (int c = 0; c < grid.num_cells(); ++c) {
    const auto dofs = grid.cell_dofs(c);
    for (int a = 0; a < 24; ++a) diag[dofs[a]] += scale[c] * k0(a, a);
  }
  for (int d = 0; d < n; ++d)
    if (fixed[d]) diag[d] = 1.0;
  const Eigen::VectorXd inv_diag = diag.cwiseInverse();

  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  if (options.initial_guess && options.initial_guess->size() == n) {
    x = *options.initial_guess;
    for (int d = 0; d < n; ++d)
      if (fixed[d]) x[d] = 0.0;
  }
  Eigen::VectorXd r, ap;
  apply_stiffness(grid, k0, scale, fixed, x, ap);
  r = rhs - ap;
  Eigen::VectorXd z = inv_diag.cwiseProduct(r);
  Eigen::VectorXd p = z;
  double rz = r.dot(z);
  double rel = r.norm() / rhs_norm;
  int it = 0;
  while (rel > options.tolerance && it < options.max_iterations) {
    apply_stiffness(grid, k0, scale, fixed, p, ap);
    const double step = rz / p.dot(ap);
    x += step * p;
    r -= step * ap;
    ++it;
    rel = r.norm() / rhs_norm;
    if (rel <= options.tolerance) break;
    z = inv_diag.cwiseProduct(r);
    const double rz_next = r.dot(z);
    p = z + (rz_next / rz) * p;
    rz = rz_next;
  }
  st.u = x;
  st.iterations = it;
  st.residual = residual_of(x);
  if (st.residual > options.tolerance * 10 && rel > options.tolerance)
    throw SolverError("conjugate gradients did not converge in " + std::to_string(it) + " iterations", st.residual);
  st.compliance_value = st.u.dot(force);
  return st;
}

/// C = u . f_ext.
inline double compliance(const FemState& state) { return state.u.dot(state.force); }

/// Per-cell energies u_i^T K0 u_i.
inline Eigen::VectorXd cell_energies(const HexMesh& grid, const FemState& state, const MaterialModel& material) {
  const Matrix24 k0 = base_stiffness_k0(grid.h, material.young, material.poisson);
  Eigen::VectorXd e(grid.num_cells());
#pragma omp parallel for schedule(static)
  for (int c = 0; c < grid.num_cells(); ++c) {
    const auto dofs = grid.cell_dofs(c);
    Vector24 ue;
    for (int a = 0; a < 24; ++a) ue[a] = state.u[dofs[a]];
    e[c] = ue.dot(k0 * ue);
  }
  return e;
}

/// sum_i E(rho_i)/E0 u_i^T K0 u_i; equals u . f at equilibrium.
inline double compliance_cell_sum(const HexMesh& grid, const Eigen::VectorXd& rho, const FemState& state,
                                  const MaterialModel& material) {
  const Eigen::VectorXd e = cell_energies(grid, state, material);
  double c = 0.0;
  for (int i = 0; i < grid.num_cells(); ++i) c += material.scale(rho[i]) * e[i];
  return c;
}

/// dC/d(rho_i) = -(1 - eps) u_i^T K0 u_i (adjoint of the self-adjoint
/// compliance).
inline Eigen::VectorXd compliance_density_gradient(const HexMesh& grid, const FemState& state,
                                                   const MaterialModel& material) {
  return -material.slope() * cell_energies(grid, state, material);
}

}  // namespace aggr

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

#include "aggregate/cache.hpp"
#include "aggregate/density.hpp"
#include "aggregate/elasticity.hpp"
#include "aggregate/element.hpp"
#include "aggregate/scene.hpp"
#include "aggregate/sensitivity.hpp"

namespace aggr {

/// Everything derived once from a scene: prototypes, grid, loads, supports.
struct Problem {
  SceneConfig scene;
  std::vector<ElementPrototype> prototypes;
  HexMesh grid;
  BoundaryConditions bc;
  MaterialModel material;
  SolveOptions solve;
};

inline SolveOptions solve_options(const SolverSettings& s, int free_dofs) {
  SolveOptions o;
  o.tolerance = s.tolerance;
  o.max_iterations = s.max_iterations;
  if (s.method == SolverMethod::kDirect)
    o.solver = free_dofs <= 3000 ? LinearSolver::kDense : LinearSolver::kSparseCholesky;
  return o;
}

/// With `use_cache`, mesh-based prototypes are read from (or written to) a
/// .protocache directory next to their OBJ file.
inline Problem make_problem(const SceneConfig& scene, bool use_cache = false) {
  Problem pr;
  pr.scene = scene;
  for (std::size_t i = 0; i < scene.inventory.size(); ++i) {
    const PrototypeSpec& spec = scene.inventory[i];
    const std::uint64_t seed = scene.seed + 7919 * (i + 1);
    if (use_cache && !spec.mesh_path.empty()) {
      const auto mesh = std::filesystem::path(scene.base_dir) / spec.mesh_path;
      pr.prototypes.push_back(make_prototype_cached(spec, scene.base_dir, seed, mesh.parent_path() / ".protocache"));
    } else {
      pr.prototypes.push_back(make_prototype(spec, scene.base_dir, seed));
    }
  }
  pr.grid = make_hex_mesh(scene);
  pr.bc = apply_boundary_conditions(scene, pr.grid);
  pr.material = {scene.material.young, scene.material.poisson, scene.material.ersatz};
  pr.solve = solve_options(scene.solver, pr.grid.num_dofs() - static_cast<int>(pr.bc.fixed_dofs.size()));
  return pr;
}

/// One instance per unit of inventory count, in inventory order, at the
/// origin with the prototype's fixed transform.
inline std::vector<ElementInstance> make_instances(const Problem& pr) {
  std::vector<ElementInstance> out;
  for (std::size_t i = 0; i < pr.scene.inventory.size(); ++i)
    for (int c = 0; c < pr.scene.inventory[i].count; ++c)
      out.push_back(make_instance(static_cast<int>(i), pr.prototypes[i]));
  return out;
}

struct ComplianceResult {
  double compliance = 0.0;
  WorldSamples samples;
  DensityGrid density;
  FemState state;
  Points sample_gradient;    // dC/dp_s, only with gradient
  Eigen::VectorXd gradient;  // dC/dtheta, only with gradient
  int additions = 0;
};

/// C(theta) = f(g(h(theta))) and optionally its gradient grad_f J_g J_h.
inline ComplianceResult evaluate_compliance(const Problem& pr, const std::vector<ElementInstance>& instances,
                                            const DensityParams& params, bool with_gradient,
                                            const ParamLayout* layout = nullptr,
                                            const Eigen::VectorXd* warm_start = nullptr) {
  ComplianceResult r;
  r.samples = world_sample_positions(instances, pr.prototypes);
  Occupancies occ;
  if (params.use_indicator) occ = make_occupancies(instances, pr.prototypes);
  r.density = rasterize_densities(r.samples, pr.grid, params, params.use_indicator ? &occ : nullptr);
  SolveOptions opts = pr.solve;
  opts.initial_guess = warm_start;
  r.state = assemble_and_solve(pr.grid, r.density.rho, pr.bc.force, pr.bc.fixed_mask, pr.material, opts);
  r.compliance = compliance(r.state);
  if (!with_gradient) return r;
  const Eigen::VectorXd grad_rho = compliance_density_gradient(pr.grid, r.state, pr.material);
  const DensityJacobian jac = density_position_jacobian(r.density, r.samples, params);
  r.sample_gradient = backpropagate_to_samples(grad_rho, jac, r.samples.size());
  const ParamLayout own = layout ? ParamLayout{} : make_layout(instances, pr.prototypes);
  r.gradient = chain_to_params(r.sample_gradient, r.samples, instances, pr.prototypes, layout ? *layout : own,
                               &r.additions);
  return r;
}

}  // namespace aggr

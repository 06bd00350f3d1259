#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "aggregate/problem.hpp"
#include "aggregate/sensitivity.hpp"

namespace aggr {

/// Central-difference check of dC/dtheta with a full re-solve per probe.
/// Translations are stepped by `relative_step` times the largest domain
/// extent, angles by `relative_step` radians. The indicator is always off.
inline FdReport compliance_gradient_check(const Problem& pr, const std::vector<ElementInstance>& instances,
                                          double alpha, double beta, double relative_step = 1e-5,
                                          const std::vector<int>& subset = {}) {
  if (!(relative_step > 0)) throw ValidationError("finite-difference step must be positive");
  const DensityParams params{alpha, beta, false};
  const ParamLayout layout = make_layout(instances, pr.prototypes);
  const ComplianceResult base = evaluate_compliance(pr, instances, params, true, &layout);
  const Eigen::VectorXd x = pack_parameters(instances, layout);
  const double extent = pr.scene.domain.bounds().extent().maxCoeff();
  Eigen::VectorXd steps(layout.size());
  std::vector<std::string> group(layout.size());
  for (int k = 0; k < layout.size(); ++k) {
    const auto kind = layout.slots[k].kind;
    steps[k] = kind == ParamKind::kTranslation ? relative_step * extent : relative_step;
    group[k] = param_kind_name(kind);
  }
  auto objective = [&](const Eigen::VectorXd& xp) {
    std::vector<ElementInstance> trial = instances;
    unpack_parameters(xp, layout, trial);
    return evaluate_compliance(pr, trial, params, false).compliance;
  };
  return finite_difference_check(objective, x, base.gradient, steps, group, subset);
}

}  // namespace aggr

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "aggregate/density.hpp"
#include "aggregate/element.hpp"
#include "aggregate/errors.hpp"
#include "aggregate/rotation.hpp"

namespace aggr {

enum class ParamKind { kTranslation = 0, kRotation = 1, kJoint = 2 };

inline const char* param_kind_name(ParamKind k) {
  switch (k) {
    case ParamKind::kTranslation: return "t";
    case ParamKind::kRotation: return "gamma";
    case ParamKind::kJoint: return "omega";
  }
  return "?";
}

/// Flat parameter vector layout: per instance t (3), gamma (3), then 3 joint
/// angles for every non-root sample of a deformable element.
struct ParamLayout {
  struct Block {
    int translation = 0;
    int rotation = 0;
    std::vector<int> joint;  // per local sample: offset of its omega, -1 for the root
  };
  struct Slot {
    int instance;
    ParamKind kind;
    int index;  // axis for t/gamma; 3 * sample + axis for omega
  };
  std::vector<Block> blocks;
  std::vector<Slot> slots;

  int size() const { return static_cast<int>(slots.size()); }
};

inline ParamLayout make_layout(const std::vector<ElementInstance>& instances,
                               const std::vector<ElementPrototype>& prototypes) {
  ParamLayout layout;
  for (std::size_t e = 0; e < instances.size(); ++e) {
    const auto& p = prototypes[instances[e].prototype];
    ParamLayout::Block b;
    const int ei = static_cast<int>(e);
    b.translation = layout.size();
    for (int a = 0; a < 3; ++a) layout.slots.push_back({ei, ParamKind::kTranslation, a});
    b.rotation = layout.size();
    for (int a = 0; a < 3; ++a) layout.slots.push_back({ei, ParamKind::kRotation, a});
    if (p.deformable()) {
      b.joint.assign(p.size(), -1);
      for (int s = 0; s < p.size(); ++s) {
        if (s == p.skeleton->root) continue;
        b.joint[s] = layout.size();
        for (int a = 0; a < 3; ++a) layout.slots.push_back({ei, ParamKind::kJoint, 3 * s + a});
      }
    }
    layout.blocks.push_back(std::move(b));
  }
  return layout;
}

inline Eigen::VectorXd pack_parameters(const std::vector<ElementInstance>& instances, const ParamLayout& layout) {
  Eigen::VectorXd x(layout.size());
  for (std::size_t e = 0; e < instances.size(); ++e) {
    const auto& b = layout.blocks[e];
    x.segment<3>(b.translation) = instances[e].translation;
    x.segment<3>(b.rotation) = instances[e].rotation;
    for (std::size_t s = 0; s < b.joint.size(); ++s)
      if (b.joint[s] >= 0) x.segment<3>(b.joint[s]) = instances[e].omega[s];
  }
  return x;
}

inline void unpack_parameters(const Eigen::VectorXd& x, const ParamLayout& layout,
                              std::vector<ElementInstance>& instances) {
  for (std::size_t e = 0; e < instances.size(); ++e) {
    const auto& b = layout.blocks[e];
    instances[e].translation = x.segment<3>(b.translation);
    instances[e].rotation = x.segment<3>(b.rotation);
    for (std::size_t s = 0; s < b.joint.size(); ++s)
      if (b.joint[s] >= 0) instances[e].omega[s] = x.segment<3>(b.joint[s]);
  }
}

/// Box bounds: translations inside `box`, rotations within +-2 pi, joint
/// angles within the prototype's omega limit.
inline void parameter_bounds(const ParamLayout& layout, const std::vector<ElementInstance>& instances,
                             const std::vector<ElementPrototype>& prototypes, const Aabb& box,
                             Eigen::VectorXd& lower, Eigen::VectorXd& upper) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  lower.resize(layout.size());
  upper.resize(layout.size());
  for (int k = 0; k < layout.size(); ++k) {
    const auto& slot = layout.slots[k];
    switch (slot.kind) {
      case ParamKind::kTranslation:
        lower[k] = box.min[slot.index];
        upper[k] = box.max[slot.index];
        break;
      case ParamKind::kRotation:
        lower[k] = -two_pi;
        upper[k] = two_pi;
        break;
      case ParamKind::kJoint: {
        const double lim = prototypes[instances[slot.instance].prototype].omega_limit;
        lower[k] = -lim;
        upper[k] = lim;
        break;
      }
    }
  }
}

/// G = grad_rho^T J_g: one 3-vector per world sample.
inline Points backpropagate_to_samples(const Eigen::VectorXd& grad_rho, const DensityJacobian& jac, int num_samples) {
  Points g = Points::Zero(3, num_samples);
  for (const auto& entry : jac.entries) g.col(entry.sample) += grad_rho[entry.cell] * entry.d;
  return g;
}

struct JointGradient {
  std::vector<Vec3> omega;  // per local sample; zero at the root
  int additions = 0;        // subtree-sum additions performed
};

/// Gradient w.r.t. the joint angles of one deformable element, given the
/// world-space sample gradients of its samples (3 x m).
///
/// Since y_s = R(w_s) dy_s + y_parent(s), d y_s / d w_s' is non-zero only
/// for s in the subtree of s'. One leaf-to-root pass accumulates subtree
/// sums S(s') of the local-frame gradients; then
/// d/dw_s',i = S(s') . (dR(w_s')/dw_i dy_s').
inline JointGradient deformable_backprop(const Points& world_gradient, const ElementInstance& e,
                                         const ElementPrototype& p) {
  const auto& tree = *p.skeleton;
  const Mat3 to_local = (rotation_from_expmap(e.rotation) * e.fixed).transpose();
  std::vector<Vec3> subtree(p.size());
  for (int s = 0; s < p.size(); ++s) subtree[s] = to_local * world_gradient.col(s);
  JointGradient out;
  out.omega.assign(p.size(), Vec3::Zero());
  for (auto it = tree.order.rbegin(); it != tree.order.rend(); ++it) {
    const int s = *it;
    if (s == tree.root) continue;
    subtree[tree.parent[s]] += subtree[s];
    ++out.additions;
  }
  for (int s = 0; s < p.size(); ++s) {
    if (s == tree.root) continue;
    for (int i = 0; i < 3; ++i)
      out.omega[s][i] = subtree[s].dot(rotation_expmap_derivative(e.omega[s], i) * tree.offset[s]);
  }
  return out;
}

/// Translation and rotation entries of one element:
/// d/dt = sum_s G_s, d/dgamma_i = sum_s G_s . (dR/dgamma_i A y_s).
inline void rigid_param_gradient(const Points& world_gradient, const ElementInstance& e, const ElementPrototype& p,
                                 Vec3& d_translation, Vec3& d_rotation) {
  const auto y = local_sample_positions(e, p);
  Mat3 dr[3];
  for (int i = 0; i < 3; ++i) dr[i] = rotation_expmap_derivative(e.rotation, i) * e.fixed;
  d_translation.setZero();
  d_rotation.setZero();
  for (int s = 0; s < p.size(); ++s) {
    const Vec3 g = world_gradient.col(s);
    d_translation += g;
    for (int i = 0; i < 3; ++i) d_rotation[i] += g.dot(dr[i] * y[s]);
  }
}

/// J_h^T G over all instances. `additions`, if given, receives the total
/// number of subtree-sum additions.
inline Eigen::VectorXd chain_to_params(const Points& sample_gradient, const WorldSamples& ws,
                                       const std::vector<ElementInstance>& instances,
                                       const std::vector<ElementPrototype>& prototypes, const ParamLayout& layout,
                                       int* additions = nullptr) {
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(layout.size());
  const int n = static_cast<int>(instances.size());
  std::vector<int> adds(n, 0);
#pragma omp parallel for schedule(dynamic)
  for (int e = 0; e < n; ++e) {
    const auto& inst = instances[e];
    const auto& p = prototypes[inst.prototype];
    const Points g = sample_gradient.middleCols(ws.first[e], p.size());
    const auto& b = layout.blocks[e];
    Vec3 dt, dg;
    rigid_param_gradient(g, inst, p, dt, dg);
    grad.segment<3>(b.translation) = dt;
    grad.segment<3>(b.rotation) = dg;
    if (p.deformable()) {
      const JointGradient jg = deformable_backprop(g, inst, p);
      for (int s = 0; s < p.size(); ++s)
        if (b.joint[s] >= 0) grad.segment<3>(b.joint[s]) = jg.omega[s];
      adds[e] = jg.additions;
    }
  }
  if (additions) {
    *additions = 0;
    for (int a : adds) *additions += a;
  }
  return grad;
}

struct FdGroup {
  std::string kind;
  int count = 0;
  double max_abs = 0.0;
  double max_rel = 0.0;
  int worst = -1;  // parameter index with the largest relative error
};

struct FdReport {
  std::vector<FdGroup> groups;
  double max_rel = 0.0;
  int worst = -1;
  Eigen::VectorXd analytic;
  Eigen::VectorXd numeric;  // NaN where not probed

  bool passed(double tolerance) const { return max_rel <= tolerance; }
};

/// Central differences of `objective` around x, compared with `analytic`.
/// `group` names the group of each parameter; `subset` (empty = all) selects
/// the probed indices. The relative error of a component is
/// |a - fd| / max(|a|, |fd|, floor), floor = relative_floor * max_k |fd_k|,
/// so components that are zero up to noise are judged against the gradient
/// scale instead of their own magnitude.
template <class Objective>
FdReport finite_difference_check(Objective&& objective, const Eigen::VectorXd& x, const Eigen::VectorXd& analytic,
                                 const Eigen::VectorXd& steps, const std::vector<std::string>& group,
                                 const std::vector<int>& subset = {}, double relative_floor = 1e-6) {
  if (steps.size() != x.size() || analytic.size() != x.size() || group.size() != static_cast<std::size_t>(x.size()))
    throw ValidationError("finite-difference inputs have mismatched sizes");
  std::vector<int> probe = subset;
  if (probe.empty())
    for (int k = 0; k < x.size(); ++k) probe.push_back(k);
  for (int k : probe)
    if (!(steps[k] > 0)) throw ValidationError("finite-difference step must be positive");

  FdReport rep;
  rep.analytic = analytic;
  rep.numeric = Eigen::VectorXd::Constant(x.size(), std::nan(""));
  double scale = 0.0;
  for (int k : probe) {
    Eigen::VectorXd xp = x, xm = x;
    xp[k] += steps[k];
    xm[k] -= steps[k];
    rep.numeric[k] = (objective(xp) - objective(xm)) / (2.0 * steps[k]);
    scale = std::max(scale, std::abs(rep.numeric[k]));
  }
  const double floor = std::max(relative_floor * scale, std::numeric_limits<double>::min());
  for (int k : probe) {
    auto it = std::find_if(rep.groups.begin(), rep.groups.end(), [&](const FdGroup& g) { return g.kind == group[k]; });
    if (it == rep.groups.end()) {
      rep.groups.push_back({group[k]});
      it = rep.groups.end() - 1;
    }
    const double a = analytic[k], fd = rep.numeric[k];
    const double abs_err = std::abs(a - fd);
    const double rel = abs_err / std::max({std::abs(a), std::abs(fd), floor});
    ++it->count;
    it->max_abs = std::max(it->max_abs, abs_err);
    if (it->worst < 0 || rel > it->max_rel) {
      it->max_rel = rel;
      it->worst = k;
    }
    if (rep.worst < 0 || rel > rep.max_rel) {
      rep.max_rel = rel;
      rep.worst = k;
    }
  }
  return rep;
}

}  // namespace aggr

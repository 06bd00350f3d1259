#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "aggregate/errors.hpp"

namespace aggr {

struct MmaSettings {
  double asymptote_init = 0.5;  // initial asymptote distance, fraction of the box range
  double shrink = 0.7;          // on oscillation
  double expand = 1.2;          // on monotone progress
  // Closest the asymptotes may get to x, fraction of the box range. The usual
  // 0.01 leaves a persistent two-cycle of about that size near an optimum.
  double asymptote_min = 1e-5;
  double move_limit = 0.1;      // max step, fraction of the box range
  double c = 1000.0;            // penalty on the artificial variable y
  double d = 1.0;
  double raa0 = 1e-5;  // regularisation of the approximations
  double infeasible_tol = 1e-9;
};

/// Method of moving asymptotes for one inequality constraint
/// g(x) <= 0 and box bounds.
struct MmaState {
  Eigen::VectorXd lower_bound, upper_bound;
  Eigen::VectorXd x_old1, x_old2;  // previous iterates
  Eigen::VectorXd low, upp;        // asymptotes
  int iteration = 0;
  MmaSettings settings;

  MmaState() = default;
  MmaState(Eigen::VectorXd lower, Eigen::VectorXd upper, MmaSettings s = {})
      : lower_bound(std::move(lower)), upper_bound(std::move(upper)), settings(s) {
    if (lower_bound.size() != upper_bound.size()) throw ValidationError("MMA bounds have different sizes");
    for (Eigen::Index j = 0; j < lower_bound.size(); ++j)
      if (!(std::isfinite(lower_bound[j]) && std::isfinite(upper_bound[j]) && lower_bound[j] < upper_bound[j]))
        throw ValidationError("MMA bounds must be finite with lower < upper");
  }

  /// Forgets the iterate history; asymptotes restart from their initial width.
  void reset() { iteration = 0; }
};

struct MmaStep {
  Eigen::VectorXd x;
  double lambda = 0.0;     // constraint multiplier of the subproblem
  double y = 0.0;          // artificial slack; > 0 means the linearised constraint was infeasible
  bool fallback = false;   // projection step taken instead of the subproblem solution
};

/// One MMA update from x, given objective gradient df and constraint value g
/// with gradient dg. The returned point lies in the box and inside the move
/// limits.
inline MmaStep mma_step(MmaState& st, const Eigen::VectorXd& x, const Eigen::VectorXd& df, double g,
                        const Eigen::VectorXd& dg) {
  const Eigen::Index n = x.size();
  const auto& s = st.settings;
  const Eigen::VectorXd range = st.upper_bound - st.lower_bound;

  if (st.iteration < 2) {
    st.low = x - s.asymptote_init * range;
    st.upp = x + s.asymptote_init * range;
  } else {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double osc = (x[j] - st.x_old1[j]) * (st.x_old1[j] - st.x_old2[j]);
      const double factor = osc < 0 ? s.shrink : (osc > 0 ? s.expand : 1.0);
      st.low[j] = x[j] - factor * (st.x_old1[j] - st.low[j]);
      st.upp[j] = x[j] + factor * (st.upp[j] - st.x_old1[j]);
      st.low[j] = std::clamp(st.low[j], x[j] - 10.0 * range[j], x[j] - s.asymptote_min * range[j]);
      st.upp[j] = std::clamp(st.upp[j], x[j] + s.asymptote_min * range[j], x[j] + 10.0 * range[j]);
    }
  }

  Eigen::VectorXd alpha(n), beta(n), p0(n), q0(n), p1(n), q1(n);
  double b = -g;
  for (Eigen::Index j = 0; j < n; ++j) {
    alpha[j] = std::max({st.lower_bound[j], st.low[j] + 0.1 * (x[j] - st.low[j]), x[j] - s.move_limit * range[j]});
    beta[j] = std::min({st.upper_bound[j], st.upp[j] - 0.1 * (st.upp[j] - x[j]), x[j] + s.move_limit * range[j]});
    const double ux = st.upp[j] - x[j], xl = x[j] - st.low[j];
    const double reg = s.raa0 / range[j];
    p0[j] = ux * ux * (1.001 * std::max(df[j], 0.0) + 0.001 * std::max(-df[j], 0.0) + reg);
    q0[j] = xl * xl * (0.001 * std::max(df[j], 0.0) + 1.001 * std::max(-df[j], 0.0) + reg);
    // No regularisation on the constraint: where dg vanishes the constraint
    // must not penalise the move, or a feasible point with g = 0 never moves.
    p1[j] = ux * ux * (1.001 * std::max(dg[j], 0.0) + 0.001 * std::max(-dg[j], 0.0));
    q1[j] = xl * xl * (0.001 * std::max(dg[j], 0.0) + 1.001 * std::max(-dg[j], 0.0));
    b += p1[j] / ux + q1[j] / xl;
  }

  // Primal minimiser of the Lagrangian for a multiplier lambda.
  Eigen::VectorXd xs(n);
  auto primal = [&](double lambda) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double sp = std::sqrt(p0[j] + lambda * p1[j]), sq = std::sqrt(q0[j] + lambda * q1[j]);
      xs[j] = std::clamp((sp * st.low[j] + sq * st.upp[j]) / (sp + sq), alpha[j], beta[j]);
    }
    return std::max(0.0, (lambda - s.c) / s.d);
  };
  // Derivative of the (concave) dual; decreasing in lambda.
  auto dual_slope = [&](double lambda) {
    const double y = primal(lambda);
    double h = -b - y;
    for (Eigen::Index j = 0; j < n; ++j) h += p1[j] / (st.upp[j] - xs[j]) + q1[j] / (xs[j] - st.low[j]);
    return h;
  };

  MmaStep out;
  if (dual_slope(0.0) <= 0.0) {
    out.lambda = 0.0;
  } else {
    double lo = 0.0, hi = std::max(1.0, s.c);
    while (dual_slope(hi) > 0.0 && hi < 1e30) hi *= 2.0;
    for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      (dual_slope(mid) > 0.0 ? lo : hi) = mid;
    }
    out.lambda = hi;
  }
  out.y = primal(out.lambda);
  out.x = xs;

  if (out.y > s.infeasible_tol) {
    // The linearised constraint cannot be met inside the move limits: take a
    // Newton-type step on g alone.
    out.fallback = true;
    const double norm2 = dg.squaredNorm();
    out.x = x;
    if (norm2 > 0) out.x -= (std::max(g, 0.0) / norm2) * dg;
    for (Eigen::Index j = 0; j < n; ++j) out.x[j] = std::clamp(out.x[j], alpha[j], beta[j]);
  }

  st.x_old2 = st.iteration >= 1 ? st.x_old1 : x;
  st.x_old1 = x;
  ++st.iteration;
  return out;
}

}  // namespace aggr

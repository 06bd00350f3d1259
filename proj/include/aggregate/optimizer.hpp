#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "aggregate/connectivity.hpp"
#include "aggregate/errors.hpp"
#include "aggregate/mma.hpp"
#include "aggregate/problem.hpp"
#include "aggregate/sensitivity.hpp"

namespace aggr {

struct DomainConstraint {
  double value = 0.0;
  Points gradient;  // per sample
};

/// f_domain = sum_s max(0, d(x_s) + r_s): zero iff every ball lies inside
/// the domain. Active terms contribute the (central-difference) distance
/// gradient at x_s.
inline DomainConstraint domain_constraint(const Points& positions, const std::vector<double>& radii,
                                          const DomainShape& domain, double step) {
  DomainConstraint c;
  c.gradient = Points::Zero(3, positions.cols());
  for (Eigen::Index s = 0; s < positions.cols(); ++s) {
    const Vec3 x = positions.col(s);
    const double v = signed_distance(domain, x) + radii[s];
    if (v <= 0) continue;
    c.value += v;
    c.gradient.col(s) = signed_distance_gradient(domain, x, step);
  }
  return c;
}

inline double gradient_step(const DomainShape& domain) { return 1e-6 * domain.bounds().diagonal(); }

inline double max_violation(const WorldSamples& ws, const DomainShape& domain) {
  double worst = -std::numeric_limits<double>::infinity();
  for (int s = 0; s < ws.size(); ++s) worst = std::max(worst, signed_distance(domain, ws.position(s)) + ws.radii[s]);
  return worst;
}

/// Pushes every element inward along the distance gradient at its worst
/// sample until d(x_s) + r_s <= tol for all samples. Throws when an element
/// cannot be made to fit.
inline void restore_feasibility(std::vector<ElementInstance>& instances, const std::vector<ElementPrototype>& prototypes,
                                const DomainShape& domain, double tol = 1e-9, int max_rounds = 2000) {
  const double step = gradient_step(domain);
  for (std::size_t e = 0; e < instances.size(); ++e) {
    auto& inst = instances[e];
    int round = 0;
    for (;; ++round) {
      const WorldSamples ws = world_sample_positions({inst}, prototypes);
      int worst = -1;
      double wv = tol;
      for (int s = 0; s < ws.size(); ++s) {
        const double v = signed_distance(domain, ws.position(s)) + ws.radii[s];
        if (v > wv) {
          wv = v;
          worst = s;
        }
      }
      if (worst < 0) break;
      if (round >= max_rounds)
        throw GeometryError("element " + std::to_string(e) + " does not fit inside the domain (violation " +
                            std::to_string(wv) + ")");
      Vec3 n = signed_distance_gradient(domain, ws.position(worst), step);
      if (n.norm() < 1e-12) n = (domain.bounds().center() - ws.position(worst));
      n.normalize();
      inst.translation -= (wv + 0.5 * tol) * n;
    }
  }
}

namespace detail {

inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::Quaterniond q(n01(rng), n01(rng), n01(rng), n01(rng));
  q.normalize();
  return q.toRotationMatrix();
}

/// Interior points of the domain by rejection sampling in its bounding box.
inline std::vector<Vec3> sample_domain(const DomainShape& domain, std::size_t count, std::mt19937_64& rng,
                                       std::size_t max_draws = 1000000) {
  const Aabb box = domain.bounds();
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<Vec3> pts;
  pts.reserve(count);
  for (std::size_t draw = 0; draw < max_draws && pts.size() < count; ++draw) {
    const Vec3 p = box.min + box.extent().cwiseProduct(Vec3(u01(rng), u01(rng), u01(rng)));
    if (signed_distance(domain, p) < 0) pts.push_back(p);
  }
  if (pts.size() < count)
    throw GeometryError("domain too small: only " + std::to_string(pts.size()) + " interior points in " +
                        std::to_string(max_draws) + " draws");
  return pts;
}

inline std::vector<int> nearest_site(const std::vector<Vec3>& cloud, const Points& sites) {
  std::vector<int> owner(cloud.size());
  const int n = static_cast<int>(cloud.size());
#pragma omp parallel for schedule(static)
  for (int c = 0; c < n; ++c) {
    double bd = std::numeric_limits<double>::infinity();
    for (Eigen::Index s = 0; s < sites.cols(); ++s) {
      const double d = (sites.col(s) - cloud[c]).squaredNorm();
      if (d < bd) {
        bd = d;
        owner[c] = static_cast<int>(s);
      }
    }
  }
  return owner;
}

/// CVT energy of the sites over the cloud, scaled so that each site's term is
/// roughly its mean squared distance; gradient per site.
inline double cvt_energy(const std::vector<Vec3>& cloud, const Points& sites, Points* gradient) {
  const auto owner = nearest_site(cloud, sites);
  const double w = static_cast<double>(sites.cols()) / static_cast<double>(cloud.size());
  double e = 0.0;
  if (gradient) gradient->setZero(3, sites.cols());
  for (std::size_t c = 0; c < cloud.size(); ++c) {
    const Vec3 d = sites.col(owner[c]) - cloud[c];
    e += w * d.squaredNorm();
    if (gradient) gradient->col(owner[c]) += 2.0 * w * d;
  }
  return e;
}

}  // namespace detail

struct InitSettings {
  int lloyd_iterations = 20;
  int cvt_steps = 30;
  std::size_t cloud_size = 0;  // 0: max(5000, 200 x elements)
};

/// Element centres by Lloyd relaxation of domain points, random orientations
/// folded into the fixed transforms, then projected-gradient CVT steps on all
/// samples, each followed by restoring d(x_s) + r_s <= 0.
inline std::vector<ElementInstance> initialize_layout(const Problem& pr, std::uint64_t seed,
                                                      const InitSettings& settings = {}) {
  std::vector<ElementInstance> inst = make_instances(pr);
  if (inst.empty()) throw ValidationError("inventory is empty");
  std::mt19937_64 rng(seed);
  const std::size_t cloud_n = settings.cloud_size ? settings.cloud_size : std::max<std::size_t>(5000, 200 * inst.size());
  const auto cloud = detail::sample_domain(pr.scene.domain, cloud_n, rng);

  Points centres(3, inst.size());
  for (std::size_t e = 0; e < inst.size(); ++e) centres.col(e) = cloud[e];
  for (int it = 0; it < settings.lloyd_iterations; ++it) {
    const auto owner = detail::nearest_site(cloud, centres);
    Points sum = Points::Zero(3, centres.cols());
    std::vector<int> count(centres.cols(), 0);
    for (std::size_t c = 0; c < cloud.size(); ++c) {
      sum.col(owner[c]) += cloud[c];
      ++count[owner[c]];
    }
    for (Eigen::Index e = 0; e < centres.cols(); ++e)
      if (count[e] > 0) centres.col(e) = sum.col(e) / count[e];
  }
  for (std::size_t e = 0; e < inst.size(); ++e) {
    inst[e].translation = centres.col(e);
    inst[e].fixed = detail::random_rotation(rng) * inst[e].fixed;
  }
  restore_feasibility(inst, pr.prototypes, pr.scene.domain);

  const ParamLayout layout = make_layout(inst, pr.prototypes);
  Eigen::VectorXd lower, upper;
  parameter_bounds(layout, inst, pr.prototypes, pr.scene.domain.bounds(), lower, upper);
  auto energy = [&](const std::vector<ElementInstance>& v, Eigen::VectorXd* grad) {
    const WorldSamples ws = world_sample_positions(v, pr.prototypes);
    Points gp;
    const double e = detail::cvt_energy(cloud, ws.positions, grad ? &gp : nullptr);
    if (grad) *grad = chain_to_params(gp, ws, v, pr.prototypes, layout);
    return e;
  };
  double tau = 0.5;
  for (int it = 0; it < settings.cvt_steps; ++it) {
    Eigen::VectorXd grad;
    const double e0 = energy(inst, &grad);
    if (grad.norm() < 1e-14) break;
    const Eigen::VectorXd x = pack_parameters(inst, layout);
    bool moved = false;
    for (int ls = 0; ls < 30; ++ls, tau *= 0.5) {
      std::vector<ElementInstance> trial = inst;
      unpack_parameters((x - tau * grad).cwiseMax(lower).cwiseMin(upper), layout, trial);
      if (energy(trial, nullptr) < e0) {
        inst = std::move(trial);
        moved = true;
        break;
      }
    }
    if (!moved) break;
    tau = std::min(1.0, 2.0 * tau);
    restore_feasibility(inst, pr.prototypes, pr.scene.domain);
  }
  return inst;
}

/// One continuation stage of the schedule.
struct StagePlan {
  std::string label;
  double alpha;
  double beta;
  bool reparameterize;
  bool connectivity;
};

/// Stages in execution order, iterating the schedule exactly as the loop
/// does: an initial stage, alpha reductions alpha <- max(alpha_min,
/// f alpha), then beta increases beta <- min(beta_max, f beta).
inline std::vector<StagePlan> plan_schedule(const ContinuationSchedule& sc) {
  std::vector<StagePlan> plan;
  double alpha = sc.alpha0, beta = sc.beta0;
  plan.push_back({"initial", alpha, beta, false, false});
  int k = 0;
  while (alpha > sc.alpha_min) {
    alpha = std::max(sc.alpha_min, alpha * sc.alpha_factor);
    plan.push_back({"alpha-" + std::to_string(++k), alpha, beta, true, alpha < sc.connectivity_threshold});
  }
  k = 0;
  while (beta < sc.beta_max) {
    beta = std::min(sc.beta_max, beta * sc.beta_factor);
    plan.push_back({"beta-" + std::to_string(++k), alpha, beta, true, alpha < sc.connectivity_threshold});
  }
  return plan;
}

struct TraceRecord {
  int iteration = 0;  // 0-based, over the whole run
  int stage = 0;
  std::string label;
  double alpha = 0.0;
  double beta = 0.0;
  double compliance = 0.0;
  double f_domain = 0.0;
  double lambda = 0.0;
  bool fallback = false;
  double seconds = 0.0;
};

struct StageRecord {
  StagePlan plan;
  int first_iteration = 0;
  int iterations = 0;
  int reparameterized = 0;  // instances whose rotation was folded at stage start
  bool connectivity_ran = false;
  double spring_energy_before = 0.0;
  double spring_energy_after = 0.0;
  double seconds = 0.0;
};

struct OptimizationTrace {
  std::vector<TraceRecord> records;
  std::vector<StageRecord> stages;
  double initial_compliance = 0.0;  // initial layout at the final continuation parameters
  double final_compliance = 0.0;
  double final_f_domain = 0.0;
  bool aborted = false;
  std::string error;
};

struct LoopCallbacks {
  std::function<void(const TraceRecord&, const std::vector<ElementInstance>&, const ComplianceResult&)> on_iteration;
  std::function<void(const StageRecord&)> on_stage;
};

inline DensityParams density_params(const Problem& pr, double alpha, double beta) {
  return {alpha, beta, pr.scene.solver.use_indicator};
}

/// The full continuation schedule of MMA updates; modifies `instances` in
/// place. Solver failures end the run early with `aborted` set.
inline OptimizationTrace continuation_loop(const Problem& pr, std::vector<ElementInstance>& instances,
                                           const LoopCallbacks& callbacks = {}) {
  using clock = std::chrono::steady_clock;
  OptimizationTrace trace;
  const auto& sc = pr.scene.schedule;
  const auto plan = plan_schedule(sc);
  const ParamLayout layout = make_layout(instances, pr.prototypes);
  Eigen::VectorXd lower, upper;
  parameter_bounds(layout, instances, pr.prototypes, pr.scene.domain.bounds(), lower, upper);
  const double sdf_step = gradient_step(pr.scene.domain);
  const double length_scale = pr.scene.domain.bounds().diagonal();
  const std::vector<ElementInstance> initial = instances;
  Eigen::VectorXd warm;
  int iteration = 0;

  try {
    for (std::size_t k = 0; k < plan.size(); ++k) {
      const auto& stage = plan[k];
      const auto stage_start = clock::now();
      StageRecord rec;
      rec.plan = stage;
      rec.first_iteration = iteration;
      if (stage.reparameterize)
        for (auto& e : instances) rec.reparameterized += reparameterize_rotation(e) ? 1 : 0;
      const DensityParams params = density_params(pr, stage.alpha, stage.beta);
      MmaState mma(lower, upper);
      double reference = 0.0;
      for (int it = 0; it < sc.inner_iters; ++it) {
        const auto t0 = clock::now();
        const ComplianceResult r =
            evaluate_compliance(pr, instances, params, true, &layout, warm.size() ? &warm : nullptr);
        warm = r.state.u;
        if (it == 0) reference = std::max(std::abs(r.compliance), std::numeric_limits<double>::min());
        const DomainConstraint dc = domain_constraint(r.samples.positions, r.samples.radii, pr.scene.domain, sdf_step);
        const Eigen::VectorXd dg = chain_to_params(dc.gradient, r.samples, instances, pr.prototypes, layout);
        const Eigen::VectorXd x = pack_parameters(instances, layout);
        const MmaStep step = mma_step(mma, x, r.gradient / reference, dc.value / length_scale, dg / length_scale);
        unpack_parameters(step.x, layout, instances);
        // f_domain and its gradient vanish inside the domain, so MMA cannot
        // see the wall until it has stepped through it. Translating offending
        // elements back keeps every iterate feasible.
        try {
          std::vector<ElementInstance> projected = instances;
          restore_feasibility(projected, pr.prototypes, pr.scene.domain);
          instances = std::move(projected);
        } catch (const GeometryError&) {
          // Leave the violation to the constraint; the final pass reports it.
        }

        TraceRecord tr;
        tr.iteration = iteration++;
        tr.stage = static_cast<int>(k);
        tr.label = stage.label;
        tr.alpha = stage.alpha;
        tr.beta = stage.beta;
        tr.compliance = r.compliance;
        tr.f_domain = dc.value;
        tr.lambda = step.lambda;
        tr.fallback = step.fallback;
        tr.seconds = std::chrono::duration<double>(clock::now() - t0).count();
        trace.records.push_back(tr);
        ++rec.iterations;
        if (callbacks.on_iteration) callbacks.on_iteration(tr, instances, r);
      }
      // The sub-solve prepares the next stage's MMA updates; after the last
      // stage nothing would refine its output, so it is skipped there.
      if (stage.connectivity && k + 1 < plan.size()) {
        const WorldSamples ws = world_sample_positions(instances, pr.prototypes);
        const ConnectivityGraph g = build_connectivity_graph(ws.positions, ws.radii, ws.element, pr.scene.seed);
        const ConnectivityResult cr =
            optimize_connectivity(g, instances, pr.prototypes, lower, upper, sc.sub_solver_steps,
                                  [&](std::vector<ElementInstance>& trial) {
                                    restore_feasibility(trial, pr.prototypes, pr.scene.domain);
                                  });
        rec.connectivity_ran = true;
        rec.spring_energy_before = cr.energy_before;
        rec.spring_energy_after = cr.energy_after;
      }
      rec.seconds = std::chrono::duration<double>(clock::now() - stage_start).count();
      trace.stages.push_back(rec);
      if (callbacks.on_stage) callbacks.on_stage(rec);
    }
  } catch (const SolverError& e) {
    trace.aborted = true;
    trace.error = e.what();
    return trace;
  }

  // Final iterate: pull any sample the last updates left outside back in,
  // then evaluate at the final continuation parameters.
  restore_feasibility(instances, pr.prototypes, pr.scene.domain);
  const DensityParams final_params = density_params(pr, plan.back().alpha, plan.back().beta);
  const ComplianceResult fin = evaluate_compliance(pr, instances, final_params, false);
  trace.final_compliance = fin.compliance;
  trace.final_f_domain =
      domain_constraint(fin.samples.positions, fin.samples.radii, pr.scene.domain, sdf_step).value;
  trace.initial_compliance = evaluate_compliance(pr, initial, final_params, false).compliance;
  return trace;
}

}  // namespace aggr

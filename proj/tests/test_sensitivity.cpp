#include <cmath>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "aggregate/gradient_check.hpp"
#include "aggregate/problem.hpp"
#include "aggregate/sensitivity.hpp"

using namespace aggr;

namespace {

// Random rooted tree: each vertex attaches to a random earlier vertex of a
// random permutation, then a random vertex becomes the root.
ElementPrototype random_tree_prototype(std::mt19937_64& rng, int m) {
  std::uniform_real_distribution<double> u(-1, 1);
  ElementPrototype p;
  p.id = "tree";
  for (int s = 0; s < m; ++s) p.samples.push_back(Vec3(u(rng), u(rng), u(rng)));
  p.radii.assign(m, 0.2);
  std::vector<int> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Edge> edges;
  for (int k = 1; k < m; ++k) edges.push_back({perm[std::uniform_int_distribution<int>(0, k - 1)(rng)], perm[k]});
  p.skeleton = root_skeleton(p.samples, edges, std::uniform_int_distribution<int>(0, m - 1)(rng));
  return p;
}

ElementInstance random_pose(std::mt19937_64& rng, const ElementPrototype& p) {
  std::uniform_real_distribution<double> u(-1, 1);
  ElementInstance e = make_instance(0, p);
  e.translation = Vec3(u(rng), u(rng), u(rng));
  e.rotation = 2.0 * Vec3(u(rng), u(rng), u(rng));
  e.fixed = 1.3 * Mat3::Identity();
  for (auto& w : e.omega) w = Vec3(u(rng), u(rng), u(rng));
  return e;
}

// d x_s / d omega_{s', i} built densely: non-zero iff s is s' or lies below
// s' (found by walking parent pointers from s).
std::vector<Vec3> dense_joint_gradient(const Points& G, const ElementInstance& e, const ElementPrototype& p) {
  const auto& t = *p.skeleton;
  const Mat3 ra = rotation_from_expmap(e.rotation) * e.fixed;
  std::vector<Vec3> out(p.size(), Vec3::Zero());
  for (int s = 0; s < p.size(); ++s)
    for (int a = s; a != t.root; a = t.parent[a])
      for (int i = 0; i < 3; ++i)
        out[a][i] += G.col(s).dot(ra * (rotation_expmap_derivative(e.omega[a], i) * t.offset[a]));
  return out;
}

const char* kDeformableScene = R"({
  "domain": {"type": "box", "min": [0, 0, 0], "max": [6, 6, 6]},
  "loads": [{"region": {"type": "box", "min": [1.9, 1.9, 5.9], "max": [4.1, 4.1, 6.1]}, "force": [0, 0, -1]}],
  "anchors": [{"region": {"type": "box", "min": [1.9, 1.9, -0.1], "max": [4.1, 4.1, 0.1]}}],
  "inventory": [
    {"id": "chain", "count": 1, "primitive": {"type": "box", "half": [1.5, 0.5, 0.5]},
     "samples": [[-1, 0, 0, 0.7], [0, 0, 0, 0.7], [1, 0, 0, 0.7]], "deformable": true},
    {"id": "block", "count": 1, "primitive": {"type": "box", "half": [0.5, 0.5, 1.5]},
     "samples": [[0, 0, -1, 0.7], [0, 0, 0, 0.7], [0, 0, 1, 0.7]]}
  ],
  "grid": {"dims": [6, 6, 6], "origin": [0, 0, 0], "cell_size": 1.0},
  "solver": {"method": "direct"}
})";

}  // namespace

TEST(Sensitivity, LayoutCountsAndRoundTrip) {
  std::mt19937_64 rng(1);
  std::vector<ElementPrototype> protos{random_tree_prototype(rng, 7)};
  ElementPrototype rigid;
  rigid.samples = {Vec3::Zero(), Vec3::UnitX()};
  rigid.radii = {0.1, 0.1};
  protos.push_back(rigid);
  std::vector<ElementInstance> inst{random_pose(rng, protos[0]), make_instance(1, protos[1])};
  inst[1].translation = Vec3(4, 5, 6);
  inst[0].omega[protos[0].skeleton->root].setZero();  // the root has no joint parameters
  const ParamLayout layout = make_layout(inst, protos);
  EXPECT_EQ(layout.size(), 6 + 3 * 6 + 6);
  EXPECT_EQ(layout.blocks[0].joint[protos[0].skeleton->root], -1);
  const Eigen::VectorXd x = pack_parameters(inst, layout);
  std::vector<ElementInstance> copy = inst;
  for (auto& e : copy) {
    e.translation.setZero();
    for (auto& w : e.omega) w.setZero();
  }
  unpack_parameters(x, layout, copy);
  EXPECT_EQ(pack_parameters(copy, layout), x);
  EXPECT_EQ(copy[0].omega, inst[0].omega);

  Eigen::VectorXd lo, hi;
  Aabb box;
  box.min = Vec3(0, 0, 0);
  box.max = Vec3(10, 20, 30);
  parameter_bounds(layout, inst, protos, box, lo, hi);
  for (int k = 0; k < layout.size(); ++k) EXPECT_LT(lo[k], hi[k]);
  EXPECT_EQ(hi[layout.blocks[1].translation + 2], 30.0);
  EXPECT_EQ(hi[layout.blocks[0].rotation], 2 * std::numbers::pi);
}

TEST(Sensitivity, DeformableBackpropMatchesDenseOracle) {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 200; ++trial) {
    const int m = std::uniform_int_distribution<int>(1, 20)(rng);
    const ElementPrototype p = random_tree_prototype(rng, m);
    const ElementInstance e = random_pose(rng, p);
    Points G(3, m);
    for (int s = 0; s < m; ++s) G.col(s) = Vec3(n01(rng), n01(rng), n01(rng));
    const JointGradient jg = deformable_backprop(G, e, p);
    const auto dense = dense_joint_gradient(G, e, p);
    EXPECT_EQ(jg.additions, m - 1);
    for (int s = 0; s < m; ++s) EXPECT_LT((jg.omega[s] - dense[s]).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_EQ(jg.omega[p.skeleton->root], Vec3::Zero());
  }
}

TEST(Sensitivity, SampleJacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n01;
  const std::vector<ElementPrototype> protos{random_tree_prototype(rng, 9)};
  const std::vector<ElementInstance> inst{random_pose(rng, protos[0])};
  const ParamLayout layout = make_layout(inst, protos);
  const WorldSamples ws = world_sample_positions(inst, protos);
  Points G(3, ws.size());
  for (int s = 0; s < ws.size(); ++s) G.col(s) = Vec3(n01(rng), n01(rng), n01(rng));
  int additions = 0;
  const Eigen::VectorXd analytic = chain_to_params(G, ws, inst, protos, layout, &additions);
  EXPECT_EQ(additions, 8);
  auto objective = [&](const Eigen::VectorXd& x) {
    std::vector<ElementInstance> trial = inst;
    unpack_parameters(x, layout, trial);
    const WorldSamples w = world_sample_positions(trial, protos);
    return (G.array() * w.positions.array()).sum();
  };
  const Eigen::VectorXd x = pack_parameters(inst, layout);
  std::vector<std::string> group(layout.size());
  for (int k = 0; k < layout.size(); ++k) group[k] = param_kind_name(layout.slots[k].kind);
  const FdReport rep =
      finite_difference_check(objective, x, analytic, Eigen::VectorXd::Constant(x.size(), 1e-6), group);
  EXPECT_LT(rep.max_rel, 1e-6) << "worst parameter " << rep.worst;
  EXPECT_EQ(rep.groups.size(), 3u);
}

TEST(Sensitivity, ElementsDoNotCouple) {
  std::mt19937_64 rng(12);
  const ElementPrototype p = random_tree_prototype(rng, 5);
  const std::vector<ElementPrototype> protos{p};
  const std::vector<ElementInstance> inst{random_pose(rng, p), random_pose(rng, p)};
  const ParamLayout layout = make_layout(inst, protos);
  const WorldSamples ws = world_sample_positions(inst, protos);
  Points G = Points::Zero(3, ws.size());
  G.col(1) = Vec3(1, -2, 0.5);  // only element 0 has a gradient
  const Eigen::VectorXd g = chain_to_params(G, ws, inst, protos, layout);
  const int start = layout.blocks[1].translation;
  EXPECT_EQ(g.tail(g.size() - start).norm(), 0.0);
  EXPECT_GT(g.head(start).norm(), 0.0);
}

TEST(Sensitivity, BackpropIsDeterministic) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01;
  const std::vector<ElementPrototype> protos{random_tree_prototype(rng, 15)};
  std::vector<ElementInstance> inst;
  for (int k = 0; k < 6; ++k) inst.push_back(random_pose(rng, protos[0]));
  const ParamLayout layout = make_layout(inst, protos);
  const WorldSamples ws = world_sample_positions(inst, protos);
  Points G(3, ws.size());
  for (int s = 0; s < ws.size(); ++s) G.col(s) = Vec3(n01(rng), n01(rng), n01(rng));
  const Eigen::VectorXd a = chain_to_params(G, ws, inst, protos, layout);
  const Eigen::VectorXd b = chain_to_params(G, ws, inst, protos, layout);
  EXPECT_EQ(a, b);
}

TEST(Sensitivity, FiniteDifferenceReport) {
  auto f = [](const Eigen::VectorXd& x) { return std::sin(x[0]) + x[1] * x[1] * x[1]; };
  Eigen::VectorXd x(2), a(2);
  x << 0.3, 1.2;
  a << std::cos(0.3), 3 * 1.44;
  const FdReport ok = finite_difference_check(f, x, a, Eigen::VectorXd::Constant(2, 1e-5), {"a", "b"});
  EXPECT_TRUE(ok.passed(1e-8));
  a[1] *= 1.01;
  const FdReport bad = finite_difference_check(f, x, a, Eigen::VectorXd::Constant(2, 1e-5), {"a", "b"});
  EXPECT_FALSE(bad.passed(1e-4));
  EXPECT_EQ(bad.worst, 1);
  EXPECT_THROW(finite_difference_check(f, x, a, Eigen::VectorXd::Zero(2), {"a", "b"}), ValidationError);
  const FdReport sub = finite_difference_check(f, x, a, Eigen::VectorXd::Constant(2, 1e-5), {"a", "b"}, {0});
  EXPECT_TRUE(sub.passed(1e-8));
  EXPECT_TRUE(std::isnan(sub.numeric[1]));
}

TEST(Sensitivity, ComplianceGradientWithDeformableElement) {
  const Problem pr = make_problem(parse_scene(kDeformableScene));
  std::vector<ElementInstance> inst = make_instances(pr);
  ASSERT_EQ(inst.size(), 2u);
  inst[0].translation = Vec3(3.1, 2.9, 3.8);
  inst[0].rotation = Vec3(0.1, -0.2, 0.3);
  inst[0].omega[0] = Vec3(0.1, 0.2, -0.1);
  inst[0].omega[2] = Vec3(-0.2, 0.1, 0.15);
  inst[1].translation = Vec3(2.8, 3.2, 2.2);
  inst[1].rotation = Vec3(0.05, 0.1, 0.0);
  const FdReport rep = compliance_gradient_check(pr, inst, 1.5, 2.0, 1e-5);
  EXPECT_LT(rep.max_rel, 1e-4) << "worst parameter " << rep.worst;
  ASSERT_EQ(rep.groups.size(), 3u);
  EXPECT_EQ(rep.groups[2].kind, "omega");
  EXPECT_EQ(rep.groups[2].count, 6);
  EXPECT_THROW(compliance_gradient_check(pr, inst, 1.5, 2.0, 0.0), ValidationError);
}

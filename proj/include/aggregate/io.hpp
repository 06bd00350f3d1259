#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "aggregate/cache.hpp"
#include "aggregate/element.hpp"
#include "aggregate/errors.hpp"
#include "aggregate/grid.hpp"
#include "aggregate/optimizer.hpp"
#include "aggregate/scene.hpp"
#include "json.hpp"

namespace aggr {

inline constexpr const char* kToolVersion = "0.1.0";

/// 64-bit FNV-1a, printed as 16 hex digits.
inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, "cannot open file");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  return out;
}

/// Legacy-VTK structured points with cell scalars "density" and, when given,
/// node vectors "u".
inline void write_vtk(std::ostream& out, const HexMesh& grid, const Eigen::VectorXd& rho,
                      const Eigen::VectorXd* displacement = nullptr) {
  out.precision(17);
  out << "# vtk DataFile Version 3.0\ndensity\nASCII\nDATASET STRUCTURED_POINTS\n";
  out << "DIMENSIONS " << grid.dims[0] + 1 << ' ' << grid.dims[1] + 1 << ' ' << grid.dims[2] + 1 << "\n";
  out << "ORIGIN " << grid.origin.x() << ' ' << grid.origin.y() << ' ' << grid.origin.z() << "\n";
  out << "SPACING " << grid.h << ' ' << grid.h << ' ' << grid.h << "\n";
  out << "CELL_DATA " << grid.num_cells() << "\nSCALARS density double 1\nLOOKUP_TABLE default\n";
  for (int c = 0; c < grid.num_cells(); ++c) out << rho[c] << "\n";
  if (displacement) {
    out << "POINT_DATA " << grid.num_nodes() << "\nVECTORS u double\n";
    for (int n = 0; n < grid.num_nodes(); ++n)
      out << (*displacement)[3 * n] << ' ' << (*displacement)[3 * n + 1] << ' ' << (*displacement)[3 * n + 2] << "\n";
  }
}

inline json mat3_to_json(const Mat3& m) {
  json a = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) a.push_back(m(r, c));
  return a;
}

/// All element parameters, enough to rebuild the world samples exactly.
inline json layout_to_json(const std::vector<ElementInstance>& instances,
                           const std::vector<ElementPrototype>& prototypes) {
  json elements = json::array();
  for (const auto& e : instances) {
    json j;
    j["prototype"] = prototypes[e.prototype].id;
    j["translation"] = to_json(e.translation);
    j["rotation"] = to_json(e.rotation);
    j["fixed"] = mat3_to_json(e.fixed);
    if (!e.omega.empty()) {
      j["omega"] = json::array();
      for (const auto& w : e.omega) j["omega"].push_back(to_json(w));
    }
    elements.push_back(j);
  }
  return {{"elements", elements}};
}

inline std::vector<ElementInstance> layout_from_json(const json& doc, const std::vector<ElementPrototype>& prototypes,
                                                     const std::string& source = "layout") {
  auto fail = [&](const std::string& path, const std::string& msg) { throw ParseError(source, path + ": " + msg); };
  auto vec = [&](const json& v, const std::string& path) {
    if (!v.is_array() || v.size() != 3) fail(path, "expected 3 numbers");
    Vec3 out;
    for (int a = 0; a < 3; ++a) {
      if (!v[a].is_number()) fail(path, "expected 3 numbers");
      out[a] = v[a].get<double>();
    }
    return out;
  };
  if (!doc.is_object() || !doc.contains("elements") || !doc["elements"].is_array()) fail("/elements", "missing");
  std::vector<ElementInstance> out;
  const json& els = doc["elements"];
  for (std::size_t i = 0; i < els.size(); ++i) {
    const std::string p = "/elements/" + std::to_string(i);
    const json& j = els[i];
    if (!j.contains("prototype") || !j["prototype"].is_string()) fail(p + "/prototype", "missing");
    const std::string id = j["prototype"];
    int proto = -1;
    for (std::size_t k = 0; k < prototypes.size(); ++k)
      if (prototypes[k].id == id) proto = static_cast<int>(k);
    if (proto < 0) fail(p + "/prototype", "unknown prototype \"" + id + "\"");
    ElementInstance e = make_instance(proto, prototypes[proto]);
    e.translation = vec(j.value("translation", json()), p + "/translation");
    e.rotation = vec(j.value("rotation", json()), p + "/rotation");
    const json& f = j.value("fixed", json());
    if (!f.is_array() || f.size() != 9) fail(p + "/fixed", "expected 9 numbers");
    for (int k = 0; k < 9; ++k) e.fixed(k / 3, k % 3) = f[k].get<double>();
    if (prototypes[proto].deformable()) {
      const json& w = j.value("omega", json());
      if (!w.is_array() || static_cast<int>(w.size()) != prototypes[proto].size())
        fail(p + "/omega", "expected one rotation per sample");
      for (std::size_t s = 0; s < w.size(); ++s) e.omega[s] = vec(w[s], p + "/omega/" + std::to_string(s));
    }
    out.push_back(std::move(e));
  }
  return out;
}

/// All placed element meshes in one OBJ, one object per element. Deformable
/// elements also get their deformed sample skeleton as polylines.
inline void export_final(std::ostream& out, const std::vector<ElementInstance>& instances,
                         const std::vector<ElementPrototype>& prototypes) {
  std::size_t offset = 0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& e = instances[i];
    const auto& p = prototypes[e.prototype];
    const TriangleMesh m = transformed_mesh(e, p);
    write_obj(out, m, offset, "element_" + std::to_string(i) + "_" + p.id);
    offset += m.vertices.size();
    if (!p.deformable()) continue;
    const WorldSamples ws = world_sample_positions({e}, prototypes);
    out << "o skeleton_" << i << "\n";
    for (int s = 0; s < ws.size(); ++s)
      out << "v " << ws.positions(0, s) << ' ' << ws.positions(1, s) << ' ' << ws.positions(2, s) << "\n";
    for (int s = 0; s < ws.size(); ++s)
      if (p.skeleton->parent[s] >= 0) out << "l " << offset + p.skeleton->parent[s] + 1 << ' ' << offset + s + 1 << "\n";
    offset += ws.size();
  }
}

inline json trace_record_json(const TraceRecord& r) {
  return {{"iteration", r.iteration}, {"stage", r.stage},       {"label", r.label},
          {"alpha", r.alpha},         {"beta", r.beta},         {"compliance", r.compliance},
          {"f_domain", r.f_domain},   {"lambda", r.lambda},     {"fallback", r.fallback},
          {"seconds", r.seconds}};
}

inline json schedule_json(const ContinuationSchedule& sc) {
  return {{"alpha0", sc.alpha0},
          {"alpha_min", sc.alpha_min},
          {"alpha_factor", sc.alpha_factor},
          {"beta0", sc.beta0},
          {"beta_max", sc.beta_max},
          {"beta_factor", sc.beta_factor},
          {"inner_iters", sc.inner_iters},
          {"connectivity_threshold", sc.connectivity_threshold},
          {"sub_solver_steps", sc.sub_solver_steps}};
}

inline json manifest_json(const std::string& scene_bytes, const SceneConfig& scene, const OptimizationTrace& trace,
                          double total_seconds) {
  json stages = json::array();
  for (const auto& s : trace.stages) {
    double lo = 0, hi = 0, sum = 0;
    for (int k = 0; k < s.iterations; ++k) {
      const double t = trace.records[s.first_iteration + k].seconds;
      lo = k ? std::min(lo, t) : t;
      hi = std::max(hi, t);
      sum += t;
    }
    json js = {{"label", s.plan.label},
               {"alpha", s.plan.alpha},
               {"beta", s.plan.beta},
               {"iterations", s.iterations},
               {"seconds", s.seconds},
               {"iteration_seconds", {{"min", lo}, {"max", hi}, {"mean", s.iterations ? sum / s.iterations : 0.0}}},
               {"reparameterized", s.reparameterized}};
    if (s.connectivity_ran)
      js["connectivity"] = {{"energy_before", s.spring_energy_before}, {"energy_after", s.spring_energy_after}};
    stages.push_back(js);
  }
  json m = {{"tool_version", kToolVersion},
            {"scene_hash", fnv1a_hex(scene_bytes)},
            {"seed", scene.seed},
            {"schedule", schedule_json(scene.schedule)},
            {"iterations", trace.records.size()},
            {"initial_compliance", trace.initial_compliance},
            {"final_compliance", trace.final_compliance},
            {"final_f_domain", trace.final_f_domain},
            {"stages", stages},
            {"seconds", total_seconds},
            {"aborted", trace.aborted}};
  if (trace.aborted) m["error"] = trace.error;
  return m;
}

}  // namespace aggr

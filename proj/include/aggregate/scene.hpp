#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "aggregate/errors.hpp"
#include "aggregate/geometry.hpp"
#include "aggregate/grid.hpp"

namespace aggr {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Shapes. Signed distance is negative inside.

struct BoxShape {
  Vec3 min, max;
};
struct SphereShape {
  Vec3 center;
  double radius;
};
/// Capped cylinder; `axis` is 0, 1 or 2.
struct CylinderShape {
  Vec3 center;
  double radius;
  double height;
  int axis = 2;
};
/// Intersection of half-spaces n.x <= offset. The distance outside is a
/// lower bound (exact inside and across faces). `bounds` must enclose it.
struct HalfSpaceShape {
  std::vector<Vec3> normals;
  std::vector<double> offsets;
  Aabb bounds;
};
/// Closed triangle mesh with a voxelised signed distance field.
struct MeshShape {
  std::string path;
  int resolution = 64;
  std::shared_ptr<const TriangleMesh> mesh;
  std::shared_ptr<const VoxelGrid<double>> sdf;
};

using Shape = std::variant<BoxShape, SphereShape, CylinderShape, HalfSpaceShape, MeshShape>;

inline double signed_distance(const Shape& shape, const Vec3& x) {
  return std::visit(
      [&](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, BoxShape>) {
          const Vec3 c = 0.5 * (s.min + s.max), half = 0.5 * (s.max - s.min);
          const Vec3 q = (x - c).cwiseAbs() - half;
          return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
        } else if constexpr (std::is_same_v<T, SphereShape>) {
          return (x - s.center).norm() - s.radius;
        } else if constexpr (std::is_same_v<T, CylinderShape>) {
          Vec3 d = x - s.center;
          const double along = d[s.axis];
          d[s.axis] = 0.0;
          const double qr = d.norm() - s.radius, qa = std::abs(along) - 0.5 * s.height;
          return std::hypot(std::max(qr, 0.0), std::max(qa, 0.0)) + std::min(std::max(qr, qa), 0.0);
        } else if constexpr (std::is_same_v<T, HalfSpaceShape>) {
          double d = -std::numeric_limits<double>::infinity();
          for (std::size_t i = 0; i < s.normals.size(); ++i) {
            const double len = s.normals[i].norm();
            d = std::max(d, (s.normals[i].dot(x) - s.offsets[i]) / len);
          }
          return d;
        } else {
          return trilinear(*s.sdf, x);
        }
      },
      shape);
}

inline Aabb shape_bounds(const Shape& shape) {
  return std::visit(
      [](const auto& s) -> Aabb {
        using T = std::decay_t<decltype(s)>;
        Aabb b;
        if constexpr (std::is_same_v<T, BoxShape>) {
          b.min = s.min;
          b.max = s.max;
        } else if constexpr (std::is_same_v<T, SphereShape>) {
          b.min = s.center - Vec3::Constant(s.radius);
          b.max = s.center + Vec3::Constant(s.radius);
        } else if constexpr (std::is_same_v<T, CylinderShape>) {
          Vec3 half = Vec3::Constant(s.radius);
          half[s.axis] = 0.5 * s.height;
          b.min = s.center - half;
          b.max = s.center + half;
        } else if constexpr (std::is_same_v<T, HalfSpaceShape>) {
          b = s.bounds;
        } else {
          b = s.mesh->bounds();
        }
        return b;
      },
      shape);
}

/// Output domain: a shape minus forbidden regions.
struct DomainShape {
  Shape shape = BoxShape{Vec3::Zero(), Vec3::Ones()};
  std::vector<Shape> forbidden;

  Aabb bounds() const { return shape_bounds(shape); }
};

inline double signed_distance(const DomainShape& domain, const Vec3& x) {
  double d = signed_distance(domain.shape, x);
  for (const auto& f : domain.forbidden) d = std::max(d, -signed_distance(f, x));
  return d;
}

/// Central-difference gradient of the domain distance.
inline Vec3 signed_distance_gradient(const DomainShape& domain, const Vec3& x, double step) {
  Vec3 g;
  for (int a = 0; a < 3; ++a) {
    Vec3 e = Vec3::Zero();
    e[a] = step;
    g[a] = (signed_distance(domain, x + e) - signed_distance(domain, x - e)) / (2 * step);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Scene configuration

struct LoadSpec {
  Shape region;
  Vec3 force = Vec3::Zero();  // total force, split equally over captured nodes
};

struct AnchorSpec {
  Shape region;
};

enum class PrimitiveKind { kNone, kSphere, kBox, kCylinder };

/// One inventory line: how to build an element type and how many to place.
struct PrototypeSpec {
  std::string id;
  int count = 1;
  std::string mesh_path;  // OBJ, or empty when `primitive` is set
  PrimitiveKind primitive = PrimitiveKind::kNone;
  std::vector<double> primitive_size;  // sphere: {r}; box: half extents; cylinder: {r, height}
  int sample_count = 1;
  std::vector<std::array<double, 4>> explicit_samples;  // x, y, z, radius
  bool deformable = false;
  double omega_limit = 0.3 * std::numbers::pi;
  Mat3 transform = Mat3::Identity();
  int occupancy_resolution = 64;
};

struct MaterialSpec {
  double young = 1.0;
  double poisson = 0.3;
  double ersatz = 1e-6;
};

struct ContinuationSchedule {
  double alpha0 = 3.0;
  double alpha_min = 0.9;
  double alpha_factor = 0.9;
  double beta0 = 1.0;
  double beta_max = 2.0;
  double beta_factor = 2.0;
  int inner_iters = 30;
  double connectivity_threshold = 2.0;
  int sub_solver_steps = 10;
};

enum class SolverMethod { kConjugateGradient, kDirect };

struct SolverSettings {
  SolverMethod method = SolverMethod::kConjugateGradient;
  double tolerance = 1e-8;
  int max_iterations = 20000;
  bool use_indicator = true;
  int sdf_resolution = 64;
};

struct GridSpec {
  std::array<int, 3> dims{32, 32, 32};
  std::optional<Vec3> origin;
  std::optional<double> cell_size;
};

struct SceneConfig {
  DomainShape domain;
  std::vector<LoadSpec> loads;
  std::vector<AnchorSpec> anchors;
  std::vector<PrototypeSpec> inventory;
  GridSpec grid;
  MaterialSpec material;
  ContinuationSchedule schedule;
  SolverSettings solver;
  std::uint64_t seed = 0;
  std::string base_dir;  // mesh paths are resolved against this
};

/// Grid geometry implied by the scene. Without an explicit cell size, cubic
/// cells are sized so the grid covers the domain bounds and is centred on
/// them.
inline HexMesh make_hex_mesh(const SceneConfig& scene) {
  const Aabb box = scene.domain.bounds();
  const auto& d = scene.grid.dims;
  double h = scene.grid.cell_size.value_or(0.0);
  if (!scene.grid.cell_size)
    for (int a = 0; a < 3; ++a) h = std::max(h, box.extent()[a] / d[a]);
  Vec3 origin = scene.grid.origin.value_or(box.center() - 0.5 * h * Vec3(d[0], d[1], d[2]));
  return HexMesh(d, origin, h);
}

// ---------------------------------------------------------------------------
// JSON parsing

namespace detail {

struct Reader {
  std::string base_dir;
  int sdf_resolution = 64;

  [[noreturn]] static void fail(const std::string& path, const std::string& what) {
    throw ParseError(path.empty() ? "/" : path, what);
  }

  static const json& field(const json& j, const std::string& path, const char* key) {
    if (!j.is_object()) fail(path, "expected an object");
    if (!j.contains(key)) fail(path + "/" + key, "missing required key");
    return j.at(key);
  }

  static double number(const json& j, const std::string& path) {
    if (!j.is_number()) fail(path, "expected a number");
    return j.get<double>();
  }

  static int integer(const json& j, const std::string& path) {
    if (!j.is_number_integer()) fail(path, "expected an integer");
    return j.get<int>();
  }

  static bool boolean(const json& j, const std::string& path) {
    if (!j.is_boolean()) fail(path, "expected a boolean");
    return j.get<bool>();
  }

  static std::string string(const json& j, const std::string& path) {
    if (!j.is_string()) fail(path, "expected a string");
    return j.get<std::string>();
  }

  static Vec3 vec3(const json& j, const std::string& path) {
    if (!j.is_array() || j.size() != 3) fail(path, "expected an array of 3 numbers");
    Vec3 v;
    for (int a = 0; a < 3; ++a) v[a] = number(j[a], path + "/" + std::to_string(a));
    return v;
  }

  template <typename T, typename F>
  static T optional(const json& j, const std::string& path, const char* key, T fallback, F read) {
    if (!j.contains(key)) return fallback;
    return read(j.at(key), path + "/" + key);
  }

  static double positive(double v, const std::string& path) {
    if (!(v > 0)) fail(path, "must be positive");
    return v;
  }

  Shape shape(const json& j, const std::string& path) const {
    const std::string type = string(field(j, path, "type"), path + "/type");
    if (type == "box") {
      BoxShape b{vec3(field(j, path, "min"), path + "/min"), vec3(field(j, path, "max"), path + "/max")};
      if ((b.max.array() <= b.min.array()).any()) fail(path + "/max", "box max must exceed min");
      return b;
    }
    if (type == "sphere")
      return SphereShape{vec3(field(j, path, "center"), path + "/center"),
                         positive(number(field(j, path, "radius"), path + "/radius"), path + "/radius")};
    if (type == "cylinder") {
      CylinderShape c{vec3(field(j, path, "center"), path + "/center"),
                      positive(number(field(j, path, "radius"), path + "/radius"), path + "/radius"),
                      positive(number(field(j, path, "height"), path + "/height"), path + "/height"),
                      optional(j, path, "axis", 2, integer)};
      if (c.axis < 0 || c.axis > 2) fail(path + "/axis", "axis must be 0, 1 or 2");
      return c;
    }
    if (type == "halfspaces") {
      HalfSpaceShape h;
      const json& planes = field(j, path, "planes");
      if (!planes.is_array() || planes.empty()) fail(path + "/planes", "expected a non-empty array");
      for (std::size_t i = 0; i < planes.size(); ++i) {
        const std::string p = path + "/planes/" + std::to_string(i);
        Vec3 n = vec3(field(planes[i], p, "normal"), p + "/normal");
        if (n.norm() == 0) fail(p + "/normal", "normal must be non-zero");
        h.normals.push_back(n);
        h.offsets.push_back(number(field(planes[i], p, "offset"), p + "/offset"));
      }
      const json& b = field(j, path, "bounds");
      h.bounds.min = vec3(field(b, path + "/bounds", "min"), path + "/bounds/min");
      h.bounds.max = vec3(field(b, path + "/bounds", "max"), path + "/bounds/max");
      return h;
    }
    if (type == "mesh") {
      MeshShape m;
      m.path = string(field(j, path, "path"), path + "/path");
      m.resolution = optional(j, path, "resolution", sdf_resolution, integer);
      if (m.resolution < 4) fail(path + "/resolution", "resolution must be at least 4");
      const auto full = std::filesystem::path(base_dir) / m.path;
      try {
        auto mesh = std::make_shared<TriangleMesh>(read_obj(full.string()));
        m.sdf = std::make_shared<VoxelGrid<double>>(voxelize_sdf(*mesh, m.resolution));
        m.mesh = std::move(mesh);
      } catch (const GeometryError& e) {
        fail(path + "/path", e.what());
      } catch (const ParseError& e) {
        fail(path + "/path", e.what());
      }
      return m;
    }
    fail(path + "/type", "unknown shape type '" + type + "'");
  }

  PrototypeSpec prototype(const json& j, const std::string& path) const {
    PrototypeSpec p;
    p.id = string(field(j, path, "id"), path + "/id");
    p.count = optional(j, path, "count", 1, integer);
    if (p.count < 1) fail(path + "/count", "count must be at least 1");
    if (j.contains("mesh")) {
      p.mesh_path = string(j.at("mesh"), path + "/mesh");
    } else if (j.contains("primitive")) {
      const std::string pp = path + "/primitive";
      const json& prim = j.at("primitive");
      const std::string type = string(field(prim, pp, "type"), pp + "/type");
      if (type == "sphere") {
        p.primitive = PrimitiveKind::kSphere;
        p.primitive_size = {positive(number(field(prim, pp, "radius"), pp + "/radius"), pp + "/radius")};
      } else if (type == "box") {
        p.primitive = PrimitiveKind::kBox;
        Vec3 half = vec3(field(prim, pp, "half"), pp + "/half");
        if ((half.array() <= 0).any()) fail(pp + "/half", "half extents must be positive");
        p.primitive_size = {half.x(), half.y(), half.z()};
      } else if (type == "cylinder") {
        p.primitive = PrimitiveKind::kCylinder;
        p.primitive_size = {positive(number(field(prim, pp, "radius"), pp + "/radius"), pp + "/radius"),
                            positive(number(field(prim, pp, "height"), pp + "/height"), pp + "/height")};
      } else {
        fail(pp + "/type", "unknown primitive '" + type + "'");
      }
    } else {
      fail(path, "inventory entry needs either \"mesh\" or \"primitive\"");
    }
    if (j.contains("samples")) {
      const json& s = j.at("samples");
      if (s.is_number_integer()) {
        p.sample_count = s.get<int>();
        if (p.sample_count < 1) fail(path + "/samples", "sample count must be at least 1");
      } else if (s.is_array() && !s.empty()) {
        for (std::size_t i = 0; i < s.size(); ++i) {
          const std::string sp = path + "/samples/" + std::to_string(i);
          if (!s[i].is_array() || s[i].size() != 4) fail(sp, "expected [x, y, z, radius]");
          std::array<double, 4> v;
          for (int a = 0; a < 4; ++a) v[a] = number(s[i][a], sp + "/" + std::to_string(a));
          positive(v[3], sp + "/3");
          p.explicit_samples.push_back(v);
        }
        p.sample_count = static_cast<int>(s.size());
      } else {
        fail(path + "/samples", "expected a positive integer or an array of [x, y, z, radius]");
      }
    }
    p.deformable = optional(j, path, "deformable", false, boolean);
    p.omega_limit = optional(j, path, "omega_limit", p.omega_limit, number);
    if (!(p.omega_limit >= 0)) fail(path + "/omega_limit", "must be non-negative");
    if (j.contains("scale") && j.contains("transform"))
      fail(path, "give either \"scale\" or \"transform\", not both");
    if (j.contains("scale")) {
      p.transform = positive(number(j.at("scale"), path + "/scale"), path + "/scale") * Mat3::Identity();
    } else if (j.contains("transform")) {
      const json& t = j.at("transform");
      if (!t.is_array() || t.size() != 9) fail(path + "/transform", "expected 9 numbers (row-major 3x3)");
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
          p.transform(r, c) = number(t[3 * r + c], path + "/transform/" + std::to_string(3 * r + c));
      if (std::abs(p.transform.determinant()) < 1e-12) fail(path + "/transform", "matrix is singular");
    }
    p.occupancy_resolution = optional(j, path, "occupancy_resolution", 64, integer);
    if (p.occupancy_resolution < 4) fail(path + "/occupancy_resolution", "must be at least 4");
    return p;
  }
};

}  // namespace detail

inline void validate(const SceneConfig& s) {
  for (int a = 0; a < 3; ++a)
    if (s.grid.dims[a] < 2) throw ValidationError("/grid/dims/" + std::to_string(a) + ": grid needs at least 2 cells per axis");
  if (!(s.material.young > 0)) throw ValidationError("/material/young: Young's modulus must be positive");
  if (!(s.material.poisson > 0 && s.material.poisson < 0.5))
    throw ValidationError("/material/poisson: Poisson ratio must lie in (0, 0.5)");
  if (!(s.material.ersatz > 0 && s.material.ersatz < 1))
    throw ValidationError("/material/ersatz: ersatz floor must lie in (0, 1)");
  const auto& c = s.schedule;
  if (!(c.alpha0 > 0 && c.alpha_min > 0)) throw ValidationError("/schedule/alpha0: alpha values must be positive");
  if (!(c.alpha_factor > 0 && c.alpha_factor < 1)) throw ValidationError("/schedule/alpha_factor: must lie in (0, 1)");
  if (!(c.beta0 > 0 && c.beta_max > 0)) throw ValidationError("/schedule/beta0: beta values must be positive");
  if (!(c.beta_factor > 1)) throw ValidationError("/schedule/beta_factor: must exceed 1");
  if (c.inner_iters < 1) throw ValidationError("/schedule/inner_iters: must be at least 1");
  if (c.sub_solver_steps < 0) throw ValidationError("/schedule/sub_solver_steps: must be non-negative");
  if (!(s.solver.tolerance > 0)) throw ValidationError("/solver/tolerance: must be positive");
  if (s.inventory.empty()) throw ValidationError("scene inventory is empty");

  const Aabb domain = s.domain.bounds();
  for (std::size_t i = 0; i < s.loads.size(); ++i)
    if (!shape_bounds(s.loads[i].region).intersects(domain))
      throw ValidationError("load " + std::to_string(i) + " region does not intersect the domain");
  for (std::size_t i = 0; i < s.anchors.size(); ++i)
    if (!shape_bounds(s.anchors[i].region).intersects(domain))
      throw ValidationError("anchor " + std::to_string(i) + " region does not intersect the domain");
}

/// Parses and validates a scene document. Relative mesh paths are resolved
/// against `base_dir`.
inline SceneConfig parse_scene(const std::string& text, const std::string& base_dir = ".") {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("/", std::string("malformed JSON: ") + e.what());
  }
  using R = detail::Reader;
  if (!doc.is_object()) R::fail("", "scene must be a JSON object");
  static const std::array<const char*, 10> known = {"domain", "forbidden_regions", "loads", "anchors", "inventory",
                                                    "grid",   "material",          "schedule", "solver", "seed"};
  for (const auto& [key, _] : doc.items())
    if (std::find_if(known.begin(), known.end(), [&](const char* k) { return key == k; }) == known.end())
      R::fail("/" + key, "unknown key");

  SceneConfig s;
  s.base_dir = base_dir;

  if (doc.contains("solver")) {
    const json& j = doc["solver"];
    const std::string p = "/solver";
    if (!j.is_object()) R::fail(p, "expected an object");
    const std::string method = R::optional(j, p, "method", std::string("cg"), R::string);
    if (method == "cg") s.solver.method = SolverMethod::kConjugateGradient;
    else if (method == "direct") s.solver.method = SolverMethod::kDirect;
    else R::fail(p + "/method", "expected \"cg\" or \"direct\"");
    s.solver.tolerance = R::optional(j, p, "tolerance", s.solver.tolerance, R::number);
    s.solver.max_iterations = R::optional(j, p, "max_iterations", s.solver.max_iterations, R::integer);
    s.solver.use_indicator = R::optional(j, p, "use_indicator", s.solver.use_indicator, R::boolean);
    s.solver.sdf_resolution = R::optional(j, p, "sdf_resolution", s.solver.sdf_resolution, R::integer);
  }

  R reader{base_dir, s.solver.sdf_resolution};
  s.domain.shape = reader.shape(R::field(doc, "", "domain"), "/domain");
  if (doc.contains("forbidden_regions")) {
    const json& f = doc["forbidden_regions"];
    if (!f.is_array()) R::fail("/forbidden_regions", "expected an array");
    for (std::size_t i = 0; i < f.size(); ++i)
      s.domain.forbidden.push_back(reader.shape(f[i], "/forbidden_regions/" + std::to_string(i)));
  }
  if (doc.contains("loads")) {
    const json& l = doc["loads"];
    if (!l.is_array()) R::fail("/loads", "expected an array");
    for (std::size_t i = 0; i < l.size(); ++i) {
      const std::string p = "/loads/" + std::to_string(i);
      s.loads.push_back({reader.shape(R::field(l[i], p, "region"), p + "/region"),
                         R::vec3(R::field(l[i], p, "force"), p + "/force")});
    }
  }
  if (doc.contains("anchors")) {
    const json& a = doc["anchors"];
    if (!a.is_array()) R::fail("/anchors", "expected an array");
    for (std::size_t i = 0; i < a.size(); ++i) {
      const std::string p = "/anchors/" + std::to_string(i);
      s.anchors.push_back({reader.shape(R::field(a[i], p, "region"), p + "/region")});
    }
  }
  {
    const json& inv = R::field(doc, "", "inventory");
    if (!inv.is_array()) R::fail("/inventory", "expected an array");
    for (std::size_t i = 0; i < inv.size(); ++i)
      s.inventory.push_back(reader.prototype(inv[i], "/inventory/" + std::to_string(i)));
  }
  if (doc.contains("grid")) {
    const json& g = doc["grid"];
    const std::string p = "/grid";
    const json& dims = R::field(g, p, "dims");
    if (!dims.is_array() || dims.size() != 3) R::fail(p + "/dims", "expected 3 integers");
    for (int a = 0; a < 3; ++a) s.grid.dims[a] = R::integer(dims[a], p + "/dims/" + std::to_string(a));
    if (g.contains("origin")) s.grid.origin = R::vec3(g["origin"], p + "/origin");
    if (g.contains("cell_size")) s.grid.cell_size = R::positive(R::number(g["cell_size"], p + "/cell_size"), p + "/cell_size");
  }
  if (doc.contains("material")) {
    const json& m = doc["material"];
    const std::string p = "/material";
    if (!m.is_object()) R::fail(p, "expected an object");
    s.material.young = R::optional(m, p, "young", s.material.young, R::number);
    s.material.poisson = R::optional(m, p, "poisson", s.material.poisson, R::number);
    s.material.ersatz = R::optional(m, p, "ersatz", s.material.ersatz, R::number);
  }
  if (doc.contains("schedule")) {
    const json& c = doc["schedule"];
    const std::string p = "/schedule";
    if (!c.is_object()) R::fail(p, "expected an object");
    auto& sc = s.schedule;
    sc.alpha0 = R::optional(c, p, "alpha0", sc.alpha0, R::number);
    sc.alpha_min = R::optional(c, p, "alpha_min", sc.alpha_min, R::number);
    sc.alpha_factor = R::optional(c, p, "alpha_factor", sc.alpha_factor, R::number);
    sc.beta0 = R::optional(c, p, "beta0", sc.beta0, R::number);
    sc.beta_max = R::optional(c, p, "beta_max", sc.beta_max, R::number);
    sc.beta_factor = R::optional(c, p, "beta_factor", sc.beta_factor, R::number);
    sc.inner_iters = R::optional(c, p, "inner_iters", sc.inner_iters, R::integer);
    sc.connectivity_threshold = R::optional(c, p, "connectivity_threshold", sc.connectivity_threshold, R::number);
    sc.sub_solver_steps = R::optional(c, p, "sub_solver_steps", sc.sub_solver_steps, R::integer);
  }
  if (doc.contains("seed")) {
    if (!doc["seed"].is_number_unsigned() && !doc["seed"].is_number_integer()) R::fail("/seed", "expected an integer");
    s.seed = doc["seed"].get<std::uint64_t>();
  }
  validate(s);
  return s;
}

inline SceneConfig load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, "cannot open scene file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scene(ss.str(), std::filesystem::path(path).parent_path().string());
}

// ---------------------------------------------------------------------------
// Serialization

inline json to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

inline json to_json(const Shape& shape) {
  return std::visit(
      [](const auto& s) -> json {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, BoxShape>) {
          return {{"type", "box"}, {"min", to_json(s.min)}, {"max", to_json(s.max)}};
        } else if constexpr (std::is_same_v<T, SphereShape>) {
          return {{"type", "sphere"}, {"center", to_json(s.center)}, {"radius", s.radius}};
        } else if constexpr (std::is_same_v<T, CylinderShape>) {
          return {{"type", "cylinder"}, {"center", to_json(s.center)}, {"radius", s.radius},
                  {"height", s.height}, {"axis", s.axis}};
        } else if constexpr (std::is_same_v<T, HalfSpaceShape>) {
          json planes = json::array();
          for (std::size_t i = 0; i < s.normals.size(); ++i)
            planes.push_back({{"normal", to_json(s.normals[i])}, {"offset", s.offsets[i]}});
          return {{"type", "halfspaces"}, {"planes", planes},
                  {"bounds", {{"min", to_json(s.bounds.min)}, {"max", to_json(s.bounds.max)}}}};
        } else {
          return {{"type", "mesh"}, {"path", s.path}, {"resolution", s.resolution}};
        }
      },
      shape);
}

inline json to_json(const PrototypeSpec& p) {
  json j = {{"id", p.id}, {"count", p.count}};
  if (!p.mesh_path.empty()) {
    j["mesh"] = p.mesh_path;
  } else {
    switch (p.primitive) {
      case PrimitiveKind::kSphere: j["primitive"] = {{"type", "sphere"}, {"radius", p.primitive_size[0]}}; break;
      case PrimitiveKind::kBox:
        j["primitive"] = {{"type", "box"}, {"half", p.primitive_size}};
        break;
      case PrimitiveKind::kCylinder:
        j["primitive"] = {{"type", "cylinder"}, {"radius", p.primitive_size[0]}, {"height", p.primitive_size[1]}};
        break;
      case PrimitiveKind::kNone: break;
    }
  }
  if (p.explicit_samples.empty()) {
    j["samples"] = p.sample_count;
  } else {
    json s = json::array();
    for (const auto& v : p.explicit_samples) s.push_back(v);
    j["samples"] = s;
  }
  j["deformable"] = p.deformable;
  j["omega_limit"] = p.omega_limit;
  json t = json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) t.push_back(p.transform(r, c));
  j["transform"] = t;
  j["occupancy_resolution"] = p.occupancy_resolution;
  return j;
}

/// Canonical document with every default written out.
inline json to_json(const SceneConfig& s) {
  json j;
  j["domain"] = to_json(s.domain.shape);
  j["forbidden_regions"] = json::array();
  for (const auto& f : s.domain.forbidden) j["forbidden_regions"].push_back(to_json(f));
  j["loads"] = json::array();
  for (const auto& l : s.loads) j["loads"].push_back({{"region", to_json(l.region)}, {"force", to_json(l.force)}});
  j["anchors"] = json::array();
  for (const auto& a : s.anchors) j["anchors"].push_back({{"region", to_json(a.region)}});
  j["inventory"] = json::array();
  for (const auto& p : s.inventory) j["inventory"].push_back(to_json(p));
  j["grid"] = {{"dims", s.grid.dims}};
  if (s.grid.origin) j["grid"]["origin"] = to_json(*s.grid.origin);
  if (s.grid.cell_size) j["grid"]["cell_size"] = *s.grid.cell_size;
  j["material"] = {{"young", s.material.young}, {"poisson", s.material.poisson}, {"ersatz", s.material.ersatz}};
  const auto& c = s.schedule;
  j["schedule"] = {{"alpha0", c.alpha0},         {"alpha_min", c.alpha_min},
                   {"alpha_factor", c.alpha_factor}, {"beta0", c.beta0},
                   {"beta_max", c.beta_max},     {"beta_factor", c.beta_factor},
                   {"inner_iters", c.inner_iters}, {"connectivity_threshold", c.connectivity_threshold},
                   {"sub_solver_steps", c.sub_solver_steps}};
  j["solver"] = {{"method", s.solver.method == SolverMethod::kDirect ? "direct" : "cg"},
                 {"tolerance", s.solver.tolerance},
                 {"max_iterations", s.solver.max_iterations},
                 {"use_indicator", s.solver.use_indicator},
                 {"sdf_resolution", s.solver.sdf_resolution}};
  j["seed"] = s.seed;
  return j;
}

inline std::string serialize_scene(const SceneConfig& s) { return to_json(s).dump(2); }

// ---------------------------------------------------------------------------
// Boundary conditions

struct BoundaryConditions {
  Eigen::VectorXd force;         // one entry per dof
  std::vector<int> fixed_dofs;   // sorted
  std::vector<char> fixed_mask;  // one entry per dof
};

/// Nodes within `shape` (boundary inclusive, to 1e-9 cell sizes).
inline std::vector<int> nodes_in_region(const Shape& shape, const HexMesh& grid) {
  std::vector<int> nodes;
  const double tol = 1e-9 * grid.h;
  for (int n = 0; n < grid.num_nodes(); ++n)
    if (signed_distance(shape, grid.node_position(n)) <= tol) nodes.push_back(n);
  return nodes;
}

inline BoundaryConditions apply_boundary_conditions(const SceneConfig& scene, const HexMesh& grid) {
  BoundaryConditions bc;
  bc.force = Eigen::VectorXd::Zero(grid.num_dofs());
  bc.fixed_mask.assign(grid.num_dofs(), 0);
  if (scene.anchors.empty()) throw ValidationError("no anchors: the stiffness system would be singular");
  for (std::size_t i = 0; i < scene.loads.size(); ++i) {
    const auto nodes = nodes_in_region(scene.loads[i].region, grid);
    if (nodes.empty()) throw ValidationError("load " + std::to_string(i) + " region captures no grid node");
    const Vec3 share = scene.loads[i].force / static_cast<double>(nodes.size());
    for (int n : nodes) bc.force.segment<3>(3 * n) += share;
  }
  for (std::size_t i = 0; i < scene.anchors.size(); ++i) {
    const auto nodes = nodes_in_region(scene.anchors[i].region, grid);
    if (nodes.empty())
      throw ValidationError("anchor " + std::to_string(i) + " region captures no grid node (singular system)");
    for (int n : nodes)
      for (int a = 0; a < 3; ++a) bc.fixed_mask[3 * n + a] = 1;
  }
  for (int d = 0; d < grid.num_dofs(); ++d)
    if (bc.fixed_mask[d]) bc.fixed_dofs.push_back(d);
  return bc;
}

}  // namespace aggr

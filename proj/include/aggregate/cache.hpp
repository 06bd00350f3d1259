#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "aggregate/element.hpp"
#include "aggregate/scene.hpp"

namespace aggr {

// Binary sidecar holding the expensive parts of a prototype (samples, radii,
// skeleton, occupancy). The file name carries a hash of everything they are
// derived from, so a stale file is never read.

namespace detail {

inline constexpr char kCacheMagic[8] = {'A', 'G', 'G', 'R', 'P', 'C', '0', '1'};

class ByteWriter {
 public:
  template <class T>
  void put(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const char* p = reinterpret_cast<const char*>(&v);
    bytes_.append(p, sizeof(T));
  }
  template <class T>
  void put_vector(const std::vector<T>& v) {
    put<std::uint64_t>(v.size());
    for (const auto& x : v) put(x);
  }
  void put_vec3s(const std::vector<Vec3>& v) {
    put<std::uint64_t>(v.size());
    for (const auto& x : v) put_vec3(x);
  }
  void put_vec3(const Vec3& v) {
    put(v.x());
    put(v.y());
    put(v.z());
  }
  const std::string& bytes() const { return bytes_; }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string bytes) : bytes_(std::move(bytes)) {}
  template <class T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    if (pos_ + sizeof(T) > bytes_.size()) throw Error("truncated prototype cache");
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::uint64_t get_size() {
    const auto n = get<std::uint64_t>();
    if (n > bytes_.size()) throw Error("corrupt prototype cache");
    return n;
  }
  template <class T>
  std::vector<T> get_vector() {
    std::vector<T> v(get_size());
    for (auto& x : v) x = get<T>();
    return v;
  }
  Vec3 get_vec3() {
    const double x = get<double>(), y = get<double>(), z = get<double>();
    return {x, y, z};
  }
  std::vector<Vec3> get_vec3s() {
    std::vector<Vec3> v(get_size());
    for (auto& x : v) x = get_vec3();
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// 64-bit FNV-1a, as 16 hex digits.
inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

/// Hash of the mesh and of every PrototypeSpec field that influences the
/// cached data.
inline std::string prototype_cache_key(const PrototypeSpec& spec, const TriangleMesh& mesh, std::uint64_t seed) {
  detail::ByteWriter w;
  w.put_vec3s(mesh.vertices);
  w.put_vector(mesh.triangles);
  w.put<std::int32_t>(spec.sample_count);
  w.put<std::int32_t>(spec.occupancy_resolution);
  w.put<std::uint8_t>(spec.deformable);
  w.put_vector(spec.explicit_samples);
  w.put(seed);
  return fnv1a_hex(w.bytes());
}

inline std::string encode_prototype_cache(const ElementPrototype& p) {
  detail::ByteWriter w;
  for (char c : detail::kCacheMagic) w.put(c);
  w.put_vec3s(p.samples);
  w.put_vector(p.radii);
  w.put<std::uint8_t>(p.deformable());
  if (p.deformable()) {
    const auto& t = *p.skeleton;
    w.put<std::int32_t>(t.root);
    w.put_vector(t.parent);
    w.put_vec3s(t.offset);
    w.put<std::uint64_t>(t.children.size());
    for (const auto& c : t.children) w.put_vector(c);
    w.put_vector(t.order);
  }
  w.put_vec3(p.occupancy.origin);
  w.put(p.occupancy.spacing);
  w.put(p.occupancy.dims);
  w.put_vector(p.occupancy.data);
  return w.bytes();
}

/// Fills samples, radii, skeleton and occupancy of `p` from cache bytes.
/// Returns false, leaving `p` untouched, when the bytes are not a valid cache.
inline bool decode_prototype_cache(const std::string& bytes, ElementPrototype& p) {
  try {
    detail::ByteReader r(bytes);
    for (char c : detail::kCacheMagic)
      if (r.get<char>() != c) return false;
    ElementPrototype q = p;
    q.samples = r.get_vec3s();
    q.radii = r.get_vector<double>();
    q.skeleton.reset();
    if (r.get<std::uint8_t>()) {
      SkeletonTree t;
      t.root = r.get<std::int32_t>();
      t.parent = r.get_vector<int>();
      t.offset = r.get_vec3s();
      t.children.resize(r.get_size());
      for (auto& c : t.children) c = r.get_vector<int>();
      t.order = r.get_vector<int>();
      q.skeleton = std::move(t);
    }
    q.occupancy.origin = r.get_vec3();
    q.occupancy.spacing = r.get<double>();
    q.occupancy.dims = r.get<std::array<int, 3>>();
    q.occupancy.data = r.get_vector<std::uint8_t>();
    if (!r.done() || q.radii.size() != q.samples.size()) return false;
    p = std::move(q);
    return true;
  } catch (const Error&) {
    return false;
  }
}

/// make_prototype with a sidecar cache in `cache_dir` (created on demand).
/// Unreadable or mismatched cache files are rebuilt and overwritten.
inline ElementPrototype make_prototype_cached(const PrototypeSpec& spec, const std::string& base_dir,
                                              std::uint64_t seed, const std::filesystem::path& cache_dir) {
  ElementPrototype p;
  p.id = spec.id;
  p.mesh = prototype_mesh(spec, base_dir);
  p.transform = spec.transform;
  p.omega_limit = spec.omega_limit;
  const auto file = cache_dir / (spec.id + "." + prototype_cache_key(spec, p.mesh, seed) + ".protocache");
  if (std::ifstream in{file, std::ios::binary}) {
    std::stringstream ss;
    ss << in.rdbuf();
    if (decode_prototype_cache(ss.str(), p)) return p;
  }
  p = make_prototype(spec, base_dir, seed);
  std::error_code ec;
  std::filesystem::create_directories(cache_dir, ec);
  std::ofstream out(file, std::ios::binary);
  if (out) out << encode_prototype_cache(p);
  return p;
}

}  // namespace aggr

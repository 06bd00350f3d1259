#pragma once

#include <cmath>

#include "aggregate/geometry.hpp"

namespace aggr {

inline Mat3 skew(const Vec3& v) {
  Mat3 k;
  k << 0, -v.z(), v.y(),
       v.z(), 0, -v.x(),
       -v.y(), v.x(), 0;
  return k;
}

/// Rotation matrix of an exponential-map vector (axis * angle), Rodrigues'
/// formula with a second-order series near the origin.
inline Mat3 rotation_from_expmap(const Vec3& v) {
  const double theta = v.norm();
  const Mat3 k = skew(v);
  if (theta < 1e-8) return Mat3::Identity() + k + 0.5 * k * k;
  const double a = std::sin(theta) / theta;
  const double b = (1.0 - std::cos(theta)) / (theta * theta);
  return Mat3::Identity() + a * k + b * k * k;
}

/// dR/dv_i. Closed form of Gallego and Yezzi,
///   dR/dv_i = (v_i [v] + [v x (I - R) e_i]) R / |v|^2,
/// replaced below |v| < 1e-4 by the third-order expansion of the series.
inline Mat3 rotation_expmap_derivative(const Vec3& v, int i) {
  const Vec3 e = Vec3::Unit(i);
  const double theta2 = v.squaredNorm();
  if (theta2 < 1e-8) {
    const Mat3 ke = skew(e), kv = skew(v);
    return ke + 0.5 * (ke * kv + kv * ke) +
           (1.0 / 6.0) * (ke * kv * kv + kv * ke * kv + kv * kv * ke);
  }
  const Mat3 r = rotation_from_expmap(v);
  const Vec3 w = v.cross((Mat3::Identity() - r) * e);
  return (v[i] * skew(v) + skew(w)) * r / theta2;
}

}  // namespace aggr

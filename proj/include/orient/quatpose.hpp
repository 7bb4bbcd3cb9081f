// Copyright 2026 The OrientLab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Camera-pose math: quaternion canonicalization, angle, SLERP, the
// multi-frequency sine pose encoding, and hemisphere pose layouts.
#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"

namespace orient {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Vec3 operator-() const { return {-x, -y, -z}; }
  constexpr Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  constexpr Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  constexpr bool operator==(const Vec3&) const = default;
};

constexpr Vec3 operator*(double s, const Vec3& v) { return v * s; }
constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double length(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline Vec3 normalize(const Vec3& v) { return v / length(v); }

/// Unit quaternion (w, x, y, z) with the double cover resolved: w >= 0, and
/// when w == 0 the first nonzero of (x, y, z) is positive. Only produced by
/// canonicalize() and the operations below.
class Quaternion {
 public:
  Quaternion() = default;  // identity

  double w() const { return c_[0]; }
  double x() const { return c_[1]; }
  double y() const { return c_[2]; }
  double z() const { return c_[3]; }
  const std::array<double, 4>& components() const { return c_; }

  bool operator==(const Quaternion&) const = default;

 private:
  friend Quaternion canonicalize(const std::array<double, 4>& raw);
  std::array<double, 4> c_{1.0, 0.0, 0.0, 0.0};
};

/// Normalizes and resolves the sign ambiguity. Throws DegenerateQuaternion on
/// zero (or non-finite) input.
Quaternion canonicalize(const std::array<double, 4>& raw);
inline Quaternion canonicalize(double w, double x, double y, double z) {
  return canonicalize(std::array<double, 4>{w, x, y, z});
}

double quat_dot(const Quaternion& a, const Quaternion& b);

/// Angle between the two 4-vectors, arccos of the clamped dot product.
double quat_angle(const Quaternion& q1, const Quaternion& q2);

/// Spherical linear interpolation; normalized lerp below 1e-6 rad.
Quaternion slerp(const Quaternion& q1, const Quaternion& q2, double t);

/// Rotates v by q.
Vec3 rotate(const Quaternion& q, const Vec3& v);

/// Quaternion of the rotation whose matrix has the given columns.
Quaternion from_rotation_columns(const Vec3& c0, const Vec3& c1, const Vec3& c2);

inline constexpr int kDefaultPoseFrequencies = 7;

/// Sine pose encoding: entries sin(q_c * i) for c in (w, x, y, z) and
/// i = 1..num_frequencies, component-major. All entries lie in [-1, 1].
struct PoseEmbedding {
  std::vector<double> values;
};

PoseEmbedding sine_encode(const Quaternion& q, int num_frequencies = kDefaultPoseFrequencies);

/// Camera placed on a sphere around the origin. The orientation maps the
/// camera frame (x right, y up, looking down -z) to world.
struct CameraPose {
  Quaternion orientation;
  Vec3 position;
  Vec3 look_at;
  Vec3 up{0.0, 0.0, 1.0};
  double azimuth = 0.0;    // radians, bookkeeping only
  double elevation = 0.0;  // radians, bookkeeping only
};

CameraPose pose_from_spherical(double azimuth, double elevation, double radius);

/// k poses at azimuths 2*pi*j/k sharing elevation and radius.
std::vector<CameraPose> uniform_hemisphere_poses(int k, double elevation, double radius);

inline constexpr double kVerticalFovDeg = 50.0;

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit
};

/// Pinhole primary ray through the center of pixel (row, col).
Ray pixel_ray(const CameraPose& pose, int row, int col, int height, int width,
              double vertical_fov_deg = kVerticalFovDeg);

/// {"quat":[w,x,y,z],"position":[x,y,z]}; 17 significant digits.
std::string pose_to_json(const CameraPose& pose);
std::string poses_to_json(const std::vector<CameraPose>& poses);

/// Rebuilds a pose from its serialized form. look_at is the origin and up is
/// +z; azimuth/elevation are recovered from the position.
CameraPose pose_from_json(const nlohmann::json& j);
std::vector<CameraPose> poses_from_json(const nlohmann::json& j);

inline constexpr double deg2rad(double d) { return d * 3.14159265358979323846 / 180.0; }
inline constexpr double rad2deg(double r) { return r * 180.0 / 3.14159265358979323846; }

}  // namespace orient

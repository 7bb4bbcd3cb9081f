// Copyright 2026 The OrientLab Authors
// SPDX-License-Identifier: Apache-2.0
#include "orient/quatpose.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <numbers>
#include <sstream>

#include "orient/errors.hpp"

namespace orient {

Quaternion canonicalize(const std::array<double, 4>& raw) {
  double n2 = 0.0;
  for (double v : raw) n2 += v * v;
  if (!(n2 > 0.0) || !std::isfinite(n2)) {
    throw DegenerateQuaternion("quaternion norm must be positive and finite");
  }
  // Already-unit inputs keep their exact bits, which makes canonicalize
  // idempotent and lets serialized poses reload bit-identically.
  const double n = std::abs(n2 - 1.0) <= 4.0 * std::numeric_limits<double>::epsilon()
                       ? 1.0
                       : std::sqrt(n2);
  std::array<double, 4> c{raw[0] / n, raw[1] / n, raw[2] / n, raw[3] / n};

  bool flip = c[0] < 0.0;
  if (c[0] == 0.0) {
    for (int i = 1; i < 4; ++i) {
      if (c[i] != 0.0) {
        flip = c[i] < 0.0;
        break;
      }
    }
  }
  if (flip) {
    for (double& v : c) v = -v;
  }
  for (double& v : c) {
    if (v == 0.0) v = 0.0;  // no negative zeros
  }
  Quaternion q;
  q.c_ = c;
  return q;
}

double quat_dot(const Quaternion& a, const Quaternion& b) {
  return a.w() * b.w() + a.x() * b.x() + a.y() * b.y() + a.z() * b.z();
}

double quat_angle(const Quaternion& q1, const Quaternion& q2) {
  return std::acos(std::clamp(quat_dot(q1, q2), -1.0, 1.0));
}

Quaternion slerp(const Quaternion& q1, const Quaternion& q2, double t) {
  const double omega = quat_angle(q1, q2);
  const auto& a = q1.components();
  const auto& b = q2.components();
  std::array<double, 4> out{};
  if (omega < 1e-6) {
    for (int i = 0; i < 4; ++i) out[i] = (1.0 - t) * a[i] + t * b[i];
  } else {
    const double s = std::sin(omega);
    const double ka = std::sin((1.0 - t) * omega) / s;
    const double kb = std::sin(t * omega) / s;
    for (int i = 0; i < 4; ++i) out[i] = ka * a[i] + kb * b[i];
  }
  return canonicalize(out);
}

Vec3 rotate(const Quaternion& q, const Vec3& v) {
  const Vec3 u{q.x(), q.y(), q.z()};
  const Vec3 uv = cross(u, v);
  const Vec3 uuv = cross(u, uv);
  return v + 2.0 * (q.w() * uv + uuv);
}

Quaternion from_rotation_columns(const Vec3& c0, const Vec3& c1, const Vec3& c2) {
  const double m00 = c0.x, m10 = c0.y, m20 = c0.z;
  const double m01 = c1.x, m11 = c1.y, m21 = c1.z;
  const double m02 = c2.x, m12 = c2.y, m22 = c2.z;
  const double trace = m00 + m11 + m22;
  std::array<double, 4> q{};
  if (trace > 0.0) {
    const double s = std::sqrt(trace + 1.0) * 2.0;
    q = {0.25 * s, (m21 - m12) / s, (m02 - m20) / s, (m10 - m01) / s};
  } else if (m00 > m11 && m00 > m22) {
    const double s = std::sqrt(1.0 + m00 - m11 - m22) * 2.0;
    q = {(m21 - m12) / s, 0.25 * s, (m01 + m10) / s, (m02 + m20) / s};
  } else if (m11 > m22) {
    const double s = std::sqrt(1.0 + m11 - m00 - m22) * 2.0;
    q = {(m02 - m20) / s, (m01 + m10) / s, 0.25 * s, (m12 + m21) / s};
  } else {
    const double s = std::sqrt(1.0 + m22 - m00 - m11) * 2.0;
    q = {(m10 - m01) / s, (m02 + m20) / s, (m12 + m21) / s, 0.25 * s};
  }
  return canonicalize(q);
}

PoseEmbedding sine_encode(const Quaternion& q, int num_frequencies) {
  if (num_frequencies <= 0) throw InvalidConfig("num_frequencies must be positive");
  PoseEmbedding e;
  e.values.reserve(4 * static_cast<std::size_t>(num_frequencies));
  for (double c : q.components()) {
    for (int i = 1; i <= num_frequencies; ++i) e.values.push_back(std::sin(c * i));
  }
  return e;
}

CameraPose pose_from_spherical(double azimuth, double elevation, double radius) {
  if (!(radius > 1.0)) throw CameraInsideScene("camera radius must exceed the unit scene sphere");
  if (!(std::abs(elevation) < std::numbers::pi / 2)) {
    throw InvalidConfig("elevation must lie strictly inside (-pi/2, pi/2)");
  }
  CameraPose pose;
  const double ce = std::cos(elevation);
  pose.position = {radius * ce * std::cos(azimuth), radius * ce * std::sin(azimuth),
                   radius * std::sin(elevation)};
  pose.look_at = {0.0, 0.0, 0.0};
  pose.up = {0.0, 0.0, 1.0};
  pose.azimuth = azimuth;
  pose.elevation = elevation;

  const Vec3 forward = normalize(pose.look_at - pose.position);
  const Vec3 right = normalize(cross(forward, pose.up));
  const Vec3 cam_up = cross(right, forward);
  pose.orientation = from_rotation_columns(right, cam_up, -forward);
  return pose;
}

std::vector<CameraPose> uniform_hemisphere_poses(int k, double elevation, double radius) {
  if (k <= 0) throw InvalidConfig("pose count must be positive");
  if (elevation < 0.0) throw InvalidConfig("hemisphere elevation must be non-negative");
  std::vector<CameraPose> poses;
  poses.reserve(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    poses.push_back(pose_from_spherical(2.0 * std::numbers::pi * j / k, elevation, radius));
  }
  return poses;
}

Ray pixel_ray(const CameraPose& pose, int row, int col, int height, int width,
              double vertical_fov_deg) {
  const double tan_half = std::tan(deg2rad(vertical_fov_deg) * 0.5);
  const double aspect = static_cast<double>(width) / static_cast<double>(height);
  const double px = (2.0 * (col + 0.5) / width - 1.0) * tan_half * aspect;
  const double py = (1.0 - 2.0 * (row + 0.5) / height) * tan_half;
  const Vec3 dir_cam = normalize(Vec3{px, py, -1.0});
  return {pose.position, normalize(rotate(pose.orientation, dir_cam))};
}

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string pose_to_json(const CameraPose& pose) {
  std::ostringstream os;
  const auto& q = pose.orientation.components();
  os << "{\"quat\":[" << fmt17(q[0]) << ',' << fmt17(q[1]) << ',' << fmt17(q[2]) << ','
     << fmt17(q[3]) << "],\"position\":[" << fmt17(pose.position.x) << ','
     << fmt17(pose.position.y) << ',' << fmt17(pose.position.z) << "]}";
  return os.str();
}

std::string poses_to_json(const std::vector<CameraPose>& poses) {
  std::string out = "[\n";
  for (std::size_t i = 0; i < poses.size(); ++i) {
    out += "  " + pose_to_json(poses[i]);
    out += (i + 1 < poses.size()) ? ",\n" : "\n";
  }
  out += "]\n";
  return out;
}

CameraPose pose_from_json(const nlohmann::json& j) {
  try {
    const auto& q = j.at("quat");
    const auto& p = j.at("position");
    if (q.size() != 4 || p.size() != 3) throw InvalidInput("pose arrays have wrong length");
    CameraPose pose;
    std::array<double, 4> raw{q[0].get<double>(), q[1].get<double>(), q[2].get<double>(),
                              q[3].get<double>()};
    pose.orientation = canonicalize(raw);
    pose.position = {p[0].get<double>(), p[1].get<double>(), p[2].get<double>()};
    const double r = length(pose.position);
    pose.azimuth = std::atan2(pose.position.y, pose.position.x);
    if (pose.azimuth < 0.0) pose.azimuth += 2.0 * std::numbers::pi;
    pose.elevation = r > 0.0 ? std::asin(pose.position.z / r) : 0.0;
    return pose;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed pose: ") + e.what());
  }
}

std::vector<CameraPose> poses_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw InvalidInput("pose list must be a JSON array");
  std::vector<CameraPose> poses;
  poses.reserve(j.size());
  for (const auto& item : j) poses.push_back(pose_from_json(item));
  return poses;
}

}  // namespace orient

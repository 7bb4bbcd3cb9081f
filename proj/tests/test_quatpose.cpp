// Copyright 2026 The OrientLab Authors
// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numbers>

#include "doctest.h"
#include "orient/errors.hpp"
#include "orient/quatpose.hpp"
#include "orient/rng.hpp"

using namespace orient;

namespace {

Quaternion random_quat(Rng& rng) {
  return canonicalize(rng.normal(), rng.normal(), rng.normal(), rng.normal());
}

double norm2(const Quaternion& q) {
  const auto& c = q.components();
  return c[0] * c[0] + c[1] * c[1] + c[2] * c[2] + c[3] * c[3];
}

// Same rotation up to the double cover.
bool same_rotation(const Quaternion& a, const Quaternion& b, double tol) {
  return std::abs(std::abs(quat_dot(a, b)) - 1.0) <= tol;
}

}  // namespace

TEST_CASE("canonicalize examples") {
  CHECK(canonicalize(-1, 0, 0, 0) == Quaternion{});
  CHECK(canonicalize(2, 0, 0, 0) == Quaternion{});
  const auto q = canonicalize(0.5, 0.5, 0.5, 0.5);
  CHECK(q.w() == 0.5);
  CHECK(q.x() == 0.5);
  CHECK(q.y() == 0.5);
  CHECK(q.z() == 0.5);
}

TEST_CASE("canonicalize resolves w == 0 by first nonzero component") {
  auto q = canonicalize(0, 0, -3, 4);
  CHECK(q.w() == 0.0);
  CHECK(q.y() == doctest::Approx(0.6));
  CHECK(q.z() == doctest::Approx(-0.8));
  q = canonicalize(0, -1, 0, 0);
  CHECK(q.x() == 1.0);
  CHECK_FALSE(std::signbit(q.w()));
}

TEST_CASE("canonicalize rejects degenerate input") {
  CHECK_THROWS_AS(canonicalize(0, 0, 0, 0), DegenerateQuaternion);
  CHECK_THROWS_AS(canonicalize(NAN, 0, 0, 0), DegenerateQuaternion);
}

TEST_CASE("canonicalize is idempotent and unit norm") {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const auto q = random_quat(rng);
    CHECK(std::abs(norm2(q) - 1.0) <= 1e-9);
    CHECK(q.w() >= 0.0);
    CHECK(canonicalize(q.components()) == q);
  }
}

TEST_CASE("quat_angle") {
  const Quaternion id;
  const auto i = canonicalize(0, 1, 0, 0);
  CHECK(quat_angle(id, id) == 0.0);
  CHECK(quat_angle(id, i) == doctest::Approx(std::numbers::pi / 2));
  // a dot product that rounds above 1 must clamp to zero angle
  const auto q = canonicalize(1, 1e-9, 0, 0);
  CHECK(quat_angle(q, q) == doctest::Approx(0.0).epsilon(1e-7));
  CHECK(!std::isnan(quat_angle(q, q)));
}

TEST_CASE("slerp examples") {
  const Quaternion id;
  const auto i = canonicalize(0, 1, 0, 0);
  CHECK(slerp(id, i, 0.0) == id);
  CHECK(slerp(id, i, 1.0) == i);
  const auto h = slerp(id, i, 0.5);
  CHECK(h.w() == doctest::Approx(std::sqrt(2.0) / 2).epsilon(1e-12));
  CHECK(h.x() == doctest::Approx(std::sqrt(2.0) / 2).epsilon(1e-12));
  CHECK(h.y() == 0.0);
  CHECK(h.z() == 0.0);
}

TEST_CASE("slerp degenerate pair falls back to normalized blend") {
  const auto a = canonicalize(1, 1e-9, 0, 0);
  const Quaternion b;
  const auto m = slerp(a, b, 0.5);
  CHECK(std::abs(norm2(m) - 1.0) <= 1e-12);
  CHECK(quat_angle(a, m) <= 1e-8);
}

TEST_CASE("slerp properties on random pairs") {
  Rng rng(2024);
  for (int pair = 0; pair < 100; ++pair) {
    const auto q1 = random_quat(rng);
    const auto q2 = random_quat(rng);
    const double omega = quat_angle(q1, q2);
    for (int s = 0; s <= 20; ++s) {
      const double t = s / 20.0;
      const auto q = slerp(q1, q2, t);
      CHECK(std::abs(norm2(q) - 1.0) <= 1e-9);
      // both endpoints have w >= 0, so the arc never leaves that hemisphere
      CHECK(std::abs(quat_angle(q1, q) - t * omega) <= 1e-7);
      CHECK(same_rotation(q, slerp(q2, q1, 1.0 - t), 1e-12));
    }
  }
}

TEST_CASE("sine_encode values and layout") {
  const auto e = sine_encode(Quaternion{});
  REQUIRE(e.values.size() == 28);
  CHECK(e.values[0] == doctest::Approx(0.841471).epsilon(1e-6));
  for (int i = 0; i < 7; ++i) CHECK(e.values[0 + i] == doctest::Approx(std::sin(i + 1.0)));
  for (std::size_t k = 7; k < 28; ++k) CHECK(e.values[k] == 0.0);
  const auto q = canonicalize(0.1, 0.2, 0.3, 0.4);
  const auto f = sine_encode(q, 3);
  REQUIRE(f.values.size() == 12);
  CHECK(f.values[3 * 2 + 1] == doctest::Approx(std::sin(2.0 * q.y())));
  CHECK_THROWS_AS(sine_encode(q, 0), InvalidConfig);
}

TEST_CASE("sine_encode entries lie in [-1, 1]") {
  Rng rng(5);
  for (int n = 0; n < 200; ++n) {
    for (double v : sine_encode(random_quat(rng), 7).values) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("pose_from_spherical placement and consistency") {
  auto p = pose_from_spherical(0.0, 0.0, 2.0);
  CHECK(p.position.x == doctest::Approx(2.0));
  CHECK(std::abs(p.position.y) < 1e-15);
  CHECK(std::abs(p.position.z) < 1e-15);
  p = pose_from_spherical(std::numbers::pi / 2, 0.0, 2.0);
  CHECK(std::abs(p.position.x) < 1e-12);
  CHECK(p.position.y == doctest::Approx(2.0));

  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    const double az = rng.uniform(0.0, 2 * std::numbers::pi);
    const double el = rng.uniform(-1.5, 1.5);
    const auto pose = pose_from_spherical(az, el, rng.uniform(1.01, 5.0));
    CHECK(std::abs(norm2(pose.orientation) - 1.0) <= 1e-9);
    // camera -z looks at the target, camera x is horizontal, camera y tilts up
    const Vec3 fwd = normalize(pose.look_at - pose.position);
    const Vec3 cam_fwd = rotate(pose.orientation, {0, 0, -1});
    const Vec3 cam_right = rotate(pose.orientation, {1, 0, 0});
    const Vec3 cam_up = rotate(pose.orientation, {0, 1, 0});
    CHECK(length(cam_fwd - fwd) <= 1e-6);
    CHECK(std::abs(cam_right.z) <= 1e-6);
    CHECK(cam_up.z > 0.0);
    CHECK(std::abs(dot(cam_right, normalize(cross(fwd, pose.up))) - 1.0) <= 1e-6);
  }
}

TEST_CASE("pose_from_spherical errors") {
  CHECK_THROWS_AS(pose_from_spherical(0.0, 0.0, 1.0), CameraInsideScene);
  CHECK_THROWS_AS(pose_from_spherical(0.0, 0.0, 0.5), CameraInsideScene);
  CHECK_THROWS_AS(pose_from_spherical(0.0, std::numbers::pi / 2, 2.0), InvalidConfig);
}

TEST_CASE("uniform_hemisphere_poses") {
  const auto four = uniform_hemisphere_poses(4, deg2rad(25.0), 2.2);
  REQUIRE(four.size() == 4);
  for (int j = 0; j < 4; ++j) CHECK(rad2deg(four[j].azimuth) == doctest::Approx(90.0 * j));
  const auto one = uniform_hemisphere_poses(1, 0.3, 2.2);
  REQUIRE(one.size() == 1);
  CHECK(one[0].azimuth == 0.0);
  const auto many = uniform_hemisphere_poses(7, 0.3, 2.2);
  for (int j = 1; j < 7; ++j) {
    CHECK(many[j].azimuth - many[j - 1].azimuth == doctest::Approx(2 * std::numbers::pi / 7));
    CHECK(many[j].elevation == 0.3);
  }
  CHECK_THROWS_AS(uniform_hemisphere_poses(0, 0.3, 2.2), InvalidConfig);
}

TEST_CASE("sine encoding is injective on the 1-degree hemisphere grid") {
  // 360 azimuths x 90 elevations (0..89 deg). Exhaustive pairwise comparison
  // is done with a sorted sweep: two encodings within distance d differ by at
  // most d along any unit direction.
  struct Entry {
    std::vector<double> v;
  };
  std::vector<Entry> all;
  all.reserve(360 * 90);
  for (int a = 0; a < 360; ++a)
    for (int e = 0; e < 90; ++e)
      all.push_back({sine_encode(pose_from_spherical(deg2rad(a), deg2rad(e), 2.2).orientation).values});
  Rng rng(1);
  std::vector<double> dir(28);
  for (double& d : dir) d = rng.normal();
  double n = 0;
  for (double d : dir) n += d * d;
  for (double& d : dir) d /= std::sqrt(n);
  std::vector<std::pair<double, std::size_t>> keys;
  for (std::size_t i = 0; i < all.size(); ++i) {
    double k = 0;
    for (std::size_t c = 0; c < 28; ++c) k += dir[c] * all[i].v[c];
    keys.push_back({k, i});
  }
  std::sort(keys.begin(), keys.end());
  constexpr double kTol = 1e-6;
  double min_dist = 1e9;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    for (std::size_t j = i + 1; j < keys.size() && keys[j].first - keys[i].first <= kTol; ++j) {
      double d2 = 0;
      for (std::size_t c = 0; c < 28; ++c) {
        const double d = all[keys[i].second].v[c] - all[keys[j].second].v[c];
        d2 += d * d;
      }
      min_dist = std::min(min_dist, std::sqrt(d2));
    }
  }
  CHECK(min_dist > kTol);
}

TEST_CASE("pose JSON round trip is exact") {
  const auto poses = uniform_hemisphere_poses(9, deg2rad(31.7), 2.2);
  const auto back = poses_from_json(nlohmann::json::parse(poses_to_json(poses)));
  REQUIRE(back.size() == poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    CHECK(back[i].orientation == poses[i].orientation);
    CHECK(back[i].position == poses[i].position);
  }
  const auto j = nlohmann::json::parse(pose_to_json(poses[1]));
  CHECK(j.contains("quat"));
  CHECK(j.contains("position"));
}

TEST_CASE("pixel_ray center points at the look-at target") {
  const auto pose = pose_from_spherical(1.0, 0.4, 3.0);
  // even sizes put the optical axis between the four central pixels
  Vec3 sum;
  for (int r : {3, 4})
    for (int c : {3, 4}) sum = sum + pixel_ray(pose, r, c, 8, 8).direction;
  CHECK(length(normalize(sum) - normalize(pose.look_at - pose.position)) < 1e-12);
  // top rows look upward relative to bottom rows
  CHECK(pixel_ray(pose, 0, 4, 8, 8).direction.z > pixel_ray(pose, 7, 4, 8, 8).direction.z);
}

// Copyright 2026 The OrientLab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Procedural multi-view dataset: signed-distance primitive scenes rendered by
// sphere tracing from known camera poses, labelled by object class.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "orient/image.hpp"
#include "orient/quatpose.hpp"

namespace orient {

class Rng;

enum class PrimitiveKind { sphere, box, torus, cone };

std::string to_string(PrimitiveKind k);
PrimitiveKind primitive_kind_from_string(const std::string& s);

/// size holds (radius) for spheres, half extents for boxes, (major, minor)
/// radii for tori with axis +z, and (half height, base radius) for cones with
/// the tip toward +z.
struct Primitive {
  PrimitiveKind kind = PrimitiveKind::sphere;
  Vec3 center;
  std::array<double, 3> size{0.5, 0.0, 0.0};
  Vec3 albedo{1.0, 1.0, 1.0};
};

struct SceneSpec {
  int class_id = 0;
  std::vector<Primitive> primitives;
  Vec3 background{1.0, 1.0, 1.0};
};

double primitive_sdf(const Primitive& prim, const Vec3& p);

/// Union of the primitive distances; negative inside.
double sdf_eval(const SceneSpec& scene, const Vec3& p);

struct ShadingOptions {
  Vec3 light_dir = normalize(Vec3{1.0, 1.0, 1.0});
  double ambient = 0.2;
  int max_steps = 128;
  double hit_threshold = 1e-4;
  double vertical_fov_deg = kVerticalFovDeg;
};

/// Sphere-traced Lambertian render; rays that miss every primitive take the
/// background color.
Image render_view(const SceneSpec& scene, const CameraPose& pose, int height, int width,
                  const ShadingOptions& opts = {});

inline constexpr int kMaxClasses = 8;

/// Class c has main shape kind c % 4 in {sphere, box, torus, cone} and color
/// c / 4 in {red, blue}. Every scene also carries a yellow marker toward +x
/// and a green marker toward +y so that its azimuth is observable.
std::string class_name(int class_id);
SceneSpec make_scene(int class_id, Rng& rng);

struct DatasetConfig {
  int classes = 8;
  int scenes_per_class = 4;
  int views = 16;
  int resolution = 16;
  std::uint64_t seed = 0;
  double elevation_min_deg = 10.0;
  double elevation_max_deg = 40.0;
  double radius = 2.2;

  void validate() const;
};

void to_json(nlohmann::json& j, const DatasetConfig& c);
void from_json(const nlohmann::json& j, DatasetConfig& c);
void to_json(nlohmann::json& j, const SceneSpec& s);
void from_json(const nlohmann::json& j, SceneSpec& s);

/// Frames are ordered by (scene, view); scene s has class s / scenes_per_class.
/// Frames hold the 8-bit-quantized pixels exactly as stored on disk.
struct MultiViewDataset {
  DatasetConfig config;
  std::vector<SceneSpec> scenes;
  std::vector<Image> frames;
  std::vector<CameraPose> poses;
  std::vector<int> labels;

  std::size_t frame_index(int scene, int view) const {
    return static_cast<std::size_t>(scene) * config.views + view;
  }
  int scene_of_frame(std::size_t frame) const { return static_cast<int>(frame / config.views); }
};

MultiViewDataset build_dataset(const DatasetConfig& config);

/// Builds and writes manifest.json, frame_SSSS_VVV.ppm, poses.json and
/// labels.json into dir (created if needed). Throws IoError when unwritable.
MultiViewDataset build_dataset(const DatasetConfig& config, const std::string& dir);

void save_dataset(const MultiViewDataset& ds, const std::string& dir);
MultiViewDataset load_dataset(const std::string& dir);

std::string frame_filename(int scene, int view);

}  // namespace orient

// Copyright 2026 The OrientLab Authors
// SPDX-License-Identifier: Apache-2.0
#include "orient/synthscenes.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "orient/errors.hpp"
#include "orient/parallel.hpp"
#include "orient/rng.hpp"

namespace fs = std::filesystem;

namespace orient {

std::string to_string(PrimitiveKind k) {
  switch (k) {
    case PrimitiveKind::sphere:
      return "sphere";
    case PrimitiveKind::box:
      return "box";
    case PrimitiveKind::torus:
      return "torus";
    case PrimitiveKind::cone:
      return "cone";
  }
  return "sphere";
}

PrimitiveKind primitive_kind_from_string(const std::string& s) {
  if (s == "sphere") return PrimitiveKind::sphere;
  if (s == "box") return PrimitiveKind::box;
  if (s == "torus") return PrimitiveKind::torus;
  if (s == "cone") return PrimitiveKind::cone;
  throw InvalidInput("unknown primitive kind '" + s + "'");
}

// --- distance functions -----------------------------------------------------

namespace {

double sd_box(const Vec3& p, const std::array<double, 3>& b) {
  const double qx = std::abs(p.x) - b[0];
  const double qy = std::abs(p.y) - b[1];
  const double qz = std::abs(p.z) - b[2];
  const double ox = std::max(qx, 0.0), oy = std::max(qy, 0.0), oz = std::max(qz, 0.0);
  return std::sqrt(ox * ox + oy * oy + oz * oz) + std::min(std::max({qx, qy, qz}), 0.0);
}

double sd_torus(const Vec3& p, double major, double minor) {
  const double qx = std::hypot(p.x, p.y) - major;
  return std::hypot(qx, p.z) - minor;
}

// Exact capped cone along z: radius r1 at z = -h, r2 at z = +h.
double sd_capped_cone(const Vec3& p, double h, double r1, double r2) {
  const double qx = std::hypot(p.x, p.y);
  const double qy = p.z;
  const double k1x = r2, k1y = h;
  const double k2x = r2 - r1, k2y = 2.0 * h;
  const double cax = qx - std::min(qx, qy < 0.0 ? r1 : r2);
  const double cay = std::abs(qy) - h;
  const double t =
      std::clamp(((k1x - qx) * k2x + (k1y - qy) * k2y) / (k2x * k2x + k2y * k2y), 0.0, 1.0);
  const double cbx = qx - k1x + k2x * t;
  const double cby = qy - k1y + k2y * t;
  const double s = (cbx < 0.0 && cay < 0.0) ? -1.0 : 1.0;
  return s * std::sqrt(std::min(cax * cax + cay * cay, cbx * cbx + cby * cby));
}

}  // namespace

double primitive_sdf(const Primitive& prim, const Vec3& p) {
  const Vec3 q = p - prim.center;
  switch (prim.kind) {
    case PrimitiveKind::sphere:
      return length(q) - prim.size[0];
    case PrimitiveKind::box:
      return sd_box(q, prim.size);
    case PrimitiveKind::torus:
      return sd_torus(q, prim.size[0], prim.size[1]);
    case PrimitiveKind::cone:
      return sd_capped_cone(q, prim.size[0], prim.size[1], 0.0);
  }
  return std::numeric_limits<double>::infinity();
}

double sdf_eval(const SceneSpec& scene, const Vec3& p) {
  double d = std::numeric_limits<double>::infinity();
  for (const auto& prim : scene.primitives) d = std::min(d, primitive_sdf(prim, p));
  return d;
}

// --- rendering --------------------------------------------------------------

namespace {

Vec3 sdf_normal(const SceneSpec& scene, const Vec3& p) {
  constexpr double h = 1e-6;
  const Vec3 n{sdf_eval(scene, p + Vec3{h, 0, 0}) - sdf_eval(scene, p - Vec3{h, 0, 0}),
               sdf_eval(scene, p + Vec3{0, h, 0}) - sdf_eval(scene, p - Vec3{0, h, 0}),
               sdf_eval(scene, p + Vec3{0, 0, h}) - sdf_eval(scene, p - Vec3{0, 0, h})};
  const double len = length(n);
  return len > 0.0 ? n / len : Vec3{0.0, 0.0, 1.0};
}

Vec3 trace_pixel(const SceneSpec& scene, const Ray& ray, const ShadingOptions& opts) {
  // Restrict marching to the bounding sphere of radius 1 (plus margin).
  constexpr double kBound = 1.0 + 1e-3;
  const double b = dot(ray.origin, ray.direction);
  const double c = dot(ray.origin, ray.origin) - kBound * kBound;
  const double disc = b * b - c;
  if (disc <= 0.0 || scene.primitives.empty()) return scene.background;
  const double sq = std::sqrt(disc);
  const double t_exit = -b + sq;
  double t = std::max(0.0, -b - sq);
  for (int step = 0; step < opts.max_steps && t <= t_exit; ++step) {
    const Vec3 p = ray.origin + t * ray.direction;
    const double d = sdf_eval(scene, p);
    Vec3 p_hit = p;
    if (d < opts.hit_threshold) {
      // Polish the hit with a few guarded Newton steps along the ray so the
      // shading normal is taken on the surface rather than up to the
      // threshold in front of it.
      Vec3 n = sdf_normal(scene, p);
      double th = t, dh = d;
      for (int k = 0; k < 4 && std::abs(dh) > 1e-12; ++k) {
        const double slope = dot(n, ray.direction);
        if (slope > -0.05) break;
        th -= std::clamp(dh / slope, -1e-3, 1e-3);
        const Vec3 ph = ray.origin + th * ray.direction;
        dh = sdf_eval(scene, ph);
        p_hit = ph;
        n = sdf_normal(scene, ph);
      }
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
        const double di = primitive_sdf(scene.primitives[i], p_hit);
        if (di < best_d) {
          best_d = di;
          best = i;
        }
      }
      const Vec3& a = scene.primitives[best].albedo;
      const double shade = opts.ambient + std::max(0.0, dot(n, opts.light_dir));
      return {std::clamp(a.x * shade, 0.0, 1.0), std::clamp(a.y * shade, 0.0, 1.0),
              std::clamp(a.z * shade, 0.0, 1.0)};
    }
    t += d;
  }
  return scene.background;
}

}  // namespace

Image render_view(const SceneSpec& scene, const CameraPose& pose, int height, int width,
                  const ShadingOptions& opts) {
  if (height <= 0 || width <= 0) throw InvalidConfig("image size must be positive");
  Image img(height, width);
  parallel_for(static_cast<std::size_t>(height), [&](std::size_t row) {
    for (int col = 0; col < width; ++col) {
      const Ray ray = pixel_ray(pose, static_cast<int>(row), col, height, width, opts.vertical_fov_deg);
      const Vec3 c = trace_pixel(scene, ray, opts);
      img.at(static_cast<int>(row), col, 0) = c.x;
      img.at(static_cast<int>(row), col, 1) = c.y;
      img.at(static_cast<int>(row), col, 2) = c.z;
    }
  });
  return img;
}

// --- scene generation -------------------------------------------------------

std::string class_name(int class_id) {
  if (class_id < 0 || class_id >= kMaxClasses) throw InvalidInput("class id out of range");
  static const char* kColors[] = {"red", "blue"};
  return std::string(kColors[class_id / 4]) + "_" + to_string(static_cast<PrimitiveKind>(class_id % 4));
}

SceneSpec make_scene(int class_id, Rng& rng) {
  if (class_id < 0 || class_id >= kMaxClasses) {
    throw InvalidConfig("class id " + std::to_string(class_id) + " outside [0, 8)");
  }
  static const Vec3 kRed{0.85, 0.15, 0.12};
  static const Vec3 kBlue{0.15, 0.25, 0.85};
  static const Vec3 kYellow{0.95, 0.85, 0.10};
  static const Vec3 kGreen{0.15, 0.75, 0.20};

  SceneSpec scene;
  scene.class_id = class_id;
  scene.background = {1.0, 1.0, 1.0};

  const double s = rng.uniform(0.85, 1.1);
  Primitive main;
  main.kind = static_cast<PrimitiveKind>(class_id % 4);
  main.center = {rng.uniform(-0.04, 0.04), rng.uniform(-0.04, 0.04), 0.0};
  main.albedo = class_id / 4 == 0 ? kRed : kBlue;
  switch (main.kind) {
    case PrimitiveKind::sphere:
      main.size = {0.42 * s, 0.0, 0.0};
      break;
    case PrimitiveKind::box:
      main.size = {0.32 * s, 0.32 * s, 0.30 * s};
      break;
    case PrimitiveKind::torus:
      main.size = {0.36 * s, 0.13 * s, 0.0};
      break;
    case PrimitiveKind::cone:
      main.size = {0.38 * s, 0.38 * s, 0.0};
      break;
  }
  scene.primitives.push_back(main);

  Primitive head;
  head.kind = PrimitiveKind::sphere;
  head.center = {rng.uniform(0.58, 0.64), rng.uniform(-0.03, 0.03), rng.uniform(0.0, 0.08)};
  head.size = {rng.uniform(0.16, 0.19), 0.0, 0.0};
  head.albedo = kYellow;
  scene.primitives.push_back(head);

  Primitive tail;
  tail.kind = PrimitiveKind::box;
  tail.center = {rng.uniform(-0.03, 0.03), rng.uniform(0.56, 0.62), rng.uniform(-0.08, 0.0)};
  const double e = rng.uniform(0.10, 0.13);
  tail.size = {e, e, e};
  tail.albedo = kGreen;
  scene.primitives.push_back(tail);
  return scene;
}

// --- dataset ----------------------------------------------------------------

void DatasetConfig::validate() const {
  if (classes < 1 || classes > kMaxClasses) throw InvalidConfig("dataset.classes must be in [1, 8]");
  if (scenes_per_class < 1) throw InvalidConfig("dataset.scenes_per_class must be >= 1");
  if (views < 1) throw InvalidConfig("dataset.views must be >= 1");
  if (resolution < 8) throw InvalidConfig("dataset.resolution must be >= 8");
  if (!(elevation_min_deg <= elevation_max_deg) || elevation_min_deg < 0.0 ||
      elevation_max_deg >= 90.0) {
    throw InvalidConfig("dataset elevation range must satisfy 0 <= min <= max < 90");
  }
  if (!(radius > 1.0)) throw InvalidConfig("dataset.radius must exceed 1");
}

void to_json(nlohmann::json& j, const DatasetConfig& c) {
  j = nlohmann::json{{"classes", c.classes},
                     {"scenes_per_class", c.scenes_per_class},
                     {"views", c.views},
                     {"resolution", c.resolution},
                     {"seed", c.seed},
                     {"elevation_min_deg", c.elevation_min_deg},
                     {"elevation_max_deg", c.elevation_max_deg},
                     {"radius", c.radius}};
}

void from_json(const nlohmann::json& j, DatasetConfig& c) {
  c.classes = j.at("classes").get<int>();
  c.scenes_per_class = j.at("scenes_per_class").get<int>();
  c.views = j.at("views").get<int>();
  c.resolution = j.at("resolution").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.elevation_min_deg = j.at("elevation_min_deg").get<double>();
  c.elevation_max_deg = j.at("elevation_max_deg").get<double>();
  c.radius = j.at("radius").get<double>();
}

namespace {

nlohmann::json vec_json(const Vec3& v) { return nlohmann::json::array({v.x, v.y, v.z}); }
Vec3 json_vec(const nlohmann::json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

}  // namespace

void to_json(nlohmann::json& j, const SceneSpec& s) {
  nlohmann::json prims = nlohmann::json::array();
  for (const auto& p : s.primitives) {
    prims.push_back({{"kind", to_string(p.kind)},
                     {"center", vec_json(p.center)},
                     {"size", {p.size[0], p.size[1], p.size[2]}},
                     {"albedo", vec_json(p.albedo)}});
  }
  j = nlohmann::json{{"class_id", s.class_id}, {"background", vec_json(s.background)}, {"primitives", prims}};
}

void from_json(const nlohmann::json& j, SceneSpec& s) {
  s.class_id = j.at("class_id").get<int>();
  s.background = json_vec(j.at("background"));
  s.primitives.clear();
  for (const auto& pj : j.at("primitives")) {
    Primitive p;
    p.kind = primitive_kind_from_string(pj.at("kind").get<std::string>());
    p.center = json_vec(pj.at("center"));
    const auto& sz = pj.at("size");
    p.size = {sz.at(0).get<double>(), sz.at(1).get<double>(), sz.at(2).get<double>()};
    p.albedo = json_vec(pj.at("albedo"));
    s.primitives.push_back(p);
  }
}

std::string frame_filename(int scene, int view) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "frame_%04d_%03d.ppm", scene, view);
  return buf;
}

MultiViewDataset build_dataset(const DatasetConfig& config) {
  config.validate();
  MultiViewDataset ds;
  ds.config = config;
  const int num_scenes = config.classes * config.scenes_per_class;
  ds.scenes.reserve(static_cast<std::size_t>(num_scenes));
  for (int s = 0; s < num_scenes; ++s) {
    Rng rng(derive_seed(config.seed, {static_cast<std::uint64_t>(s), 0x5ce4e}));
    ds.scenes.push_back(make_scene(s / config.scenes_per_class, rng));
  }
  for (int s = 0; s < num_scenes; ++s) {
    Rng rng(derive_seed(config.seed, {static_cast<std::uint64_t>(s), 0x7e115}));
    for (int v = 0; v < config.views; ++v) {
      const double az = 2.0 * std::numbers::pi * v / config.views;
      const double el =
          deg2rad(rng.uniform(config.elevation_min_deg, config.elevation_max_deg));
      ds.poses.push_back(pose_from_spherical(az, el, config.radius));
      ds.labels.push_back(ds.scenes[static_cast<std::size_t>(s)].class_id);
    }
  }
  ds.frames.resize(ds.poses.size());
  for (std::size_t f = 0; f < ds.poses.size(); ++f) {
    const auto& scene = ds.scenes[f / static_cast<std::size_t>(config.views)];
    ds.frames[f] = quantized(render_view(scene, ds.poses[f], config.resolution, config.resolution));
  }
  return ds;
}

MultiViewDataset build_dataset(const DatasetConfig& config, const std::string& dir) {
  MultiViewDataset ds = build_dataset(config);
  save_dataset(ds, dir);
  return ds;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw IoError("failed writing " + path.string());
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace

void save_dataset(const MultiViewDataset& ds, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory " + dir + ": " + ec.message());
  nlohmann::json manifest;
  manifest["config"] = ds.config;
  manifest["frame_count"] = ds.frames.size();
  nlohmann::json names = nlohmann::json::array();
  for (int c = 0; c < ds.config.classes; ++c) names.push_back(class_name(c));
  manifest["class_names"] = names;
  manifest["scenes"] = ds.scenes;
  write_text(fs::path(dir) / "manifest.json", manifest.dump(2) + "\n");
  write_text(fs::path(dir) / "poses.json", poses_to_json(ds.poses));
  write_text(fs::path(dir) / "labels.json", nlohmann::json(ds.labels).dump() + "\n");
  for (std::size_t f = 0; f < ds.frames.size(); ++f) {
    const int scene = static_cast<int>(f / static_cast<std::size_t>(ds.config.views));
    const int view = static_cast<int>(f % static_cast<std::size_t>(ds.config.views));
    write_ppm((fs::path(dir) / frame_filename(scene, view)).string(), ds.frames[f]);
  }
}

MultiViewDataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw IoError("dataset directory " + dir + " does not exist");
  MultiViewDataset ds;
  try {
    const auto manifest = read_json(root / "manifest.json");
    ds.config = manifest.at("config").get<DatasetConfig>();
    ds.scenes = manifest.at("scenes").get<std::vector<SceneSpec>>();
    ds.poses = poses_from_json(read_json(root / "poses.json"));
    ds.labels = read_json(root / "labels.json").get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed dataset metadata in " + dir + ": " + e.what());
  }
  const std::size_t expected =
      static_cast<std::size_t>(ds.config.classes) * ds.config.scenes_per_class * ds.config.views;
  if (ds.poses.size() != expected || ds.labels.size() != expected) {
    throw IoError("dataset " + dir + " metadata does not match its manifest");
  }
  ds.frames.reserve(expected);
  for (std::size_t f = 0; f < expected; ++f) {
    const int scene = static_cast<int>(f / static_cast<std::size_t>(ds.config.views));
    const int view = static_cast<int>(f % static_cast<std::size_t>(ds.config.views));
    ds.frames.push_back(read_ppm((root / frame_filename(scene, view)).string()));
  }
  return ds;
}

}  // namespace orient

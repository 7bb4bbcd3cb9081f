// Copyright 2026 The OrientLab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense feature-grid radiance field with a small decoder and NeRF-style
// alpha compositing. Rendering is a single fused tape op so losses on images
// back-propagate into the grid features and decoder weights.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "orient/image.hpp"
#include "orient/quatpose.hpp"
#include "orient/tensor.hpp"

namespace orient {

class Rng;

inline constexpr int kDecoderHidden = 16;

struct GridConfig {
  int resolution = 32;
  int features = 8;
  double feature_init_std = 0.01;
  /// softplus(density_bias) is the initial density.
  double density_init = 0.1;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const GridConfig& c);
void from_json(const nlohmann::json& j, GridConfig& c);

struct PointSample {
  double sigma = 0.0;
  Vec3 rgb;
};

/// Features on an R^3 lattice spanning [-1, 1]^3 (node i at -1 + 2i/(R-1)),
/// decoded by F -> 16 (silu) -> 4; sigma = softplus(o0), rgb = sigmoid(o1..3).
class RadianceGrid {
 public:
  explicit RadianceGrid(GridConfig cfg = {});

  const GridConfig& config() const { return cfg_; }
  int resolution() const { return cfg_.resolution; }
  int features() const { return cfg_.features; }

  tg::Parameter& features_param() { return params_[0]; }
  const tg::Parameter& features_param() const { return params_[0]; }
  std::vector<tg::Parameter>& params() { return params_; }
  const std::vector<tg::Parameter>& params() const { return params_; }
  std::vector<tg::Parameter*> param_ptrs();
  tg::Parameter& param(const std::string& name);

  /// Flat index of feature f at node (x, y, z).
  std::size_t node_index(int x, int y, int z) const;

  void save(const std::string& path) const;
  static RadianceGrid load(const std::string& path);

 private:
  GridConfig cfg_;
  // features [R^3, F], dec_w1 [F, 16], dec_b1 [16], dec_w2 [16, 4], dec_b2 [4]
  std::vector<tg::Parameter> params_;
};

/// Outside the box the point is empty: sigma = 0 and rgb = background.
PointSample query_point(const RadianceGrid& grid, const Vec3& p, const Vec3& background = {1.0, 1.0, 1.0});

struct RenderSettings {
  int samples = 48;
  double near = 1.2;
  double far = 3.2;
  Vec3 background{1.0, 1.0, 1.0};
  int height = 16;
  int width = 16;
  /// Jittered sample positions inside N equal bins; midpoints when false.
  bool stratified = true;

  void validate() const;
};

void to_json(nlohmann::json& j, const RenderSettings& s);
void from_json(const nlohmann::json& j, RenderSettings& s);

/// Result of alpha compositing one ray.
struct Composite {
  Vec3 color;
  std::vector<double> weights;
  double residual = 1.0;  // transmittance past the last sample
};

/// alpha_i = 1 - exp(-sigma_i delta_i), w_i = T_i alpha_i,
/// color = sum w_i rgb_i + T_{N+1} background.
Composite composite(std::span<const double> sigma, std::span<const Vec3> rgb, std::span<const double> delta,
                    const Vec3& background);

/// Sample distances along a ray: N bins over [near, far], jittered when
/// stratified. delta_i is the distance to the next sample (far for the last).
void ray_samples(const RenderSettings& s, Rng* rng, std::vector<double>& t, std::vector<double>& delta);

Vec3 render_ray(const RadianceGrid& grid, const Ray& ray, const RenderSettings& settings,
                std::uint64_t strat_seed = 0);

/// Differentiable point queries: returns [n, 4] rows (sigma, r, g, b).
tg::Var query_points(tg::Tape& tape, RadianceGrid& grid, std::span<const Vec3> points, bool track);

/// Differentiable rendering of a batch of rays: [n, 3]. Ray i is stratified
/// from derive_seed(strat_seed, {i}).
tg::Var render_rays(tg::Tape& tape, RadianceGrid& grid, std::span<const Ray> rays,
                    const RenderSettings& settings, std::uint64_t strat_seed, bool track);

/// Whole image as a single row [1, H*W*3] (HWC, values in [0, 1]).
tg::Var render_image(tg::Tape& tape, RadianceGrid& grid, const CameraPose& pose,
                     const RenderSettings& settings, std::uint64_t strat_seed, bool track);

/// Non-differentiable convenience wrapper.
Image render_image(const RadianceGrid& grid, const CameraPose& pose, const RenderSettings& settings,
                   std::uint64_t strat_seed = 0);

/// k views at evenly spaced azimuths.
std::vector<Image> render_turntable(const RadianceGrid& grid, int k, double elevation, double radius,
                                    const RenderSettings& settings);

}  // namespace orient

// Copyright 2026 The OrientLab Authors
// SPDX-License-Identifier: Apache-2.0
#include "orient/radiance.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "orient/errors.hpp"
#include "orient/parallel.hpp"
#include "orient/rng.hpp"

namespace orient {

using tg::Tape;
using tg::Tensor;
using tg::Var;

namespace {

constexpr int H = kDecoderHidden;

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Raw parameter views used by the kernels below.
struct Weights {
  const double* feat;
  const double* w1;  // [F, H]
  const double* b1;  // [H]
  const double* w2;  // [H, 4]
  const double* b2;  // [4]
  int R;
  int F;
};

Weights weights_of(const RadianceGrid& g, const std::array<const Tensor*, 5>& v) {
  return {v[0]->vec().data(), v[1]->vec().data(), v[2]->vec().data(), v[3]->vec().data(),
          v[4]->vec().data(), g.resolution(), g.features()};
}

Weights weights_of(const RadianceGrid& g) {
  const auto& p = g.params();
  return weights_of(g, {&p[0].value, &p[1].value, &p[2].value, &p[3].value, &p[4].value});
}

// Everything the backward pass needs about one point query.
struct PointCache {
  bool inside = false;
  std::array<std::size_t, 8> node{};
  std::array<double, 8> w{};
  std::array<double, 16> f{};  // F <= 16
  std::array<double, H> a{};
  std::array<double, H> h{};
  std::array<double, 4> o{};
  double sigma = 0.0;
  std::array<double, 3> rgb{};
};

void eval_point(const Weights& W, const Vec3& p, PointCache& c) {
  c.inside = p.x >= -1.0 && p.x <= 1.0 && p.y >= -1.0 && p.y <= 1.0 && p.z >= -1.0 && p.z <= 1.0;
  if (!c.inside) {
    c.sigma = 0.0;
    c.rgb = {0.0, 0.0, 0.0};
    return;
  }
  const int R = W.R;
  const double s = 0.5 * (R - 1);
  const double gx = (p.x + 1.0) * s, gy = (p.y + 1.0) * s, gz = (p.z + 1.0) * s;
  const int ix = std::min(static_cast<int>(gx), R - 2);
  const int iy = std::min(static_cast<int>(gy), R - 2);
  const int iz = std::min(static_cast<int>(gz), R - 2);
  const double fx = gx - ix, fy = gy - iy, fz = gz - iz;
  int k = 0;
  for (int dx = 0; dx < 2; ++dx)
    for (int dy = 0; dy < 2; ++dy)
      for (int dz = 0; dz < 2; ++dz, ++k) {
        c.node[k] = ((static_cast<std::size_t>(ix + dx) * R + (iy + dy)) * R + (iz + dz)) * W.F;
        c.w[k] = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy) * (dz ? fz : 1.0 - fz);
      }
  for (int f = 0; f < W.F; ++f) {
    double v = 0.0;
    for (int j = 0; j < 8; ++j) v += c.w[j] * W.feat[c.node[j] + f];
    c.f[f] = v;
  }
  for (int j = 0; j < H; ++j) {
    double v = W.b1[j];
    for (int f = 0; f < W.F; ++f) v += c.f[f] * W.w1[f * H + j];
    c.a[j] = v;
    c.h[j] = v * sigmoid(v);
  }
  for (int m = 0; m < 4; ++m) {
    double v = W.b2[m];
    for (int j = 0; j < H; ++j) v += c.h[j] * W.w2[j * 4 + m];
    c.o[m] = v;
  }
  c.sigma = softplus(c.o[0]);
  for (int m = 0; m < 3; ++m) c.rgb[m] = sigmoid(c.o[m + 1]);
}

// Gradient buffers for the five parameters; null entries are skipped.
struct Grads {
  double* feat = nullptr;
  double* w1 = nullptr;
  double* b1 = nullptr;
  double* w2 = nullptr;
  double* b2 = nullptr;
};

void backprop_point(const Weights& W, const PointCache& c, double d_sigma, const double* d_rgb, Grads& g) {
  if (!c.inside) return;
  std::array<double, 4> d_o{};
  d_o[0] = d_sigma * sigmoid(c.o[0]);
  for (int m = 0; m < 3; ++m) d_o[m + 1] = d_rgb[m] * c.rgb[m] * (1.0 - c.rgb[m]);
  if (g.b2)
    for (int m = 0; m < 4; ++m) g.b2[m] += d_o[m];
  std::array<double, H> d_a{};
  for (int j = 0; j < H; ++j) {
    double dh = 0.0;
    for (int m = 0; m < 4; ++m) {
      dh += W.w2[j * 4 + m] * d_o[m];
      if (g.w2) g.w2[j * 4 + m] += c.h[j] * d_o[m];
    }
    const double s = sigmoid(c.a[j]);
    d_a[j] = dh * s * (1.0 + c.a[j] * (1.0 - s));
  }
  if (g.b1)
    for (int j = 0; j < H; ++j) g.b1[j] += d_a[j];
  for (int f = 0; f < W.F; ++f) {
    double df = 0.0;
    for (int j = 0; j < H; ++j) {
      df += W.w1[f * H + j] * d_a[j];
      if (g.w1) g.w1[f * H + j] += c.f[f] * d_a[j];
    }
    if (g.feat)
      for (int k = 0; k < 8; ++k) g.feat[c.node[k] + f] += c.w[k] * df;
  }
}

struct RayCache {
  std::vector<double> t, delta;
  std::vector<PointCache> pts;
  std::vector<double> alpha, trans;  // trans[i] = T_i, trans[N] = residual
  Vec3 color;
};

void eval_ray(const Weights& W, const Ray& ray, const RenderSettings& s, std::uint64_t seed, RayCache& rc) {
  Rng rng(seed);
  ray_samples(s, s.stratified ? &rng : nullptr, rc.t, rc.delta);
  const std::size_t N = rc.t.size();
  rc.pts.resize(N);
  rc.alpha.resize(N);
  rc.trans.resize(N + 1);
  double T = 1.0;
  Vec3 col{0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < N; ++i) {
    eval_point(W, ray.origin + ray.direction * rc.t[i], rc.pts[i]);
    const double a = -std::expm1(-rc.pts[i].sigma * rc.delta[i]);
    rc.alpha[i] = a;
    rc.trans[i] = T;
    const double wgt = T * a;
    col = col + Vec3{rc.pts[i].rgb[0], rc.pts[i].rgb[1], rc.pts[i].rgb[2]} * wgt;
    T *= 1.0 - a;
  }
  rc.trans[N] = T;
  rc.color = col + s.background * T;
}

void backprop_ray(const Weights& W, const RayCache& rc, const RenderSettings& s, const double* g, Grads& out) {
  const std::size_t N = rc.t.size();
  // suffix[k] = sum_{i>k} w_i c_i + T_{N+1} bg, dotted with g
  double suffix = rc.trans[N] * (g[0] * s.background.x + g[1] * s.background.y + g[2] * s.background.z);
  for (std::size_t k = N; k-- > 0;) {
    const PointCache& c = rc.pts[k];
    const double wk = rc.trans[k] * rc.alpha[k];
    const double gc = g[0] * c.rgb[0] + g[1] * c.rgb[1] + g[2] * c.rgb[2];
    const double d_sigma = rc.delta[k] * (rc.trans[k + 1] * gc - suffix);
    const double d_rgb[3] = {wk * g[0], wk * g[1], wk * g[2]};
    backprop_point(W, c, d_sigma, d_rgb, out);
    suffix += wk * gc;
  }
}

std::array<std::size_t, 5> param_nodes(Tape& tape, RadianceGrid& grid, bool track) {
  std::array<std::size_t, 5> ids{};
  for (std::size_t i = 0; i < 5; ++i) {
    ids[i] = track ? tape.param(grid.params()[i]).id : tape.constant(grid.params()[i].value).id;
  }
  return ids;
}

Weights tape_weights(const Tape& tape, const RadianceGrid& grid, const std::array<std::size_t, 5>& ids) {
  return weights_of(grid, {&tape.value(ids[0]), &tape.value(ids[1]), &tape.value(ids[2]), &tape.value(ids[3]),
                           &tape.value(ids[4])});
}

Grads grad_buffers(Tape& tape, const std::array<std::size_t, 5>& ids) {
  Grads g;
  double** slots[5] = {&g.feat, &g.w1, &g.b1, &g.w2, &g.b2};
  for (std::size_t i = 0; i < 5; ++i)
    if (tape.requires_grad(ids[i])) *slots[i] = tape.grad_buffer(ids[i]).vec().data();
  return g;
}

}  // namespace

// --- grid ------------------------------------------------------------------

void to_json(nlohmann::json& j, const GridConfig& c) {
  j = nlohmann::json{{"resolution", c.resolution},
                     {"features", c.features},
                     {"feature_init_std", c.feature_init_std},
                     {"density_init", c.density_init},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, GridConfig& c) {
  c.resolution = j.at("resolution").get<int>();
  c.features = j.at("features").get<int>();
  c.feature_init_std = j.at("feature_init_std").get<double>();
  c.density_init = j.at("density_init").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
}

RadianceGrid::RadianceGrid(GridConfig cfg) : cfg_(cfg) {
  if (cfg_.resolution < 2 || cfg_.features < 1 || cfg_.features > 16 || cfg_.feature_init_std < 0.0 ||
      cfg_.density_init <= 0.0) {
    throw InvalidConfig("invalid radiance grid configuration");
  }
  Rng rng(derive_seed(cfg_.seed, {0x6e1d}));
  const std::size_t R = static_cast<std::size_t>(cfg_.resolution), F = static_cast<std::size_t>(cfg_.features);
  params_.emplace_back("features", Tensor::randn({R * R * R, F}, rng, cfg_.feature_init_std));
  params_.emplace_back("dec_w1", Tensor::randn({F, H}, rng, 1.0 / std::sqrt(static_cast<double>(F))));
  params_.emplace_back("dec_b1", Tensor({static_cast<std::size_t>(H)}));
  params_.emplace_back("dec_w2", Tensor::randn({static_cast<std::size_t>(H), 4}, rng, 0.1 / std::sqrt(H)));
  Tensor b2({4});
  b2[0] = std::log(std::expm1(cfg_.density_init));
  params_.emplace_back("dec_b2", std::move(b2));
}

std::vector<tg::Parameter*> RadianceGrid::param_ptrs() {
  std::vector<tg::Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

tg::Parameter& RadianceGrid::param(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw InvalidInput("no grid parameter named " + name);
}

std::size_t RadianceGrid::node_index(int x, int y, int z) const {
  const std::size_t R = static_cast<std::size_t>(cfg_.resolution);
  return ((static_cast<std::size_t>(x) * R + y) * R + z) * static_cast<std::size_t>(cfg_.features);
}

void RadianceGrid::save(const std::string& path) const {
  std::vector<tg::NamedTensor> ts;
  for (const auto& p : params_) ts.push_back({p.name, p.value});
  tg::save_checkpoint(path, ts);
  std::ofstream os(path + ".json", std::ios::trunc);
  if (!os) throw IoError("cannot write " + path + ".json");
  os << nlohmann::json{{"format", "orient-radiance-grid"}, {"config", cfg_}}.dump(2) << "\n";
}

RadianceGrid RadianceGrid::load(const std::string& path) {
  if (!std::filesystem::exists(path) || !std::filesystem::exists(path + ".json")) {
    throw IoError("radiance grid " + path + " not found");
  }
  try {
    std::ifstream is(path + ".json");
    RadianceGrid g(nlohmann::json::parse(is).at("config").get<GridConfig>());
    const auto ts = tg::load_checkpoint(path);
    for (auto& p : g.params_) {
      const Tensor& v = tg::find_tensor(ts, p.name);
      if (v.shape() != p.value.shape()) throw IoError("grid tensor " + p.name + " has wrong shape");
      p.value = v;
    }
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed grid sidecar " + path + ".json: " + e.what());
  }
}

PointSample query_point(const RadianceGrid& grid, const Vec3& p, const Vec3& background) {
  PointCache c;
  eval_point(weights_of(grid), p, c);
  if (!c.inside) return {0.0, background};
  return {c.sigma, {c.rgb[0], c.rgb[1], c.rgb[2]}};
}

// --- rendering -------------------------------------------------------------

void RenderSettings::validate() const {
  if (samples < 2) throw InvalidConfig("render samples must be >= 2");
  if (!(near < far) || near < 0.0) throw InvalidConfig("render range needs 0 <= near < far");
  if (height < 1 || width < 1) throw InvalidConfig("render size must be positive");
}

void to_json(nlohmann::json& j, const RenderSettings& s) {
  j = nlohmann::json{{"samples", s.samples},
                     {"near", s.near},
                     {"far", s.far},
                     {"background", {s.background.x, s.background.y, s.background.z}},
                     {"height", s.height},
                     {"width", s.width},
                     {"stratified", s.stratified}};
}

void from_json(const nlohmann::json& j, RenderSettings& s) {
  s.samples = j.at("samples").get<int>();
  s.near = j.at("near").get<double>();
  s.far = j.at("far").get<double>();
  const auto bg = j.at("background").get<std::vector<double>>();
  if (bg.size() != 3) throw InvalidConfig("background must have 3 components");
  s.background = {bg[0], bg[1], bg[2]};
  s.height = j.at("height").get<int>();
  s.width = j.at("width").get<int>();
  s.stratified = j.at("stratified").get<bool>();
}

Composite composite(std::span<const double> sigma, std::span<const Vec3> rgb, std::span<const double> delta,
                    const Vec3& background) {
  if (sigma.size() != rgb.size() || sigma.size() != delta.size()) {
    throw ShapeMismatch("composite inputs differ in length");
  }
  Composite out;
  out.weights.resize(sigma.size());
  double T = 1.0;
  Vec3 col{0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    const double a = -std::expm1(-sigma[i] * delta[i]);
    out.weights[i] = T * a;
    col = col + rgb[i] * out.weights[i];
    T *= 1.0 - a;
  }
  out.residual = T;
  out.color = col + background * T;
  return out;
}

void ray_samples(const RenderSettings& s, Rng* rng, std::vector<double>& t, std::vector<double>& delta) {
  const int N = s.samples;
  const double bin = (s.far - s.near) / N;
  t.resize(static_cast<std::size_t>(N));
  delta.resize(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) t[i] = s.near + (i + (rng ? rng->uniform() : 0.5)) * bin;
  for (int i = 0; i + 1 < N; ++i) delta[i] = t[i + 1] - t[i];
  delta[N - 1] = s.far - t[N - 1];
}

Vec3 render_ray(const RadianceGrid& grid, const Ray& ray, const RenderSettings& settings, std::uint64_t strat_seed) {
  RayCache rc;
  eval_ray(weights_of(grid), ray, settings, strat_seed, rc);
  return rc.color;
}

Var query_points(Tape& tape, RadianceGrid& grid, std::span<const Vec3> points, bool track) {
  const auto ids = param_nodes(tape, grid, track);
  const Weights W = tape_weights(tape, grid, ids);
  const std::vector<Vec3> pts(points.begin(), points.end());
  Tensor out({pts.size(), 4});
  for (std::size_t i = 0; i < pts.size(); ++i) {
    PointCache c;
    eval_point(W, pts[i], c);
    out[i * 4] = c.sigma;
    for (int m = 0; m < 3; ++m) out[i * 4 + 1 + m] = c.rgb[m];
  }
  const RadianceGrid* gp = &grid;
  return tape.record(std::move(out), {ids.begin(), ids.end()}, [gp, ids, pts](Tape& tp, std::size_t self) {
    const Weights W = tape_weights(tp, *gp, ids);
    Grads g = grad_buffers(tp, ids);
    const Tensor& up = tp.grad_buffer(self);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      PointCache c;
      eval_point(W, pts[i], c);
      backprop_point(W, c, up[i * 4], up.vec().data() + i * 4 + 1, g);
    }
  });
}

Var render_rays(Tape& tape, RadianceGrid& grid, std::span<const Ray> rays, const RenderSettings& settings,
                std::uint64_t strat_seed, bool track) {
  settings.validate();
  const auto ids = param_nodes(tape, grid, track);
  const Weights W = tape_weights(tape, grid, ids);
  const std::vector<Ray> rs(rays.begin(), rays.end());
  Tensor out({rs.size(), 3});
  parallel_for(rs.size(), [&](std::size_t i) {
    RayCache rc;
    eval_ray(W, rs[i], settings, derive_seed(strat_seed, {i}), rc);
    out[i * 3] = rc.color.x;
    out[i * 3 + 1] = rc.color.y;
    out[i * 3 + 2] = rc.color.z;
  });
  const RadianceGrid* gp = &grid;
  return tape.record(std::move(out), {ids.begin(), ids.end()},
                     [gp, ids, rs, settings, strat_seed](Tape& tp, std::size_t self) {
                       const Weights W = tape_weights(tp, *gp, ids);
                       Grads g = grad_buffers(tp, ids);
                       const Tensor& up = tp.grad_buffer(self);
                       // fixed ray order keeps accumulation deterministic
                       RayCache rc;
                       for (std::size_t i = 0; i < rs.size(); ++i) {
                         const double* gi = up.vec().data() + i * 3;
                         if (gi[0] == 0.0 && gi[1] == 0.0 && gi[2] == 0.0) continue;
                         eval_ray(W, rs[i], settings, derive_seed(strat_seed, {i}), rc);
                         backprop_ray(W, rc, settings, gi, g);
                       }
                     });
}

namespace {

std::vector<Ray> image_rays(const CameraPose& pose, const RenderSettings& s) {
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(s.height) * s.width);
  for (int r = 0; r < s.height; ++r)
    for (int c = 0; c < s.width; ++c) rays.push_back(pixel_ray(pose, r, c, s.height, s.width));
  return rays;
}

}  // namespace

Var render_image(Tape& tape, RadianceGrid& grid, const CameraPose& pose, const RenderSettings& settings,
                 std::uint64_t strat_seed, bool track) {
  const auto rays = image_rays(pose, settings);
  Var px = render_rays(tape, grid, rays, settings, strat_seed, track);
  return tg::reshape(px, {1, rays.size() * 3});
}

Image render_image(const RadianceGrid& grid, const CameraPose& pose, const RenderSettings& settings,
                   std::uint64_t strat_seed) {
  settings.validate();
  const auto rays = image_rays(pose, settings);
  const Weights W = weights_of(grid);
  Image img(settings.height, settings.width);
  parallel_for(rays.size(), [&](std::size_t i) {
    RayCache rc;
    eval_ray(W, rays[i], settings, derive_seed(strat_seed, {i}), rc);
    img.rgb[i * 3] = rc.color.x;
    img.rgb[i * 3 + 1] = rc.color.y;
    img.rgb[i * 3 + 2] = rc.color.z;
  });
  return img;
}

std::vector<Image> render_turntable(const RadianceGrid& grid, int k, double elevation, double radius,
                                    const RenderSettings& settings) {
  if (k < 1) throw InvalidConfig("turntable needs at least one view");
  std::vector<Image> out;
  for (const auto& pose : uniform_hemisphere_poses(k, elevation, radius)) {
    out.push_back(render_image(grid, pose, settings, 0));
  }
  return out;
}

}  // namespace orient

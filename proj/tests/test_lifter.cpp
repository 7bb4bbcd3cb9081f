// Copyright 2026 The OrientLab Authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "orient/errors.hpp"
#include "orient/lifter.hpp"
#include "orient/rng.hpp"

using namespace orient;
using tg::Tensor;

namespace {

// Predicts the exact noise that maps x_t back to a fixed clean row.
class ConsistentModel : public EpsModel {
 public:
  ConsistentModel(const NoiseSchedule& s, Tensor x0) : s_(s), x0_(std::move(x0)) {}
  std::size_t input_dim() const override { return x0_.size(); }
  Tensor predict(const Tensor& x_t, std::span<const int> t, std::span<const int>,
                 std::span<const Quaternion>) const override {
    Tensor out(x_t.shape());
    const std::size_t D = x0_.size();
    for (std::size_t i = 0; i < x_t.dim(0); ++i) {
      const double a = std::sqrt(s_.ab(t[i])), b = std::sqrt(1.0 - s_.ab(t[i]));
      for (std::size_t k = 0; k < D; ++k) out[i * D + k] = (x_t[i * D + k] - a * x0_[k]) / b;
    }
    return out;
  }

 private:
  const NoiseSchedule& s_;
  Tensor x0_;
};

// Optimal denoiser for per-pixel Gaussian data N(mean, sd^2).
class GaussianImageModel : public EpsModel {
 public:
  GaussianImageModel(const NoiseSchedule& s, Tensor mean, double sd) : s_(s), mean_(std::move(mean)), sd_(sd) {}
  std::size_t input_dim() const override { return mean_.size(); }
  Tensor predict(const Tensor& x_t, std::span<const int> t, std::span<const int>,
                 std::span<const Quaternion>) const override {
    Tensor out(x_t.shape());
    const std::size_t D = mean_.size();
    for (std::size_t i = 0; i < x_t.dim(0); ++i) {
      const double ab = s_.ab(t[i]);
      const double v = ab * sd_ * sd_ + 1.0 - ab;
      for (std::size_t k = 0; k < D; ++k)
        out[i * D + k] = std::sqrt(1.0 - ab) * (x_t[i * D + k] - std::sqrt(ab) * mean_[k]) / v;
    }
    return out;
  }

 private:
  const NoiseSchedule& s_;
  Tensor mean_;
  double sd_;
};

LiftConfig small_config(LiftMode mode, int rounds = 6) {
  LiftConfig c;
  c.mode = mode;
  c.rounds = rounds;
  c.grid.resolution = 8;
  c.grid.features = 4;
  c.render.height = 4;
  c.render.width = 4;
  c.render.samples = 12;
  c.render.stratified = false;
  c.inner_updates = 10;
  return c;
}

DenoiserConfig tiny_denoiser() {
  DenoiserConfig d;
  d.height = 4;
  d.width = 4;
  d.classes = 2;
  d.embed_dim = 8;
  d.hidden = 16;
  d.blocks = 1;
  return d;
}

Tensor signed_render(const RadianceGrid& g, const CameraPose& pose, const RenderSettings& rs) {
  const Image img = render_image(g, pose, rs);
  Tensor out({1, img.rgb.size()});
  for (std::size_t i = 0; i < img.rgb.size(); ++i) out[i] = 2.0 * img.rgb[i] - 1.0;
  return out;
}

double max_abs(const std::vector<Tensor>& ts) {
  double m = 0.0;
  for (const auto& t : ts)
    for (double v : t.vec()) m = std::max(m, std::abs(v));
  return m;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("orient_test_lifter_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("camera sampling is deterministic, canonical and uniform in azimuth") {
  LiftConfig c;
  Rng a(4), b(4);
  const CameraPose p = sample_camera(c, a), q = sample_camera(c, b);
  CHECK(p.position.x == q.position.x);
  CHECK(p.orientation.w() >= 0.0);
  Rng rng(17);
  std::vector<int> hist(16, 0);
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const CameraPose cp = sample_camera(c, rng);
    CHECK(cp.orientation.w() >= 0.0);
    CHECK(rad2deg(cp.elevation) >= c.elevation_min_deg - 1e-9);
    CHECK(rad2deg(cp.elevation) <= c.elevation_max_deg + 1e-9);
    double az = std::atan2(cp.position.y, cp.position.x);
    if (az < 0.0) az += 2.0 * 3.14159265358979323846;
    ++hist[std::min(15, static_cast<int>(az / (2.0 * 3.14159265358979323846) * 16))];
  }
  double chi2 = 0.0;
  const double expect = n / 16.0;
  for (int h : hist) chi2 += (h - expect) * (h - expect) / expect;
  CHECK(chi2 < 24.996);  // 95% point of chi-square with 15 dof
}

TEST_CASE("annealing schedule endpoints, midpoint and monotonicity") {
  LiftConfig c;
  c.rounds = 11;
  const int T = 256;
  const auto [ts, te] = t_bounds(c, T);
  CHECK(ts == 251);
  CHECK(te == 5);
  const LiftState first = anneal_schedule(0, c, T);
  CHECK(first.t_cur == ts);
  CHECK(first.step_cur == 64);
  const LiftState last = anneal_schedule(10, c, T);
  CHECK(last.t_cur == te);
  CHECK(last.step_cur == 4);
  const LiftState mid = anneal_schedule(5, c, T);
  CHECK(mid.t_cur == static_cast<int>(std::lround(std::sqrt(251.0 * 5.0))));
  CHECK(mid.step_cur == 16);
  LiftState prev = first;
  for (int r = 1; r < c.rounds; ++r) {
    const LiftState s = anneal_schedule(r, c, T);
    CHECK(s.t_cur <= prev.t_cur);
    CHECK(s.step_cur <= prev.step_cur);
    CHECK(s.t_cur >= te);
    CHECK(s.step_cur >= 4);
    prev = s;
  }
  CHECK_THROWS_AS(anneal_schedule(11, c, T), InvalidInput);
  c.rounds = 1;
  CHECK(anneal_schedule(0, c, T).t_cur == ts);
}

TEST_CASE("sds with exact noise prediction applies no gradient") {
  const NoiseSchedule s = default_schedule();
  LiftConfig c = small_config(LiftMode::Sds);
  RadianceGrid g(c.grid);
  const CameraPose pose = pose_from_spherical(0.4, 0.5, c.radius);
  const ConsistentModel m(s, signed_render(g, pose, c.render));
  CountingEpsModel counted(m);
  FieldOptimizer opt(g, c);
  const Tensor before = g.features_param().value;
  Rng rng(3);
  SdsTrace trace;
  const RoundRecord r = sds_step(g, opt, counted, s, pose, c, rng, &trace);
  CHECK(max_abs(trace.grads) <= 1e-12);
  CHECK(r.fwd_evals == 2);
  CHECK(r.bwd_evals == 0);
  CHECK(r.field_updates == 1);
  CHECK(counted.count() == 2);
  // Adam on a ~zero gradient leaves the grid unchanged up to its epsilon
  for (std::size_t i = 0; i < before.size(); ++i)
    CHECK(std::abs(g.features_param().value[i] - before[i]) <= 1e-6);
}

TEST_CASE("sds gradient equals the stop-gradient surrogate gradient") {
  const NoiseSchedule s = default_schedule();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    LiftConfig c = small_config(LiftMode::Sds);
    c.grid.seed = seed;
    Denoiser d(tiny_denoiser());
    RadianceGrid g(c.grid);
    FieldOptimizer opt(g, c);
    const CameraPose pose = pose_from_spherical(0.3 + seed, 0.4, c.radius);
    Rng rng(seed);
    SdsTrace trace;
    const RadianceGrid snapshot = g;
    sds_step(g, opt, d, s, pose, c, rng, &trace);

    RadianceGrid h = snapshot;
    for (auto& p : h.params()) p.zero_grad();
    tg::Tape tape;
    tg::Var img = render_image(tape, h, pose, c.render, 0, true);
    tg::Var x = tg::add(tg::scale(img, 2.0), tape.constant(Tensor::full(img.shape(), -1.0)));
    const double w = 1.0 - s.ab(trace.t);
    Tensor target = x.value();
    for (std::size_t i = 0; i < target.size(); ++i) target[i] -= w * (trace.eps_hat[i] - trace.eps[i]);
    tg::Var diff = tg::sub(x, tape.constant(target));
    tape.backward(tg::scale(tg::sum(tg::square(diff)), 0.5));
    double worst = 0.0, scale = 0.0;
    for (std::size_t p = 0; p < h.params().size(); ++p)
      for (std::size_t i = 0; i < h.params()[p].grad.size(); ++i) {
        worst = std::max(worst, std::abs(h.params()[p].grad[i] - trace.grads[p][i]));
        scale = std::max(scale, std::abs(trace.grads[p][i]));
      }
    CHECK(scale > 0.0);
    CHECK(worst <= 1e-9);
  }
}

TEST_CASE("sds gradients are smaller at a render matching the Gaussian mean") {
  const NoiseSchedule s = default_schedule();
  LiftConfig c = small_config(LiftMode::Sds);
  c.guidance = 1.0;
  const CameraPose pose = pose_from_spherical(1.1, 0.45, c.radius);
  RadianceGrid g0(c.grid);
  const Tensor x = signed_render(g0, pose, c.render);
  Tensor shifted = x;
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += (i % 2 ? 0.6 : -0.6);
  const GaussianImageModel at(s, x, 0.2), off(s, shifted, 0.2);
  int smaller = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RadianceGrid ga = g0, gb = g0;
    FieldOptimizer oa(ga, c), ob(gb, c);
    Rng ra(seed), rb(seed);
    SdsTrace ta, tb;
    sds_step(ga, oa, at, s, pose, c, ra, &ta);
    sds_step(gb, ob, off, s, pose, c, rb, &tb);
    double na = 0.0, nb = 0.0;
    for (const auto& gr : ta.grads)
      for (double v : gr.vec()) na += v * v;
    for (const auto& gr : tb.grads)
      for (double v : gr.vec()) nb += v * v;
    smaller += na < nb;
  }
  CHECK(smaller >= 18);
}

TEST_CASE("dbp round against an exactly rendered target leaves the grid still") {
  const NoiseSchedule s = default_schedule();
  LiftConfig c = small_config(LiftMode::Dbp);
  // a single update: further Adam steps renormalize round-off sized gradients
  c.inner_updates = 1;
  RadianceGrid g(c.grid);
  // The target is decoded at the round's sampled pose; reproduce that pose.
  Rng probe(11);
  const CameraPose pose = sample_camera(c, probe);
  const Tensor x0 = signed_render(g, pose, c.render);
  const ConsistentModel m(s, x0);
  FieldOptimizer opt(g, c);
  const RadianceGrid before = g;
  Rng rng(11);
  Tensor target;
  const RoundRecord r = dbp_round(g, opt, m, s, {200, 64}, c, rng, &target);
  for (std::size_t i = 0; i < x0.size(); ++i) CHECK(std::abs(target[i] - x0[i]) <= 1e-12);
  CHECK(r.loss <= 1e-20);
  double moved = 0.0;
  for (std::size_t p = 0; p < g.params().size(); ++p)
    for (std::size_t i = 0; i < g.params()[p].value.size(); ++i)
      moved = std::max(moved, std::abs(g.params()[p].value[i] - before.params()[p].value[i]));
  CHECK(moved <= 1e-9);
}

TEST_CASE("dbp accounting is independent of the inner update count") {
  const NoiseSchedule s = default_schedule();
  Denoiser d(tiny_denoiser());
  for (int M : {1, 4, 10}) {
    LiftConfig c = small_config(LiftMode::Dbp);
    c.inner_updates = M;
    RadianceGrid g(c.grid);
    FieldOptimizer opt(g, c);
    CountingEpsModel counted(d);
    Rng rng(5);
    const RoundRecord r = dbp_round(g, opt, counted, s, {100, 32}, c, rng);
    CHECK(r.fwd_evals == 2);
    CHECK(counted.count() == 2);
    CHECK(r.field_updates == M);
    CHECK(r.bwd_evals == 0);
    CHECK(r.t_cur == 100);
    CHECK(r.step == 32);
  }
  // a finer solver stride costs more evaluations, still independent of M
  LiftConfig c = small_config(LiftMode::Dbp);
  c.stride = 8;
  RadianceGrid g(c.grid);
  FieldOptimizer opt(g, c);
  Rng rng(5);
  CHECK(dbp_round(g, opt, d, s, {100, 32}, c, rng).fwd_evals == 8);
  c.dbp_guidance = false;
  CHECK(dbp_round(g, opt, d, s, {100, 32}, c, rng).fwd_evals == 4);
  CHECK_THROWS_AS(dbp_round(g, opt, d, s, {0, 4}, c, rng), InvalidTimestep);
}

TEST_CASE("run totals follow the closed-form accounting") {
  Denoiser d(tiny_denoiser());
  for (LiftMode mode : {LiftMode::Sds, LiftMode::Dbp}) {
    const int N = 7;
    LiftConfig c = small_config(mode, N);
    CountingEpsModel counted(d);
    const LiftResult res = run_lift(c, counted, d.schedule());
    const RunTotals t = res.log.totals();
    CHECK(t.rounds == N);
    CHECK(t.fwd_evals == 2 * N);
    CHECK(t.bwd_evals == 0);
    CHECK(t.field_updates == (mode == LiftMode::Sds ? N : 10 * N));
    CHECK(counted.count() == t.fwd_evals);
    if (mode == LiftMode::Dbp) {
      const auto [ts, te] = t_bounds(c, d.schedule().T);
      CHECK(res.log.rounds.front().t_cur == ts);
      CHECK(res.log.rounds.back().t_cur == te);
      for (std::size_t i = 1; i < res.log.rounds.size(); ++i)
        CHECK(res.log.rounds[i].t_cur <= res.log.rounds[i - 1].t_cur);
    }
  }
}

TEST_CASE("lifting is deterministic and never touches the denoiser") {
  Denoiser d(tiny_denoiser());
  std::vector<Tensor> weights;
  for (const auto* p : d.all_params()) weights.push_back(p->value);
  LiftConfig c = small_config(LiftMode::Dbp, 5);
  c.render.stratified = true;
  const LiftResult a = run_lift(c, d, d.schedule());
  const LiftResult b = run_lift(c, d, d.schedule());
  for (std::size_t i = 0; i < a.log.rounds.size(); ++i) CHECK(a.log.rounds[i].loss == b.log.rounds[i].loss);
  CHECK(a.grid.features_param().value.vec() == b.grid.features_param().value.vec());
  c.mode = LiftMode::Sds;
  run_lift(c, d, d.schedule());
  for (std::size_t i = 0; i < weights.size(); ++i) CHECK(d.all_params()[i]->value.vec() == weights[i].vec());
}

TEST_CASE("lift configuration validation and JSON") {
  LiftConfig c;
  CHECK_NOTHROW(c.validate(256));
  nlohmann::json j = c;
  CHECK(j.at("dbp").at("M") == 10);
  const LiftConfig back = j.get<LiftConfig>();
  CHECK(back.k_start == 64);
  CHECK(back.mode == LiftMode::Dbp);
  LiftConfig bad = c;
  bad.inner_updates = 0;
  CHECK_THROWS_AS(bad.validate(256), InvalidConfig);
  bad = c;
  bad.k_end = 100;
  CHECK_THROWS_AS(bad.validate(256), InvalidConfig);
  bad = c;
  bad.t_end_frac = 0.99;
  CHECK_THROWS_AS(bad.validate(256), InvalidConfig);
  CHECK_THROWS_AS(lift_mode_from_string("vsd"), InvalidConfig);
  Denoiser d(tiny_denoiser());
  LiftConfig wrong = small_config(LiftMode::Sds);
  wrong.render.height = 5;
  CHECK_THROWS_AS(run_lift(wrong, d, d.schedule()), InvalidConfig);
}

TEST_CASE("run log JSON round trip and reconciliation") {
  RunLog log;
  log.mode = "dbp";
  log.add({200, 64, 2, 0, 10, 3.5, 0.25});
  log.add({150, 40, 2, 0, 10, 2.5, 0.125});
  nlohmann::json j = log;
  CHECK(j.at("totals").at("fwd_evals") == 4);
  CHECK(j.at("totals").at("field_updates") == 20);
  const RunLog back = j.get<RunLog>();
  CHECK(back.rounds.size() == 2u);
  CHECK(back.rounds[1].loss == 0.125);
  j["totals"]["fwd_evals"] = 5;
  CHECK_THROWS_AS(j.get<RunLog>(), InvalidInput);
}

TEST_CASE("run_lift from a checkpoint writes its artifacts") {
  const auto dir = scratch("run");
  Denoiser d(tiny_denoiser());
  const std::string ck = (dir / "m.ograd").string();
  save_denoiser(d, ck);
  LiftConfig c = small_config(LiftMode::Dbp, 3);
  c.turntable_views = 5;
  const std::string out = (dir / "lift").string();
  run_lift(c, ck, out);
  CHECK(std::filesystem::exists(dir / "lift" / "grid.ograd"));
  CHECK(std::filesystem::exists(dir / "lift" / "runlog.json"));
  CHECK(std::filesystem::exists(dir / "lift" / "lift_config.json"));
  int frames = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "lift" / "turntable")) frames += e.is_regular_file();
  CHECK(frames == 5);
  CHECK_THROWS_AS(run_lift(c, (dir / "missing.ograd").string(), out), MissingModel);
  c.class_id = 2;
  CHECK_THROWS_AS(run_lift(c, ck, out), InvalidConfig);
  std::filesystem::remove_all(dir);
}

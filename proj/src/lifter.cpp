// Copyright 2026 The OrientLab Authors
// SPDX-License-Identifier: Apache-2.0
#include "orient/lifter.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "orient/errors.hpp"
#include "orient/rng.hpp"

namespace orient {

using tg::Tape;
using tg::Tensor;
using tg::Var;

std::string to_string(LiftMode m) { return m == LiftMode::Sds ? "sds" : "dbp"; }

LiftMode lift_mode_from_string(const std::string& s) {
  if (s == "sds") return LiftMode::Sds;
  if (s == "dbp") return LiftMode::Dbp;
  throw InvalidConfig("unknown lift mode '" + s + "' (expected sds or dbp)");
}

void LiftConfig::validate(int T) const {
  if (class_id < 0) throw InvalidConfig("class_id must be >= 0");
  if (rounds < 1) throw InvalidConfig("rounds must be >= 1");
  if (inner_updates < 1) throw InvalidConfig("dbp.M must be >= 1");
  if (k_end < 1 || k_start < k_end) throw InvalidConfig("dbp steps need k_start >= k_end >= 1");
  if (stride < 0) throw InvalidConfig("dbp.stride must be >= 0");
  const auto [ts, te] = t_bounds(*this, T);
  if (te < 1 || ts <= te || ts > T) throw InvalidConfig("dbp timesteps need T >= t_start > t_end >= 1");
  if (!(sds_t_min_frac > 0.0 && sds_t_min_frac <= sds_t_max_frac && sds_t_max_frac <= 1.0)) {
    throw InvalidConfig("sds timestep range must satisfy 0 < min <= max <= 1");
  }
  if (elevation_min_deg > elevation_max_deg || radius <= 0.0) throw InvalidConfig("invalid camera range");
  if (lr_features < 0.0 || lr_decoder < 0.0) throw InvalidConfig("learning rates must be >= 0");
  if (turntable_views < 2) throw InvalidConfig("turntable needs at least 2 views");
  render.validate();
}

void to_json(nlohmann::json& j, const LiftConfig& c) {
  j = nlohmann::json{
      {"class_id", c.class_id},
      {"guidance", c.guidance},
      {"rounds", c.rounds},
      {"mode", to_string(c.mode)},
      {"dbp",
       {{"M", c.inner_updates},
        {"k_start", c.k_start},
        {"k_end", c.k_end},
        {"t_start_frac", c.t_start_frac},
        {"t_end_frac", c.t_end_frac},
        {"stride", c.stride},
        {"guidance", c.dbp_guidance}}},
      {"sds", {{"t_min_frac", c.sds_t_min_frac}, {"t_max_frac", c.sds_t_max_frac}}},
      {"camera",
       {{"elevation_min_deg", c.elevation_min_deg}, {"elevation_max_deg", c.elevation_max_deg}, {"radius", c.radius}}},
      {"lr", {{"features", c.lr_features}, {"decoder", c.lr_decoder}}},
      {"grid", c.grid},
      {"render", c.render},
      {"turntable", {{"views", c.turntable_views}, {"elevation_deg", c.turntable_elevation_deg}}},
      {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, LiftConfig& c) {
  c.class_id = j.at("class_id").get<int>();
  c.guidance = j.at("guidance").get<double>();
  c.rounds = j.at("rounds").get<int>();
  c.mode = lift_mode_from_string(j.at("mode").get<std::string>());
  const auto& d = j.at("dbp");
  c.inner_updates = d.at("M").get<int>();
  c.k_start = d.at("k_start").get<int>();
  c.k_end = d.at("k_end").get<int>();
  c.t_start_frac = d.at("t_start_frac").get<double>();
  c.t_end_frac = d.at("t_end_frac").get<double>();
  c.stride = d.at("stride").get<int>();
  c.dbp_guidance = d.at("guidance").get<bool>();
  c.sds_t_min_frac = j.at("sds").at("t_min_frac").get<double>();
  c.sds_t_max_frac = j.at("sds").at("t_max_frac").get<double>();
  const auto& cam = j.at("camera");
  c.elevation_min_deg = cam.at("elevation_min_deg").get<double>();
  c.elevation_max_deg = cam.at("elevation_max_deg").get<double>();
  c.radius = cam.at("radius").get<double>();
  c.lr_features = j.at("lr").at("features").get<double>();
  c.lr_decoder = j.at("lr").at("decoder").get<double>();
  c.grid = j.at("grid").get<GridConfig>();
  c.render = j.at("render").get<RenderSettings>();
  c.turntable_views = j.at("turntable").at("views").get<int>();
  c.turntable_elevation_deg = j.at("turntable").at("elevation_deg").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
}

// --- run log ----------------------------------------------------------------

RunTotals RunLog::totals() const {
  RunTotals t;
  t.rounds = static_cast<long>(rounds.size());
  for (const auto& r : rounds) {
    t.fwd_evals += r.fwd_evals;
    t.bwd_evals += r.bwd_evals;
    t.field_updates += r.field_updates;
    t.wall_ms += r.wall_ms;
  }
  return t;
}

void to_json(nlohmann::json& j, const RunLog& log) {
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& r : log.rounds) {
    rounds.push_back({{"t_cur", r.t_cur},
                      {"step", r.step},
                      {"fwd_evals", r.fwd_evals},
                      {"bwd_evals", r.bwd_evals},
                      {"field_updates", r.field_updates},
                      {"wall_ms", r.wall_ms},
                      {"loss", r.loss}});
  }
  const RunTotals t = log.totals();
  j = nlohmann::json{{"mode", log.mode},
                     {"rounds", rounds},
                     {"totals",
                      {{"rounds", t.rounds},
                       {"fwd_evals", t.fwd_evals},
                       {"bwd_evals", t.bwd_evals},
                       {"field_updates", t.field_updates},
                       {"wall_ms", t.wall_ms}}}};
}

void from_json(const nlohmann::json& j, RunLog& log) {
  log.mode = j.value("mode", std::string{});
  log.rounds.clear();
  for (const auto& r : j.at("rounds")) {
    RoundRecord rec;
    rec.t_cur = r.at("t_cur").get<int>();
    rec.step = r.at("step").get<int>();
    rec.fwd_evals = r.at("fwd_evals").get<long>();
    rec.bwd_evals = r.at("bwd_evals").get<long>();
    rec.field_updates = r.at("field_updates").get<long>();
    rec.wall_ms = r.at("wall_ms").get<double>();
    rec.loss = r.at("loss").get<double>();
    log.rounds.push_back(rec);
  }
  if (j.contains("totals")) {
    const auto& tj = j.at("totals");
    const RunTotals t = log.totals();
    if (tj.at("fwd_evals").get<long>() != t.fwd_evals || tj.at("bwd_evals").get<long>() != t.bwd_evals ||
        tj.at("field_updates").get<long>() != t.field_updates || tj.at("rounds").get<long>() != t.rounds) {
      throw InvalidInput("run log totals disagree with its rounds");
    }
  }
}

// --- schedule and cameras ----------------------------------------------------

std::pair<int, int> t_bounds(const LiftConfig& cfg, int T) {
  return {static_cast<int>(std::lround(cfg.t_start_frac * T)), static_cast<int>(std::lround(cfg.t_end_frac * T))};
}

CameraPose sample_camera(const LiftConfig& cfg, Rng& rng) {
  const double az = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double el = deg2rad(rng.uniform(cfg.elevation_min_deg, cfg.elevation_max_deg));
  return pose_from_spherical(az, el, cfg.radius);
}

LiftState anneal_schedule(int round_index, const LiftConfig& cfg, int T) {
  if (round_index < 0 || round_index >= cfg.rounds) throw InvalidInput("round index out of range");
  const auto [ts, te] = t_bounds(cfg, T);
  const double u = cfg.rounds == 1 ? 0.0 : static_cast<double>(round_index) / (cfg.rounds - 1);
  auto geo = [u](double a, double b) { return a * std::pow(b / a, u); };
  LiftState s;
  s.t_cur = std::max(te, static_cast<int>(std::lround(geo(ts, te))));
  s.step_cur = std::max(cfg.k_end, static_cast<int>(std::lround(geo(cfg.k_start, cfg.k_end))));
  return s;
}

FieldOptimizer::FieldOptimizer(RadianceGrid& grid, const LiftConfig& cfg) {
  tg::AdamConfig f;
  f.lr = cfg.lr_features;
  tg::AdamConfig d;
  d.lr = cfg.lr_decoder;
  auto ptrs = grid.param_ptrs();
  features = tg::Adam({ptrs[0]}, f);
  decoder = tg::Adam(std::vector<tg::Parameter*>(ptrs.begin() + 1, ptrs.end()), d);
}

void FieldOptimizer::zero_grad() {
  features.zero_grad();
  decoder.zero_grad();
}

void FieldOptimizer::step() {
  features.step();
  decoder.step();
}

// --- steps ------------------------------------------------------------------

namespace {

void check_model(const EpsModel& model, const RenderSettings& r) {
  const std::size_t D = static_cast<std::size_t>(r.height) * r.width * 3;
  if (model.input_dim() != D) {
    throw InvalidConfig("render size " + std::to_string(r.height) + "x" + std::to_string(r.width) +
                        " does not match the denoiser input dimension " + std::to_string(model.input_dim()));
  }
}

Tensor row_of(const Tensor& x, std::size_t i) {
  const std::size_t D = x.dim(1);
  return Tensor({1, D}, std::vector<double>(x.vec().begin() + static_cast<long>(i * D),
                                            x.vec().begin() + static_cast<long>((i + 1) * D)));
}

// Guided noise prediction for one row; counts the rows it evaluated.
Tensor guided_eps(const EpsModel& model, const Tensor& x_t, int t, int class_id, const Quaternion& q,
                  double guidance, bool use_guidance, long& evals) {
  if (!use_guidance) {
    const int ts[] = {t};
    const int cs[] = {class_id};
    const Quaternion qs[] = {q};
    evals += 1;
    return model.predict(x_t, ts, cs, qs);
  }
  const std::size_t D = x_t.dim(1);
  Tensor both({2, D});
  std::copy(x_t.vec().begin(), x_t.vec().end(), both.vec().begin());
  std::copy(x_t.vec().begin(), x_t.vec().end(), both.vec().begin() + static_cast<long>(D));
  const int ts[] = {t, t};
  const int cs[] = {class_id, -1};
  const Quaternion qs[] = {q, q};
  evals += 2;
  const Tensor e = model.predict(both, ts, cs, qs);
  return cfg_eps(row_of(e, 0), row_of(e, 1), guidance);
}

Var to_signed(Tape& tape, Var x) {
  return tg::add(tg::scale(x, 2.0), tape.constant(Tensor::full(x.shape(), -1.0)));
}

double finite_or_throw(double v, const char* what) {
  if (!std::isfinite(v)) throw Diverged(std::string("non-finite ") + what + " during lifting");
  return v;
}

}  // namespace

RoundRecord sds_step(RadianceGrid& grid, FieldOptimizer& opt, const EpsModel& model, const NoiseSchedule& s,
                     const CameraPose& pose, const LiftConfig& cfg, Rng& rng, SdsTrace* trace) {
  check_model(model, cfg.render);
  const std::uint64_t strat = rng.next_u64();
  const int t_lo = std::max(1, static_cast<int>(std::lround(cfg.sds_t_min_frac * s.T)));
  const int t_hi = std::max(t_lo, static_cast<int>(std::lround(cfg.sds_t_max_frac * s.T)));
  const int t = rng.uniform_int(t_lo, t_hi);

  RoundRecord rec;
  rec.t_cur = t;
  opt.zero_grad();
  Tape tape;
  Var x = to_signed(tape, render_image(tape, grid, pose, cfg.render, strat, true));
  const Tensor eps = Tensor::randn(x.shape(), rng);
  const Tensor x_t = forward_noise(x.value(), t, eps, s);
  const Tensor eps_hat = guided_eps(model, x_t, t, cfg.class_id, pose.orientation, cfg.guidance, true, rec.fwd_evals);
  const double w = 1.0 - s.ab(t);
  Tensor resid(eps.shape());
  double sq = 0.0;
  for (std::size_t i = 0; i < resid.size(); ++i) {
    const double d = eps_hat[i] - eps[i];
    resid[i] = w * d;
    sq += d * d;
  }
  rec.loss = finite_or_throw(sq / static_cast<double>(resid.size()), "sds residual");
  // d/dx of sum(x * stopgrad(r)) is r, pushed through the render
  tape.backward(tg::sum(tg::mul(x, tape.constant(resid))));
  if (trace) {
    trace->t = t;
    trace->eps = eps;
    trace->eps_hat = eps_hat;
    trace->grads.clear();
    for (const auto& p : grid.params()) trace->grads.push_back(p.grad);
  }
  opt.step();
  rec.field_updates = 1;
  return rec;
}

RoundRecord dbp_round(RadianceGrid& grid, FieldOptimizer& opt, const EpsModel& model, const NoiseSchedule& s,
                      const LiftState& state, const LiftConfig& cfg, Rng& rng, Tensor* target_out) {
  check_model(model, cfg.render);
  if (state.t_cur < 1 || state.t_cur > s.T) throw InvalidTimestep("dbp round needs 1 <= T_cur <= T");
  const CameraPose pose = sample_camera(cfg, rng);
  const std::uint64_t strat = rng.next_u64();

  RoundRecord rec;
  rec.t_cur = state.t_cur;
  rec.step = state.step_cur;
  Tensor x0;
  {
    Tape tape;
    x0 = to_signed(tape, render_image(tape, grid, pose, cfg.render, strat, false)).value();
  }
  const Tensor eps = Tensor::randn(x0.shape(), rng);
  Tensor x = forward_noise(x0, state.t_cur, eps, s);
  const int t_final = std::max(state.t_cur - state.step_cur, 0);
  const int stride = cfg.stride > 0 ? cfg.stride : state.step_cur;
  Tensor target;
  for (int t = state.t_cur; t > t_final;) {
    const int t_next = std::max(t - stride, t_final);
    const Tensor eps_hat =
        guided_eps(model, x, t, cfg.class_id, pose.orientation, cfg.guidance, cfg.dbp_guidance, rec.fwd_evals);
    target = predict_x0(x, t, eps_hat, s);
    if (t_next > 0) x = ddim_step(x, t, t_next, eps_hat, s);
    t = t_next;
  }
  for (double& v : target.vec()) v = std::clamp(v, -1.0, 1.0);

  double loss_sum = 0.0;
  for (int m = 0; m < cfg.inner_updates; ++m) {
    opt.zero_grad();
    Tape tape;
    Var r = to_signed(tape, render_image(tape, grid, pose, cfg.render, derive_seed(strat, {static_cast<std::uint64_t>(m)}), true));
    Var loss = tg::mse(r, tape.constant(target));
    loss_sum += loss.value().item();
    tape.backward(loss);
    opt.step();
    ++rec.field_updates;
  }
  rec.loss = finite_or_throw(loss_sum / cfg.inner_updates, "dbp loss");
  if (target_out) *target_out = std::move(target);
  return rec;
}

// --- runs -------------------------------------------------------------------

LiftResult run_lift(const LiftConfig& cfg, const EpsModel& model, const NoiseSchedule& s,
                    const std::function<void(int, const RadianceGrid&, const RoundRecord&)>& on_round) {
  cfg.validate(s.T);
  check_model(model, cfg.render);
  LiftResult out{RadianceGrid(cfg.grid), RunLog{}};
  out.log.mode = to_string(cfg.mode);
  FieldOptimizer opt(out.grid, cfg);
  for (int r = 0; r < cfg.rounds; ++r) {
    Rng rng(derive_seed(cfg.seed, {0x11f7, static_cast<std::uint64_t>(r)}));
    const auto t0 = std::chrono::steady_clock::now();
    RoundRecord rec;
    if (cfg.mode == LiftMode::Sds) {
      const CameraPose pose = sample_camera(cfg, rng);
      rec = sds_step(out.grid, opt, model, s, pose, cfg, rng);
    } else {
      rec = dbp_round(out.grid, opt, model, s, anneal_schedule(r, cfg, s.T), cfg, rng);
    }
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    out.log.add(rec);
    if (on_round) on_round(r, out.grid, rec);
  }
  return out;
}

LiftResult run_lift(const LiftConfig& cfg, const std::string& checkpoint, const std::string& out_dir) {
  const auto model = load_denoiser(checkpoint);
  if (cfg.class_id >= model->config().classes) {
    throw InvalidConfig("class_id " + std::to_string(cfg.class_id) + " is not a class of the denoiser");
  }
  LiftResult res = run_lift(cfg, *model, model->schedule());
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "turntable", ec);
  if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
  res.grid.save((fs::path(out_dir) / "grid.ograd").string());
  auto write_json = [&](const std::string& name, const nlohmann::json& j) {
    std::ofstream os(fs::path(out_dir) / name, std::ios::trunc);
    if (!os) throw IoError("cannot write " + (fs::path(out_dir) / name).string());
    os << j.dump(2) << "\n";
  };
  write_json("runlog.json", res.log);
  write_json("lift_config.json", nlohmann::json{{"lift", cfg}, {"checkpoint", checkpoint}});
  RenderSettings rs = cfg.render;
  rs.stratified = false;
  const auto frames = render_turntable(res.grid, cfg.turntable_views, deg2rad(cfg.turntable_elevation_deg),
                                       cfg.radius, rs);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03zu.ppm", i);
    write_ppm((fs::path(out_dir) / "turntable" / name).string(), frames[i]);
  }
  return res;
}

}  // namespace orient

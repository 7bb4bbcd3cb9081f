// Copyright 2026 The OrientLab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Class-to-3D lifting of a radiance field under a pose-conditioned diffusion
// prior: score distillation (sds) or decoupled rounds (dbp) that jump the
// DDIM solver to a clean target and then take several MSE updates against it.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "orient/diffusion.hpp"
#include "orient/quatpose.hpp"
#include "orient/radiance.hpp"

namespace orient {

class Rng;

enum class LiftMode { Sds, Dbp };

std::string to_string(LiftMode m);
LiftMode lift_mode_from_string(const std::string& s);

struct LiftConfig {
  int class_id = 0;
  double guidance = 7.5;
  int rounds = 200;
  LiftMode mode = LiftMode::Dbp;

  // dbp
  int inner_updates = 10;  // M
  int k_start = 64;
  int k_end = 4;
  /// Fractions of T; resolved to integers by t_bounds().
  double t_start_frac = 0.98;
  double t_end_frac = 0.02;
  /// Solver stride inside a round; 0 means one jump of step_cur.
  int stride = 0;
  bool dbp_guidance = true;

  // sds timestep range as fractions of T
  double sds_t_min_frac = 0.02;
  double sds_t_max_frac = 0.98;

  // camera
  double elevation_min_deg = 10.0;
  double elevation_max_deg = 40.0;
  double radius = 2.2;

  double lr_features = 0.02;
  double lr_decoder = 0.005;

  GridConfig grid;
  RenderSettings render;
  int turntable_views = 8;
  double turntable_elevation_deg = 25.0;
  std::uint64_t seed = 0;

  void validate(int T) const;
};

void to_json(nlohmann::json& j, const LiftConfig& c);
void from_json(const nlohmann::json& j, LiftConfig& c);

struct LiftState {
  int t_cur = 0;
  int step_cur = 0;
};

struct RoundRecord {
  int t_cur = 0;
  int step = 0;
  long fwd_evals = 0;
  long bwd_evals = 0;
  long field_updates = 0;
  double wall_ms = 0.0;
  double loss = 0.0;
};

struct RunTotals {
  long rounds = 0;
  long fwd_evals = 0;
  long bwd_evals = 0;
  long field_updates = 0;
  double wall_ms = 0.0;
};

struct RunLog {
  std::string mode;
  std::vector<RoundRecord> rounds;

  void add(const RoundRecord& r) { rounds.push_back(r); }
  RunTotals totals() const;
};

void to_json(nlohmann::json& j, const RunLog& log);
/// Throws InvalidInput when stored totals disagree with the rounds.
void from_json(const nlohmann::json& j, RunLog& log);

/// Resolved integer bounds (t_start, t_end) for schedule T.
std::pair<int, int> t_bounds(const LiftConfig& cfg, int T);

/// Azimuth ~ U[0, 2pi), elevation ~ U[range], fixed radius.
CameraPose sample_camera(const LiftConfig& cfg, Rng& rng);

/// Geometric interpolation of (T_cur, step_cur) from start to end over the
/// configured rounds, floored at the end values.
LiftState anneal_schedule(int round_index, const LiftConfig& cfg, int T);

/// Optimizers for the grid: features and decoder use separate learning rates.
struct FieldOptimizer {
  tg::Adam features;
  tg::Adam decoder;

  FieldOptimizer(RadianceGrid& grid, const LiftConfig& cfg);
  void zero_grad();
  void step();
};

/// Optional view into one SDS step, for inspection and testing.
struct SdsTrace {
  int t = 0;
  tg::Tensor eps;
  tg::Tensor eps_hat;
  /// Parameter gradients as applied (before the optimizer step).
  std::vector<tg::Tensor> grads;
};

/// Renders at `pose`, noises to a random t, and applies w(t) (eps_hat - eps)
/// as the gradient of the render (in [-1, 1] space) with the denoiser held
/// fixed. w(t) = 1 - alpha_bar(t).
RoundRecord sds_step(RadianceGrid& grid, FieldOptimizer& opt, const EpsModel& model, const NoiseSchedule& s,
                     const CameraPose& pose, const LiftConfig& cfg, Rng& rng, SdsTrace* trace = nullptr);

/// One decoupled round: noise the render to T_cur, DDIM from T_cur to
/// max(T_cur - step_cur, 0), decode the clamped x0 estimate from the last
/// eps_hat, then M MSE updates of the grid toward it at the same pose.
RoundRecord dbp_round(RadianceGrid& grid, FieldOptimizer& opt, const EpsModel& model, const NoiseSchedule& s,
                      const LiftState& state, const LiftConfig& cfg, Rng& rng, tg::Tensor* target_out = nullptr);

struct LiftResult {
  RadianceGrid grid;
  RunLog log;
};

/// Runs cfg.rounds rounds against an in-memory model. The callback sees the
/// grid after each round.
LiftResult run_lift(const LiftConfig& cfg, const EpsModel& model, const NoiseSchedule& s,
                    const std::function<void(int, const RadianceGrid&, const RoundRecord&)>& on_round = {});

/// Loads the denoiser checkpoint (MissingModel when absent), runs the lift and
/// writes grid.ograd, runlog.json, lift_config.json and turntable/ frames to
/// out_dir.
LiftResult run_lift(const LiftConfig& cfg, const std::string& checkpoint, const std::string& out_dir);

}  // namespace orient

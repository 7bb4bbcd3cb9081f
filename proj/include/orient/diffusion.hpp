// Copyright 2026 The OrientLab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Pixel-space epsilon-prediction diffusion with a class token, a residual
// pose embedding, classifier-free guidance, and a deterministic DDIM solver.
//
// Images enter the diffusion flattened (HWC) and mapped from [0, 1] to
// [-1, 1]. Timesteps run 1..T; alpha_bar(0) is defined as 1.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "orient/image.hpp"
#include "orient/quatpose.hpp"
#include "orient/tensor.hpp"

namespace orient {

class Rng;
struct MultiViewDataset;

struct NoiseSchedule {
  int T = 0;
  double beta_min = 0.0;
  double beta_max = 0.0;
  std::vector<double> beta;       // index 1..T; beta[0] = 0
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // cumulative product; alpha_bar[0] = 1

  double ab(int t) const { return alpha_bar.at(static_cast<std::size_t>(t)); }
};

/// Linear beta ramp from beta_min (t = 1) to beta_max (t = T).
NoiseSchedule make_schedule(int T, double beta_min, double beta_max);

/// The desk-scale default: T = 256 with the usual [1e-4, 0.02] ramp of a
/// 1000-step model rescaled by 1000 / T so alpha_bar(T) stays comparable.
NoiseSchedule default_schedule(int T = 256);

/// x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps.
tg::Tensor forward_noise(const tg::Tensor& x0, int t, const tg::Tensor& eps, const NoiseSchedule& s);

/// eps_uncond + scale * (eps_cond - eps_uncond).
tg::Tensor cfg_eps(const tg::Tensor& eps_cond, const tg::Tensor& eps_uncond, double scale);

/// Deterministic DDIM update from t to t_next < t; t_next = 0 yields the
/// decoded clean estimate.
tg::Tensor ddim_step(const tg::Tensor& x_t, int t, int t_next, const tg::Tensor& eps_hat,
                     const NoiseSchedule& s);

/// x0 estimate (x_t - sqrt(1 - ab_t) eps) / sqrt(ab_t).
tg::Tensor predict_x0(const tg::Tensor& x_t, int t, const tg::Tensor& eps_hat, const NoiseSchedule& s);

/// Descending timesteps from T down to 1 (both included when steps > 1),
/// spread uniformly; the solver then finishes at 0.
std::vector<int> timestep_sequence(int T, int steps);

/// Anything that predicts noise for a batch of rows. class_ids use -1 for the
/// null (unconditional) token.
class EpsModel {
 public:
  virtual ~EpsModel() = default;
  virtual std::size_t input_dim() const = 0;
  virtual tg::Tensor predict(const tg::Tensor& x_t, std::span<const int> t,
                             std::span<const int> class_ids,
                             std::span<const Quaternion> poses) const = 0;
};

/// Wraps a model and counts per-row forward evaluations.
class CountingEpsModel : public EpsModel {
 public:
  explicit CountingEpsModel(const EpsModel& inner) : inner_(inner) {}
  std::size_t input_dim() const override { return inner_.input_dim(); }
  tg::Tensor predict(const tg::Tensor& x_t, std::span<const int> t, std::span<const int> class_ids,
                     std::span<const Quaternion> poses) const override;
  long count() const { return count_; }
  void reset() { count_ = 0; }

 private:
  const EpsModel& inner_;
  mutable long count_ = 0;
};

struct DenoiserConfig {
  int height = 16;
  int width = 16;
  int channels = 3;
  int classes = 8;
  int embed_dim = 64;
  int hidden = 256;
  int blocks = 3;
  int num_frequencies = kDefaultPoseFrequencies;
  int T = 256;
  double beta_min = 1e-4 * 1000.0 / 256.0;
  double beta_max = 0.02 * 1000.0 / 256.0;
  double guidance = 7.5;
  /// Data scale used by the fixed input/output scalings of the network.
  double sigma_data = 0.5;
  /// When false the pose projection stays at its zero initialization and is
  /// never trained (the pose-ablated model).
  bool pose_conditioning = true;
  std::uint64_t init_seed = 0;

  int input_dim() const { return height * width * channels; }
  void validate() const;
};

void to_json(nlohmann::json& j, const DenoiserConfig& c);
void from_json(const nlohmann::json& j, DenoiserConfig& c);

/// Residual MLP eps_theta(x_t, t, c', SE(q)). The fused condition
/// c' = class_embedding + pose_projection(SE(q)) plus a timestep embedding is
/// concatenated to the flattened noisy image.
class Denoiser : public EpsModel {
 public:
  explicit Denoiser(DenoiserConfig cfg);

  const DenoiserConfig& config() const { return cfg_; }
  const NoiseSchedule& schedule() const { return schedule_; }

  std::size_t input_dim() const override { return static_cast<std::size_t>(cfg_.input_dim()); }

  /// Class-token rows ([n, d]); -1 selects the learned null token.
  tg::Var class_embedding(tg::Tape& tape, std::span<const int> class_ids, bool track) const;

  /// Pose residual project(SE(q)) for each row ([n, d]); bias-free, so a zero
  /// encoding maps to zero.
  tg::Var pose_residual(tg::Tape& tape, std::span<const Quaternion> poses, bool track) const;

  /// c' = c + project(SE(q)).
  tg::Var embed_condition(tg::Tape& tape, std::span<const int> class_ids,
                          std::span<const Quaternion> poses, bool track) const;

  /// Full forward on a tape; when track is false parameters enter as
  /// constants and nothing is recorded for backward.
  tg::Var forward(tg::Tape& tape, tg::Var x_t, std::span<const int> t, std::span<const int> class_ids,
                  std::span<const Quaternion> poses, bool track) const;

  tg::Tensor predict(const tg::Tensor& x_t, std::span<const int> t, std::span<const int> class_ids,
                     std::span<const Quaternion> poses) const override;

  /// Trainable parameters (the pose projection is excluded when pose
  /// conditioning is off).
  std::vector<tg::Parameter*> trainable();
  std::vector<tg::Parameter*> all_params();
  std::vector<const tg::Parameter*> all_params() const;

  tg::Parameter& param(const std::string& name);

 private:
  DenoiserConfig cfg_;
  NoiseSchedule schedule_;
  // mutable so that const inference can stage parameters on a tape; values
  // are never modified through these paths.
  mutable std::vector<tg::Parameter> params_;
  std::size_t index_of(const std::string& name) const;
  tg::Var use(tg::Tape& tape, const std::string& name, bool track) const;
};

/// Flattens images (HWC) into rows scaled to [-1, 1].
tg::Tensor images_to_rows(const std::vector<const Image*>& images);
Image row_to_image(std::span<const double> row, int height, int width);

struct TrainBatch {
  tg::Tensor x0;  // [n, D] in [-1, 1]
  std::vector<int> class_ids;
  std::vector<Quaternion> poses;
};

/// A batch after noising: per-row t, eps and x_t, with dropped class ids set
/// to -1.
struct NoisedBatch {
  tg::Tensor x_t;
  tg::Tensor eps;
  std::vector<int> t;
  std::vector<int> class_ids;
  std::vector<Quaternion> poses;
};

NoisedBatch noise_batch(const TrainBatch& batch, const NoiseSchedule& s, Rng& rng,
                        double cfg_drop_prob);

/// Mean squared error between predicted and true noise.
tg::Var denoising_loss(tg::Var eps_hat, tg::Var eps);

/// One optimization step; returns the batch loss before the update.
double train_step(Denoiser& model, tg::Adam& opt, const TrainBatch& batch, Rng& rng,
                  double cfg_drop_prob = 0.1);

struct TrainConfig {
  long steps = 40000;
  int batch_size = 64;
  double lr = 5e-4;
  double cfg_drop_prob = 0.1;
  std::uint64_t seed = 0;
  int log_every = 100;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Step-indexed training over a dataset. Every step draws its batch and noise
/// from an RNG derived from (seed, step), so a resumed run replays exactly
/// the same sequence as an uninterrupted one.
class Trainer {
 public:
  Trainer(Denoiser& model, const MultiViewDataset& data, TrainConfig cfg);

  long step() const { return step_; }
  const TrainConfig& config() const { return cfg_; }

  /// Runs until `until` steps have been taken; the callback sees (step, loss)
  /// after every step. Throws Diverged on a non-finite loss.
  void run(long until, const std::function<void(long, double)>& on_step = {});
  double step_once();

  void save(const std::string& checkpoint_path) const;
  /// Restores model weights, optimizer moments and the step counter.
  void load(const std::string& checkpoint_path);

 private:
  Denoiser& model_;
  const MultiViewDataset& data_;
  TrainConfig cfg_;
  tg::Adam opt_;
  long step_ = 0;
  tg::Tensor rows_;  // whole dataset, [frames, D]
};

/// Weights only (no optimizer state) plus the JSON sidecar at path + ".json".
void save_denoiser(const Denoiser& model, const std::string& path, const nlohmann::json& extra = {});
/// Throws MissingModel when the checkpoint or its sidecar is absent.
std::unique_ptr<Denoiser> load_denoiser(const std::string& path);

struct SampleOptions {
  int steps = 50;
  double guidance = 7.5;
  /// Clamp the decoded x0 estimate to [-1, 1] inside every solver step.
  bool clip_x0 = true;
};

/// Runs the guided DDIM solver from x_T (one row per sample) down to t = 0 and
/// returns the raw endpoints.
tg::Tensor ddim_sample(const EpsModel& model, const NoiseSchedule& s, tg::Tensor x_T, std::span<const int> class_ids,
                       std::span<const Quaternion> poses, const SampleOptions& opts);

/// Generates one image per row of (class_ids, poses, seeds). Row i starts
/// from x_T ~ N(0, I) drawn from seeds[i]; the output is de-normalized and
/// clamped to [0, 1].
std::vector<Image> sample_images(const EpsModel& model, const NoiseSchedule& s, int height, int width,
                                 std::span<const int> class_ids, std::span<const Quaternion> poses,
                                 std::span<const std::uint64_t> seeds, const SampleOptions& opts);

Image sample(const EpsModel& model, const NoiseSchedule& s, int height, int width, int class_id,
             const Quaternion& q, std::uint64_t seed, const SampleOptions& opts);

}  // namespace orient

// Copyright 2026 The OrientLab Authors
// SPDX-License-Identifier: Apache-2.0
#include "orient/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "orient/errors.hpp"
#include "orient/rng.hpp"
#include "orient/synthscenes.hpp"

namespace orient {

using tg::Tape;
using tg::Tensor;
using tg::Var;

// --- schedule ---------------------------------------------------------------

NoiseSchedule make_schedule(int T, double beta_min, double beta_max) {
  if (T < 2) throw InvalidConfig("schedule needs T >= 2");
  if (!(beta_min > 0.0) || !(beta_min <= beta_max) || !(beta_max < 1.0)) {
    throw InvalidConfig("schedule needs 0 < beta_min <= beta_max < 1");
  }
  NoiseSchedule s;
  s.T = T;
  s.beta_min = beta_min;
  s.beta_max = beta_max;
  s.beta.assign(static_cast<std::size_t>(T) + 1, 0.0);
  s.alpha.assign(static_cast<std::size_t>(T) + 1, 1.0);
  s.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
  for (int t = 1; t <= T; ++t) {
    const double b = beta_min + (beta_max - beta_min) * (t - 1) / (T - 1);
    s.beta[t] = b;
    s.alpha[t] = 1.0 - b;
    s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - b);
  }
  return s;
}

NoiseSchedule default_schedule(int T) {
  const double k = 1000.0 / T;
  return make_schedule(T, 1e-4 * k, 0.02 * k);
}

namespace {

void check_t(int t, const NoiseSchedule& s) {
  if (t < 1 || t > s.T) {
    throw InvalidTimestep("timestep " + std::to_string(t) + " outside [1, " + std::to_string(s.T) + "]");
  }
}

void same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch(std::string(what) + ": " + tg::shape_str(a.shape()) + " vs " +
                        tg::shape_str(b.shape()));
  }
}

}  // namespace

Tensor forward_noise(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s) {
  check_t(t, s);
  same_shape(x0, eps, "forward_noise");
  const double a = std::sqrt(s.ab(t)), b = std::sqrt(1.0 - s.ab(t));
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

Tensor cfg_eps(const Tensor& eps_cond, const Tensor& eps_uncond, double scale) {
  same_shape(eps_cond, eps_uncond, "cfg_eps");
  Tensor out(eps_cond.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = eps_uncond[i] + scale * (eps_cond[i] - eps_uncond[i]);
  return out;
}

Tensor predict_x0(const Tensor& x_t, int t, const Tensor& eps_hat, const NoiseSchedule& s) {
  check_t(t, s);
  same_shape(x_t, eps_hat, "predict_x0");
  const double a = std::sqrt(s.ab(t)), b = std::sqrt(1.0 - s.ab(t));
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x_t[i] - b * eps_hat[i]) / a;
  return out;
}

Tensor ddim_step(const Tensor& x_t, int t, int t_next, const Tensor& eps_hat, const NoiseSchedule& s) {
  check_t(t, s);
  if (t_next < 0 || t_next >= t) {
    throw InvalidStep("DDIM step needs 0 <= t_next < t, got t=" + std::to_string(t) +
                      " t_next=" + std::to_string(t_next));
  }
  Tensor x0 = predict_x0(x_t, t, eps_hat, s);
  if (t_next == 0) return x0;
  const double a = std::sqrt(s.ab(t_next)), b = std::sqrt(1.0 - s.ab(t_next));
  for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = a * x0[i] + b * eps_hat[i];
  return x0;
}

std::vector<int> timestep_sequence(int T, int steps) {
  if (steps < 1 || steps > T) {
    throw InvalidConfig("solver steps must lie in [1, " + std::to_string(T) + "]");
  }
  // both ends included: the last solver step runs from t = 1 to 0, where the
  // x0 jump is almost exact
  if (steps == 1) return {T};
  std::vector<int> ts;
  for (int k = steps - 1; k >= 0; --k) {
    ts.push_back(1 + static_cast<int>((static_cast<long>(T - 1) * k) / (steps - 1)));
  }
  return ts;
}

Tensor CountingEpsModel::predict(const Tensor& x_t, std::span<const int> t,
                                 std::span<const int> class_ids,
                                 std::span<const Quaternion> poses) const {
  count_ += static_cast<long>(t.size());
  return inner_.predict(x_t, t, class_ids, poses);
}

// --- configuration ----------------------------------------------------------

void DenoiserConfig::validate() const {
  if (height < 1 || width < 1 || channels < 1) throw InvalidConfig("denoiser image size must be positive");
  if (classes < 1) throw InvalidConfig("denoiser needs at least one class");
  if (embed_dim < 1 || hidden < 1 || blocks < 0) throw InvalidConfig("invalid denoiser widths");
  if (num_frequencies < 1) throw InvalidConfig("num_frequencies must be >= 1");
  if (!(guidance >= 0.0)) throw InvalidConfig("guidance must be >= 0");
  if (!(sigma_data > 0.0)) throw InvalidConfig("sigma_data must be > 0");
  make_schedule(T, beta_min, beta_max);
}

void to_json(nlohmann::json& j, const DenoiserConfig& c) {
  j = nlohmann::json{{"height", c.height},
                     {"width", c.width},
                     {"channels", c.channels},
                     {"classes", c.classes},
                     {"embed_dim", c.embed_dim},
                     {"hidden", c.hidden},
                     {"blocks", c.blocks},
                     {"num_frequencies", c.num_frequencies},
                     {"T", c.T},
                     {"beta_min", c.beta_min},
                     {"beta_max", c.beta_max},
                     {"guidance", c.guidance},
                     {"sigma_data", c.sigma_data},
                     {"pose_conditioning", c.pose_conditioning},
                     {"init_seed", c.init_seed}};
}

void from_json(const nlohmann::json& j, DenoiserConfig& c) {
  c.height = j.at("height").get<int>();
  c.width = j.at("width").get<int>();
  c.channels = j.at("channels").get<int>();
  c.classes = j.at("classes").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.blocks = j.at("blocks").get<int>();
  c.num_frequencies = j.at("num_frequencies").get<int>();
  c.T = j.at("T").get<int>();
  c.beta_min = j.at("beta_min").get<double>();
  c.beta_max = j.at("beta_max").get<double>();
  c.guidance = j.at("guidance").get<double>();
  c.sigma_data = j.at("sigma_data").get<double>();
  c.pose_conditioning = j.at("pose_conditioning").get<bool>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"steps", c.steps},         {"batch_size", c.batch_size},
                     {"lr", c.lr},               {"cfg_drop_prob", c.cfg_drop_prob},
                     {"seed", c.seed},           {"log_every", c.log_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.steps = j.at("steps").get<long>();
  c.batch_size = j.at("batch_size").get<int>();
  c.lr = j.at("lr").get<double>();
  c.cfg_drop_prob = j.at("cfg_drop_prob").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.log_every = j.at("log_every").get<int>();
}

// --- denoiser ---------------------------------------------------------------

Denoiser::Denoiser(DenoiserConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  schedule_ = make_schedule(cfg_.T, cfg_.beta_min, cfg_.beta_max);
  Rng rng(derive_seed(cfg_.init_seed, {0xde9015e}));
  const std::size_t d = static_cast<std::size_t>(cfg_.embed_dim);
  const std::size_t h = static_cast<std::size_t>(cfg_.hidden);
  const std::size_t D = static_cast<std::size_t>(cfg_.input_dim());
  const std::size_t P = 4 * static_cast<std::size_t>(cfg_.num_frequencies);
  auto add = [&](const std::string& name, Tensor v) { params_.emplace_back(name, std::move(v)); };
  auto gauss = [&](tg::Shape s, double std) { return Tensor::randn(std::move(s), rng, std); };

  add("class_emb", gauss({static_cast<std::size_t>(cfg_.classes), d}, 1.0));
  add("null_emb", gauss({1, d}, 1.0));
  add("pose_w1", gauss({P, d}, 1.0 / std::sqrt(static_cast<double>(P))));
  add("pose_w2", Tensor({d, d}));  // zero: pose residual starts inert
  Tensor temb({static_cast<std::size_t>(cfg_.T), d});
  for (int t = 1; t <= cfg_.T; ++t) {
    for (std::size_t k = 0; k < d / 2; ++k) {
      const double freq = std::pow(1000.0, -2.0 * k / static_cast<double>(d));
      temb[(t - 1) * d + 2 * k] = std::sin(t * freq);
      temb[(t - 1) * d + 2 * k + 1] = std::cos(t * freq);
    }
  }
  add("time_emb", temb);
  add("in_w", gauss({D + d, h}, 1.0 / std::sqrt(static_cast<double>(D + d))));
  add("in_b", Tensor({h}));
  for (int b = 0; b < cfg_.blocks; ++b) {
    add("blk" + std::to_string(b) + "_w", gauss({h, h}, 1.0 / std::sqrt(static_cast<double>(h))));
    add("blk" + std::to_string(b) + "_b", Tensor({h}));
  }
  add("out_w", gauss({h, D}, 1.0 / std::sqrt(static_cast<double>(h))));
  add("out_b", Tensor({D}));
  if (!cfg_.pose_conditioning) {
    param("pose_w1").requires_grad = false;
    param("pose_w2").requires_grad = false;
  }
}

std::size_t Denoiser::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return i;
  throw InvalidInput("denoiser has no parameter '" + name + "'");
}

tg::Parameter& Denoiser::param(const std::string& name) { return params_[index_of(name)]; }

Var Denoiser::use(Tape& tape, const std::string& name, bool track) const {
  auto& p = params_[index_of(name)];
  return track ? tape.param(p) : tape.constant(p.value);
}

std::vector<tg::Parameter*> Denoiser::trainable() {
  std::vector<tg::Parameter*> out;
  for (auto& p : params_)
    if (p.requires_grad) out.push_back(&p);
  return out;
}

std::vector<tg::Parameter*> Denoiser::all_params() {
  std::vector<tg::Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const tg::Parameter*> Denoiser::all_params() const {
  std::vector<const tg::Parameter*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

Var Denoiser::class_embedding(Tape& tape, std::span<const int> class_ids, bool track) const {
  Var table = use(tape, "class_emb", track);
  Var null = use(tape, "null_emb", track);
  const std::size_t d = static_cast<std::size_t>(cfg_.embed_dim);
  const std::size_t n = class_ids.size();
  if (n == 0) throw ShapeMismatch("empty condition batch");
  std::vector<int> ids(class_ids.begin(), class_ids.end());
  for (int c : ids) {
    if (c < -1 || c >= cfg_.classes) throw InvalidInput("class id " + std::to_string(c) + " out of range");
  }
  Tensor out({n, d});
  const auto& tv = table.value();
  const auto& nv = null.value();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k)
      out[i * d + k] = ids[i] < 0 ? nv[k] : tv[static_cast<std::size_t>(ids[i]) * d + k];
  }
  const std::size_t tid = table.id, nid = null.id;
  return tape.record(std::move(out), {tid, nid}, [ids, d, tid, nid](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_buffer(self);
    const bool t_req = tp.requires_grad(tid), n_req = tp.requires_grad(nid);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < 0) {
        if (!n_req) continue;
        Tensor& gn = tp.grad_buffer(nid);
        for (std::size_t k = 0; k < d; ++k) gn[k] += g[i * d + k];
      } else {
        if (!t_req) continue;
        Tensor& gt = tp.grad_buffer(tid);
        for (std::size_t k = 0; k < d; ++k) gt[static_cast<std::size_t>(ids[i]) * d + k] += g[i * d + k];
      }
    }
  });
}

Var Denoiser::pose_residual(Tape& tape, std::span<const Quaternion> poses, bool track) const {
  const std::size_t P = 4 * static_cast<std::size_t>(cfg_.num_frequencies);
  Tensor enc({poses.size(), P});
  for (std::size_t i = 0; i < poses.size(); ++i) {
    const auto e = sine_encode(poses[i], cfg_.num_frequencies);
    std::copy(e.values.begin(), e.values.end(), enc.vec().begin() + static_cast<long>(i * P));
  }
  Var p = tape.constant(std::move(enc));
  return tg::matmul(tg::silu(tg::matmul(p, use(tape, "pose_w1", track))), use(tape, "pose_w2", track));
}

Var Denoiser::embed_condition(Tape& tape, std::span<const int> class_ids,
                              std::span<const Quaternion> poses, bool track) const {
  if (class_ids.size() != poses.size()) throw ShapeMismatch("class ids and poses differ in count");
  return tg::add(class_embedding(tape, class_ids, track), pose_residual(tape, poses, track));
}

Var Denoiser::forward(Tape& tape, Var x_t, std::span<const int> t, std::span<const int> class_ids,
                      std::span<const Quaternion> poses, bool track) const {
  const auto& s = x_t.shape();
  if (s.size() != 2 || s[1] != input_dim() || s[0] != t.size() || s[0] != class_ids.size() ||
      s[0] != poses.size()) {
    throw ShapeMismatch("denoiser input " + tg::shape_str(s) + " does not match model dim " +
                        std::to_string(input_dim()) + " and batch metadata");
  }
  std::vector<int> rows(t.begin(), t.end());
  for (int& r : rows) {
    check_t(r, schedule_);
    r -= 1;
  }
  // Fixed per-timestep scalings (EDM-style preconditioning) with
  // q = 1 - ab + ab * sigma_data^2:
  //   input   u   = x_t / sqrt(q)
  //   output  eps = sqrt(1 - ab) / q * x_t - sigma_data * sqrt(ab / q) * F(u, cond)
  // At high noise eps ~ x_t and at low noise eps ~ -F, so the bottlenecked
  // MLP never has to carry white noise from input to output.
  const std::size_t n = rows.size();
  const double sd2 = cfg_.sigma_data * cfg_.sigma_data;
  Tensor in_scale({n, 1}), skip({n, 1}), out_scale({n, 1});
  for (std::size_t i = 0; i < n; ++i) {
    const double ab = schedule_.ab(rows[i] + 1);
    const double q = 1.0 - ab + ab * sd2;
    in_scale[i] = 1.0 / std::sqrt(q);
    skip[i] = std::sqrt(1.0 - ab) / q;
    out_scale[i] = -cfg_.sigma_data * std::sqrt(ab / q);
  }
  Var cond = tg::add(embed_condition(tape, class_ids, poses, track),
                     tg::gather_rows(use(tape, "time_emb", track), rows));
  Var u = tg::mul(x_t, tape.constant(std::move(in_scale)));
  Var h = tg::silu(tg::add(tg::matmul(tg::concat_cols(u, cond), use(tape, "in_w", track)),
                           use(tape, "in_b", track)));
  for (int b = 0; b < cfg_.blocks; ++b) {
    const std::string pre = "blk" + std::to_string(b);
    h = tg::add(h, tg::silu(tg::add(tg::matmul(h, use(tape, pre + "_w", track)), use(tape, pre + "_b", track))));
  }
  Var f = tg::add(tg::matmul(h, use(tape, "out_w", track)), use(tape, "out_b", track));
  return tg::add(tg::mul(x_t, tape.constant(std::move(skip))),
                 tg::mul(f, tape.constant(std::move(out_scale))));
}

Tensor Denoiser::predict(const Tensor& x_t, std::span<const int> t, std::span<const int> class_ids,
                         std::span<const Quaternion> poses) const {
  Tape tape;
  Var out = forward(tape, tape.constant(x_t), t, class_ids, poses, false);
  return out.value();
}

// --- data -------------------------------------------------------------------

Tensor images_to_rows(const std::vector<const Image*>& images) {
  if (images.empty()) throw InvalidInput("no images");
  const std::size_t D = images.front()->rgb.size();
  Tensor rows({images.size(), D});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->rgb.size() != D) throw ShapeMismatch("images differ in size");
    for (std::size_t k = 0; k < D; ++k) rows[i * D + k] = 2.0 * images[i]->rgb[k] - 1.0;
  }
  return rows;
}

Image row_to_image(std::span<const double> row, int height, int width) {
  Image img(height, width);
  if (row.size() != img.rgb.size()) throw ShapeMismatch("row does not match image size");
  for (std::size_t k = 0; k < row.size(); ++k) img.rgb[k] = std::clamp(0.5 * (row[k] + 1.0), 0.0, 1.0);
  return img;
}

NoisedBatch noise_batch(const TrainBatch& batch, const NoiseSchedule& s, Rng& rng, double cfg_drop_prob) {
  const std::size_t n = batch.x0.dim(0), D = batch.x0.dim(1);
  if (n == 0 || batch.class_ids.size() != n || batch.poses.size() != n) {
    throw ShapeMismatch("training batch metadata does not match its rows");
  }
  NoisedBatch nb;
  nb.x_t = Tensor({n, D});
  nb.eps = Tensor({n, D});
  nb.poses = batch.poses;
  for (std::size_t i = 0; i < n; ++i) {
    const int t = rng.uniform_int(1, s.T);
    const bool drop = rng.bernoulli(cfg_drop_prob);
    nb.t.push_back(t);
    nb.class_ids.push_back(drop ? -1 : batch.class_ids[i]);
    const double a = std::sqrt(s.ab(t)), b = std::sqrt(1.0 - s.ab(t));
    for (std::size_t k = 0; k < D; ++k) {
      const double e = rng.normal();
      nb.eps[i * D + k] = e;
      nb.x_t[i * D + k] = a * batch.x0[i * D + k] + b * e;
    }
  }
  return nb;
}

Var denoising_loss(Var eps_hat, Var eps) { return tg::mse(eps_hat, eps); }

double train_step(Denoiser& model, tg::Adam& opt, const TrainBatch& batch, Rng& rng,
                  double cfg_drop_prob) {
  const NoisedBatch nb = noise_batch(batch, model.schedule(), rng, cfg_drop_prob);
  opt.zero_grad();
  Tape tape;
  Var eps_hat = model.forward(tape, tape.constant(nb.x_t), nb.t, nb.class_ids, nb.poses, true);
  Var loss = denoising_loss(eps_hat, tape.constant(nb.eps));
  const double value = loss.value().item();
  tape.backward(loss);
  opt.step();
  return value;
}

// --- trainer ----------------------------------------------------------------

Trainer::Trainer(Denoiser& model, const MultiViewDataset& data, TrainConfig cfg)
    : model_(model), data_(data), cfg_(cfg) {
  if (cfg_.batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
  if (!(cfg_.lr >= 0.0)) throw InvalidConfig("learning rate must be >= 0");
  if (!(cfg_.cfg_drop_prob >= 0.0 && cfg_.cfg_drop_prob <= 1.0)) {
    throw InvalidConfig("cfg_drop_prob must lie in [0, 1]");
  }
  if (data_.frames.empty()) throw InvalidInput("dataset has no frames");
  const auto& mc = model_.config();
  if (data_.frames.front().height != mc.height || data_.frames.front().width != mc.width) {
    throw InvalidConfig("dataset resolution does not match the denoiser");
  }
  for (int l : data_.labels) {
    if (l >= mc.classes) throw InvalidConfig("dataset label exceeds the denoiser class count");
  }
  std::vector<const Image*> ptrs;
  for (const auto& f : data_.frames) ptrs.push_back(&f);
  rows_ = images_to_rows(ptrs);
  tg::AdamConfig ac;
  ac.lr = cfg_.lr;
  opt_ = tg::Adam(model_.trainable(), ac);
}

double Trainer::step_once() {
  Rng rng(derive_seed(cfg_.seed, {0x7a1, static_cast<std::uint64_t>(step_)}));
  const std::size_t n = static_cast<std::size_t>(cfg_.batch_size);
  const std::size_t D = rows_.dim(1);
  TrainBatch batch;
  batch.x0 = Tensor({n, D});
  for (std::size_t i = 0; i < n; ++i) {
    const auto f = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(data_.frames.size()) - 1));
    std::copy_n(rows_.vec().begin() + static_cast<long>(f * D), D,
                batch.x0.vec().begin() + static_cast<long>(i * D));
    batch.class_ids.push_back(data_.labels[f]);
    batch.poses.push_back(data_.poses[f].orientation);
  }
  double loss = 0.0;
  try {
    loss = train_step(model_, opt_, batch, rng, cfg_.cfg_drop_prob);
  } catch (const NonFiniteValue& e) {
    throw Diverged(std::string("training step ") + std::to_string(step_) + ": " + e.what());
  }
  if (!std::isfinite(loss)) throw Diverged("non-finite loss at step " + std::to_string(step_));
  for (const auto* p : model_.trainable()) {
    if (!p->value.all_finite()) throw Diverged("non-finite weights at step " + std::to_string(step_));
  }
  ++step_;
  return loss;
}

void Trainer::run(long until, const std::function<void(long, double)>& on_step) {
  while (step_ < until) {
    const double loss = step_once();
    if (on_step) on_step(step_, loss);
  }
}

namespace {

nlohmann::json sidecar(const Denoiser& model, long step, const nlohmann::json& extra) {
  const auto& c = model.config();
  nlohmann::json j{{"format", "orient-denoiser"},
                   {"config", c},
                   {"schedule", {{"T", c.T}, {"beta_min", c.beta_min}, {"beta_max", c.beta_max}}},
                   {"classes", c.classes},
                   {"num_frequencies", c.num_frequencies},
                   {"guidance_default", c.guidance},
                   {"pose_conditioning", c.pose_conditioning},
                   {"step", step}};
  if (extra.is_object())
    for (const auto& [k, v] : extra.items()) j[k] = v;
  return j;
}

void write_sidecar(const std::string& path, const nlohmann::json& j) {
  std::ofstream os(path + ".json", std::ios::trunc);
  if (!os) throw IoError("cannot write " + path + ".json");
  os << j.dump(2) << "\n";
  if (!os) throw IoError("failed writing " + path + ".json");
}

std::vector<tg::NamedTensor> weight_tensors(const Denoiser& model) {
  std::vector<tg::NamedTensor> out;
  for (const auto* p : model.all_params()) out.push_back({p->name, p->value});
  return out;
}

}  // namespace

void Trainer::save(const std::string& path) const {
  auto tensors = weight_tensors(model_);
  const auto& params = opt_.params();
  const auto& states = opt_.states();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& st = states[i];
    const Tensor zeros(params[i]->value.shape());
    tensors.push_back({"adam.m/" + params[i]->name, st.m.size() ? st.m : zeros});
    tensors.push_back({"adam.v/" + params[i]->name, st.v.size() ? st.v : zeros});
    tensors.push_back({"adam.step/" + params[i]->name, Tensor::scalar(static_cast<double>(st.step))});
  }
  tensors.push_back({"trainer.step", Tensor::scalar(static_cast<double>(step_))});
  tg::save_checkpoint(path, tensors);
  write_sidecar(path, sidecar(model_, step_, {{"train", cfg_}}));
}

void Trainer::load(const std::string& path) {
  if (!std::filesystem::exists(path)) throw MissingModel("checkpoint " + path + " not found");
  const auto tensors = tg::load_checkpoint(path);
  for (auto* p : model_.all_params()) {
    const Tensor& v = tg::find_tensor(tensors, p->name);
    if (v.shape() != p->value.shape()) throw ShapeMismatch("checkpoint tensor " + p->name + " has wrong shape");
    p->value = v;
  }
  const auto& params = opt_.params();
  auto& states = opt_.states();
  for (std::size_t i = 0; i < params.size(); ++i) {
    states[i].m = tg::find_tensor(tensors, "adam.m/" + params[i]->name);
    states[i].v = tg::find_tensor(tensors, "adam.v/" + params[i]->name);
    states[i].step = static_cast<long>(tg::find_tensor(tensors, "adam.step/" + params[i]->name).item());
  }
  step_ = static_cast<long>(tg::find_tensor(tensors, "trainer.step").item());
}

void save_denoiser(const Denoiser& model, const std::string& path, const nlohmann::json& extra) {
  tg::save_checkpoint(path, weight_tensors(model));
  write_sidecar(path, sidecar(model, extra.is_object() ? extra.value("step", 0L) : 0L, extra));
}

std::unique_ptr<Denoiser> load_denoiser(const std::string& path) {
  if (!std::filesystem::exists(path)) throw MissingModel("denoiser checkpoint " + path + " not found");
  if (!std::filesystem::exists(path + ".json")) throw MissingModel("denoiser sidecar " + path + ".json not found");
  nlohmann::json side;
  {
    std::ifstream is(path + ".json");
    try {
      side = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw IoError("malformed sidecar " + path + ".json: " + e.what());
    }
  }
  DenoiserConfig cfg;
  try {
    cfg = side.at("config").get<DenoiserConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("sidecar " + path + ".json lacks a valid config: " + e.what());
  }
  auto model = std::make_unique<Denoiser>(cfg);
  const auto tensors = tg::load_checkpoint(path);
  for (auto* p : model->all_params()) {
    const Tensor* found = nullptr;
    for (const auto& nt : tensors)
      if (nt.name == p->name) found = &nt.value;
    if (!found) throw IoError("checkpoint " + path + " lacks tensor " + p->name);
    if (found->shape() != p->value.shape()) throw IoError("checkpoint tensor " + p->name + " has wrong shape");
    p->value = *found;
  }
  return model;
}

// --- sampling ---------------------------------------------------------------

Tensor ddim_sample(const EpsModel& model, const NoiseSchedule& s, Tensor x, std::span<const int> class_ids,
                   std::span<const Quaternion> poses, const SampleOptions& opts) {
  const std::size_t n = class_ids.size();
  const std::size_t D = model.input_dim();
  if (n == 0 || poses.size() != n || x.shape() != tg::Shape{n, D}) throw ShapeMismatch("sample batch metadata mismatch");
  const auto ts = timestep_sequence(s.T, opts.steps);
  // rows [0, n) conditional, [n, 2n) unconditional
  std::vector<int> ids(class_ids.begin(), class_ids.end());
  ids.insert(ids.end(), n, -1);
  std::vector<Quaternion> qs(poses.begin(), poses.end());
  qs.insert(qs.end(), poses.begin(), poses.end());

  for (std::size_t k = 0; k < ts.size(); ++k) {
    const int t = ts[k];
    const int t_next = k + 1 < ts.size() ? ts[k + 1] : 0;
    Tensor both({2 * n, D});
    std::copy(x.vec().begin(), x.vec().end(), both.vec().begin());
    std::copy(x.vec().begin(), x.vec().end(), both.vec().begin() + static_cast<long>(n * D));
    const std::vector<int> tv(2 * n, t);
    const Tensor pred = model.predict(both, tv, ids, qs);
    Tensor ec({n, D}), eu({n, D});
    std::copy_n(pred.vec().begin(), n * D, ec.vec().begin());
    std::copy_n(pred.vec().begin() + static_cast<long>(n * D), n * D, eu.vec().begin());
    Tensor eps = cfg_eps(ec, eu, opts.guidance);
    if (opts.clip_x0) {
      const double a = std::sqrt(s.ab(t)), b = std::sqrt(1.0 - s.ab(t));
      for (std::size_t i = 0; i < eps.size(); ++i) {
        const double x0 = std::clamp((x[i] - b * eps[i]) / a, -1.0, 1.0);
        eps[i] = (x[i] - a * x0) / b;
      }
    }
    x = ddim_step(x, t, t_next, eps, s);
  }
  return x;
}

std::vector<Image> sample_images(const EpsModel& model, const NoiseSchedule& s, int height, int width,
                                 std::span<const int> class_ids, std::span<const Quaternion> poses,
                                 std::span<const std::uint64_t> seeds, const SampleOptions& opts) {
  const std::size_t n = class_ids.size();
  const std::size_t D = model.input_dim();
  if (n == 0 || poses.size() != n || seeds.size() != n) throw ShapeMismatch("sample batch metadata mismatch");
  if (static_cast<std::size_t>(height) * width * 3 != D) throw ShapeMismatch("image size does not match model");
  Tensor x({n, D});
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(seeds[i]);
    for (std::size_t k = 0; k < D; ++k) x[i * D + k] = rng.normal();
  }
  x = ddim_sample(model, s, std::move(x), class_ids, poses, opts);
  std::vector<Image> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(row_to_image(std::span<const double>(x.vec()).subspan(i * D, D), height, width));
  return out;
}

Image sample(const EpsModel& model, const NoiseSchedule& s, int height, int width, int class_id,
             const Quaternion& q, std::uint64_t seed, const SampleOptions& opts) {
  const int ids[] = {class_id};
  const Quaternion qs[] = {q};
  const std::uint64_t seeds[] = {seed};
  return sample_images(model, s, height, width, ids, qs, seeds, opts).front();
}

}  // namespace orient

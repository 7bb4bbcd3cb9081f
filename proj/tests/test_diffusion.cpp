// Copyright 2026 The OrientLab Authors
// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "gradcheck.hpp"
#include "orient/diffusion.hpp"
#include "orient/errors.hpp"
#include "orient/rng.hpp"
#include "orient/synthscenes.hpp"

using namespace orient;
using orient::testing::grad_check;
using orient::testing::Probe;
using tg::Tensor;

namespace {

// Exact noise predictor for x0 ~ N(mu, s^2), applied per element.
class GaussianOracle : public EpsModel {
 public:
  GaussianOracle(const NoiseSchedule& s, double mu, double sd, std::size_t dim = 1)
      : s_(s), mu_(mu), sd_(sd), dim_(dim) {}
  std::size_t input_dim() const override { return dim_; }
  Tensor predict(const Tensor& x_t, std::span<const int> t, std::span<const int>,
                 std::span<const Quaternion>) const override {
    Tensor out(x_t.shape());
    for (std::size_t i = 0; i < x_t.dim(0); ++i) {
      const double ab = s_.ab(t[i]);
      const double var = ab * sd_ * sd_ + 1.0 - ab;
      for (std::size_t k = 0; k < dim_; ++k) {
        const double x = x_t[i * dim_ + k];
        out[i * dim_ + k] = std::sqrt(1.0 - ab) * (x - std::sqrt(ab) * mu_) / var;
      }
    }
    return out;
  }
  double posterior_mean(double x, int t) const {
    const double ab = s_.ab(t);
    return mu_ + std::sqrt(ab) * sd_ * sd_ * (x - std::sqrt(ab) * mu_) / (ab * sd_ * sd_ + 1.0 - ab);
  }

 private:
  const NoiseSchedule& s_;
  double mu_, sd_;
  std::size_t dim_;
};

// Returns a per-class constant for conditional rows and 0 for null rows.
class LabelModel : public EpsModel {
 public:
  explicit LabelModel(std::size_t dim) : dim_(dim) {}
  std::size_t input_dim() const override { return dim_; }
  Tensor predict(const Tensor& x_t, std::span<const int>, std::span<const int> c,
                 std::span<const Quaternion>) const override {
    Tensor out(x_t.shape());
    for (std::size_t i = 0; i < x_t.dim(0); ++i)
      for (std::size_t k = 0; k < dim_; ++k) out[i * dim_ + k] = c[i] < 0 ? 0.0 : 0.1 * (c[i] + 1);
    return out;
  }

 private:
  std::size_t dim_;
};

double ddim_solve(const EpsModel& m, const NoiseSchedule& s, double x, int steps) {
  const auto ts = timestep_sequence(s.T, steps);
  Tensor xt({1, 1}, {x});
  const int c[] = {0};
  const Quaternion q[] = {Quaternion{}};
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const int t[] = {ts[k]};
    const int tn = k + 1 < ts.size() ? ts[k + 1] : 0;
    xt = ddim_step(xt, ts[k], tn, m.predict(xt, t, c, q), s);
  }
  return xt[0];
}

DenoiserConfig tiny_config(std::uint64_t seed = 0) {
  DenoiserConfig c;
  c.height = 2;
  c.width = 2;
  c.classes = 3;
  c.embed_dim = 6;
  c.hidden = 10;
  c.blocks = 2;
  c.num_frequencies = 3;
  c.T = 20;
  c.beta_min = 0.01;
  c.beta_max = 0.2;
  c.init_seed = seed;
  return c;
}

Quaternion random_quat(Rng& rng) {
  return canonicalize({rng.normal(), rng.normal(), rng.normal(), rng.normal()});
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("orient_test_diffusion_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("schedule endpoints and monotonicity") {
  const NoiseSchedule s = default_schedule(256);
  CHECK(s.T == 256);
  CHECK(s.ab(0) == 1.0);
  CHECK(s.beta[1] == doctest::Approx(1e-4 * 1000.0 / 256.0));
  CHECK(s.beta[256] == doctest::Approx(0.02 * 1000.0 / 256.0));
  for (int t = 1; t <= s.T; ++t) CHECK(s.ab(t) < s.ab(t - 1));
  CHECK(s.ab(256) < 1e-3);
  CHECK_THROWS_AS(make_schedule(1, 0.1, 0.2), InvalidConfig);
  CHECK_THROWS_AS(make_schedule(10, 0.3, 0.2), InvalidConfig);
  CHECK_THROWS_AS(make_schedule(10, 0.0, 0.2), InvalidConfig);
}

TEST_CASE("forward noise, x0 prediction and guidance arithmetic") {
  const NoiseSchedule s = make_schedule(10, 0.05, 0.3);
  const Tensor x0({1, 3}, {0.5, -0.2, 1.0});
  const Tensor e({1, 3}, {0.1, 0.7, -1.3});
  const Tensor xt = forward_noise(x0, 4, e, s);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(xt[i] == doctest::Approx(std::sqrt(s.ab(4)) * x0[i] + std::sqrt(1 - s.ab(4)) * e[i]));
  const Tensor back = predict_x0(xt, 4, e, s);
  for (std::size_t i = 0; i < 3; ++i) CHECK(back[i] == doctest::Approx(x0[i]).epsilon(1e-12));
  CHECK_THROWS_AS(forward_noise(x0, 0, e, s), InvalidTimestep);
  CHECK_THROWS_AS(forward_noise(x0, 11, e, s), InvalidTimestep);

  const Tensor c({1, 2}, {1.0, 2.0}), u({1, 2}, {0.5, -1.0});
  CHECK(cfg_eps(c, u, 1.0).vec() == c.vec());
  CHECK(cfg_eps(c, u, 0.0).vec() == u.vec());
  const Tensor g = cfg_eps(c, u, 7.5);
  CHECK(g[0] == doctest::Approx(0.5 + 7.5 * 0.5));
  CHECK(g[1] == doctest::Approx(-1.0 + 7.5 * 3.0));
}

TEST_CASE("ddim step validation and clean decode") {
  const NoiseSchedule s = make_schedule(10, 0.05, 0.3);
  const Tensor x({1, 2}, {0.3, -0.4}), e({1, 2}, {0.2, 0.1});
  CHECK_THROWS_AS(ddim_step(x, 5, 5, e, s), InvalidStep);
  CHECK_THROWS_AS(ddim_step(x, 5, -1, e, s), InvalidStep);
  CHECK_THROWS_AS(ddim_step(x, 5, 7, e, s), InvalidStep);
  CHECK(ddim_step(x, 5, 0, e, s).vec() == predict_x0(x, 5, e, s).vec());
}

TEST_CASE("timestep sequences") {
  CHECK(timestep_sequence(10, 5) == std::vector<int>{10, 7, 5, 3, 1});
  CHECK(timestep_sequence(10, 10) == std::vector<int>{10, 9, 8, 7, 6, 5, 4, 3, 2, 1});
  CHECK(timestep_sequence(10, 1) == std::vector<int>{10});
  CHECK(timestep_sequence(256, 50).front() == 256);
  CHECK(timestep_sequence(256, 50).size() == 50u);
  CHECK_THROWS_AS(timestep_sequence(10, 0), InvalidConfig);
  CHECK_THROWS_AS(timestep_sequence(10, 11), InvalidConfig);
}

TEST_CASE("Gaussian oracle: DDIM endpoints converge at first order") {
  // The deterministic solver is a first-order method, so halving the step
  // size roughly halves the endpoint error against a fine reference.
  const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  const GaussianOracle m(s, 0.3, 0.5);
  auto worst = [&](int steps) {
    double w = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(seed);
      const double xT = rng.normal();
      w = std::max(w, std::abs(ddim_solve(m, s, xT, steps) - ddim_solve(m, s, xT, 1000)));
    }
    return w;
  };
  const double e50 = worst(50), e100 = worst(100), e500 = worst(500);
  CHECK(e50 / e100 == doctest::Approx(2.0).epsilon(0.2));
  CHECK(e500 <= 1e-2);
}

TEST_CASE("Gaussian oracle: refining the step count shrinks the discrepancy") {
  const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  const GaussianOracle m(s, 0.3, 0.5);
  double prev = 1e9;
  for (int steps : {2, 5, 10, 25, 100}) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed);
      const double xT = rng.normal();
      worst = std::max(worst, std::abs(ddim_solve(m, s, xT, steps) - ddim_solve(m, s, xT, 500)));
    }
    CHECK(worst < prev);
    prev = worst;
  }
}

TEST_CASE("point-mass oracle: one step equals two chained steps") {
  const NoiseSchedule s = make_schedule(200, 1e-3, 0.05);
  const GaussianOracle m(s, -0.2, 0.0, 3);
  Rng rng(8);
  const int c[] = {0};
  const Quaternion q[] = {Quaternion{}};
  for (int trial = 0; trial < 100; ++trial) {
    const int t = rng.uniform_int(3, 200);
    const int t1 = rng.uniform_int(1, t - 1);
    const int t2 = rng.uniform_int(0, t1 - 1);
    const Tensor x = Tensor::randn({1, 3}, rng);
    const int ta[] = {t}, tb[] = {t1};
    const Tensor one = ddim_step(x, t, t2, m.predict(x, ta, c, q), s);
    const Tensor mid = ddim_step(x, t, t1, m.predict(x, ta, c, q), s);
    const Tensor two = ddim_step(mid, t1, t2, m.predict(mid, tb, c, q), s);
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(one[k] - two[k]) <= 1e-9);
  }
}

TEST_CASE("Gaussian oracle: jumping to t_next = 0 gives the posterior mean") {
  const NoiseSchedule s = make_schedule(1000, 1e-4, 0.02);
  const GaussianOracle m(s, -0.4, 0.7);
  Rng rng(3);
  const int c[] = {0};
  const Quaternion q[] = {Quaternion{}};
  for (int trial = 0; trial < 200; ++trial) {
    const int t = rng.uniform_int(1, 1000);
    const Tensor x({1, 1}, {rng.normal()});
    const int ts[] = {t};
    const Tensor out = ddim_step(x, t, 0, m.predict(x, ts, c, q), s);
    CHECK(std::abs(out[0] - m.posterior_mean(x[0], t)) <= 1e-6);
  }
}

TEST_CASE("point-mass oracle: every step count lands on the atom") {
  const NoiseSchedule s = make_schedule(200, 1e-3, 0.05);
  const GaussianOracle m(s, 0.6, 0.0);
  for (int steps : {1, 3, 7, 50, 200}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed);
      CHECK(std::abs(ddim_solve(m, s, rng.normal(), steps) - 0.6) <= 1e-9);
    }
  }
}

TEST_CASE("noised batches have the forward-process moments") {
  const NoiseSchedule s = make_schedule(50, 0.01, 0.2);
  TrainBatch b;
  const std::size_t n = 4000;
  b.x0 = Tensor({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    b.x0[i * 2] = 0.5;
    b.x0[i * 2 + 1] = -0.5;
    b.class_ids.push_back(1);
    b.poses.push_back(Quaternion{});
  }
  Rng rng(9);
  const NoisedBatch nb = noise_batch(b, s, rng, 0.25);
  double m = 0.0, v = 0.0;
  int dropped = 0;
  for (double e : nb.eps.vec()) {
    m += e;
    v += e * e;
  }
  m /= static_cast<double>(nb.eps.size());
  v = v / static_cast<double>(nb.eps.size()) - m * m;
  for (std::size_t i = 0; i < n; ++i) {
    dropped += nb.class_ids[i] == -1;
    CHECK(nb.t[i] >= 1);
    CHECK(nb.t[i] <= 50);
    CHECK(nb.x_t[i * 2] == doctest::Approx(std::sqrt(s.ab(nb.t[i])) * 0.5 +
                                           std::sqrt(1 - s.ab(nb.t[i])) * nb.eps[i * 2]));
  }
  CHECK(std::abs(m) < 0.05);
  CHECK(std::abs(v - 1.0) < 0.05);
  CHECK(std::abs(dropped / static_cast<double>(n) - 0.25) < 0.03);
}

TEST_CASE("sampler applies guidance with conditional and null rows") {
  const NoiseSchedule s = make_schedule(10, 0.05, 0.3);
  const LabelModel m(12);
  CountingEpsModel counted(m);
  const int ids[] = {0, 2};
  const Quaternion qs[] = {Quaternion{}, Quaternion{}};
  const std::uint64_t seeds[] = {5, 6};
  SampleOptions o;
  o.steps = 5;
  o.clip_x0 = false;
  o.guidance = 3.0;
  const auto imgs = sample_images(counted, s, 2, 2, ids, qs, seeds, o);
  CHECK(imgs.size() == 2u);
  CHECK(counted.count() == 2 * 2 * 5);
  // same seed and class reproduce, different guidance changes the result
  const auto again = sample_images(m, s, 2, 2, ids, qs, seeds, o);
  CHECK(again[0].rgb == imgs[0].rgb);
  o.guidance = 1.0;
  const auto g1 = sample_images(m, s, 2, 2, ids, qs, seeds, o);
  CHECK(g1[1].rgb != imgs[1].rgb);
  for (double p : imgs[0].rgb) {
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
  const Quaternion one[] = {Quaternion{}};
  CHECK_THROWS_AS(sample_images(m, s, 2, 2, ids, one, seeds, o), ShapeMismatch);
  CHECK_THROWS_AS(sample_images(m, s, 3, 3, ids, qs, seeds, o), ShapeMismatch);
}

TEST_CASE("image rows map to [-1, 1] and back") {
  Image img(2, 2);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = i / 11.0;
  const Tensor r = images_to_rows({&img});
  CHECK(r.dim(0) == 1u);
  CHECK(r[0] == -1.0);
  CHECK(r[11] == doctest::Approx(1.0));
  const Image back = row_to_image(r.data(), 2, 2);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) CHECK(back.rgb[i] == doctest::Approx(img.rgb[i]));
}

TEST_CASE("zero pose projection makes the prediction pose-independent") {
  Denoiser d(tiny_config(2));
  Rng rng(4);
  const Tensor x = Tensor::randn({3, 12}, rng);
  const int t[] = {3, 10, 20};
  const int c[] = {0, -1, 2};
  const Quaternion q1[] = {random_quat(rng), random_quat(rng), random_quat(rng)};
  const Quaternion q2[] = {random_quat(rng), random_quat(rng), random_quat(rng)};
  CHECK(d.predict(x, t, c, q1).vec() == d.predict(x, t, c, q2).vec());
  tg::Tape tape;
  const tg::Var r = d.pose_residual(tape, q1, false);
  for (double v : r.value().vec()) CHECK(v == 0.0);
  // once the projection is non-zero, the pose matters
  for (double& v : d.param("pose_w2").value.vec()) v = rng.normal();
  CHECK(d.predict(x, t, c, q1).vec() != d.predict(x, t, c, q2).vec());
}

TEST_CASE("pose-ablated model never trains its projection") {
  DenoiserConfig cfg = tiny_config(1);
  cfg.pose_conditioning = false;
  Denoiser d(cfg);
  for (const auto* p : d.trainable()) {
    CHECK(p->name != "pose_w1");
    CHECK(p->name != "pose_w2");
  }
  CHECK(d.trainable().size() + 2 == d.all_params().size());
}

TEST_CASE("null token and class tokens are distinct rows") {
  Denoiser d(tiny_config(3));
  tg::Tape tape;
  const int c[] = {0, 1, -1};
  const tg::Var e = d.class_embedding(tape, c, false);
  const auto& v = e.value();
  CHECK(v.dim(0) == 3u);
  const std::size_t k = v.dim(1);
  for (std::size_t j = 0; j < k; ++j) {
    CHECK(v[j] == d.param("class_emb").value[j]);
    CHECK(v[2 * k + j] == d.param("null_emb").value[j]);
  }
}

TEST_CASE("denoiser gradients match finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Denoiser d(tiny_config(seed));
    Rng rng(seed + 50);
    for (double& v : d.param("pose_w2").value.vec()) v = 0.3 * rng.normal();
    const Tensor x = Tensor::randn({4, 12}, rng);
    const Tensor target = Tensor::randn({4, 12}, rng);
    const int t[] = {1, 7, 13, 20};
    const int c[] = {0, 1, 2, -1};
    const Quaternion q[] = {random_quat(rng), random_quat(rng), random_quat(rng), random_quat(rng)};
    std::vector<Probe> probes;
    for (auto* p : d.all_params())
      if (p->name != "time_emb") probes.push_back({p, {}});
    const double err = grad_check(probes, [&](tg::Tape& tape) {
      return denoising_loss(d.forward(tape, tape.constant(x), t, c, q, true), tape.constant(target));
    });
    CHECK(err <= 1e-5);
  }
}

TEST_CASE("denoiser input validation") {
  Denoiser d(tiny_config());
  const Tensor x({2, 12});
  const int t_ok[] = {1, 2}, t_bad[] = {0, 2};
  const int c[] = {0, 1};
  const Quaternion q[] = {Quaternion{}, Quaternion{}};
  CHECK_NOTHROW(d.predict(x, t_ok, c, q));
  CHECK_THROWS_AS(d.predict(x, t_bad, c, q), InvalidTimestep);
  CHECK_THROWS_AS(d.predict(Tensor({2, 11}), t_ok, c, q), ShapeMismatch);
  DenoiserConfig bad = tiny_config();
  bad.hidden = 0;
  CHECK_THROWS_AS(Denoiser{bad}, InvalidConfig);
  nlohmann::json j = tiny_config();
  const DenoiserConfig back = j.get<DenoiserConfig>();
  CHECK(back.hidden == 10);
  CHECK(back.beta_max == 0.2);
}

namespace {

MultiViewDataset small_dataset() {
  DatasetConfig dc;
  dc.classes = 2;
  dc.scenes_per_class = 1;
  dc.views = 4;
  dc.resolution = 8;
  return build_dataset(dc);
}

DenoiserConfig small_model_config() {
  DenoiserConfig c = tiny_config(0);
  c.height = 8;
  c.width = 8;
  c.classes = 2;
  c.hidden = 32;
  c.embed_dim = 8;
  return c;
}

}  // namespace

TEST_CASE("training lowers the loss and resumes exactly") {
  const MultiViewDataset ds = small_dataset();
  TrainConfig tc;
  tc.batch_size = 16;
  tc.lr = 3e-3;
  tc.seed = 5;

  Denoiser a(small_model_config());
  Trainer ta(a, ds, tc);
  std::vector<double> losses;
  ta.run(300, [&](long, double l) { losses.push_back(l); });
  double early = 0.0, late = 0.0;
  for (int i = 0; i < 30; ++i) {
    early += losses[i];
    late += losses[losses.size() - 1 - i];
  }
  CHECK(late < early);

  // 6 steps straight vs 3 + save + load + 3
  Denoiser b(small_model_config());
  Trainer tb(b, ds, tc);
  tb.run(6);
  Denoiser c(small_model_config());
  Trainer tc1(c, ds, tc);
  tc1.run(3);
  const auto dir = scratch("resume");
  const std::string path = (dir / "ck.ograd").string();
  tc1.save(path);
  Denoiser e(small_model_config());
  Trainer te(e, ds, tc);
  te.load(path);
  CHECK(te.step() == 3);
  te.run(6);
  for (std::size_t i = 0; i < b.all_params().size(); ++i)
    CHECK(b.all_params()[i]->value.vec() == e.all_params()[i]->value.vec());
  std::filesystem::remove_all(dir);
}

TEST_CASE("trainer rejects mismatched data and reports divergence") {
  const MultiViewDataset ds = small_dataset();
  Denoiser wrong(tiny_config());
  CHECK_THROWS_AS(Trainer(wrong, ds, TrainConfig{}), InvalidConfig);
  Denoiser d(small_model_config());
  TrainConfig tc;
  tc.batch_size = 4;
  tc.lr = 1e200;
  Trainer t(d, ds, tc);
  CHECK_THROWS_AS(t.run(50), Diverged);
}

TEST_CASE("denoiser checkpoints round trip with their sidecar") {
  Denoiser d(small_model_config());
  const auto dir = scratch("ckpt");
  const std::string path = (dir / "m.ograd").string();
  save_denoiser(d, path, {{"note", "x"}});
  const auto back = load_denoiser(path);
  for (std::size_t i = 0; i < d.all_params().size(); ++i)
    CHECK(d.all_params()[i]->value.vec() == back->all_params()[i]->value.vec());
  std::ifstream is(path + ".json");
  const auto side = nlohmann::json::parse(is);
  CHECK(side.at("format") == "orient-denoiser");
  CHECK(side.at("classes") == 2);
  CHECK(side.at("num_frequencies") == 3);
  CHECK(side.at("note") == "x");
  CHECK_THROWS_AS(load_denoiser((dir / "none.ograd").string()), MissingModel);
  std::filesystem::remove(path + ".json");
  CHECK_THROWS_AS(load_denoiser(path), MissingModel);
  std::filesystem::remove_all(dir);
}

// Copyright 2026 The OrientLab Authors
// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "orient/errors.hpp"
#include "orient/evalmetrics.hpp"
#include "orient/parallel.hpp"
#include "orient/rng.hpp"
#include "orient/synthscenes.hpp"

namespace orient {

using tg::Tape;
using tg::Tensor;
using tg::Var;

int azimuth_bin(double azimuth_rad, int bins) {
  const double width = 2.0 * std::numbers::pi / bins;
  double a = std::fmod(azimuth_rad + 0.5 * width, 2.0 * std::numbers::pi);
  if (a < 0.0) a += 2.0 * std::numbers::pi;
  return std::min(bins - 1, static_cast<int>(a / width));
}

double azimuth_bin_center(int bin, int bins) { return 2.0 * std::numbers::pi * bin / bins; }

void to_json(nlohmann::json& j, const ClassifierConfig& c) {
  j = nlohmann::json{{"resolution", c.resolution},
                     {"classes", c.classes},
                     {"hidden", c.hidden},
                     {"train_images", c.train_images},
                     {"heldout_images", c.heldout_images},
                     {"steps", c.steps},
                     {"batch_size", c.batch_size},
                     {"lr", c.lr},
                     {"azimuth_jitter_deg", c.azimuth_jitter_deg},
                     {"elevation_min_deg", c.elevation_min_deg},
                     {"elevation_max_deg", c.elevation_max_deg},
                     {"radius", c.radius},
                     {"seed", c.seed},
                     {"required_accuracy", c.required_accuracy},
                     {"max_attempts", c.max_attempts}};
}

void from_json(const nlohmann::json& j, ClassifierConfig& c) {
  c.resolution = j.at("resolution").get<int>();
  c.classes = j.at("classes").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.train_images = j.at("train_images").get<int>();
  c.heldout_images = j.at("heldout_images").get<int>();
  c.steps = j.at("steps").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.lr = j.at("lr").get<double>();
  c.azimuth_jitter_deg = j.at("azimuth_jitter_deg").get<double>();
  c.elevation_min_deg = j.at("elevation_min_deg").get<double>();
  c.elevation_max_deg = j.at("elevation_max_deg").get<double>();
  c.radius = j.at("radius").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.required_accuracy = j.at("required_accuracy").get<double>();
  c.max_attempts = j.at("max_attempts").get<int>();
}

Image to_resolution(const Image& img, int resolution) {
  if (img.height == resolution && img.width == resolution) return img;
  if (img.height != img.width || img.height % resolution != 0) {
    throw InvalidInput("cannot bring a " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                       " image to " + std::to_string(resolution));
  }
  return downsample(img, img.height / resolution);
}

LabelledViews render_labelled_views(const ClassifierConfig& cfg, int count, std::uint64_t seed) {
  LabelledViews out;
  out.images.resize(static_cast<std::size_t>(count));
  out.classes.resize(static_cast<std::size_t>(count));
  out.bins.resize(static_cast<std::size_t>(count));
  struct Job {
    SceneSpec scene;
    CameraPose pose;
    bool supersample;
  };
  std::vector<Job> jobs;
  Rng rng(seed);
  for (int i = 0; i < count; ++i) {
    const int cls = rng.uniform_int(0, cfg.classes - 1);
    const int bin = rng.uniform_int(0, kAzimuthBins - 1);
    const double az = azimuth_bin_center(bin) + deg2rad(rng.uniform(-cfg.azimuth_jitter_deg, cfg.azimuth_jitter_deg));
    const double el = deg2rad(rng.uniform(cfg.elevation_min_deg, cfg.elevation_max_deg));
    Rng srng(rng.next_u64());
    jobs.push_back({make_scene(cls, srng), pose_from_spherical(az, el, cfg.radius), (i % 2) == 1});
    out.classes[static_cast<std::size_t>(i)] = cls;
    out.bins[static_cast<std::size_t>(i)] = bin;
  }
  parallel_for(jobs.size(), [&](std::size_t i) {
    const auto& j = jobs[i];
    const int res = j.supersample ? 2 * cfg.resolution : cfg.resolution;
    out.images[i] = quantized(to_resolution(render_view(j.scene, j.pose, res, res), cfg.resolution));
  });
  return out;
}

// --- classifier -------------------------------------------------------------

ViewClassifier::ViewClassifier(ClassifierConfig cfg) : cfg_(cfg) {
  if (cfg_.resolution < 8 || cfg_.classes < 1 || cfg_.hidden < 1) {
    throw InvalidConfig("invalid view classifier configuration");
  }
  init(cfg_.seed);
}

void ViewClassifier::init(std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0xc1a55}));
  const std::size_t D = static_cast<std::size_t>(cfg_.resolution * cfg_.resolution * 3);
  const std::size_t h = static_cast<std::size_t>(cfg_.hidden);
  const std::size_t out = static_cast<std::size_t>(cfg_.classes + kAzimuthBins);
  params_.clear();
  params_.emplace_back("w0", Tensor::randn({D, h}, rng, std::sqrt(2.0 / D)));
  params_.emplace_back("b0", Tensor({h}));
  params_.emplace_back("w1", Tensor::randn({h, h}, rng, std::sqrt(2.0 / h)));
  params_.emplace_back("b1", Tensor({h}));
  params_.emplace_back("w2", Tensor::randn({h, out}, rng, std::sqrt(1.0 / h)));
  params_.emplace_back("b2", Tensor({out}));
}

namespace {

Tensor image_rows(const std::vector<Image>& images, std::span<const std::size_t> idx) {
  const std::size_t D = images.front().rgb.size();
  Tensor rows({idx.size(), D});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& img = images[idx[i]];
    if (img.rgb.size() != D) throw ShapeMismatch("classifier images differ in size");
    for (std::size_t k = 0; k < D; ++k) rows[i * D + k] = 2.0 * img.rgb[k] - 1.0;
  }
  return rows;
}

Var mlp(Tape& tape, std::vector<tg::Parameter>& p, Var x, bool track) {
  auto use = [&](std::size_t i) { return track ? tape.param(p[i]) : tape.constant(p[i].value); };
  Var h = tg::silu(tg::add(tg::matmul(x, use(0)), use(1)));
  h = tg::silu(tg::add(tg::matmul(h, use(2)), use(3)));
  return tg::add(tg::matmul(h, use(4)), use(5));
}

}  // namespace

Tensor ViewClassifier::logits(const std::vector<Image>& images) const {
  if (images.empty()) throw InvalidInput("no images to classify");
  std::vector<Image> scaled;
  scaled.reserve(images.size());
  for (const auto& im : images) scaled.push_back(to_resolution(im, cfg_.resolution));
  std::vector<std::size_t> idx(scaled.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Tape tape;
  auto& p = const_cast<std::vector<tg::Parameter>&>(params_);
  return mlp(tape, p, tape.constant(image_rows(scaled, idx)), false).value();
}

std::vector<ViewPrediction> ViewClassifier::predict(const std::vector<Image>& images) const {
  const Tensor lg = logits(images);
  const std::size_t C = static_cast<std::size_t>(cfg_.classes);
  const std::size_t W = C + kAzimuthBins;
  std::vector<ViewPrediction> out;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const double* row = &lg.vec()[i * W];
    ViewPrediction p;
    p.class_id = static_cast<int>(std::max_element(row, row + C) - row);
    p.azimuth_bin = static_cast<int>(std::max_element(row + C, row + W) - (row + C));
    out.push_back(p);
  }
  return out;
}

bool ViewClassifier::train_once(std::uint64_t seed) {
  init(seed);
  const auto train = render_labelled_views(cfg_, cfg_.train_images, derive_seed(seed, {1}));
  const auto held = render_labelled_views(cfg_, cfg_.heldout_images, derive_seed(seed, {2}));
  std::vector<tg::Parameter*> ptrs;
  for (auto& p : params_) ptrs.push_back(&p);
  tg::AdamConfig ac;
  ac.lr = cfg_.lr;
  tg::Adam opt(ptrs, ac);
  Rng rng(derive_seed(seed, {3}));
  const std::size_t B = static_cast<std::size_t>(cfg_.batch_size);
  const std::size_t C = static_cast<std::size_t>(cfg_.classes);
  for (int step = 0; step < cfg_.steps; ++step) {
    // cosine decay keeps the final epochs stable
    opt.config().lr = cfg_.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * step / cfg_.steps));
    std::vector<std::size_t> idx(B);
    std::vector<int> cls(B), bins(B);
    for (std::size_t i = 0; i < B; ++i) {
      idx[i] = static_cast<std::size_t>(rng.uniform_int(0, cfg_.train_images - 1));
      cls[i] = train.classes[idx[i]];
      bins[i] = train.bins[idx[i]];
    }
    Tensor x = image_rows(train.images, idx);
    // light pixel noise so small rendering differences do not matter
    for (double& v : x.vec()) v += 0.05 * rng.normal();
    opt.zero_grad();
    Tape tape;
    Var lg = mlp(tape, params_, tape.constant(std::move(x)), true);
    Var loss = tg::add(tg::softmax_cross_entropy(tg::slice_cols(lg, 0, C), cls),
                       tg::softmax_cross_entropy(tg::slice_cols(lg, C, C + kAzimuthBins), bins));
    tape.backward(loss);
    opt.step();
  }
  const auto pred = predict(held.images);
  int ok_c = 0, ok_b = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    ok_c += pred[i].class_id == held.classes[i];
    ok_b += pred[i].azimuth_bin == held.bins[i];
  }
  class_accuracy_ = static_cast<double>(ok_c) / pred.size();
  azimuth_accuracy_ = static_cast<double>(ok_b) / pred.size();
  training_seed_ = seed;
  return class_accuracy_ >= cfg_.required_accuracy && azimuth_accuracy_ >= cfg_.required_accuracy;
}

void ViewClassifier::train() {
  for (int attempt = 0; attempt < cfg_.max_attempts; ++attempt) {
    if (train_once(derive_seed(cfg_.seed, {static_cast<std::uint64_t>(attempt)}))) return;
  }
  throw Diverged("view classifier stayed below the required accuracy (class " +
                 std::to_string(class_accuracy_) + ", azimuth " + std::to_string(azimuth_accuracy_) + ")");
}

void ViewClassifier::save(const std::string& path) const {
  std::vector<tg::NamedTensor> ts;
  for (const auto& p : params_) ts.push_back({p.name, p.value});
  tg::save_checkpoint(path, ts);
  std::ofstream os(path + ".json", std::ios::trunc);
  if (!os) throw IoError("cannot write " + path + ".json");
  nlohmann::json j{{"format", "orient-view-classifier"},
                   {"config", cfg_},
                   {"class_accuracy", class_accuracy_},
                   {"azimuth_accuracy", azimuth_accuracy_},
                   {"training_seed", training_seed_}};
  os << j.dump(2) << "\n";
}

ViewClassifier ViewClassifier::load(const std::string& path) {
  if (!std::filesystem::exists(path) || !std::filesystem::exists(path + ".json")) {
    throw MissingModel("view classifier " + path + " not found");
  }
  nlohmann::json j;
  try {
    std::ifstream is(path + ".json");
    j = nlohmann::json::parse(is);
    ViewClassifier vc(j.at("config").get<ClassifierConfig>());
    vc.class_accuracy_ = j.at("class_accuracy").get<double>();
    vc.azimuth_accuracy_ = j.at("azimuth_accuracy").get<double>();
    vc.training_seed_ = j.at("training_seed").get<std::uint64_t>();
    const auto ts = tg::load_checkpoint(path);
    for (auto& p : vc.params_) {
      const Tensor& v = tg::find_tensor(ts, p.name);
      if (v.shape() != p.value.shape()) throw IoError("classifier tensor " + p.name + " has wrong shape");
      p.value = v;
    }
    return vc;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed classifier sidecar " + path + ".json: " + e.what());
  }
}

}  // namespace orient

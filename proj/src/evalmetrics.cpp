// Copyright 2026 The OrientLab Authors
// SPDX-License-Identifier: Apache-2.0
#include "orient/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "orient/diffusion.hpp"
#include "orient/errors.hpp"
#include "orient/lifter.hpp"
#include "orient/parallel.hpp"
#include "orient/radiance.hpp"
#include "orient/rng.hpp"

namespace orient {

namespace {

#include "feature_weights.inc"

struct ConvLayer {
  const double* w;  // [out, in, 3, 3]
  int in;
  int out;
  int stride;
};

constexpr ConvLayer kLayers[] = {{kConv0, 3, 8, 1}, {kConv1, 8, 16, 2}, {kConv2, 16, 16, 2}};

// Channel-major feature map.
struct FeatureMap {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;
};

FeatureMap conv_relu(const FeatureMap& x, const ConvLayer& L) {
  FeatureMap y;
  y.c = L.out;
  y.h = (x.h + L.stride - 1) / L.stride;
  y.w = (x.w + L.stride - 1) / L.stride;
  y.v.assign(static_cast<std::size_t>(y.c) * y.h * y.w, 0.0);
  for (int o = 0; o < L.out; ++o)
    for (int r = 0; r < y.h; ++r)
      for (int c = 0; c < y.w; ++c) {
        double acc = 0.0;
        for (int i = 0; i < L.in; ++i)
          for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc) {
              const int rr = r * L.stride + dr, cc = c * L.stride + dc;
              if (rr < 0 || rr >= x.h || cc < 0 || cc >= x.w) continue;
              acc += L.w[((o * L.in + i) * 3 + (dr + 1)) * 3 + (dc + 1)] *
                     x.v[(static_cast<std::size_t>(i) * x.h + rr) * x.w + cc];
            }
        y.v[(static_cast<std::size_t>(o) * y.h + r) * y.w + c] = std::max(acc, 0.0);
      }
  return y;
}

std::vector<FeatureMap> extract(const Image& img) {
  FeatureMap x;
  x.c = 3;
  x.h = img.height;
  x.w = img.width;
  x.v.resize(img.rgb.size());
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      for (int ch = 0; ch < 3; ++ch)
        x.v[(static_cast<std::size_t>(ch) * x.h + r) * x.w + c] = 2.0 * img.at(r, c, ch) - 1.0;
  std::vector<FeatureMap> out;
  for (const auto& L : kLayers) {
    x = conv_relu(x, L);
    out.push_back(x);
  }
  return out;
}

double map_distance(const std::vector<FeatureMap>& a, const std::vector<FeatureMap>& b) {
  double total = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    double s = 0.0;
    for (std::size_t i = 0; i < a[l].v.size(); ++i) {
      const double d = a[l].v[i] - b[l].v[i];
      s += d * d;
    }
    total += s / static_cast<double>(a[l].v.size());
  }
  return std::sqrt(total);
}

void check_same_size(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width || a.height < 1 || a.width < 1) {
    throw InvalidInput("frames must be non-empty and equally sized");
  }
}

}  // namespace

double feature_distance(const Image& a, const Image& b) {
  check_same_size(a, b);
  return map_distance(extract(a), extract(b));
}

double a_lpips_proxy(const std::vector<Image>& frames) {
  if (frames.size() < 2) throw InvalidInput("a_lpips_proxy needs at least two frames");
  for (const auto& f : frames) check_same_size(frames.front(), f);
  std::vector<std::vector<FeatureMap>> feats(frames.size());
  parallel_for(frames.size(), [&](std::size_t i) { feats[i] = extract(frames[i]); });
  double sum = 0.0;
  for (std::size_t i = 0; i + 1 < frames.size(); ++i) sum += map_distance(feats[i], feats[i + 1]);
  return sum / static_cast<double>(frames.size() - 1);
}

// --- score consistency --------------------------------------------------------

void to_json(nlohmann::json& j, const ScoreConsistencyOptions& o) {
  j = nlohmann::json{{"poses", o.poses},         {"elevation_deg", o.elevation_deg}, {"radius", o.radius},
                     {"t_fraction", o.t_fraction}, {"trials", o.trials},             {"seed", o.seed}};
}

void from_json(const nlohmann::json& j, ScoreConsistencyOptions& o) {
  o.poses = j.at("poses").get<int>();
  o.elevation_deg = j.at("elevation_deg").get<double>();
  o.radius = j.at("radius").get<double>();
  o.t_fraction = j.at("t_fraction").get<double>();
  o.trials = j.at("trials").get<int>();
  o.seed = j.at("seed").get<std::uint64_t>();
}

double score_consistency_views(const std::vector<Image>& views, const std::vector<double>& azimuths,
                               double elevation_rad, const EpsModel& model, const NoiseSchedule& schedule,
                               int class_id, const ScoreConsistencyOptions& opts) {
  if (views.size() < 2) throw InvalidInput("score_consistency needs at least two poses");
  if (views.size() != azimuths.size()) throw InvalidInput("one azimuth per view is required");
  if (opts.trials < 1) throw InvalidConfig("score_consistency needs at least one trial");
  const int t = std::clamp(static_cast<int>(std::lround(opts.t_fraction * schedule.T)), 1, schedule.T);
  const std::size_t n = static_cast<std::size_t>(opts.trials);
  double total = 0.0;
  for (std::size_t v = 0; v < views.size(); ++v) {
    const std::vector<const Image*> one{&views[v]};
    const tg::Tensor x0 = images_to_rows(one);
    const std::size_t D = x0.size();
    if (D != model.input_dim()) throw InvalidInput("view size does not match the denoiser");
    Rng rng(derive_seed(opts.seed, {0x5c0e, v}));
    tg::Tensor eps = tg::Tensor::randn({n, D}, rng);
    tg::Tensor x_t({n, D});
    const double a = std::sqrt(schedule.ab(t)), b = std::sqrt(1.0 - schedule.ab(t));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < D; ++k) x_t[i * D + k] = a * x0[k] + b * eps[i * D + k];
    const Quaternion q = pose_from_spherical(azimuths[v], elevation_rad, opts.radius).orientation;
    const std::vector<int> ts(n, t), cs(n, class_id);
    const std::vector<Quaternion> qs(n, q);
    const tg::Tensor eh = model.predict(x_t, ts, cs, qs);
    double s = 0.0;
    for (std::size_t k = 0; k < eh.size(); ++k) s += (eh[k] - eps[k]) * (eh[k] - eps[k]);
    total += s / static_cast<double>(n * D);
  }
  return total / static_cast<double>(views.size());
}

double score_consistency(const RadianceGrid& grid, const RenderSettings& settings, const EpsModel& model,
                         const NoiseSchedule& schedule, int class_id, const ScoreConsistencyOptions& opts) {
  if (opts.poses < 2) throw InvalidInput("score_consistency needs at least two poses");
  RenderSettings rs = settings;
  rs.stratified = false;
  std::vector<Image> views;
  std::vector<double> az;
  for (const auto& pose : uniform_hemisphere_poses(opts.poses, deg2rad(opts.elevation_deg), opts.radius)) {
    views.push_back(render_image(grid, pose, rs));
    az.push_back(pose.azimuth);
  }
  return score_consistency_views(views, az, deg2rad(opts.elevation_deg), model, schedule, class_id, opts);
}

// --- retrieval ------------------------------------------------------------------

double r_precision(const std::vector<int>& predicted, const std::vector<int>& intended) {
  if (predicted.empty()) throw InvalidInput("r_precision needs at least one image");
  if (predicted.size() != intended.size()) throw InvalidInput("prediction and label counts differ");
  std::size_t ok = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) ok += predicted[i] == intended[i];
  return static_cast<double>(ok) / static_cast<double>(predicted.size());
}

double r_precision_proxy(const std::vector<Image>& images, const std::vector<int>& intended,
                         const ViewClassifier& classifier) {
  if (images.empty()) throw InvalidInput("r_precision needs at least one image");
  std::vector<int> pred;
  for (const auto& p : classifier.predict(images)) pred.push_back(p.class_id);
  return r_precision(pred, intended);
}

// --- benchmark ------------------------------------------------------------------

const std::vector<ReferenceRow>& full_scale_reference() {
  static const std::vector<ReferenceRow> rows{{"Our-SDS", 14.0}, {"Our-Decoupled", 5.0}};
  return rows;
}

nlohmann::json bench_report(const std::vector<RunLog>& logs, const std::vector<std::string>& labels) {
  if (logs.empty()) throw InvalidInput("bench needs at least one run log");
  if (labels.size() != logs.size()) throw InvalidInput("one label per run log is required");
  auto ratio = [](double v, double base) -> nlohmann::json {
    if (base == 0.0) return v == 0.0 ? nlohmann::json(1.0) : nlohmann::json(nullptr);
    return v / base;
  };
  const RunTotals base = logs.front().totals();
  nlohmann::json runs = nlohmann::json::array();
  for (std::size_t i = 0; i < logs.size(); ++i) {
    const RunTotals t = logs[i].totals();
    runs.push_back({{"label", labels[i]},
                    {"mode", logs[i].mode},
                    {"rounds", t.rounds},
                    {"fwd_evals", t.fwd_evals},
                    {"bwd_evals", t.bwd_evals},
                    {"field_updates", t.field_updates},
                    {"wall_ms", t.wall_ms},
                    {"ratios",
                     {{"fwd_evals", ratio(static_cast<double>(t.fwd_evals), static_cast<double>(base.fwd_evals))},
                      {"field_updates",
                       ratio(static_cast<double>(t.field_updates), static_cast<double>(base.field_updates))},
                      {"wall_ms", ratio(t.wall_ms, base.wall_ms)}}}});
  }
  nlohmann::json ref = nlohmann::json::array();
  for (const auto& r : full_scale_reference()) {
    ref.push_back({{"label", r.label}, {"minutes", r.minutes}, {"scale", "full-scale reference"}});
  }
  const auto& fr = full_scale_reference();
  return {{"runs", runs}, {"reference", ref}, {"reference_minutes_ratio", fr[0].minutes / fr[1].minutes}};
}

std::string bench_table_text(const nlohmann::json& report) {
  std::ostringstream os;
  auto fmt_ratio = [](const nlohmann::json& v) {
    if (v.is_null()) return std::string("n/a");
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << v.get<double>();
    return s.str();
  };
  os << std::left << std::setw(24) << "label" << std::right << std::setw(8) << "rounds" << std::setw(12)
     << "fwd_evals" << std::setw(14) << "field_updates" << std::setw(12) << "wall_s" << std::setw(10) << "fwd_x"
     << std::setw(10) << "upd_x" << std::setw(10) << "wall_x" << "\n";
  for (const auto& r : report.at("runs")) {
    os << std::left << std::setw(24) << r.at("label").get<std::string>() << std::right << std::setw(8)
       << r.at("rounds").get<long>() << std::setw(12) << r.at("fwd_evals").get<long>() << std::setw(14)
       << r.at("field_updates").get<long>() << std::setw(12) << std::fixed << std::setprecision(2)
       << r.at("wall_ms").get<double>() / 1000.0 << std::setw(10) << fmt_ratio(r.at("ratios").at("fwd_evals"))
       << std::setw(10) << fmt_ratio(r.at("ratios").at("field_updates")) << std::setw(10)
       << fmt_ratio(r.at("ratios").at("wall_ms")) << "\n";
  }
  for (const auto& r : report.at("reference")) {
    os << std::left << std::setw(24) << r.at("label").get<std::string>() << std::right << std::setw(8) << "-"
       << std::setw(12) << "-" << std::setw(14) << "-" << std::setw(12) << std::fixed << std::setprecision(2)
       << r.at("minutes").get<double>() * 60.0 << "  (" << r.at("scale").get<std::string>() << ")\n";
  }
  os << "reference minutes ratio: " << std::fixed << std::setprecision(2)
     << report.at("reference_minutes_ratio").get<double>() << "\n";
  return os.str();
}

}  // namespace orient

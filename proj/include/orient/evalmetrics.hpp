// Copyright 2026 The OrientLab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation proxies: an oracle view classifier (class and azimuth bin), a
// random-feature perceptual distance between adjacent turntable frames, a
// prior-score consistency measure, retrieval precision, and the speed
// benchmark table.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "orient/image.hpp"
#include "orient/tensor.hpp"

namespace orient {

class EpsModel;
class RadianceGrid;
struct NoiseSchedule;
struct RenderSettings;
struct RunLog;

inline constexpr int kAzimuthBins = 8;

/// Bin b covers azimuths within 22.5 degrees of 45 * b.
int azimuth_bin(double azimuth_rad, int bins = kAzimuthBins);
double azimuth_bin_center(int bin, int bins = kAzimuthBins);

struct ClassifierConfig {
  int resolution = 16;
  int classes = 8;
  int hidden = 128;
  int train_images = 12000;
  int heldout_images = 2000;
  int steps = 4000;
  int batch_size = 128;
  double lr = 1e-3;
  /// Azimuth jitter around each bin center, degrees.
  double azimuth_jitter_deg = 15.0;
  double elevation_min_deg = 10.0;
  double elevation_max_deg = 40.0;
  double radius = 2.2;
  std::uint64_t seed = 0;
  double required_accuracy = 0.95;
  int max_attempts = 3;
};

void to_json(nlohmann::json& j, const ClassifierConfig& c);
void from_json(const nlohmann::json& j, ClassifierConfig& c);

struct ViewPrediction {
  int class_id = 0;
  int azimuth_bin = 0;
};

/// MLP over the flattened image with a class head and an azimuth-bin head.
class ViewClassifier {
 public:
  explicit ViewClassifier(ClassifierConfig cfg = {});

  /// Trains on freshly rendered scenes and measures held-out accuracy. If
  /// either head is below required_accuracy the classifier is discarded and
  /// retrained from a new seed, up to max_attempts; throws Diverged if no
  /// attempt qualifies.
  void train();

  std::vector<ViewPrediction> predict(const std::vector<Image>& images) const;

  double class_accuracy() const { return class_accuracy_; }
  double azimuth_accuracy() const { return azimuth_accuracy_; }
  std::uint64_t training_seed() const { return training_seed_; }
  const ClassifierConfig& config() const { return cfg_; }

  void save(const std::string& path) const;
  static ViewClassifier load(const std::string& path);

 private:
  ClassifierConfig cfg_;
  std::vector<tg::Parameter> params_;
  double class_accuracy_ = 0.0;
  double azimuth_accuracy_ = 0.0;
  std::uint64_t training_seed_ = 0;

  void init(std::uint64_t seed);
  bool train_once(std::uint64_t seed);
  tg::Tensor logits(const std::vector<Image>& images) const;
};

/// Renders labelled views for classifier training: azimuth = bin center +
/// U(-jitter, jitter), elevation uniform in range. Half of the images are
/// rendered at the target resolution, half at twice it and box-downsampled.
struct LabelledViews {
  std::vector<Image> images;
  std::vector<int> classes;
  std::vector<int> bins;
};
LabelledViews render_labelled_views(const ClassifierConfig& cfg, int count, std::uint64_t seed);

/// Brings an image to the classifier resolution (box downsampling).
Image to_resolution(const Image& img, int resolution);

/// Mean over adjacent frame pairs of the L2 feature distance under a
/// fixed random 3-layer convolutional extractor. Throws InvalidInput for
/// fewer than two frames or mismatched sizes.
double a_lpips_proxy(const std::vector<Image>& frames);

/// Distance between two images under the same extractor.
double feature_distance(const Image& a, const Image& b);

struct ScoreConsistencyOptions {
  int poses = 8;
  double elevation_deg = 25.0;
  double radius = 2.2;
  /// Fraction of T at which renders are noised.
  double t_fraction = 0.25;
  int trials = 8;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const ScoreConsistencyOptions& o);
void from_json(const nlohmann::json& j, ScoreConsistencyOptions& o);

/// Average over k hemisphere poses and trials of the per-element mean squared
/// residual ||eps_hat(x_t, t_eval, c, q) - eps||^2 / D for renders of the
/// field. Throws InvalidInput for fewer than two poses.
double score_consistency(const RadianceGrid& grid, const RenderSettings& settings,
                         const EpsModel& model, const NoiseSchedule& schedule, int class_id,
                         const ScoreConsistencyOptions& opts);

/// Same measure on already rendered views (one per pose).
double score_consistency_views(const std::vector<Image>& views, const std::vector<double>& azimuths,
                               double elevation_rad, const EpsModel& model,
                               const NoiseSchedule& schedule, int class_id,
                               const ScoreConsistencyOptions& opts);

/// Fraction of predictions equal to the intended labels.
double r_precision(const std::vector<int>& predicted, const std::vector<int>& intended);
double r_precision_proxy(const std::vector<Image>& images, const std::vector<int>& intended,
                         const ViewClassifier& classifier);

/// Reference rows carried from the full-scale experiment (minutes).
struct ReferenceRow {
  std::string label;
  double minutes;
};
const std::vector<ReferenceRow>& full_scale_reference();

/// Totals per run, ratios against the first run, and the reference rows.
nlohmann::json bench_report(const std::vector<RunLog>& logs, const std::vector<std::string>& labels);
std::string bench_table_text(const nlohmann::json& report);

}  // namespace orient

// Copyright 2026 The OrientLab Authors
// SPDX-License-Identifier: Apache-2.0
//
// orient: dataset generation, denoiser training, 2D sampling, lifting,
// evaluation and benchmarking from one JSON experiment config.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "orient/errors.hpp"
#include "orient/experiment.hpp"
#include "orient/image.hpp"
#include "orient/rng.hpp"

namespace fs = std::filesystem;
using namespace orient;

namespace {

enum Exit { kOk = 0, kUsage = 2, kIo = 3, kDiverged = 4 };

constexpr double kPi = 3.14159265358979323846;

struct Common {
  std::string config;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "experiment config (JSON)");
  cmd->add_option("--set", c.sets, "override a config key, e.g. lift.dbp.M=4")->take_all();
}

ExperimentConfig load(const Common& c) {
  return resolve_config(c.config.empty() ? nlohmann::json() : read_config_file(c.config), c.sets);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << "\n";
  if (!os) throw IoError("cannot write " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(path.string() + " is not valid JSON: " + e.what());
  }
}

void echo_config(const ExperimentConfig& cfg, const fs::path& dir) {
  write_json(dir / "resolved_config.json", to_document(cfg));
}

// --- gen-data -----------------------------------------------------------------

int gen_data(const Common& common, const std::string& out) {
  ExperimentConfig cfg = load(common);
  if (!out.empty()) cfg.out = out;
  RunLock lock(cfg.out);
  const MultiViewDataset ds = build_dataset(cfg.dataset, cfg.out);
  echo_config(cfg, cfg.out);
  std::printf("wrote %zu frames to %s\n", ds.frames.size(), cfg.out.c_str());
  return kOk;
}

// --- train-denoiser -------------------------------------------------------------

int train_denoiser(const Common& common, const std::string& data, const std::string& out, bool resume) {
  ExperimentConfig cfg = load(common);
  if (!out.empty()) cfg.out = out;
  const MultiViewDataset ds = load_dataset(data);
  if (ds.config.resolution != cfg.model.height || ds.config.resolution != cfg.model.width) {
    throw InvalidConfig("dataset resolution does not match diffusion.model height/width");
  }
  if (ds.config.classes > cfg.model.classes) throw InvalidConfig("dataset has more classes than the denoiser");
  RunLock lock(cfg.out);
  echo_config(cfg, cfg.out);
  const fs::path dir(cfg.out);
  const std::string state = (dir / "trainer_state.ograd").string();

  Denoiser model(cfg.model);
  Trainer trainer(model, ds, cfg.train);
  if (resume) {
    trainer.load(state);
    std::printf("resumed at step %ld\n", trainer.step());
  }
  std::ofstream log(dir / "loss.csv", resume ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot write " + (dir / "loss.csv").string());
  if (!resume) log << "step,loss\n";
  double acc = 0.0;
  int count = 0;
  const int every = std::max(1, cfg.train.log_every);
  trainer.run(cfg.train.steps, [&](long step, double loss) {
    acc += loss;
    ++count;
    if (step % every == 0) {
      std::printf("step %ld loss %.6f\n", step, acc / count);
      std::fflush(stdout);
      log << step << "," << acc / count << "\n";
      acc = 0.0;
      count = 0;
    }
  });
  trainer.save(state);
  save_denoiser(model, (dir / "denoiser.ograd").string(), {{"step", trainer.step()}});
  std::printf("saved %s at step %ld\n", (dir / "denoiser.ograd").c_str(), trainer.step());
  return kOk;
}

// --- sample-2d ------------------------------------------------------------------

std::vector<double> parse_azimuths(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InvalidConfig("bad azimuth '" + item + "'");
    }
  }
  if (out.empty()) throw InvalidConfig("no azimuths given");
  return out;
}

int sample_2d(const Common& common, const std::string& ckpt, int class_id, const std::string& azimuths,
              const std::optional<std::uint64_t>& seed, const std::string& out) {
  ExperimentConfig cfg = load(common);
  if (!out.empty()) cfg.out = out;
  const auto az = parse_azimuths(azimuths);
  const auto model = load_denoiser(ckpt);
  const auto& mc = model->config();
  if (class_id < 0 || class_id >= mc.classes) {
    throw InvalidConfig("class " + std::to_string(class_id) + " is not in [0, " + std::to_string(mc.classes) + ")");
  }
  RunLock lock(cfg.out);
  echo_config(cfg, cfg.out);
  const std::uint64_t s = seed.value_or(cfg.seed);
  std::vector<int> classes(az.size(), class_id);
  std::vector<Quaternion> poses;
  // one shared starting noise, so the images differ only by the pose
  std::vector<std::uint64_t> seeds(az.size(), s);
  for (double a : az) poses.push_back(pose_from_spherical(deg2rad(a), deg2rad(cfg.sample.elevation_deg), cfg.sample.radius).orientation);
  SampleOptions so;
  so.steps = cfg.sample.steps;
  so.guidance = cfg.sample.guidance;
  so.clip_x0 = cfg.sample.clip_x0;
  const auto images = sample_images(*model, model->schedule(), mc.height, mc.width, classes, poses, seeds, so);
  const fs::path dir(cfg.out);
  for (std::size_t i = 0; i < images.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof name, "az_%03ld.ppm", std::lround(az[i]));
    write_ppm((dir / name).string(), images[i]);
  }
  write_ppm((dir / "sheet.ppm").string(), tile_horizontal(images));
  std::printf("wrote %zu images and sheet.ppm to %s\n", images.size(), cfg.out.c_str());
  return kOk;
}

// --- lift -------------------------------------------------------------------------

int lift(const Common& common, const std::string& ckpt, const std::optional<int>& class_id,
         const std::string& mode, const std::string& out) {
  ExperimentConfig cfg = load(common);
  if (!out.empty()) cfg.out = out;
  if (class_id) cfg.lift.class_id = *class_id;
  if (!mode.empty()) cfg.lift.mode = lift_mode_from_string(mode);
  RunLock lock(cfg.out);
  echo_config(cfg, cfg.out);
  const LiftResult res = run_lift(cfg.lift, ckpt, cfg.out);
  const RunTotals t = res.log.totals();
  std::printf("%s: %ld rounds, %ld denoiser forwards, %ld field updates, %.1f s\n", res.log.mode.c_str(), t.rounds,
              t.fwd_evals, t.field_updates, t.wall_ms / 1000.0);
  return kOk;
}

// --- eval -------------------------------------------------------------------------

std::vector<Image> read_turntable(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("missing turntable directory " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".ppm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Image> frames;
  for (const auto& f : files) frames.push_back(read_ppm(f.string()));
  if (frames.size() < 2) throw IoError("turntable in " + dir.string() + " has fewer than two frames");
  return frames;
}

ViewClassifier obtain_classifier(const ExperimentConfig& cfg, const std::string& path) {
  if (fs::exists(path) && fs::exists(path + ".json")) return ViewClassifier::load(path);
  std::printf("training view classifier (%s)\n", path.c_str());
  std::fflush(stdout);
  ViewClassifier clf(cfg.classifier);
  clf.train();
  clf.save(path);
  return clf;
}

int eval(const Common& common, const std::string& run_dir, const std::string& data, std::string out,
         const std::optional<int>& reference_scene, std::string ckpt, std::string classifier_path) {
  ExperimentConfig cfg = load(common);
  if (out.empty()) out = reference_scene ? cfg.out : run_dir;
  if (classifier_path.empty()) classifier_path = (fs::path(data) / "view_classifier.ograd").string();
  if (!fs::is_directory(data)) throw IoError("dataset directory " + data + " does not exist");

  std::vector<Image> frames;
  int class_id = 0;
  double elevation = 0.0, radius = cfg.lift.radius;
  nlohmann::json run;
  std::unique_ptr<RadianceGrid> grid;
  RenderSettings rs = cfg.render;
  if (reference_scene) {
    const MultiViewDataset ds = load_dataset(data);
    const int s = *reference_scene;
    if (s < 0 || s >= static_cast<int>(ds.scenes.size())) throw InvalidConfig("reference scene out of range");
    class_id = ds.labels[ds.frame_index(s, 0)];
    elevation = deg2rad(cfg.lift.turntable_elevation_deg);
    for (const auto& pose : uniform_hemisphere_poses(cfg.lift.turntable_views, elevation, radius)) {
      frames.push_back(quantized(render_view(ds.scenes[s], pose, ds.config.resolution, ds.config.resolution)));
    }
    run = {{"kind", "reference"}, {"scene", s}};
    if (ckpt.empty()) throw InvalidConfig("--ckpt is required with --reference-scene");
  } else {
    const fs::path dir(run_dir);
    const nlohmann::json lc = read_json(dir / "lift_config.json");
    const LiftConfig lift_cfg = lc.at("lift").get<LiftConfig>();
    class_id = lift_cfg.class_id;
    elevation = deg2rad(lift_cfg.turntable_elevation_deg);
    radius = lift_cfg.radius;
    rs = lift_cfg.render;
    if (ckpt.empty()) ckpt = lc.at("checkpoint").get<std::string>();
    frames = read_turntable(dir / "turntable");
    if (!fs::exists(dir / "grid.ograd")) throw IoError("missing " + (dir / "grid.ograd").string());
    grid = std::make_unique<RadianceGrid>(RadianceGrid::load((dir / "grid.ograd").string()));
    run = {{"kind", "lift"}, {"run_dir", run_dir}, {"lift", lc.at("lift")}};
  }
  const auto model = load_denoiser(ckpt);
  const ViewClassifier clf = obtain_classifier(cfg, classifier_path);

  const double lp = a_lpips_proxy(frames);
  ScoreConsistencyOptions so = cfg.score;
  so.radius = radius;
  double sc = 0.0;
  if (grid) {
    rs.stratified = false;
    sc = score_consistency(*grid, rs, *model, model->schedule(), class_id, so);
  } else {
    std::vector<double> az;
    for (std::size_t j = 0; j < frames.size(); ++j) az.push_back(2.0 * kPi * static_cast<double>(j) / frames.size());
    so.poses = static_cast<int>(frames.size());
    sc = score_consistency_views(frames, az, elevation, *model, model->schedule(), class_id, so);
  }
  std::vector<Image> small;
  for (const auto& f : frames) small.push_back(to_resolution(f, clf.config().resolution));
  const auto pred = clf.predict(small);
  std::vector<int> predicted, intended(frames.size(), class_id);
  nlohmann::json per_frame = nlohmann::json::array();
  int bins_ok = 0;
  for (std::size_t j = 0; j < pred.size(); ++j) {
    const double az = 2.0 * kPi * static_cast<double>(j) / frames.size();
    predicted.push_back(pred[j].class_id);
    bins_ok += pred[j].azimuth_bin == azimuth_bin(az);
    per_frame.push_back({{"index", j},
                         {"azimuth_deg", rad2deg(az)},
                         {"predicted_class", pred[j].class_id},
                         {"predicted_azimuth_bin", pred[j].azimuth_bin}});
  }
  const double rp = r_precision(predicted, intended);
  const double az_acc = static_cast<double>(bins_ok) / pred.size();
  for (double v : {lp, sc, rp, az_acc})
    if (!std::isfinite(v)) throw NonFiniteValue("metric evaluated to a non-finite value");

  nlohmann::json report{{"schema_version", kConfigSchemaVersion},
                        {"a_lpips_proxy", lp},
                        {"score_consistency", sc},
                        {"r_precision", rp},
                        {"azimuth_accuracy", az_acc},
                        {"per_prompt",
                         nlohmann::json::array({{{"prompt", class_name(class_id)},
                                                 {"class_id", class_id},
                                                 {"r_precision", rp},
                                                 {"frames", per_frame}}})},
                        {"run", run},
                        {"checkpoint", ckpt},
                        {"classifier", {{"path", classifier_path},
                                        {"class_accuracy", clf.class_accuracy()},
                                        {"azimuth_accuracy", clf.azimuth_accuracy()}}},
                        {"config", to_document(cfg)}};
  RunLock lock(out);
  write_json(fs::path(out) / "metrics.json", report);
  std::ostringstream text;
  text << "a_lpips_proxy      " << lp << "\n"
       << "score_consistency  " << sc << "\n"
       << "r_precision        " << rp << "\n"
       << "azimuth_accuracy   " << az_acc << "\n";
  write_text(fs::path(out) / "metrics.txt", text.str());
  std::cout << text.str();
  return kOk;
}

// --- bench ------------------------------------------------------------------------

int bench(const std::vector<std::string>& inputs, std::vector<std::string> labels, const std::string& out) {
  if (inputs.empty()) throw InvalidInput("bench needs at least one run log");
  std::vector<RunLog> logs;
  bool derive_labels = labels.empty();
  for (const auto& in : inputs) {
    fs::path p(in);
    if (fs::is_directory(p)) p /= "runlog.json";
    RunLog log;
    try {
      log = read_json(p).get<RunLog>();
    } catch (const IoError& e) {
      throw InvalidInput(std::string("unreadable run log: ") + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw InvalidInput("unreadable run log " + p.string() + ": " + e.what());
    }
    if (derive_labels) labels.push_back(log.mode + ":" + p.parent_path().filename().string());
    logs.push_back(std::move(log));
  }
  const nlohmann::json report = bench_report(logs, labels);
  const std::string table = bench_table_text(report);
  std::cout << table;
  if (!out.empty()) {
    RunLock lock(out);
    write_json(fs::path(out) / "bench.json", report);
    write_text(fs::path(out) / "bench.txt", table);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"orient: pose-conditioned diffusion priors and radiance-field lifting"};
  app.require_subcommand(0, 1);
  bool version = false;
  app.add_flag("--version", version, "print the tool and config schema versions");

  Common c_gen, c_train, c_sample, c_lift, c_eval;
  std::string gen_out, train_data, train_out, sample_ckpt, sample_az = "0,90,180,270", sample_out, lift_ckpt,
      lift_mode, lift_out, eval_run, eval_data, eval_out, eval_ckpt, eval_clf, bench_out;
  bool train_resume = false;
  int sample_class = 0;
  std::optional<std::uint64_t> sample_seed;
  std::optional<int> lift_class, eval_ref;
  std::vector<std::string> bench_logs, bench_labels;

  auto* gen = app.add_subcommand("gen-data", "render the synthetic multi-view dataset");
  add_common(gen, c_gen);
  gen->add_option("--out", gen_out, "dataset directory");

  auto* train = app.add_subcommand("train-denoiser", "train the conditional denoiser");
  add_common(train, c_train);
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "run directory");
  train->add_flag("--resume", train_resume, "continue from trainer_state.ograd in the run directory");

  auto* sample = app.add_subcommand("sample-2d", "sample one image per azimuth");
  add_common(sample, c_sample);
  sample->add_option("--ckpt", sample_ckpt, "denoiser checkpoint")->required();
  sample->add_option("--class", sample_class, "class id")->required();
  sample->add_option("--azimuths", sample_az, "comma-separated azimuths in degrees");
  sample->add_option("--seed", sample_seed, "noise seed (default: config seed)");
  sample->add_option("--out", sample_out, "output directory");

  auto* lift_cmd = app.add_subcommand("lift", "fit a radiance field under the diffusion prior");
  add_common(lift_cmd, c_lift);
  lift_cmd->add_option("--ckpt", lift_ckpt, "denoiser checkpoint")->required();
  lift_cmd->add_option("--class", lift_class, "class id (default: lift.class_id)");
  lift_cmd->add_option("--mode", lift_mode, "sds or dbp (default: lift.mode)");
  lift_cmd->add_option("--out", lift_out, "run directory");

  auto* eval_cmd = app.add_subcommand("eval", "compute the metric report for a lift run");
  add_common(eval_cmd, c_eval);
  eval_cmd->add_option("--run-dir", eval_run, "lift run directory");
  eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
  eval_cmd->add_option("--out", eval_out, "report directory (default: the run directory)");
  eval_cmd->add_option("--reference-scene", eval_ref, "evaluate the ground-truth turntable of a dataset scene");
  eval_cmd->add_option("--ckpt", eval_ckpt, "denoiser used as scorer (default: the run's checkpoint)");
  eval_cmd->add_option("--classifier", eval_clf, "view classifier checkpoint (trained if missing)");

  auto* bench_cmd = app.add_subcommand("bench", "compare run logs");
  bench_cmd->add_option("--runlogs", bench_logs, "runlog.json files or run directories")->required();
  bench_cmd->add_option("--labels", bench_labels, "one label per run log");
  bench_cmd->add_option("--out", bench_out, "directory for bench.json and bench.txt");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }
  if (version) {
    std::printf("orient %s (config schema %d)\n", kToolVersion, kConfigSchemaVersion);
    return kOk;
  }
  try {
    if (*gen) return gen_data(c_gen, gen_out);
    if (*train) return train_denoiser(c_train, train_data, train_out, train_resume);
    if (*sample) return sample_2d(c_sample, sample_ckpt, sample_class, sample_az, sample_seed, sample_out);
    if (*lift_cmd) return lift(c_lift, lift_ckpt, lift_class, lift_mode, lift_out);
    if (*eval_cmd) {
      if (eval_run.empty() && !eval_ref) throw InvalidConfig("eval needs --run-dir or --reference-scene");
      return eval(c_eval, eval_run, eval_data, eval_out, eval_ref, eval_ckpt, eval_clf);
    }
    if (*bench_cmd) return bench(bench_logs, bench_labels, bench_out);
    std::cerr << app.help();
    return kUsage;
  } catch (const InvalidConfig& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const InvalidTimestep& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const MissingModel& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const Diverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDiverged;
  } catch (const NonFiniteValue& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

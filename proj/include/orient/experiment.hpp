// Copyright 2026 The OrientLab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration shared by the command-line tool: one JSON document
// with sections dataset, diffusion, field, lift and eval, plus a global seed
// and an output directory.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "orient/diffusion.hpp"
#include "orient/evalmetrics.hpp"
#include "orient/lifter.hpp"
#include "orient/radiance.hpp"
#include "orient/synthscenes.hpp"

namespace orient {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr const char* kToolVersion = "0.3.0";

struct SampleConfig {
  int steps = 50;
  double guidance = 7.5;
  bool clip_x0 = true;
  double elevation_deg = 25.0;
  double radius = 2.2;
};

void to_json(nlohmann::json& j, const SampleConfig& c);
void from_json(const nlohmann::json& j, SampleConfig& c);

struct ExperimentConfig {
  DatasetConfig dataset;
  DenoiserConfig model;
  TrainConfig train;
  SampleConfig sample;
  GridConfig grid;
  RenderSettings render;
  LiftConfig lift;  // grid, render and seed are filled from the other sections
  ClassifierConfig classifier;
  ScoreConsistencyOptions score;
  std::uint64_t seed = 0;
  std::string out = "runs/default";
};

/// Fully expanded document for a config (every key present).
nlohmann::json to_document(const ExperimentConfig& c);

/// Overlays `user` onto the defaults. Unknown keys, type changes and a
/// foreign schema_version raise InvalidConfig. `sets` are "a.b.c=value"
/// overrides applied afterwards; values parse as JSON, else as strings.
ExperimentConfig resolve_config(const nlohmann::json& user, const std::vector<std::string>& sets = {});

/// Reads a config file; a missing or malformed file raises InvalidConfig.
nlohmann::json read_config_file(const std::string& path);

/// Exclusive ownership of a run directory through a lock file. Throws
/// IoError when the lock is held by someone else.
class RunLock {
 public:
  explicit RunLock(const std::string& dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::string path_;
};

}  // namespace orient

// Copyright 2026 The OrientLab Authors
// SPDX-License-Identifier: Apache-2.0
#include "orient/experiment.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "orient/errors.hpp"

namespace orient {

void to_json(nlohmann::json& j, const SampleConfig& c) {
  j = nlohmann::json{{"steps", c.steps},
                     {"guidance", c.guidance},
                     {"clip_x0", c.clip_x0},
                     {"elevation_deg", c.elevation_deg},
                     {"radius", c.radius}};
}

void from_json(const nlohmann::json& j, SampleConfig& c) {
  c.steps = j.at("steps").get<int>();
  c.guidance = j.at("guidance").get<double>();
  c.clip_x0 = j.at("clip_x0").get<bool>();
  c.elevation_deg = j.at("elevation_deg").get<double>();
  c.radius = j.at("radius").get<double>();
}

nlohmann::json to_document(const ExperimentConfig& c) {
  nlohmann::json lift = c.lift;
  lift.erase("grid");
  lift.erase("render");
  lift.erase("seed");
  return {{"schema_version", kConfigSchemaVersion},
          {"seed", c.seed},
          {"out", c.out},
          {"dataset", c.dataset},
          {"diffusion", {{"model", c.model}, {"train", c.train}, {"sample", c.sample}}},
          {"field", {{"grid", c.grid}, {"render", c.render}}},
          {"lift", lift},
          {"eval", {{"classifier", c.classifier}, {"score", c.score}}}};
}

namespace {

bool same_kind(const nlohmann::json& def, const nlohmann::json& v) {
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_number()) return v.is_number();
  return def.type() == v.type();
}

void overlay(nlohmann::json& base, const nlohmann::json& user, const std::string& path) {
  if (!user.is_object()) throw InvalidConfig("section " + (path.empty() ? "<root>" : path) + " must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw InvalidConfig("unknown key " + where);
    nlohmann::json& slot = base[key];
    if (slot.is_object()) {
      overlay(slot, value, where);
    } else {
      if (!same_kind(slot, value)) throw InvalidConfig("key " + where + " expects " + std::string(slot.type_name()));
      slot = value;
    }
  }
}

void apply_set(nlohmann::json& doc, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) throw InvalidConfig("override '" + spec + "' is not of the form key=value");
  const std::string path = spec.substr(0, eq), text = spec.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    value = text;
  }
  // Build a nested object for the path and overlay it, so the same checks apply.
  nlohmann::json patch = value;
  std::size_t end = path.size();
  while (true) {
    const auto dot = path.rfind('.', end - 1);
    const std::string key = path.substr(dot == std::string::npos ? 0 : dot + 1,
                                        end - (dot == std::string::npos ? 0 : dot + 1));
    if (key.empty()) throw InvalidConfig("override '" + spec + "' has an empty key");
    patch = nlohmann::json{{key, patch}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  overlay(doc, patch, "");
}

}  // namespace

ExperimentConfig resolve_config(const nlohmann::json& user, const std::vector<std::string>& sets) {
  nlohmann::json doc = to_document(ExperimentConfig{});
  if (!user.is_null()) overlay(doc, user, "");
  for (const auto& s : sets) apply_set(doc, s);
  if (doc.at("schema_version") != kConfigSchemaVersion) {
    throw InvalidConfig("config schema_version " + doc.at("schema_version").dump() + " is not supported");
  }
  ExperimentConfig c;
  try {
    c.seed = doc.at("seed").get<std::uint64_t>();
    c.out = doc.at("out").get<std::string>();
    c.dataset = doc.at("dataset").get<DatasetConfig>();
    c.model = doc.at("diffusion").at("model").get<DenoiserConfig>();
    c.train = doc.at("diffusion").at("train").get<TrainConfig>();
    c.sample = doc.at("diffusion").at("sample").get<SampleConfig>();
    c.grid = doc.at("field").at("grid").get<GridConfig>();
    c.render = doc.at("field").at("render").get<RenderSettings>();
    nlohmann::json lift = doc.at("lift");
    lift["grid"] = doc.at("field").at("grid");
    lift["render"] = doc.at("field").at("render");
    lift["seed"] = c.seed;
    c.lift = lift.get<LiftConfig>();
    c.classifier = doc.at("eval").at("classifier").get<ClassifierConfig>();
    c.score = doc.at("eval").at("score").get<ScoreConsistencyOptions>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("malformed config: ") + e.what());
  }
  c.dataset.validate();
  c.model.validate();
  c.render.validate();
  if (c.sample.steps < 1 || c.sample.steps > c.model.T) throw InvalidConfig("diffusion.sample.steps out of range");
  if (c.train.steps < 0 || c.train.batch_size < 1) throw InvalidConfig("diffusion.train needs steps >= 0 and batch_size >= 1");
  return c;
}

nlohmann::json read_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InvalidConfig("cannot open config " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidConfig("config " + path + " is not valid JSON: " + e.what());
  }
}

RunLock::RunLock(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  path_ = (std::filesystem::path(dir) / ".orient.lock").string();
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    const int err = errno;
    path_.clear();
    if (err == EEXIST) throw IoError(dir + " is locked by another run (remove .orient.lock if stale)");
    throw IoError("cannot lock " + dir + ": " + std::strerror(err));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  (void)!::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunLock::~RunLock() {
  if (!path_.empty()) {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
}

}  // namespace orient

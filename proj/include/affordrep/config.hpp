#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "affordrep/affordance.hpp"
#include "affordrep/controller.hpp"
#include "affordrep/datasets.hpp"
#include "affordrep/encoder.hpp"
#include "affordrep/worldsim.hpp"

namespace affordrep {

inline constexpr const char* kConfigSchema = "affordrep-config/1";

// Schema violation; `path()` is the dotted field path, e.g. "pretrain.method[1]".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& msg)
      : std::runtime_error(path + ": " + msg), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct WeakStage {
  double fraction = 0.01;
  double sigma_target = 0.06;
  std::uint64_t seed = 0;
};

struct TestSetConfig {
  std::string map_id = "townB";
  std::int64_t steps = 4000;
  std::uint64_t seed = 1000;
};

struct PretrainStage {
  std::vector<PretrainMethod> methods{PretrainMethod::Bc};
  TrainConfig train;  // train.seed is replaced per entry of `seeds`
  std::vector<std::uint64_t> seeds{0, 1, 2};
};

struct AffordanceStage {
  AffordanceTrainConfig train;
  std::vector<std::uint64_t> seeds{0, 1, 2};
};

struct ControllerStage {
  bool tune = false;  // "gains": "tune" in the document
  PIDGains gains;
  GainGrid grid;
};

enum class DriveSource : std::uint8_t { Expert, Probe, Finetune };
const char* to_string(DriveSource s);

struct EvalStage {
  std::vector<std::string> towns{"townA", "townB"};
  std::vector<Density> densities{Density::Empty, Density::Regular, Density::Dense};
  std::vector<int> conditions{0, 1, 2, 3};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  int routes = 25;
  int step_cap = 3000;
  DriveSource driver = DriveSource::Probe;
  PretrainMethod method = PretrainMethod::Bc;  // encoder used by learned drivers
  TestSetConfig test;
};

struct ExperimentConfig {
  SimConfig sim;
  CollectConfig collect;  // collect.sim mirrors `sim`
  WeakStage weak;
  PretrainStage pretrain;
  AffordanceStage affordance;
  ControllerStage controller;
  EvalStage eval;
};

// Strict parse: unknown fields, wrong types and out-of-range values throw
// ConfigError naming the field path. Missing fields take defaults.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);

// Fully expanded document (every field present); parse_config round-trips it.
nlohmann::json to_json(const ExperimentConfig& cfg);

// Replaces every stage seed (collect, weak, pretrain, affordance, eval) by n.
void apply_seed_override(ExperimentConfig& cfg, std::uint64_t n);

// SHA-256 of the canonical (sorted-key, compact) dump of to_json(cfg).
std::string config_hash(const ExperimentConfig& cfg);
// Hash of the config fields a pipeline stage (collect, pretrain, probe,
// finetune, tune-pid, drive) depends on, including its upstream stages.
std::string stage_hash(const ExperimentConfig& cfg, const std::string& stage);

}  // namespace affordrep

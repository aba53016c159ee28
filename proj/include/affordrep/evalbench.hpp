#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "affordrep/controller.hpp"
#include "affordrep/policies.hpp"
#include "affordrep/worldsim.hpp"

namespace affordrep {

// F1 = 2TP / (2TP + FP + FN); 1 when TP = FP = FN = 0.
double f1(const std::vector<int>& preds, const std::vector<int>& gts);

enum class Regime : std::uint8_t { Left, Straight, Right };
Regime regime_of(double psi_gt);
const char* to_string(Regime r);

struct RegimeMae {
  std::optional<double> left, straight, right;  // absent when the regime is empty
  std::size_t n_left = 0, n_straight = 0, n_right = 0;
  double pooled = 0.0;
};
RegimeMae mae_by_regime(const std::vector<double>& psi_pred, const std::vector<double>& psi_gt);

struct ProbeReport {
  std::string town;
  std::uint64_t seed = 0;
  double f1_hp = 0.0, f1_hv = 0.0, f1_hr = 0.0;
  RegimeMae mae;
  double mean_f1() const { return (f1_hp + f1_hv + f1_hr) / 3.0; }
};

enum class EpisodeOutcome : std::uint8_t { Success, Collision, Offroad, Timeout };
const char* to_string(EpisodeOutcome o);

struct EpisodeRecord {
  std::size_t route = 0;
  int condition = 0;
  std::uint64_t seed = 0;
  Density density = Density::Empty;
  EpisodeOutcome outcome = EpisodeOutcome::Timeout;
  std::int64_t steps = 0;
  int lights_crossed = 0;
  int red_violations = 0;
  std::vector<std::uint8_t> events;  // flags per step
  bool operator==(const EpisodeRecord&) const = default;
};

inline constexpr int kDefaultStepCap = 3000;

EpisodeRecord run_episode(Driver& driver, WorldState scenario, int step_cap = kDefaultStepCap);

using DriverFactory = std::function<std::unique_ptr<Driver>()>;

struct SeedCell {
  std::uint64_t seed = 0;
  int episodes = 0;
  int successes = 0;
  int collisions = 0;
  int offroad = 0;
  int timeouts = 0;
  int lights_crossed = 0;
  int red_violations = 0;
  double success_pct() const { return episodes ? 100.0 * successes / episodes : 0.0; }
  double red_pct() const { return lights_crossed ? 100.0 * red_violations / lights_crossed : 0.0; }
};

struct DrivingReport {
  std::string town;
  Density density = Density::Empty;
  std::vector<SeedCell> per_seed;
  double success_mean = 0.0, success_std = 0.0;
  double red_mean = 0.0, red_std = 0.0;
};

struct SuiteSpec {
  std::shared_ptr<const RoadNetwork> network;
  std::vector<Density> densities{Density::Empty, Density::Regular, Density::Dense};
  std::vector<int> conditions{0, 1, 2, 3};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  int routes = 25;  // first n routes of the town's table
  int step_cap = kDefaultStepCap;
  int workers = 1;
};

// Conditions are assigned round-robin over routes.
std::vector<DrivingReport> nocrash_suite(const DriverFactory& factory, const SuiteSpec& spec,
                                         std::vector<EpisodeRecord>* episodes = nullptr);

// Expert (GT affordance) suite wrapped for tune_gains.
SuiteEvaluator expert_suite_evaluator(SuiteSpec spec);

// Index of the best score; ties go to the lowest index.
std::size_t aggregate_and_select(const std::vector<double>& scores);

std::string driving_csv(const std::vector<DrivingReport>& reports);
std::string driving_markdown(const std::vector<DrivingReport>& reports);

}  // namespace affordrep

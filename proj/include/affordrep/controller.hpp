#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "affordrep/worldsim.hpp"

namespace affordrep {

struct PIDGains {
  // Output of tune_gains on the townA dense suite.
  double kp = 16.0;
  double ki = 0.0;
  double kd = 0.0;
  double speed_kp = 0.6;
  double speed_ki = 0.05;
  double speed_kd = 0.0;
  double v_target = 5.556;  // 20 km/h
  double tau = 0.5;
  double i_max = 1.0;

  void validate() const;
  bool operator==(const PIDGains&) const = default;
};

struct LoopState {
  double integral = 0.0;
  double prev_error = 0.0;
  bool operator==(const LoopState&) const = default;
};

struct PIDState {
  LoopState steer;
  LoopState speed;
  bool operator==(const PIDState&) const = default;
};

// One discrete PID update: rectangle-rule integral clamped to +-i_max,
// backward-difference derivative. When `freeze` is set the integral is held.
double pid_update(LoopState& s, double error, double kp, double ki, double kd, double i_max, double dt,
                  bool freeze = false);

// Affordances may be ground-truth binaries or predicted probabilities.
std::pair<Action, PIDState> control(const Affordances& a, double speed, const PIDGains& gains, const PIDState& state,
                                    double dt);
Action control_inplace(const Affordances& a, double speed, const PIDGains& gains, PIDState& state, double dt);

bool hazard_active(const Affordances& a, double tau);

struct SuiteOutcome {
  int episodes = 0;
  int successes = 0;
  int collisions = 0;
  int red_light = 0;
  int timeouts = 0;
  bool perfect() const { return episodes > 0 && successes == episodes && collisions == 0 && red_light == 0; }
};

using SuiteEvaluator = std::function<SuiteOutcome(const PIDGains&)>;

struct GainGrid {
  GainGrid() {
    start.kp = 2.0;
    start.ki = 0.0;
    start.kd = 0.0;
  }
  PIDGains start;
  std::vector<double> kp{2.0, 4.0, 8.0, 12.0, 16.0, 20.0, 25.0, 30.0};
  std::vector<double> ki{0.0, 0.5, 1.0, 2.0};
  std::vector<double> kd{0.0, 0.05, 0.1};
  int max_sweeps = 3;
};

struct TuneTrial {
  PIDGains gains;
  SuiteOutcome outcome;
};

class TuningError : public std::runtime_error {
 public:
  TuningError(const std::string& msg, PIDGains best) : std::runtime_error(msg), best_(best) {}
  const PIDGains& best() const { return best_; }

 private:
  PIDGains best_;
};

// Coordinate descent over the grid; returns the first perfect gain set.
PIDGains tune_gains(const SuiteEvaluator& evaluate, const GainGrid& grid, std::vector<TuneTrial>* trials = nullptr);

}  // namespace affordrep

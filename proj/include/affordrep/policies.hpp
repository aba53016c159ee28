#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "affordrep/controller.hpp"
#include "affordrep/worldsim.hpp"

namespace affordrep {

enum class PolicyKind : std::uint8_t { Expert, Random };
const char* to_string(PolicyKind k);
PolicyKind policy_kind_from_string(const std::string& s);

struct RandomPolicyConfig {
  double steer_std = 0.15;
  double steer_decay = 0.95;  // pulls the walk back toward 0
  double p_go_to_stop = 0.02;
  double p_stop_to_go = 0.1;
  double go_throttle = 0.8;
  double stop_brake = 0.6;
};

struct PolicyConfig {
  PolicyKind kind = PolicyKind::Expert;
  PIDGains gains;
  RandomPolicyConfig random;
  std::uint64_t seed = 0;
};

struct RandomPolicyState {
  double steer = 0.0;
  bool going = true;
  bool operator==(const RandomPolicyState&) const = default;
};

// GT-affordance PID driver. `command` is accepted for interface parity; the
// controller steers on psi alone.
std::pair<Action, PIDState> expert_action(const Affordances& gt, double speed, Command command, const PIDGains& gains,
                                          const PIDState& state, double dt);

std::pair<Action, RandomPolicyState> random_action(const RandomPolicyState& state, Rng& rng,
                                                   const RandomPolicyConfig& cfg = {});

/// Closed-loop driver: one instance per episode.
class Driver {
 public:
  virtual ~Driver() = default;
  virtual void reset() = 0;
  virtual Action act(const WorldState& state, double dt) = 0;
};

class ExpertDriver : public Driver {
 public:
  explicit ExpertDriver(PIDGains gains) : gains_(gains) {}
  void reset() override { pid_ = {}; }
  Action act(const WorldState& state, double dt) override;
  const PIDState& pid() const { return pid_; }

 private:
  PIDGains gains_;
  PIDState pid_;
};

class RandomDriver : public Driver {
 public:
  RandomDriver(RandomPolicyConfig cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed), rng_(seed) {}
  void reset() override {
    state_ = {};
    rng_ = Rng(seed_);
  }
  Action act(const WorldState& state, double dt) override;

 private:
  RandomPolicyConfig cfg_;
  std::uint64_t seed_;
  Rng rng_;
  RandomPolicyState state_;
};

}  // namespace affordrep

#include "affordrep/policies.hpp"

#include <algorithm>
#include <stdexcept>

namespace affordrep {

const char* to_string(PolicyKind k) { return k == PolicyKind::Expert ? "expert" : "random"; }

PolicyKind policy_kind_from_string(const std::string& s) {
  if (s == "expert") return PolicyKind::Expert;
  if (s == "random") return PolicyKind::Random;
  throw std::invalid_argument("unknown policy kind: " + s);
}

std::pair<Action, PIDState> expert_action(const Affordances& gt, double speed, Command, const PIDGains& gains,
                                          const PIDState& state, double dt) {
  return control(gt, speed, gains, state, dt);
}

std::pair<Action, RandomPolicyState> random_action(const RandomPolicyState& state, Rng& rng,
                                                   const RandomPolicyConfig& cfg) {
  RandomPolicyState next = state;
  next.steer = std::clamp(cfg.steer_decay * state.steer + cfg.steer_std * rng.normal(), -1.0, 1.0);
  const double u = rng.uniform();
  if (state.going && u < cfg.p_go_to_stop) next.going = false;
  if (!state.going && u < cfg.p_stop_to_go) next.going = true;
  const Action a = next.going ? Action(next.steer, cfg.go_throttle, 0.0) : Action(next.steer, 0.0, cfg.stop_brake);
  return {a, next};
}

Action ExpertDriver::act(const WorldState& state, double dt) {
  const auto [a, next] = expert_action(compute_affordances(state), state.ego.speed, Command::Continue, gains_, pid_, dt);
  pid_ = next;
  return a;
}

Action RandomDriver::act(const WorldState&, double) {
  const auto [a, next] = random_action(state_, rng_, cfg_);
  state_ = next;
  return a;
}

}  // namespace affordrep

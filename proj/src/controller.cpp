#include "affordrep/controller.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace affordrep {

void PIDGains::validate() const {
  for (double g : {kp, ki, kd, speed_kp, speed_ki, speed_kd, v_target, tau, i_max})
    if (!std::isfinite(g)) throw std::invalid_argument("PID gains must be finite");
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("hazard threshold must lie in (0, 1)");
  if (!(i_max > 0.0)) throw std::invalid_argument("integral clamp must be positive");
}

double pid_update(LoopState& s, double error, double kp, double ki, double kd, double i_max, double dt, bool freeze) {
  if (!freeze) s.integral = std::clamp(s.integral + error * dt, -i_max, i_max);
  const double derivative = (error - s.prev_error) / dt;
  s.prev_error = error;
  return kp * error + ki * s.integral + kd * derivative;
}

bool hazard_active(const Affordances& a, double tau) { return std::max({a.hp, a.hv, a.hr}) >= tau; }

Action control_inplace(const Affordances& a, double speed, const PIDGains& g, PIDState& state, double dt) {
  const bool hazard = hazard_active(a, g.tau);
  const double steer = -pid_update(state.steer, a.psi, g.kp, g.ki, g.kd, g.i_max, dt, hazard);
  const double u = pid_update(state.speed, g.v_target - speed, g.speed_kp, g.speed_ki, g.speed_kd, g.i_max, dt, hazard);
  if (hazard) return Action(steer, 0.0, 1.0);
  return Action(steer, std::clamp(u, 0.0, 1.0), 0.0);
}

std::pair<Action, PIDState> control(const Affordances& a, double speed, const PIDGains& gains, const PIDState& state,
                                    double dt) {
  PIDState next = state;
  const Action act = control_inplace(a, speed, gains, next, dt);
  return {act, next};
}

namespace {

double score(const SuiteOutcome& o) {
  return o.successes - 0.5 * o.collisions - 0.5 * o.red_light;
}

std::string describe(const PIDGains& g, const SuiteOutcome& o) {
  std::ostringstream ss;
  ss << "kp=" << g.kp << " ki=" << g.ki << " kd=" << g.kd << " successes=" << o.successes << "/" << o.episodes
     << " collisions=" << o.collisions << " red_light=" << o.red_light;
  return ss.str();
}

}  // namespace

PIDGains tune_gains(const SuiteEvaluator& evaluate, const GainGrid& grid, std::vector<TuneTrial>* trials) {
  PIDGains best = grid.start;
  SuiteOutcome best_outcome = evaluate(best);
  if (trials) trials->push_back({best, best_outcome});
  if (best_outcome.perfect()) return best;

  for (int sweep = 0; sweep < grid.max_sweeps; ++sweep) {
    bool improved = false;
    for (int coord = 0; coord < 3; ++coord) {
      const std::vector<double>& values = coord == 0 ? grid.kp : (coord == 1 ? grid.ki : grid.kd);
      const PIDGains centre = best;
      for (double v : values) {
        PIDGains cand = centre;
        (coord == 0 ? cand.kp : (coord == 1 ? cand.ki : cand.kd)) = v;
        if (cand == centre) continue;
        const SuiteOutcome o = evaluate(cand);
        if (trials) trials->push_back({cand, o});
        if (o.perfect()) return cand;
        if (score(o) > score(best_outcome)) {
          best = cand;
          best_outcome = o;
          improved = true;
        }
      }
    }
    if (!improved) break;
  }
  throw TuningError("no perfect gain set in grid; best: " + describe(best, best_outcome), best);
}

}  // namespace affordrep

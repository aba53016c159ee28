#include "affordrep/evalbench.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "affordrep/parallel.hpp"
#include "affordrep/stats.hpp"

namespace affordrep {

double f1(const std::vector<int>& preds, const std::vector<int>& gts) {
  if (preds.size() != gts.size()) throw std::invalid_argument("f1: length mismatch");
  if (preds.empty()) throw std::invalid_argument("f1: empty input");
  long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] != 0, g = gts[i] != 0;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  if (tp == 0 && fp == 0 && fn == 0) return 1.0;
  return 2.0 * tp / (2.0 * tp + fp + fn);
}

Regime regime_of(double psi_gt) {
  if (psi_gt < -0.1) return Regime::Left;
  if (psi_gt > 0.1) return Regime::Right;
  return Regime::Straight;
}

const char* to_string(Regime r) {
  switch (r) {
    case Regime::Left: return "left";
    case Regime::Straight: return "straight";
    case Regime::Right: return "right";
  }
  return "?";
}

RegimeMae mae_by_regime(const std::vector<double>& psi_pred, const std::vector<double>& psi_gt) {
  if (psi_pred.size() != psi_gt.size()) throw std::invalid_argument("mae_by_regime: length mismatch");
  double sum[3] = {0, 0, 0};
  std::size_t n[3] = {0, 0, 0};
  double pooled = 0.0;
  for (std::size_t i = 0; i < psi_gt.size(); ++i) {
    const double e = std::abs(wrap_angle(psi_pred[i] - psi_gt[i]));
    const int r = static_cast<int>(regime_of(psi_gt[i]));
    sum[r] += e;
    ++n[r];
    pooled += e;
  }
  RegimeMae out;
  out.n_left = n[0];
  out.n_straight = n[1];
  out.n_right = n[2];
  if (n[0]) out.left = sum[0] / n[0];
  if (n[1]) out.straight = sum[1] / n[1];
  if (n[2]) out.right = sum[2] / n[2];
  out.pooled = psi_gt.empty() ? 0.0 : pooled / psi_gt.size();
  return out;
}

const char* to_string(EpisodeOutcome o) {
  switch (o) {
    case EpisodeOutcome::Success: return "success";
    case EpisodeOutcome::Collision: return "collision";
    case EpisodeOutcome::Offroad: return "offroad";
    case EpisodeOutcome::Timeout: return "timeout";
  }
  return "?";
}

EpisodeRecord run_episode(Driver& driver, WorldState st, int step_cap) {
  EpisodeRecord rec;
  rec.condition = st.condition_id;
  driver.reset();
  const double dt = st.config.dt;
  for (int k = 0; k < step_cap; ++k) {
    const Action a = driver.act(st, dt);
    const StepEvents ev = advance(st, a, dt);
    rec.events.push_back(ev.flags());
    rec.steps = k + 1;
    rec.lights_crossed += ev.light_crossed;
    rec.red_violations += ev.red_light_crossing;
    if (ev.offroad) {
      rec.outcome = EpisodeOutcome::Offroad;
      return rec;
    }
    if (ev.collision) {
      rec.outcome = EpisodeOutcome::Collision;
      return rec;
    }
    if (ev.goal_reached) {
      rec.outcome = EpisodeOutcome::Success;
      return rec;
    }
  }
  rec.outcome = EpisodeOutcome::Timeout;
  return rec;
}

std::vector<DrivingReport> nocrash_suite(const DriverFactory& factory, const SuiteSpec& spec,
                                         std::vector<EpisodeRecord>* episodes) {
  if (!spec.network) throw std::invalid_argument("nocrash_suite: no network");
  if (spec.conditions.empty() || spec.seeds.empty()) throw std::invalid_argument("nocrash_suite: empty grid");
  const std::size_t routes = std::min<std::size_t>(spec.routes, spec.network->routes.size());
  struct Job {
    std::size_t density, seed, route;
  };
  std::vector<Job> jobs;
  for (std::size_t d = 0; d < spec.densities.size(); ++d)
    for (std::size_t s = 0; s < spec.seeds.size(); ++s)
      for (std::size_t r = 0; r < routes; ++r) jobs.push_back({d, s, r});

  std::vector<EpisodeRecord> records(jobs.size());
  parallel_for(jobs.size(), spec.workers, [&](std::size_t i) {
    const Job& j = jobs[i];
    const int cond = spec.conditions[j.route % spec.conditions.size()];
    const std::uint64_t seed = spec.seeds[j.seed];
    WorldState st = spawn_scenario(spec.network, spec.densities[j.density], j.route, cond, seed);
    auto driver = factory();
    EpisodeRecord rec = run_episode(*driver, std::move(st), spec.step_cap);
    rec.route = j.route;
    rec.seed = seed;
    rec.density = spec.densities[j.density];
    records[i] = std::move(rec);
  });

  std::vector<DrivingReport> out;
  for (std::size_t d = 0; d < spec.densities.size(); ++d) {
    DrivingReport rep;
    rep.town = spec.network->map_id;
    rep.density = spec.densities[d];
    for (std::size_t s = 0; s < spec.seeds.size(); ++s) {
      SeedCell cell;
      cell.seed = spec.seeds[s];
      for (std::size_t i = 0; i < jobs.size(); ++i) {
        if (jobs[i].density != d || jobs[i].seed != s) continue;
        const EpisodeRecord& r = records[i];
        ++cell.episodes;
        cell.successes += r.outcome == EpisodeOutcome::Success;
        cell.collisions += r.outcome == EpisodeOutcome::Collision;
        cell.offroad += r.outcome == EpisodeOutcome::Offroad;
        cell.timeouts += r.outcome == EpisodeOutcome::Timeout;
        cell.lights_crossed += r.lights_crossed;
        cell.red_violations += r.red_violations;
      }
      rep.per_seed.push_back(cell);
    }
    std::vector<double> succ, red;
    for (const SeedCell& c : rep.per_seed) {
      succ.push_back(c.success_pct());
      red.push_back(c.red_pct());
    }
    rep.success_mean = mean(succ);
    rep.success_std = sample_std(succ);
    rep.red_mean = mean(red);
    rep.red_std = sample_std(red);
    out.push_back(rep);
  }
  if (episodes) *episodes = std::move(records);
  return out;
}

SuiteEvaluator expert_suite_evaluator(SuiteSpec spec) {
  return [spec](const PIDGains& gains) {
    std::vector<EpisodeRecord> eps;
    nocrash_suite([&] { return std::make_unique<ExpertDriver>(gains); }, spec, &eps);
    SuiteOutcome o;
    for (const EpisodeRecord& r : eps) {
      ++o.episodes;
      o.successes += r.outcome == EpisodeOutcome::Success;
      o.collisions += r.outcome == EpisodeOutcome::Collision || r.outcome == EpisodeOutcome::Offroad;
      o.timeouts += r.outcome == EpisodeOutcome::Timeout;
      o.red_light += r.red_violations;
    }
    return o;
  };
}

std::size_t aggregate_and_select(const std::vector<double>& scores) {
  if (scores.empty()) throw std::invalid_argument("aggregate_and_select: no candidates");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

std::string driving_csv(const std::vector<DrivingReport>& reports) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(4);
  ss << "town,density,seeds,success_mean,success_std,red_light_mean,red_light_std,episodes,collisions,offroad,timeouts,"
        "lights_crossed,red_violations\n";
  for (const DrivingReport& r : reports) {
    int eps = 0, col = 0, off = 0, to = 0, lc = 0, rv = 0;
    for (const SeedCell& c : r.per_seed) {
      eps += c.episodes;
      col += c.collisions;
      off += c.offroad;
      to += c.timeouts;
      lc += c.lights_crossed;
      rv += c.red_violations;
    }
    ss << r.town << ',' << to_string(r.density) << ',' << r.per_seed.size() << ',' << r.success_mean << ','
       << r.success_std << ',' << r.red_mean << ',' << r.red_std << ',' << eps << ',' << col << ',' << off << ','
       << to << ',' << lc << ',' << rv << '\n';
  }
  return ss.str();
}

std::string driving_markdown(const std::vector<DrivingReport>& reports) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(1);
  ss << "| Town | Density | Success % | Red light % |\n|---|---|---|---|\n";
  for (const DrivingReport& r : reports)
    ss << "| " << r.town << " | " << to_string(r.density) << " | " << r.success_mean << " ± " << r.success_std
       << " | " << r.red_mean << " ± " << r.red_std << " |\n";
  return ss.str();
}

}  // namespace affordrep

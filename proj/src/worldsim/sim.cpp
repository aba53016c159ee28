#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "affordrep/worldsim.hpp"

namespace affordrep {

namespace {

double clamp01(double v) { return std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0); }

double red_duration(const LightTiming& t) { return t.cycle() - t.green - t.amber; }

LightPhase phase_at(const TrafficLight& light, const LightTiming& timing, double t) {
  const double cycle = timing.cycle();
  double p = std::fmod(t - light.green_start, cycle);
  if (p < 0.0) p += cycle;
  if (p < timing.green) return {LightColor::Green, timing.green - p};
  if (p < timing.green + timing.amber) return {LightColor::Amber, timing.green + timing.amber - p};
  return {LightColor::Red, cycle - p};
}

void advance_light(LightPhase& phase, const LightTiming& timing, double dt) {
  phase.timer -= dt;
  while (phase.timer <= 0.0) {
    switch (phase.color) {
      case LightColor::Green:
        phase.color = LightColor::Amber;
        phase.timer += timing.amber;
        break;
      case LightColor::Amber:
        phase.color = LightColor::Red;
        phase.timer += red_duration(timing);
        break;
      case LightColor::Red:
        phase.color = LightColor::Green;
        phase.timer += timing.green;
        break;
    }
  }
}

void place_vehicle(Agent& a, const RoadNetwork& net) {
  const Polyline& line = net.lanes[a.lane].centerline;
  const Vec2 p = line.point_at(a.s);
  a.pose = {p.x, p.y, line.heading_at(a.s)};
}

void place_pedestrian(Agent& a, const RoadNetwork& net) {
  const Polyline& line = net.lanes[a.lane].centerline;
  const Vec2 t = line.tangent_at(a.s);
  const Vec2 p = line.point_at(a.s) + left_normal(t) * a.offset;
  double heading = std::atan2(t.y, t.x);
  if (a.crossing) {
    heading += a.side > 0 ? -kPi / 2.0 : kPi / 2.0;
  } else if (a.direction < 0) {
    heading += kPi;
  }
  a.pose = {p.x, p.y, wrap_angle(heading)};
}

int pick_successor(const Lane& lane, Rng& rng) {
  if (lane.successors.empty()) return -1;
  return lane.successors[rng.below(lane.successors.size())];
}

const Crosswalk* crosswalk_on(const RoadNetwork& net, int lane) {
  for (const Crosswalk& c : net.crosswalks)
    if (c.lane == lane) return &c;
  return nullptr;
}

const TrafficLight* light_on(const RoadNetwork& net, int lane) {
  for (const TrafficLight& l : net.lights)
    if (l.lane == lane) return &l;
  return nullptr;
}

bool inside_box(const Intersection& ix, Vec2 p) {
  return std::abs(p.x - ix.center.x) <= ix.half_size && std::abs(p.y - ix.center.y) <= ix.half_size;
}

struct Obstacle {
  Vec2 center;
  double half_width;
  double margin;
};

// Distance along a vehicle's path (current lane, then next lane) to an obstacle
// whose center lies inside the lane band; infinity when not on the path.
double path_gap(const RoadNetwork& net, const Agent& a, const Obstacle& o) {
  const Lane& cur = net.lanes[a.lane];
  const double band = cur.width / 2.0 + o.half_width;
  double best = std::numeric_limits<double>::infinity();
  {
    const Projection pr = cur.centerline.project(o.center);
    if (std::abs(pr.lateral) < band && pr.distance < band && pr.s > a.s) best = pr.s - a.s;
  }
  if (a.next_lane >= 0 && !std::isfinite(best)) {
    const Lane& nxt = net.lanes[a.next_lane];
    const Projection pr = nxt.centerline.project(o.center);
    if (std::abs(pr.lateral) < band && pr.distance < band) best = cur.length() - a.s + pr.s;
  }
  return best;
}

void update_vehicle(WorldState& st, std::size_t index, double dt) {
  const RoadNetwork& net = *st.network;
  const SimConfig& cfg = st.config;
  Agent& a = st.agents[index];
  Rng& rng = st.rng;

  if (!a.active) {
    std::vector<int> entries;
    for (const Lane& l : net.lanes)
      if (l.kind == LaneKind::Road && l.predecessors.empty()) entries.push_back(l.id);
    if (entries.empty()) return;
    const int lane = entries[rng.below(entries.size())];
    const Vec2 spawn = net.lanes[lane].centerline.point_at(2.0);
    bool clear = norm(st.ego.pose.position() - spawn) >= 12.0;
    for (const Agent& o : st.agents)
      if (clear && o.active && o.kind == AgentKind::Vehicle && norm(o.pose.position() - spawn) < 12.0) clear = false;
    if (!clear) return;
    a.active = true;
    a.lane = lane;
    a.s = 2.0;
    a.speed = a.cruise_speed * 0.5;
    a.next_lane = pick_successor(net.lanes[lane], rng);
    place_vehicle(a, net);
    return;
  }

  const Lane& lane = net.lanes[a.lane];
  const double v = a.speed;
  const double lookahead = 30.0;
  double gap = std::numeric_limits<double>::infinity();

  auto consider = [&](const Obstacle& o) {
    const Vec2 d = o.center - a.pose.position();
    if (dot(d, d) > lookahead * lookahead) return;
    const double g = path_gap(net, a, o);
    if (std::isfinite(g)) gap = std::min(gap, g - o.margin);
  };

  consider({st.ego.pose.position(), cfg.vehicle_width / 2.0, 6.5});
  for (std::size_t j = 0; j < st.agents.size(); ++j) {
    if (j == index) continue;
    const Agent& o = st.agents[j];
    if (!o.active) continue;
    if (o.kind == AgentKind::Vehicle) consider({o.pose.position(), cfg.vehicle_width / 2.0, 6.5});
    else if (o.crossing) consider({o.pose.position(), cfg.pedestrian_size / 2.0, 4.0});
  }

  const double can_stop = v * v / 16.0;
  if (const TrafficLight* light = light_on(net, a.lane)) {
    const double d = light->stop_s - a.s;
    if (d > 0.0 && st.lights[light->id].color != LightColor::Green && d >= can_stop) gap = std::min(gap, d - 0.5);
  }
  if (a.next_lane >= 0 && net.lanes[a.next_lane].kind == LaneKind::Connector && lane.kind == LaneKind::Road) {
    const double remaining = lane.length() - a.s;
    if (remaining < 20.0 && remaining >= can_stop) {
      const Intersection& ix = net.intersections[net.lanes[a.next_lane].intersection];
      bool occupied = false;
      if (inside_box(ix, st.ego.pose.position())) {
        const bool same_flow = !st.route.lanes.empty() && st.route_cursor < st.route.lanes.size() &&
                               net.lanes[st.route.lanes[st.route_cursor]].from_lane == a.lane;
        occupied = !same_flow;
      }
      for (const Agent& o : st.agents) {
        if (occupied) break;
        if (&o == &a || !o.active || o.kind != AgentKind::Vehicle) continue;
        const Lane& ol = net.lanes[o.lane];
        if (ol.kind == LaneKind::Connector && ol.intersection == ix.id && ol.from_lane != a.lane) occupied = true;
      }
      if (occupied) gap = std::min(gap, remaining - 1.5);
    }
  }

  const bool blocked = gap <= v * v / 12.0 + 0.3;
  a.speed = blocked ? std::max(0.0, v - 8.0 * dt) : std::min(a.cruise_speed, v + 2.0 * dt);
  a.s += a.speed * dt;
  while (a.s > net.lanes[a.lane].length()) {
    if (a.next_lane < 0) {
      a.active = false;
      a.speed = 0.0;
      return;
    }
    a.s -= net.lanes[a.lane].length();
    a.lane = a.next_lane;
    a.next_lane = pick_successor(net.lanes[a.lane], rng);
  }
  place_vehicle(a, net);
}

bool crosswalk_clear(const WorldState& st, const Crosswalk& cw) {
  const RoadNetwork& net = *st.network;
  const Lane& lane = net.lanes[cw.lane];
  auto blocks = [&](Vec2 p) {
    const Projection pr = lane.centerline.project(p);
    return std::abs(pr.lateral) < lane.width && pr.s >= cw.s - 15.0 && pr.s <= cw.s + 3.0 &&
           pr.distance < lane.width;
  };
  if (blocks(st.ego.pose.position())) return false;
  for (const Agent& o : st.agents)
    if (o.active && o.kind == AgentKind::Vehicle && blocks(o.pose.position())) return false;
  return true;
}

void update_pedestrian(WorldState& st, std::size_t index, double dt) {
  const RoadNetwork& net = *st.network;
  const SimConfig& cfg = st.config;
  Agent& a = st.agents[index];
  const Lane& lane = net.lanes[a.lane];
  if (a.crossing) {
    const double target = -a.side * cfg.sidewalk_offset;
    const double step = cfg.pedestrian_cross_speed * dt;
    if (std::abs(target - a.offset) <= step) {
      a.offset = target;
      a.side = -a.side;
      a.crossing = false;
    } else {
      a.offset += target > a.offset ? step : -step;
    }
    place_pedestrian(a, net);
    return;
  }
  const double lo = 3.0;
  const double hi = std::max(lo, lane.length() - 3.0);
  double s = a.s + a.direction * a.speed * dt;
  if (s > hi) {
    s = hi - (s - hi);
    a.direction = -1;
  }
  if (s < lo) {
    s = lo + (lo - s);
    a.direction = 1;
  }
  a.s = std::clamp(s, lo, hi);
  if (const Crosswalk* cw = crosswalk_on(net, a.lane)) {
    if (std::abs(a.s - cw->s) < 1.0) {
      const bool want = st.rng.bernoulli(cfg.pedestrian_cross_probability);
      if (want && crosswalk_clear(st, *cw)) {
        a.crossing = true;
        a.s = cw->s;
      }
    }
  }
  place_pedestrian(a, net);
}

double nearest_lane_distance(const RoadNetwork& net, Vec2 p) {
  double best = std::numeric_limits<double>::infinity();
  for (const Lane& lane : net.lanes) {
    const auto b = lane.centerline.bounds();
    const double m = std::min(best, 50.0);
    if (p.x < b[0] - m || p.x > b[2] + m || p.y < b[1] - m || p.y > b[3] + m) continue;
    best = std::min(best, lane.centerline.project(p).distance);
  }
  return best;
}

}  // namespace

Action::Action(double s, double t, double b)
    : steer(std::clamp(std::isfinite(s) ? s : 0.0, -1.0, 1.0)), throttle(clamp01(t)), brake(clamp01(b)) {}

std::uint8_t StepEvents::flags() const {
  std::uint8_t f = 0;
  if (collision) f |= event_bits::kCollision;
  if (red_light_crossing) f |= event_bits::kRedLight;
  if (goal_reached) f |= event_bits::kGoal;
  if (offroad) f |= event_bits::kOffroad;
  if (light_crossed) f |= event_bits::kLightCrossed;
  if (replanned) f |= event_bits::kReplanned;
  return f;
}

StepEvents StepEvents::from_flags(std::uint8_t f) {
  StepEvents e;
  e.collision = f & event_bits::kCollision;
  e.red_light_crossing = f & event_bits::kRedLight;
  e.goal_reached = f & event_bits::kGoal;
  e.offroad = f & event_bits::kOffroad;
  e.light_crossed = f & event_bits::kLightCrossed;
  e.replanned = f & event_bits::kReplanned;
  return e;
}

LightColor light_color_at(const TrafficLight& light, const LightTiming& timing, double t) {
  return phase_at(light, timing, t).color;
}

WorldState spawn_scenario(std::shared_ptr<const RoadNetwork> network, Density density, std::size_t route_index,
                          int condition_id, std::uint64_t seed, const SimConfig& cfg) {
  if (!network) throw std::invalid_argument("spawn_scenario: null network");
  const RoadNetwork& net = *network;
  if (route_index >= net.routes.size())
    throw std::out_of_range("route index " + std::to_string(route_index) + " out of range for " + net.map_id);

  WorldState st;
  st.network = network;
  st.config = cfg;
  st.condition_id = condition_id;
  st.route = net.routes[route_index];
  st.route_cursor = 0;

  Rng rng(derive_seed({seed, route_index, static_cast<std::uint64_t>(density),
                       static_cast<std::uint64_t>(condition_id), 0x7370617776ULL}));

  const Lane& start = net.lanes[st.route.lanes.front()];
  const Vec2 p = start.centerline.point_at(st.route.start_s);
  st.ego.pose = {p.x, p.y, start.centerline.heading_at(st.route.start_s)};
  st.ego.speed = 0.0;

  const double shift = rng.uniform(0.0, net.timing.cycle());
  for (const TrafficLight& light : net.lights) st.lights.push_back(phase_at(light, net.timing, shift));

  std::vector<int> road;
  for (const Lane& l : net.lanes)
    if (l.kind == LaneKind::Road) road.push_back(l.id);

  const DensityCounts& counts = cfg.counts(density);
  for (int k = 0; k < counts.vehicles; ++k) {
    Agent a;
    a.kind = AgentKind::Vehicle;
    a.cruise_speed = rng.uniform(4.0, 6.0);
    a.active = false;
    for (int attempt = 0; attempt < 200 && !a.active; ++attempt) {
      const int lane = road[rng.below(road.size())];
      const double len = net.lanes[lane].length();
      if (len < 12.0) continue;
      const double s = rng.uniform(5.0, len - 5.0);
      const Vec2 q = net.lanes[lane].centerline.point_at(s);
      if (norm(q - st.ego.pose.position()) < 20.0) continue;
      bool ok = true;
      for (const Agent& o : st.agents)
        if (o.active && norm(o.pose.position() - q) < 12.0) ok = false;
      if (!ok) continue;
      a.active = true;
      a.lane = lane;
      a.s = s;
      a.speed = a.cruise_speed * 0.5;
      a.next_lane = pick_successor(net.lanes[lane], rng);
      place_vehicle(a, net);
    }
    st.agents.push_back(a);
  }
  for (int k = 0; k < counts.pedestrians; ++k) {
    Agent a;
    a.kind = AgentKind::Pedestrian;
    // Pedestrians live on sidewalks that have a crosswalk.
    a.lane = net.crosswalks.empty() ? road[rng.below(road.size())]
                                    : net.crosswalks[rng.below(net.crosswalks.size())].lane;
    const double len = net.lanes[a.lane].length();
    a.s = rng.uniform(3.0, std::max(3.0, len - 3.0));
    a.side = rng.bernoulli(0.5) ? 1 : -1;
    a.direction = rng.bernoulli(0.5) ? 1 : -1;
    a.speed = rng.uniform(1.0, 1.5);
    a.offset = a.side * cfg.sidewalk_offset;
    place_pedestrian(a, net);
    st.agents.push_back(a);
  }
  st.rng = Rng(rng.next_u64());
  return st;
}

StepEvents advance(WorldState& st, const Action& raw, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be positive");
  const RoadNetwork& net = *st.network;
  const SimConfig& cfg = st.config;
  const KinematicsConfig& k = cfg.kinematics;
  const Action act(raw.steer, raw.throttle, raw.brake);
  StepEvents ev;

  const Vec2 before = st.ego.pose.position();
  const double accel = k.throttle_accel * act.throttle - k.brake_decel * act.brake - k.drag * st.ego.speed;
  const double v = std::max(0.0, st.ego.speed + accel * dt);
  const double heading = wrap_angle(st.ego.pose.heading + (v / k.wheelbase) * std::tan(act.steer * k.max_steer) * dt);
  st.ego.speed = v;
  st.ego.pose.heading = heading;
  st.ego.pose.x += v * std::cos(heading) * dt;
  st.ego.pose.y += v * std::sin(heading) * dt;
  const Vec2 after = st.ego.pose.position();

  if (!(after == before)) {
    for (const TrafficLight& light : net.lights) {
      const Lane& lane = net.lanes[light.lane];
      const Vec2 t = lane.centerline.tangent_at(light.stop_s);
      const Vec2 half = left_normal(t) * (lane.width / 2.0);
      if (dot(after - before, t) <= 0.0) continue;
      if (segments_intersect(before, after, light.position - half, light.position + half)) {
        ev.light_crossed = true;
        if (st.lights[light.id].color == LightColor::Red) ev.red_light_crossing = true;
      }
    }
  }

  for (LightPhase& phase : st.lights) advance_light(phase, net.timing, dt);

  for (std::size_t i = 0; i < st.agents.size(); ++i)
    if (st.agents[i].kind == AgentKind::Vehicle) update_vehicle(st, i, dt);
  for (std::size_t i = 0; i < st.agents.size(); ++i)
    if (st.agents[i].kind == AgentKind::Pedestrian) update_pedestrian(st, i, dt);

  RouteFix rf = locate_on_route(st);
  if (rf.on_route) {
    st.route_cursor = rf.route_index;
  } else if (!st.route.lanes.empty()) {
    try {
      const LaneFix f = lane_localize(st.ego.pose, net);
      std::vector<int> lanes = plan_lanes(net, f.lane, st.route.lanes.back());
      if (!lanes.empty()) {
        st.route.lanes = std::move(lanes);
        st.route.start_s = f.s;
        st.route_cursor = 0;
        ev.replanned = true;
        rf = locate_on_route(st);
      }
    } catch (const OffRoadError&) {
    }
  }
  if (rf.on_route && rf.route_index + 1 == st.route.lanes.size() && rf.fix.s >= st.route.goal_s)
    ev.goal_reached = true;

  if (nearest_lane_distance(net, after) > net.lane_width / 2.0) {
    ev.offroad = true;
    ev.collision = true;
  }
  const OrientedBox ego_box = ego_footprint(st);
  for (const Agent& a : st.agents) {
    if (!a.active) continue;
    if (overlaps(ego_box, agent_footprint(a, cfg))) {
      ev.collision = true;
      break;
    }
  }

  st.sim_time += dt;
  ++st.steps;
  return ev;
}

std::pair<WorldState, StepEvents> step(const WorldState& state, const Action& action, double dt) {
  WorldState next = state;
  const StepEvents ev = advance(next, action, dt);
  return {std::move(next), ev};
}

}  // namespace affordrep

#include <algorithm>
#include <cmath>
#include <limits>

#include "affordrep/worldsim.hpp"

namespace affordrep {

namespace {

bool near_bounds(const Polyline& line, Vec2 p, double margin) {
  const auto b = line.bounds();
  return p.x >= b[0] - margin && p.x <= b[2] + margin && p.y >= b[1] - margin && p.y <= b[3] + margin;
}

LaneFix fix_from_projection(int lane, const Projection& pr, double heading) {
  LaneFix f;
  f.lane = lane;
  f.s = pr.s;
  f.lateral = pr.lateral;
  f.distance = pr.distance;
  f.psi = wrap_angle(heading - std::atan2(pr.tangent.y, pr.tangent.x));
  return f;
}

}  // namespace

LaneFix lane_localize(const Pose& pose, const RoadNetwork& network) {
  const double limit = 2.0 * network.lane_width;
  const Vec2 p = pose.position();
  std::optional<LaneFix> best_compatible;
  std::optional<LaneFix> best_any;
  for (const Lane& lane : network.lanes) {
    if (!near_bounds(lane.centerline, p, limit)) continue;
    const Projection pr = lane.centerline.project(p);
    if (pr.distance > limit) continue;
    const LaneFix f = fix_from_projection(lane.id, pr, pose.heading);
    // Lanes are visited in id order, so strict comparison keeps the lowest id on ties.
    if (std::abs(f.psi) < kPi / 2.0 && (!best_compatible || f.distance < best_compatible->distance))
      best_compatible = f;
    if (!best_any || f.distance < best_any->distance) best_any = f;
  }
  if (best_compatible) return *best_compatible;
  if (best_any) return *best_any;
  throw OffRoadError("pose is farther than two lane widths from every lane");
}

RouteFix locate_on_route(const WorldState& state) {
  RouteFix out;
  const RoadNetwork& net = *state.network;
  const auto& lanes = state.route.lanes;
  if (lanes.empty()) return out;
  const Vec2 p = state.ego.pose.position();
  const double limit = 2.0 * net.lane_width;
  const std::size_t last = std::min(state.route_cursor + 2, lanes.size() - 1);
  std::optional<LaneFix> best;
  std::size_t best_index = 0;
  for (std::size_t i = state.route_cursor; i <= last; ++i) {
    const Lane& lane = net.lanes[lanes[i]];
    const Projection pr = lane.centerline.project(p);
    if (pr.distance > limit) continue;
    const LaneFix f = fix_from_projection(lane.id, pr, state.ego.pose.heading);
    if (std::abs(f.psi) >= kPi / 2.0) continue;
    if (!best || f.distance < best->distance) {
      best = f;
      best_index = i;
    }
  }
  if (best) {
    out.on_route = true;
    out.route_index = best_index;
    out.fix = *best;
  }
  return out;
}

std::vector<CorridorPiece> corridor_ahead(const WorldState& state, const RouteFix& fix, double distance) {
  const RoadNetwork& net = *state.network;
  std::vector<CorridorPiece> pieces;
  double remaining = distance;
  double s = fix.fix.s;
  if (fix.on_route) {
    const auto& lanes = state.route.lanes;
    for (std::size_t i = fix.route_index; i < lanes.size() && remaining > 0.0; ++i) {
      const double len = net.lanes[lanes[i]].length();
      const double s_to = std::min(len, s + remaining);
      if (s_to > s) pieces.push_back({lanes[i], s, s_to});
      remaining -= std::max(0.0, s_to - s);
      s = 0.0;
    }
  } else {
    int lane = fix.fix.lane;
    while (lane >= 0 && remaining > 0.0) {
      const Lane& l = net.lanes[lane];
      const double s_to = std::min(l.length(), s + remaining);
      if (s_to > s) pieces.push_back({lane, s, s_to});
      remaining -= std::max(0.0, s_to - s);
      s = 0.0;
      lane = l.successors.empty() ? -1 : l.successors.front();
    }
  }
  return pieces;
}

OrientedBox ego_footprint(const WorldState& state) {
  const SimConfig& c = state.config;
  return {state.ego.pose.position(), state.ego.pose.heading, c.vehicle_length / 2.0, c.vehicle_width / 2.0};
}

OrientedBox agent_footprint(const Agent& agent, const SimConfig& c) {
  if (agent.kind == AgentKind::Pedestrian)
    return {agent.pose.position(), agent.pose.heading, c.pedestrian_size / 2.0, c.pedestrian_size / 2.0};
  return {agent.pose.position(), agent.pose.heading, c.vehicle_length / 2.0, c.vehicle_width / 2.0};
}

namespace {

bool box_hits_corridor(const RoadNetwork& net, const std::vector<CorridorPiece>& pieces, const OrientedBox& box) {
  for (const CorridorPiece& piece : pieces) {
    const Lane& lane = net.lanes[piece.lane];
    const Polyline& line = lane.centerline;
    for (std::size_t k = 0; k < line.segment_count(); ++k) {
      const double seg_from = line.segment_start(k);
      const double seg_to = seg_from + line.segment_length(k);
      const double a = std::max(piece.s_from, seg_from);
      const double b = std::min(piece.s_to, seg_to);
      if (!(b > a)) continue;
      const Vec2 dir = line.segment_direction(k);
      OrientedBox rect;
      rect.center = line.points()[k] + dir * ((a + b) / 2.0 - seg_from);
      rect.heading = std::atan2(dir.y, dir.x);
      rect.half_length = (b - a) / 2.0;
      rect.half_width = lane.width / 2.0;
      if (overlaps(rect, box)) return true;
    }
  }
  return false;
}

}  // namespace

Affordances compute_affordances(const WorldState& state) {
  const RoadNetwork& net = *state.network;
  const SimConfig& cfg = state.config;
  RouteFix rf = locate_on_route(state);
  if (!rf.on_route) {
    rf.fix = lane_localize(state.ego.pose, net);
  }
  Affordances out;
  out.psi = rf.fix.psi;
  const auto pieces = corridor_ahead(state, rf, cfg.hazard_distance);

  const Vec2 ego = state.ego.pose.position();
  const double reach = cfg.hazard_distance + 2.0 * net.lane_width + 1.0;
  for (const Agent& agent : state.agents) {
    if (!agent.active) continue;
    if (agent.kind == AgentKind::Pedestrian && out.hp != 0.0) continue;
    if (agent.kind == AgentKind::Vehicle && out.hv != 0.0) continue;
    const OrientedBox box = agent_footprint(agent, cfg);
    const Vec2 d = box.center - ego;
    const double r = reach + box.bounding_radius();
    if (dot(d, d) > r * r) continue;
    if (box_hits_corridor(net, pieces, box)) {
      if (agent.kind == AgentKind::Pedestrian) out.hp = 1.0;
      else out.hv = 1.0;
    }
  }

  bool first = true;
  for (const CorridorPiece& piece : pieces) {
    const TrafficLight* next = nullptr;
    for (const TrafficLight& light : net.lights) {
      if (light.lane != piece.lane) continue;
      const bool ahead = first ? light.stop_s > piece.s_from : light.stop_s >= piece.s_from;
      if (ahead && light.stop_s <= piece.s_to && (!next || light.stop_s < next->stop_s)) next = &light;
    }
    first = false;
    if (next) {
      out.hr = state.lights[next->id].color == LightColor::Green ? 0.0 : 1.0;
      break;
    }
  }
  return out;
}

Pose camera_pose(const WorldState& state, Camera camera) {
  Pose p = state.ego.pose;
  double shift = 0.0;
  if (camera == Camera::Left) shift = state.config.lateral_camera_offset;
  if (camera == Camera::Right) shift = -state.config.lateral_camera_offset;
  if (shift != 0.0) {
    const Vec2 n = left_normal(unit_from_heading(p.heading));
    p.x += n.x * shift;
    p.y += n.y * shift;
  }
  return p;
}

WorldState with_camera_pose(const WorldState& state, Camera camera) {
  WorldState s = state;
  s.ego.pose = camera_pose(state, camera);
  return s;
}

std::array<float, kCommandCount> one_hot(Command c) {
  std::array<float, kCommandCount> v{};
  v[static_cast<std::size_t>(c)] = 1.0f;
  return v;
}

Command Observation::command_index() const {
  for (std::size_t i = 0; i < command.size(); ++i)
    if (command[i] == 1.0f) return static_cast<Command>(i);
  return Command::Continue;
}

Command next_command(const WorldState& state) {
  const RouteFix rf = locate_on_route(state);
  if (!rf.on_route) return Command::Continue;
  const RoadNetwork& net = *state.network;
  const auto& lanes = state.route.lanes;
  const Lane& cur = net.lanes[lanes[rf.route_index]];
  if (cur.kind == LaneKind::Connector) return command_for_turn(cur.turn);
  double dist = cur.length() - rf.fix.s;
  for (std::size_t j = rf.route_index + 1; j < lanes.size(); ++j) {
    const Lane& l = net.lanes[lanes[j]];
    if (l.kind == LaneKind::Connector) {
      return dist <= state.config.command_distance ? command_for_turn(l.turn) : Command::Continue;
    }
    dist += l.length();
    if (dist > state.config.command_distance) break;
  }
  return Command::Continue;
}

}  // namespace affordrep

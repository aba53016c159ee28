#pragma once

#include <memory>

#include "affordrep/worldsim.hpp"

namespace testsupport {

using namespace affordrep;

inline std::shared_ptr<const RoadNetwork> town(const std::string& id) {
  static std::shared_ptr<const RoadNetwork> a = std::make_shared<RoadNetwork>(generate_map("townA"));
  static std::shared_ptr<const RoadNetwork> b = std::make_shared<RoadNetwork>(generate_map("townB"));
  return id == "townA" ? a : b;
}

// Empty-world state with the ego on `lane` at arclength s, aligned, with a
// route that follows first successors.
inline WorldState state_on_lane(std::shared_ptr<const RoadNetwork> net, int lane, double s, double speed = 0.0) {
  WorldState st = spawn_scenario(net, Density::Empty, 0, 0, 1);
  const Lane& l = net->lanes[lane];
  const Vec2 p = l.centerline.point_at(s);
  st.ego.pose = {p.x, p.y, l.centerline.heading_at(s)};
  st.ego.speed = speed;
  st.route.lanes = {lane};
  int cur = lane;
  for (int k = 0; k < 6 && !net->lanes[cur].successors.empty(); ++k) {
    cur = net->lanes[cur].successors.front();
    st.route.lanes.push_back(cur);
  }
  st.route.start_s = s;
  st.route.goal_s = net->lanes[cur].length() / 2.0;
  st.route_cursor = 0;
  return st;
}

inline Agent agent_at(const RoadNetwork& net, AgentKind kind, int lane, double s) {
  Agent a;
  a.kind = kind;
  a.lane = lane;
  a.s = s;
  const Vec2 p = net.lanes[lane].centerline.point_at(s);
  a.pose = {p.x, p.y, net.lanes[lane].centerline.heading_at(s)};
  a.active = true;
  a.speed = 0.0;
  a.cruise_speed = 5.0;
  a.next_lane = net.lanes[lane].successors.empty() ? -1 : net.lanes[lane].successors.front();
  return a;
}

inline void all_lights(WorldState& st, LightColor c) {
  for (auto& l : st.lights) {
    l.color = c;
    l.timer = 100.0;
  }
}

}  // namespace testsupport

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <stdexcept>

#include "affordrep/worldsim.hpp"

namespace affordrep {

const char* to_string(TurnOption t) {
  switch (t) {
    case TurnOption::Left: return "left";
    case TurnOption::Right: return "right";
    case TurnOption::Straight: return "straight";
  }
  return "?";
}

const char* to_string(Command c) {
  switch (c) {
    case Command::Continue: return "continue";
    case Command::Left: return "left";
    case Command::Right: return "right";
    case Command::Straight: return "straight";
  }
  return "?";
}

const char* to_string(Density d) {
  switch (d) {
    case Density::Empty: return "empty";
    case Density::Regular: return "regular";
    case Density::Dense: return "dense";
  }
  return "?";
}

const char* to_string(Camera c) {
  switch (c) {
    case Camera::Center: return "center";
    case Camera::Left: return "left";
    case Camera::Right: return "right";
  }
  return "?";
}

Density density_from_string(const std::string& s) {
  if (s == "empty") return Density::Empty;
  if (s == "regular") return Density::Regular;
  if (s == "dense") return Density::Dense;
  throw std::invalid_argument("unknown density: " + s);
}

Camera camera_from_string(const std::string& s) {
  if (s == "center") return Camera::Center;
  if (s == "left") return Camera::Left;
  if (s == "right") return Camera::Right;
  throw std::invalid_argument("unknown camera: " + s);
}

Command command_for_turn(TurnOption t) {
  switch (t) {
    case TurnOption::Left: return Command::Left;
    case TurnOption::Right: return Command::Right;
    case TurnOption::Straight: return Command::Straight;
  }
  return Command::Continue;
}

const DensityCounts& SimConfig::counts(Density d) const {
  switch (d) {
    case Density::Empty: return empty;
    case Density::Regular: return regular;
    case Density::Dense: return dense;
  }
  return empty;
}

std::uint64_t SimConfig::map_seed(const std::string& map_id) const {
  if (map_id == "townA") return town_a_seed;
  if (map_id == "townB") return town_b_seed;
  throw std::invalid_argument("unknown map id: " + map_id);
}

double RoadNetwork::route_length(const RoutePlan& r) const {
  double total = -r.start_s;
  for (std::size_t i = 0; i + 1 < r.lanes.size(); ++i) total += lanes.at(r.lanes[i]).length();
  return total + r.goal_s;
}

void RoadNetwork::validate() const {
  for (std::size_t i = 0; i < lanes.size(); ++i) {
    const Lane& lane = lanes[i];
    if (lane.id != static_cast<int>(i)) throw std::logic_error("lane ids must be dense and ordered");
    if (lane.centerline.points().size() < 2) throw std::logic_error("lane with fewer than two points");
    for (std::size_t k = 0; k < lane.centerline.segment_count(); ++k)
      if (!(lane.centerline.segment_length(k) > 0.0)) throw std::logic_error("lane with degenerate segment");
    for (int s : lane.successors)
      if (s < 0 || s >= static_cast<int>(lanes.size())) throw std::logic_error("dangling successor");
  }
  for (const Intersection& ix : intersections) {
    for (const Connection& c : ix.connections) {
      for (int id : {c.from_lane, c.connector, c.to_lane})
        if (id < 0 || id >= static_cast<int>(lanes.size())) throw std::logic_error("connection references unknown lane");
      if (lanes[c.connector].turn != c.turn) throw std::logic_error("connection turn label mismatch");
    }
  }
  for (const TrafficLight& l : lights) {
    if (l.lane < 0 || l.lane >= static_cast<int>(lanes.size())) throw std::logic_error("light on unknown lane");
    if (l.stop_s < 0.0 || l.stop_s > lanes[l.lane].length()) throw std::logic_error("stop line outside lane");
  }
  for (const Crosswalk& c : crosswalks) {
    if (c.lane < 0 || c.lane >= static_cast<int>(lanes.size())) throw std::logic_error("crosswalk on unknown lane");
    if (c.s < 0.0 || c.s > lanes[c.lane].length()) throw std::logic_error("crosswalk outside lane");
  }
}

namespace {

class NetworkBuilder {
 public:
  explicit NetworkBuilder(RoadNetwork& net) : net_(net) {}

  int add_lane(LaneKind kind, std::vector<Vec2> pts) {
    Lane lane;
    lane.id = static_cast<int>(net_.lanes.size());
    lane.kind = kind;
    lane.centerline = Polyline(std::move(pts));
    lane.width = net_.lane_width;
    net_.lanes.push_back(std::move(lane));
    return net_.lanes.back().id;
  }

  void link(int from, int to) {
    net_.lanes[from].successors.push_back(to);
    net_.lanes[to].predecessors.push_back(from);
  }

  // Quarter arc (or straight segment) joining the end of `in` to the start of `out`.
  int add_connector(int ix, int in, int out, double radius) {
    const Lane& a = net_.lanes[in];
    const Lane& b = net_.lanes[out];
    const Vec2 p0 = a.centerline.points().back();
    const Vec2 p1 = b.centerline.points().front();
    const Vec2 d0 = a.centerline.tangent_at(a.length());
    const Vec2 d1 = b.centerline.tangent_at(0.0);
    const double turn_sign = cross(d0, d1);
    std::vector<Vec2> pts;
    TurnOption turn = TurnOption::Straight;
    if (std::abs(turn_sign) < 1e-9) {
      pts = {p0, p1};
    } else {
      turn = turn_sign > 0.0 ? TurnOption::Left : TurnOption::Right;
      const double side = turn_sign > 0.0 ? 1.0 : -1.0;
      const Vec2 c = p0 + left_normal(d0) * (radius * side);
      const double a0 = std::atan2(p0.y - c.y, p0.x - c.x);
      constexpr int kSegments = 48;
      pts.push_back(p0);
      for (int k = 1; k < kSegments; ++k) {
        const double ang = a0 + side * (kPi / 2.0) * (static_cast<double>(k) / kSegments);
        pts.push_back({c.x + radius * std::cos(ang), c.y + radius * std::sin(ang)});
      }
      pts.push_back(p1);
    }
    const int id = add_lane(LaneKind::Connector, std::move(pts));
    Lane& lane = net_.lanes[id];
    lane.intersection = ix;
    lane.turn = turn;
    lane.from_lane = in;
    lane.to_lane = out;
    link(in, id);
    link(id, out);
    net_.intersections[ix].connections.push_back({in, id, out, turn});
    return id;
  }

 private:
  RoadNetwork& net_;
};

struct GridShape {
  int rows;
  int cols;
  double gap_lo;
  double gap_hi;
  double min_route;
};

std::vector<RoutePlan> make_routes(const RoadNetwork& net, Rng& rng, int count, double min_len) {
  std::vector<int> starts;
  for (const Lane& l : net.lanes)
    if (l.kind == LaneKind::Road && !l.successors.empty()) starts.push_back(l.id);
  std::vector<RoutePlan> routes;
  int attempts = 0;
  while (static_cast<int>(routes.size()) < count) {
    if (++attempts > 100000) throw std::runtime_error("route generation failed for " + net.map_id);
    RoutePlan r;
    r.start_s = 5.0;
    r.lanes.push_back(starts[rng.below(starts.size())]);
    double before = -r.start_s;  // route distance at the start of the current lane
    bool done = false;
    while (!done) {
      const Lane& cur = net.lanes[r.lanes.back()];
      if (cur.kind == LaneKind::Road && r.lanes.size() > 1) {
        const double goal = std::max(5.0, min_len - before);
        if (goal <= cur.length() - 5.0) {
          r.goal_s = goal;
          done = true;
          break;
        }
      }
      if (cur.successors.empty()) break;
      before += cur.length();
      r.lanes.push_back(cur.successors[rng.below(cur.successors.size())]);
    }
    if (done) routes.push_back(std::move(r));
  }
  return routes;
}

}  // namespace

RoadNetwork generate_map(const std::string& map_id, const SimConfig& cfg) {
  return generate_map(map_id, cfg.map_seed(map_id), cfg);
}

RoadNetwork generate_map(const std::string& map_id, std::uint64_t seed, const SimConfig& cfg) {
  GridShape shape{};
  if (map_id == "townA") {
    shape = {3, 3, 80.0, 100.0, cfg.town_a_min_route};
  } else if (map_id == "townB") {
    shape = {2, 3, 60.0, 75.0, cfg.town_b_min_route};
  } else {
    throw std::invalid_argument("unknown map id: " + map_id);
  }

  RoadNetwork net;
  net.map_id = map_id;
  net.seed = seed;
  net.lane_width = cfg.lane_width;
  net.timing = cfg.lights;
  Rng rng(seed);

  std::vector<double> xs(shape.cols), ys(shape.rows);
  for (int j = 1; j < shape.cols; ++j) xs[j] = xs[j - 1] + rng.uniform(shape.gap_lo, shape.gap_hi);
  for (int i = 1; i < shape.rows; ++i) ys[i] = ys[i - 1] + rng.uniform(shape.gap_lo, shape.gap_hi);

  const double R = cfg.turn_radius;
  const double stub = cfg.stub_length;
  NetworkBuilder b(net);

  const int n_ix = shape.rows * shape.cols;
  std::vector<int> row_in(n_ix), row_out(n_ix), col_in(n_ix), col_out(n_ix);
  auto ix_id = [&](int i, int j) { return i * shape.cols + j; };

  // One-way rows: even rows run east, odd rows run west.
  for (int i = 0; i < shape.rows; ++i) {
    const double dir = (i % 2 == 0) ? 1.0 : -1.0;
    std::vector<int> order(shape.cols);
    for (int k = 0; k < shape.cols; ++k) order[k] = dir > 0 ? k : shape.cols - 1 - k;
    double cur = xs[order[0]] - dir * (R + stub);
    int prev = -1;
    for (int k = 0; k < shape.cols; ++k) {
      const int j = order[k];
      const int lane = b.add_lane(LaneKind::Road, {{cur, ys[i]}, {xs[j] - dir * R, ys[i]}});
      if (prev >= 0) row_out[ix_id(i, order[k - 1])] = lane;
      row_in[ix_id(i, j)] = lane;
      cur = xs[j] + dir * R;
      prev = lane;
    }
    const int exit_lane = b.add_lane(LaneKind::Road, {{cur, ys[i]}, {cur + dir * stub, ys[i]}});
    row_out[ix_id(i, order.back())] = exit_lane;
  }
  // One-way columns: even columns run north, odd columns run south.
  for (int j = 0; j < shape.cols; ++j) {
    const double dir = (j % 2 == 0) ? 1.0 : -1.0;
    std::vector<int> order(shape.rows);
    for (int k = 0; k < shape.rows; ++k) order[k] = dir > 0 ? k : shape.rows - 1 - k;
    double cur = ys[order[0]] - dir * (R + stub);
    int prev = -1;
    for (int k = 0; k < shape.rows; ++k) {
      const int i = order[k];
      const int lane = b.add_lane(LaneKind::Road, {{xs[j], cur}, {xs[j], ys[i] - dir * R}});
      if (prev >= 0) col_out[ix_id(order[k - 1], j)] = lane;
      col_in[ix_id(i, j)] = lane;
      cur = ys[i] + dir * R;
      prev = lane;
    }
    const int exit_lane = b.add_lane(LaneKind::Road, {{xs[j], cur}, {xs[j], cur + dir * stub}});
    col_out[ix_id(order.back(), j)] = exit_lane;
  }

  const LightTiming& t = cfg.lights;
  const double cycle = t.cycle();
  for (int i = 0; i < shape.rows; ++i) {
    for (int j = 0; j < shape.cols; ++j) {
      const int ix = ix_id(i, j);
      Intersection inter;
      inter.id = ix;
      inter.center = {xs[j], ys[i]};
      inter.half_size = R;
      net.intersections.push_back(inter);
      b.add_connector(ix, row_in[ix], row_out[ix], R);
      b.add_connector(ix, row_in[ix], col_out[ix], R);
      b.add_connector(ix, col_in[ix], col_out[ix], R);
      b.add_connector(ix, col_in[ix], row_out[ix], R);

      const double offset = rng.uniform(0.0, cycle);
      for (int k = 0; k < 2; ++k) {
        TrafficLight light;
        light.id = static_cast<int>(net.lights.size());
        light.lane = k == 0 ? row_in[ix] : col_in[ix];
        light.stop_s = net.lanes[light.lane].length() - 1.0;
        light.position = net.lanes[light.lane].centerline.point_at(light.stop_s);
        light.intersection = ix;
        light.green_start = std::fmod(offset + k * (cycle / 2.0), cycle);
        net.lights.push_back(light);
      }
    }
  }

  for (const Lane& lane : net.lanes) {
    if (lane.kind != LaneKind::Road || lane.predecessors.empty() || lane.successors.empty()) continue;
    if (rng.bernoulli(0.5) && lane.length() >= 30.0) net.crosswalks.push_back({lane.id, lane.length() / 2.0});
  }
  if (net.crosswalks.size() < 2) {
    for (const Lane& lane : net.lanes) {
      if (net.crosswalks.size() >= 2) break;
      if (lane.kind != LaneKind::Road || lane.predecessors.empty() || lane.successors.empty()) continue;
      const bool taken = std::any_of(net.crosswalks.begin(), net.crosswalks.end(),
                                     [&](const Crosswalk& c) { return c.lane == lane.id; });
      if (!taken) net.crosswalks.push_back({lane.id, lane.length() / 2.0});
    }
  }

  Rng route_rng(derive_seed({seed, 0x726f757465ULL}));
  net.routes = make_routes(net, route_rng, cfg.routes_per_town, shape.min_route);
  net.validate();
  return net;
}

RoadNetwork make_straight_map(double length, int route_count, double route_length, const SimConfig& cfg) {
  RoadNetwork net;
  net.map_id = "straight";
  net.lane_width = cfg.lane_width;
  net.timing = cfg.lights;
  NetworkBuilder b(net);
  b.add_lane(LaneKind::Road, {{0.0, 0.0}, {length, 0.0}});
  for (int k = 0; k < route_count; ++k) {
    RoutePlan r;
    r.lanes = {0};
    r.start_s = 5.0;
    r.goal_s = 5.0 + route_length;
    net.routes.push_back(r);
  }
  net.validate();
  return net;
}

std::vector<int> plan_lanes(const RoadNetwork& net, int from_lane, int goal_lane) {
  const std::size_t n = net.lanes.size();
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<int> parent(n, -1);
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  dist[from_lane] = 0.0;
  pq.push({0.0, from_lane});
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[u]) continue;
    if (u == goal_lane) break;
    for (int v : net.lanes[u].successors) {
      const double nd = d + net.lanes[u].length();
      if (nd < dist[v]) {
        dist[v] = nd;
        parent[v] = u;
        pq.push({nd, v});
      }
    }
  }
  if (!std::isfinite(dist[goal_lane])) return {};
  std::vector<int> path;
  for (int v = goal_lane; v != -1; v = parent[v]) path.push_back(v);
  std::reverse(path.begin(), path.end());
  return path;
}

}  // namespace affordrep

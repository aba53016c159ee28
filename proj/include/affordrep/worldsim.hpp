#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "affordrep/geometry.hpp"
#include "affordrep/rng.hpp"

namespace affordrep {

enum class TurnOption : std::uint8_t { Left, Right, Straight };
enum class Command : std::uint8_t { Continue = 0, Left = 1, Right = 2, Straight = 3 };
enum class LaneKind : std::uint8_t { Road, Connector };
enum class Density : std::uint8_t { Empty, Regular, Dense };
enum class Camera : std::uint8_t { Center = 0, Left = 1, Right = 2 };
enum class LightColor : std::uint8_t { Green, Amber, Red };
enum class AgentKind : std::uint8_t { Vehicle, Pedestrian };

const char* to_string(TurnOption t);
const char* to_string(Command c);
const char* to_string(Density d);
const char* to_string(Camera c);
Density density_from_string(const std::string& s);
Camera camera_from_string(const std::string& s);
Command command_for_turn(TurnOption t);

/// Thrown when a pose cannot be attached to any lane.
class OffRoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct KinematicsConfig {
  double throttle_accel = 3.0;  // k_t, m/s^2
  double brake_decel = 8.0;     // k_b, m/s^2
  double drag = 0.05;           // k_d, 1/s
  double wheelbase = 2.5;       // m
  double max_steer = 0.5;       // rad
};

struct RasterSpec {
  int size = 64;
  double resolution = 0.5;  // m per pixel
  int anchor_row = 48;      // ego reference point sits on this pixel-row boundary
  int anchor_col = 32;
};

struct DensityCounts {
  int vehicles = 0;
  int pedestrians = 0;
};

struct LightTiming {
  double green = 10.0;
  double amber = 2.0;
  double all_red = 2.0;
  double cycle() const { return 2.0 * (green + amber + all_red); }
};

struct SimConfig {
  std::uint64_t town_a_seed = 1701;
  std::uint64_t town_b_seed = 2903;
  double lane_width = 3.6;
  double turn_radius = 12.0;
  double stub_length = 40.0;
  KinematicsConfig kinematics;
  RasterSpec raster;
  DensityCounts empty{0, 0};
  DensityCounts regular{8, 12};
  DensityCounts dense{20, 40};
  LightTiming lights;
  double dt = 0.05;
  double hazard_distance = 10.0;
  double command_distance = 20.0;
  double lateral_camera_offset = 1.0;
  double pedestrian_cross_probability = 0.02;
  double pedestrian_cross_speed = 1.2;
  double sidewalk_offset = 3.3;
  double vehicle_length = 4.5;
  double vehicle_width = 1.9;
  double pedestrian_size = 0.6;
  int routes_per_town = 25;
  double town_a_min_route = 300.0;
  double town_b_min_route = 150.0;

  const DensityCounts& counts(Density d) const;
  std::uint64_t map_seed(const std::string& map_id) const;
};

struct Lane {
  int id = -1;
  LaneKind kind = LaneKind::Road;
  Polyline centerline;
  double width = 3.6;
  std::vector<int> successors;
  std::vector<int> predecessors;
  int intersection = -1;  // connectors only
  TurnOption turn = TurnOption::Straight;
  int from_lane = -1;  // connectors only
  int to_lane = -1;
  double length() const { return centerline.length(); }
};

struct Connection {
  int from_lane = -1;
  int connector = -1;
  int to_lane = -1;
  TurnOption turn = TurnOption::Straight;
};

struct Intersection {
  int id = -1;
  Vec2 center;
  double half_size = 0.0;
  std::vector<Connection> connections;
};

struct TrafficLight {
  int id = -1;
  int lane = -1;
  double stop_s = 0.0;
  Vec2 position;
  int intersection = -1;
  // Time within the cycle at which this light turns green.
  double green_start = 0.0;
};

struct Crosswalk {
  int lane = -1;
  double s = 0.0;
};

struct RoutePlan {
  std::vector<int> lanes;
  double start_s = 0.0;
  double goal_s = 0.0;
  bool operator==(const RoutePlan&) const = default;
};

struct RoadNetwork {
  std::string map_id;
  std::uint64_t seed = 0;
  double lane_width = 3.6;
  LightTiming timing;
  std::vector<Lane> lanes;
  std::vector<Intersection> intersections;
  std::vector<TrafficLight> lights;
  std::vector<Crosswalk> crosswalks;
  std::vector<RoutePlan> routes;

  // Throws std::logic_error when a structural invariant is broken.
  void validate() const;
  double route_length(const RoutePlan& r) const;
};

struct Action {
  double steer = 0.0;
  double throttle = 0.0;
  double brake = 0.0;

  Action() = default;
  Action(double s, double t, double b);
  bool operator==(const Action&) const = default;
};

struct Affordances {
  double hp = 0.0;
  double hv = 0.0;
  double hr = 0.0;
  double psi = 0.0;
  bool operator==(const Affordances&) const = default;
};

struct Ego {
  Pose pose;
  double speed = 0.0;
};

struct Agent {
  AgentKind kind = AgentKind::Vehicle;
  bool active = true;
  Pose pose;
  double speed = 0.0;
  int lane = -1;
  double s = 0.0;
  // vehicles
  int next_lane = -1;
  double cruise_speed = 0.0;
  // pedestrians
  int side = 1;
  int direction = 1;
  bool crossing = false;
  double offset = 0.0;
};

struct LightPhase {
  LightColor color = LightColor::Green;
  double timer = 0.0;  // seconds left in the current color
};

struct WorldState {
  std::shared_ptr<const RoadNetwork> network;
  SimConfig config;
  Ego ego;
  std::vector<Agent> agents;
  std::vector<LightPhase> lights;
  double sim_time = 0.0;
  Rng rng;
  int condition_id = 0;
  RoutePlan route;
  std::size_t route_cursor = 0;
  std::int64_t steps = 0;
};

struct StepEvents {
  bool collision = false;
  bool offroad = false;
  bool red_light_crossing = false;
  bool light_crossed = false;
  bool goal_reached = false;
  bool replanned = false;

  std::uint8_t flags() const;
  static StepEvents from_flags(std::uint8_t f);
  bool operator==(const StepEvents&) const = default;
};

namespace event_bits {
inline constexpr std::uint8_t kCollision = 1;
inline constexpr std::uint8_t kRedLight = 2;
inline constexpr std::uint8_t kGoal = 4;
inline constexpr std::uint8_t kOffroad = 8;
inline constexpr std::uint8_t kLightCrossed = 16;
inline constexpr std::uint8_t kReplanned = 32;
}  // namespace event_bits

struct LaneFix {
  int lane = -1;
  double s = 0.0;
  double lateral = 0.0;
  double psi = 0.0;
  double distance = 0.0;
};

/// Ego localization against the planned route.
struct RouteFix {
  bool on_route = false;
  std::size_t route_index = 0;
  LaneFix fix;
};

inline constexpr int kImageChannels = 3;
inline constexpr int kCommandCount = 4;

/// Raster pixel levels; the float image is level / 255.
using RasterLevels = std::vector<std::uint8_t>;

struct Observation {
  std::vector<float> image;  // [3, size, size] row-major
  float speed = 0.0f;
  std::array<float, kCommandCount> command{};
  int size = 64;

  Command command_index() const;
};

// Map construction. The seed is baked into SimConfig per map id.
RoadNetwork generate_map(const std::string& map_id, const SimConfig& cfg = {});
RoadNetwork generate_map(const std::string& map_id, std::uint64_t seed, const SimConfig& cfg);
// A single straight one-way road with no intersections; used for controller sanity suites.
RoadNetwork make_straight_map(double length, int route_count, double route_length, const SimConfig& cfg = {});

WorldState spawn_scenario(std::shared_ptr<const RoadNetwork> network, Density density, std::size_t route_index,
                          int condition_id, std::uint64_t seed, const SimConfig& cfg = {});

StepEvents advance(WorldState& state, const Action& action, double dt);
std::pair<WorldState, StepEvents> step(const WorldState& state, const Action& action, double dt);

LaneFix lane_localize(const Pose& pose, const RoadNetwork& network);
RouteFix locate_on_route(const WorldState& state);
Affordances compute_affordances(const WorldState& state);

/// One piece of the hazard corridor: lane arclength interval [s_from, s_to].
struct CorridorPiece {
  int lane = -1;
  double s_from = 0.0;
  double s_to = 0.0;
};
std::vector<CorridorPiece> corridor_ahead(const WorldState& state, const RouteFix& fix, double distance);

OrientedBox ego_footprint(const WorldState& state);
OrientedBox agent_footprint(const Agent& agent, const SimConfig& cfg);

Pose camera_pose(const WorldState& state, Camera camera);
// Copy of the state with the ego moved to the camera pose.
WorldState with_camera_pose(const WorldState& state, Camera camera);

Command next_command(const WorldState& state);
std::array<float, kCommandCount> one_hot(Command c);

RasterLevels render_levels(const WorldState& state, Camera camera);
Observation render_observation(const WorldState& state, Camera camera);
Observation observation_from_levels(const RasterLevels& levels, float speed, Command command, int size);
// World coordinates of a pixel center for a camera pose.
Vec2 pixel_to_world(const Pose& camera, const RasterSpec& spec, int row, int col);

// Light color a light shows at absolute time t.
LightColor light_color_at(const TrafficLight& light, const LightTiming& timing, double t);

// Shortest route (by length) from a lane to the goal lane; empty if unreachable.
std::vector<int> plan_lanes(const RoadNetwork& network, int from_lane, int goal_lane);

}  // namespace affordrep

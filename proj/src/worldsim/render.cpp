#include <algorithm>
#include <array>
#include <cmath>

#include "affordrep/worldsim.hpp"

namespace affordrep {

namespace {

constexpr std::array<int, 4> kRoadLevel{96, 80, 112, 72};
constexpr std::array<int, 4> kMarkLevel{224, 200, 248, 184};
constexpr std::array<int, 4> kNoiseAmp{0, 8, 16, 24};
constexpr std::uint8_t kVehicleLevel = 255;
constexpr std::uint8_t kPedestrianLevel = 153;
constexpr std::uint8_t kRedLevel = 255;
constexpr std::uint8_t kGreenLevel = 96;
constexpr double kStopBarHalfDepth = 0.5;

int condition_slot(int condition_id) { return ((condition_id % 4) + 4) % 4; }

// Fixed-pattern noise in [-amp, amp]; mirrored across the vertical image axis.
int pattern_noise(int condition, int row, int col, int size) {
  const int amp = kNoiseAmp[condition_slot(condition)];
  if (amp == 0) return 0;
  const int mcol = std::min(col, size - 1 - col);
  const std::uint64_t h = mix64(derive_seed({static_cast<std::uint64_t>(condition_slot(condition)),
                                             static_cast<std::uint64_t>(row), static_cast<std::uint64_t>(mcol)}));
  return static_cast<int>(h % static_cast<std::uint64_t>(2 * amp + 1)) - amp;
}

struct Frame {
  Vec2 origin;
  Vec2 forward;
  Vec2 right;
  RasterSpec spec;

  // Continuous pixel coordinates (row, col) of a world point; pixel centers sit at +0.5.
  std::pair<double, double> to_pixel(Vec2 p) const {
    const Vec2 d = p - origin;
    return {spec.anchor_row - dot(d, forward) / spec.resolution, spec.anchor_col + dot(d, right) / spec.resolution};
  }
};

struct PixelBox {
  int r0, r1, c0, c1;  // inclusive
  bool empty() const { return r0 > r1 || c0 > c1; }
};

PixelBox pixel_box(const Frame& f, std::initializer_list<Vec2> pts, double pad) {
  double rmin = 1e18, rmax = -1e18, cmin = 1e18, cmax = -1e18;
  for (Vec2 p : pts) {
    const auto [r, c] = f.to_pixel(p);
    rmin = std::min(rmin, r);
    rmax = std::max(rmax, r);
    cmin = std::min(cmin, c);
    cmax = std::max(cmax, c);
  }
  const double padpx = pad / f.spec.resolution + 1.0;
  const int n = f.spec.size;
  PixelBox b;
  b.r0 = std::max(0, static_cast<int>(std::floor(rmin - padpx)));
  b.r1 = std::min(n - 1, static_cast<int>(std::ceil(rmax + padpx)));
  b.c0 = std::max(0, static_cast<int>(std::floor(cmin - padpx)));
  b.c1 = std::min(n - 1, static_cast<int>(std::ceil(cmax + padpx)));
  return b;
}

void paint_box(const Frame& f, const std::vector<Vec2>& world, const OrientedBox& box, std::uint8_t level,
               std::uint8_t* plane) {
  const auto c = box.corners();
  const PixelBox pb = pixel_box(f, {c[0], c[1], c[2], c[3]}, 0.0);
  if (pb.empty()) return;
  const int n = f.spec.size;
  for (int r = pb.r0; r <= pb.r1; ++r)
    for (int col = pb.c0; col <= pb.c1; ++col)
      if (box.contains(world[r * n + col])) plane[r * n + col] = std::max(plane[r * n + col], level);
}

}  // namespace

Vec2 pixel_to_world(const Pose& camera, const RasterSpec& spec, int row, int col) {
  const double fwd = (spec.anchor_row - (row + 0.5)) * spec.resolution;
  const double right = ((col + 0.5) - spec.anchor_col) * spec.resolution;
  const double s = std::sin(camera.heading);
  const double c = std::cos(camera.heading);
  return {camera.x + fwd * c + right * s, camera.y + fwd * s - right * c};
}

RasterLevels render_levels(const WorldState& state, Camera camera) {
  const RoadNetwork& net = *state.network;
  const SimConfig& cfg = state.config;
  const RasterSpec& spec = cfg.raster;
  const int n = spec.size;
  const Pose cam = camera_pose(state, camera);
  const int slot = condition_slot(state.condition_id);

  Frame f;
  f.origin = cam.position();
  f.forward = unit_from_heading(cam.heading);
  f.right = {std::sin(cam.heading), -std::cos(cam.heading)};
  f.spec = spec;

  std::vector<Vec2> world(static_cast<std::size_t>(n) * n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) world[r * n + c] = pixel_to_world(cam, spec, r, c);

  RasterLevels out(static_cast<std::size_t>(kImageChannels) * n * n, 0);
  std::uint8_t* road = out.data();
  std::uint8_t* agents = out.data() + n * n;
  std::uint8_t* lights = out.data() + 2 * n * n;

  // 0 = off road, 1 = drivable, 2 = marking
  std::vector<std::uint8_t> cls(static_cast<std::size_t>(n) * n, 0);
  const double view = spec.resolution * n * 1.5;
  for (const Lane& lane : net.lanes) {
    const auto b = lane.centerline.bounds();
    if (b[0] > f.origin.x + view || b[2] < f.origin.x - view || b[1] > f.origin.y + view || b[3] < f.origin.y - view)
      continue;
    const double half = lane.width / 2.0;
    const auto& pts = lane.centerline.points();
    for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
      const Vec2 a = pts[k];
      const Vec2 e = pts[k + 1];
      const PixelBox pb = pixel_box(f, {a, e}, half);
      if (pb.empty()) continue;
      const double len = lane.centerline.segment_length(k);
      const Vec2 dir = lane.centerline.segment_direction(k);
      const Vec2 nrm = left_normal(dir);
      const double s0 = lane.centerline.segment_start(k);
      for (int r = pb.r0; r <= pb.r1; ++r) {
        for (int c = pb.c0; c <= pb.c1; ++c) {
          const Vec2 d = world[r * n + c] - a;
          const double t = dot(d, dir);
          const double lat = dot(d, nrm);
          double dist;
          if (t < 0.0) dist = norm(d);
          else if (t > len) dist = norm(world[r * n + c] - e);
          else dist = std::abs(lat);
          if (dist > half) continue;
          std::uint8_t v = 1;
          if (lane.kind == LaneKind::Road && t > 0.0 && t < len) {
            const double al = std::abs(lat);
            if (al >= half - 0.3 || (al < 0.2 && std::fmod(s0 + t, 6.0) < 3.0)) v = 2;
          }
          cls[r * n + c] = std::max(cls[r * n + c], v);
        }
      }
    }
  }
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const int i = r * n + c;
      int level = cls[i] == 0 ? 0 : (cls[i] == 1 ? kRoadLevel[slot] : kMarkLevel[slot]);
      level += pattern_noise(state.condition_id, r, c, n);
      road[i] = static_cast<std::uint8_t>(std::clamp(level, 0, 255));
    }
  }

  const double reach = view + 5.0;
  for (const Agent& a : state.agents) {
    if (!a.active) continue;
    const Vec2 d = a.pose.position() - f.origin;
    if (std::abs(d.x) > reach || std::abs(d.y) > reach) continue;
    paint_box(f, world, agent_footprint(a, cfg), a.kind == AgentKind::Vehicle ? kVehicleLevel : kPedestrianLevel,
              agents);
  }

  for (const TrafficLight& light : net.lights) {
    const Vec2 d = light.position - f.origin;
    if (std::abs(d.x) > reach || std::abs(d.y) > reach) continue;
    const Lane& lane = net.lanes[light.lane];
    OrientedBox bar;
    bar.center = light.position;
    bar.heading = lane.centerline.heading_at(light.stop_s);
    bar.half_length = kStopBarHalfDepth;
    bar.half_width = lane.width / 2.0;
    const bool stop = state.lights[light.id].color != LightColor::Green;
    paint_box(f, world, bar, stop ? kRedLevel : kGreenLevel, lights);
  }
  return out;
}

Observation observation_from_levels(const RasterLevels& levels, float speed, Command command, int size) {
  Observation o;
  o.size = size;
  o.image.resize(levels.size());
  for (std::size_t i = 0; i < levels.size(); ++i) o.image[i] = static_cast<float>(levels[i]) / 255.0f;
  o.speed = speed;
  o.command = one_hot(command);
  return o;
}

Observation render_observation(const WorldState& state, Camera camera) {
  return observation_from_levels(render_levels(state, camera), static_cast<float>(state.ego.speed),
                                 next_command(state), state.config.raster.size);
}

}  // namespace affordrep

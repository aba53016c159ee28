#include "affordrep/datasets.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "affordrep/stats.hpp"
#include "json.hpp"

namespace affordrep {

static_assert(std::endian::native == std::endian::little, "dataset streams assume a little-endian host");

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(DatasetRole r) { return r == DatasetRole::Du ? "Du" : "Dl"; }

std::int64_t Dataset::frame_count() const {
  std::int64_t n = 0;
  for (const Episode& e : episodes) n += static_cast<std::int64_t>(e.frames.size());
  return n;
}

namespace {

float as_float(double v) { return static_cast<float>(v); }

Action stored_action(const Action& a) { return Action(as_float(a.steer), as_float(a.throttle), as_float(a.brake)); }

Affordances stored_afford(const Affordances& a) {
  return {as_float(a.hp), as_float(a.hv), as_float(a.hr), as_float(a.psi)};
}

struct Perturbation {
  int steps_left = 0;
  double steer = 0.0;
};

}  // namespace

Dataset collect(const CollectConfig& cfg) {
  if (cfg.duration_steps <= 0) throw std::invalid_argument("collect: duration_steps must be positive");
  if (cfg.cameras.empty() || cfg.densities.empty() || cfg.conditions.empty())
    throw std::invalid_argument("collect: cameras, densities and conditions must be non-empty");
  auto net = std::make_shared<const RoadNetwork>(generate_map(cfg.map_id, cfg.sim));
  const double dt = cfg.sim.dt;

  Dataset ds;
  DatasetManifest& m = ds.manifest;
  m.role = DatasetRole::Du;
  m.policy = cfg.policy.kind;
  m.map_id = cfg.map_id;
  m.cameras = cfg.cameras;
  m.densities = cfg.densities;
  m.conditions = cfg.conditions;
  m.seed = cfg.seed;

  std::int64_t remaining = cfg.duration_steps;
  for (int k = 0; remaining > 0; ++k) {
    Episode ep;
    ep.id = k;
    ep.density = cfg.densities[k % cfg.densities.size()];
    ep.condition = cfg.conditions[k % cfg.conditions.size()];
    ep.route = static_cast<int>(k % net->routes.size());
    ep.seed = derive_seed({cfg.seed, static_cast<std::uint64_t>(k), 0x65706973ULL});
    WorldState st = spawn_scenario(net, ep.density, ep.route, ep.condition, ep.seed, cfg.sim);

    Rng noise(derive_seed({ep.seed, 0x6e6f697365ULL}));
    Rng policy_rng(derive_seed({cfg.policy.seed, ep.seed}));
    PIDState pid;
    RandomPolicyState rstate;
    Perturbation pert;
    const bool expert = cfg.policy.kind == PolicyKind::Expert;

    std::vector<std::vector<Frame>> per_cam(cfg.cameras.size());
    const std::int64_t cap = std::min<std::int64_t>(cfg.episode_cap, remaining);
    for (std::int64_t t = 0; t < cap; ++t) {
      const Affordances gt = compute_affordances(st);
      const PIDState pid_before = pid;
      Action act;
      if (expert) {
        auto [a, next] = control(gt, st.ego.speed, cfg.policy.gains, pid, dt);
        pid = next;
        const PerturbationConfig& pc = cfg.perturbation;
        if (pc.enabled) {
          if (pert.steps_left == 0 && !hazard_active(gt, cfg.policy.gains.tau) && st.ego.speed > 1.0 &&
              noise.bernoulli(pc.start_probability)) {
            const RouteFix rf = locate_on_route(st);
            const Lane* lane = rf.on_route ? &net->lanes[rf.fix.lane] : nullptr;
            if (lane && lane->kind == LaneKind::Road && std::abs(rf.fix.lateral) < 0.5 &&
                lane->length() - rf.fix.s > 15.0) {
              double sign = noise.bernoulli(0.5) ? 1.0 : -1.0;
              if (rf.fix.lateral > 0.2) sign = -1.0;
              if (rf.fix.lateral < -0.2) sign = 1.0;
              pert.steer = sign * noise.uniform(pc.steer_min, pc.steer_max);
              pert.steps_left = pc.min_steps + static_cast<int>(noise.below(pc.max_steps - pc.min_steps + 1));
            }
          }
          if (pert.steps_left > 0) {
            a = Action(pert.steer, a.throttle, a.brake);
            --pert.steps_left;
          }
        }
        act = stored_action(a);
      } else {
        auto [a, next] = random_action(rstate, policy_rng, cfg.policy.random);
        rstate = next;
        act = stored_action(a);
      }
      const Command cmd = next_command(st);

      for (std::size_t ci = 0; ci < cfg.cameras.size(); ++ci) {
        const Camera cam = cfg.cameras[ci];
        Frame f;
        f.camera = cam;
        f.condition = ep.condition;
        f.episode = ep.id;
        f.speed = as_float(st.ego.speed);
        f.command = cmd;
        f.levels = render_levels(st, cam);
        const Pose cp = camera_pose(st, cam);
        f.pose = {as_float(cp.x), as_float(cp.y), as_float(cp.heading), as_float(st.ego.speed)};
        if (cam == Camera::Center) {
          f.afford = stored_afford(gt);
          f.action = act;
        } else {
          const Affordances shifted = compute_affordances(with_camera_pose(st, cam));
          f.afford = stored_afford(shifted);
          if (expert) {
            f.action = stored_action(control(shifted, st.ego.speed, cfg.policy.gains, pid_before, dt).first);
          } else {
            f.action = act;
          }
        }
        per_cam[ci].push_back(std::move(f));
      }

      const StepEvents ev = advance(st, act, dt);
      for (auto& frames : per_cam) frames.back().events = ev.flags();
      --remaining;
      if (ev.collision || ev.goal_reached) break;
    }
    for (auto& frames : per_cam)
      for (Frame& f : frames) {
        f.index = static_cast<int>(ep.frames.size());
        ep.frames.push_back(std::move(f));
      }
    ds.episodes.push_back(std::move(ep));
  }
  m.total_frames = ds.frame_count();
  return ds;
}

std::vector<const Frame*> centre_frames(const Dataset& ds) {
  std::vector<const Frame*> out;
  for (const Episode& e : ds.episodes)
    for (const Frame& f : e.frames)
      if (f.camera == Camera::Center) out.push_back(&f);
  return out;
}

WeakSplitResult subsample_weak(const Dataset& du, double fraction, double sigma_target, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("subsample_weak: fraction must be in (0, 1]");
  if (!(sigma_target > 0.0)) throw std::invalid_argument("subsample_weak: sigma_target must be positive");

  struct Window {
    int episode;
    int start;
    double mean;
  };
  std::vector<Window> windows;
  std::int64_t n_centre = 0;
  for (std::size_t e = 0; e < du.episodes.size(); ++e) {
    const auto& frames = du.episodes[e].frames;
    int run_start = -1;
    for (int i = 0; i <= static_cast<int>(frames.size()); ++i) {
      const bool centre = i < static_cast<int>(frames.size()) && frames[i].camera == Camera::Center;
      if (centre) {
        ++n_centre;
        if (run_start < 0) run_start = i;
        continue;
      }
      if (run_start >= 0) {
        for (int s = run_start; s + kWeakWindow <= i; s += kWeakWindow) {
          double sum = 0.0;
          for (int j = s; j < s + kWeakWindow; ++j) sum += frames[j].afford.psi;
          windows.push_back({static_cast<int>(e), s, sum / kWeakWindow});
        }
        run_start = -1;
      }
    }
  }
  if (n_centre == 0) throw std::invalid_argument("subsample_weak: no centre-camera frames");

  const std::int64_t target = static_cast<std::int64_t>(std::ceil(fraction * static_cast<double>(n_centre) - 1e-9));
  const std::int64_t needed = (target + kWeakWindow - 1) / kWeakWindow;

  WeakSplitResult res;
  Dataset& dl = res.dl;
  dl.manifest = du.manifest;
  dl.manifest.role = DatasetRole::Dl;
  dl.manifest.cameras = {Camera::Center};
  dl.manifest.fraction = fraction;
  dl.manifest.sigma_target = sigma_target;
  dl.manifest.seed = seed;
  dl.manifest.warnings.clear();

  // Importance weights: target mass of each window's cell between midpoints of neighbouring sorted means,
  // i.e. Normal pdf over a nearest-neighbour estimate of the proposal density. Tied means share their cell.
  std::vector<double> weights(windows.size(), 0.0);
  if (!windows.empty()) {
    std::vector<std::size_t> by_mean(windows.size());
    for (std::size_t i = 0; i < by_mean.size(); ++i) by_mean[i] = i;
    std::stable_sort(by_mean.begin(), by_mean.end(),
                     [&](std::size_t a, std::size_t b) { return windows[a].mean < windows[b].mean; });
    double lo_cdf = 0.0;
    for (std::size_t g = 0; g < by_mean.size();) {
      std::size_t h = g;
      while (h < by_mean.size() && windows[by_mean[h]].mean == windows[by_mean[g]].mean) ++h;
      const double hi_cdf =
          h < by_mean.size()
              ? normal_cdf(0.5 * (windows[by_mean[h - 1]].mean + windows[by_mean[h]].mean), 0.0, sigma_target)
              : 1.0;
      const double share = std::max(hi_cdf - lo_cdf, 0.0) / static_cast<double>(h - g);
      for (std::size_t k = g; k < h; ++k) weights[by_mean[k]] = share;
      lo_cdf = hi_cdf;
      g = h;
    }
    double sw = 0.0, sw2 = 0.0;
    for (double w : weights) {
      sw += w;
      sw2 += w * w;
    }
    res.ess = sw2 > 0.0 ? sw * sw / sw2 : 0.0;
  }

  const bool infeasible = fraction >= 1.0 || windows.empty() || needed > static_cast<std::int64_t>(windows.size()) ||
                          static_cast<double>(needed) > res.ess;
  if (infeasible) {
    res.fell_back = true;
    std::ostringstream msg;
    msg << "weak split infeasible (fraction " << fraction << ", ESS " << res.ess << ", windows needed " << needed
        << "); using all centre frames";
    dl.manifest.warnings.push_back(msg.str());
    for (const Episode& e : du.episodes) {
      Episode out;
      out.id = static_cast<int>(dl.episodes.size());
      out.density = e.density;
      out.condition = e.condition;
      out.route = e.route;
      out.seed = e.seed;
      out.source_episode = e.id;
      out.source_start = -1;
      for (const Frame& f : e.frames) {
        if (f.camera != Camera::Center) continue;
        if (out.source_start < 0) out.source_start = f.index;
        Frame g = f;
        g.episode = out.id;
        g.index = static_cast<int>(out.frames.size());
        out.frames.push_back(std::move(g));
      }
      if (!out.frames.empty()) dl.episodes.push_back(std::move(out));
    }
    dl.manifest.total_frames = dl.frame_count();
    return res;
  }

  // Systematic resampling over windows sorted by mean psi.
  std::vector<std::size_t> order(windows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return windows[a].mean < windows[b].mean; });
  double total = 0.0;
  for (double w : weights) total += w;
  std::vector<double> cum(order.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    acc += weights[order[i]] / total;
    cum[i] = acc;
  }
  Rng rng(derive_seed({seed, 0x7765616bULL}));
  const double u0 = rng.uniform() / static_cast<double>(needed);
  std::vector<char> used(order.size(), 0);
  std::vector<std::size_t> picks;
  std::size_t pos = 0;
  for (std::int64_t k = 0; k < needed; ++k) {
    const double u = u0 + static_cast<double>(k) / static_cast<double>(needed);
    while (pos + 1 < cum.size() && cum[pos] < u) ++pos;
    std::size_t chosen = pos;
    if (used[chosen]) {
      // nearest unused neighbour in sorted order
      for (std::size_t d = 1; d < order.size(); ++d) {
        if (pos + d < order.size() && !used[pos + d]) {
          chosen = pos + d;
          break;
        }
        if (pos >= d && !used[pos - d]) {
          chosen = pos - d;
          break;
        }
      }
    }
    used[chosen] = 1;
    picks.push_back(order[chosen]);
  }
  std::sort(picks.begin(), picks.end());  // source order

  std::int64_t left = target;
  for (std::size_t p : picks) {
    const Window& w = windows[p];
    const Episode& src = du.episodes[w.episode];
    Episode out;
    out.id = static_cast<int>(dl.episodes.size());
    out.density = src.density;
    out.condition = src.condition;
    out.route = src.route;
    out.seed = src.seed;
    out.source_episode = src.id;
    out.source_start = w.start;
    const int take = static_cast<int>(std::min<std::int64_t>(kWeakWindow, left));
    for (int j = 0; j < take; ++j) {
      Frame g = src.frames[w.start + j];
      g.episode = out.id;
      g.index = j;
      out.frames.push_back(std::move(g));
    }
    left -= take;
    dl.episodes.push_back(std::move(out));
  }
  dl.manifest.total_frames = dl.frame_count();
  return res;
}

std::vector<PairRef> iterate_pairs(const Dataset& ds, int gap, std::optional<std::uint64_t> shuffle_seed) {
  if (gap < 1) throw std::invalid_argument("iterate_pairs: gap must be >= 1");
  std::vector<PairRef> out;
  for (std::size_t e = 0; e < ds.episodes.size(); ++e) {
    const auto& frames = ds.episodes[e].frames;
    std::size_t b = 0;
    while (b < frames.size()) {
      std::size_t end = b;
      while (end < frames.size() && frames[end].camera == frames[b].camera) ++end;
      for (std::size_t t = b; t + gap < end; ++t) out.push_back({static_cast<int>(e), static_cast<int>(t)});
      b = end;
    }
  }
  if (shuffle_seed) {
    Rng rng(derive_seed({*shuffle_seed, 0x7061697273ULL}));
    shuffle_in_place(out, rng);
  }
  return out;
}

// ---- on-disk format ----

namespace {

const char* const kStreams[] = {"image.f32", "speed.f32", "command.u8", "action.f32",
                                "afford.f32", "pose.f32", "events.u8", "camera.u8"};

std::size_t stream_record_bytes(const std::string& name) {
  if (name == "image.f32") return 3 * 64 * 64 * sizeof(float);
  if (name == "speed.f32") return sizeof(float);
  if (name == "action.f32") return 3 * sizeof(float);
  if (name == "afford.f32" || name == "pose.f32") return 4 * sizeof(float);
  return 1;
}

class StreamWriter {
 public:
  explicit StreamWriter(const fs::path& p) : path_(p), out_(p, std::ios::binary | std::ios::trunc) {
    if (!out_) throw DatasetError(DatasetErrorKind::Io, "cannot write " + p.string());
  }
  void bytes(const void* data, std::size_t n) {
    crc_ = crc32(crc_, static_cast<const Bytef*>(data), static_cast<uInt>(n));
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  }
  void f32(float v) { bytes(&v, sizeof v); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  std::uint32_t finish() {
    out_.close();
    if (!out_) throw DatasetError(DatasetErrorKind::Io, "write failed: " + path_.string());
    return static_cast<std::uint32_t>(crc_);
  }

 private:
  fs::path path_;
  std::ofstream out_;
  uLong crc_ = crc32(0L, Z_NULL, 0);
};

std::string hex32(std::uint32_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(8) << std::setfill('0') << v;
  return ss.str();
}

std::vector<char> read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DatasetError(DatasetErrorKind::MissingStream, "missing stream: " + p.string());
  in.seekg(0, std::ios::end);
  const auto n = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<char> buf(n);
  in.read(buf.data(), static_cast<std::streamsize>(n));
  return buf;
}

std::string episode_dir(int k) { return "ep_" + std::to_string(k); }

json manifest_json(const DatasetManifest& m, const std::vector<Episode>& episodes) {
  json j;
  j["schema"] = m.schema;
  j["role"] = to_string(m.role);
  j["policy"] = to_string(m.policy);
  j["map_id"] = m.map_id;
  j["cameras"] = json::array();
  for (Camera c : m.cameras) j["cameras"].push_back(to_string(c));
  j["densities"] = json::array();
  for (Density d : m.densities) j["densities"].push_back(to_string(d));
  j["conditions"] = m.conditions;
  j["fps"] = m.fps;
  j["seed"] = m.seed;
  j["total_frames"] = m.total_frames;
  j["fraction"] = m.fraction;
  j["sigma_target"] = m.sigma_target;
  j["warnings"] = m.warnings;
  j["episodes"] = json::array();
  for (const Episode& e : episodes) {
    json je;
    je["id"] = e.id;
    je["dir"] = episode_dir(e.id);
    je["frames"] = e.frames.size();
    je["density"] = to_string(e.density);
    je["condition"] = e.condition;
    je["route"] = e.route;
    je["seed"] = e.seed;
    je["source_episode"] = e.source_episode;
    je["source_start"] = e.source_start;
    j["episodes"].push_back(je);
  }
  return j;
}

template <typename T>
T get_field(const json& j, const char* key) {
  if (!j.contains(key)) throw DatasetError(DatasetErrorKind::Schema, std::string("manifest missing field: ") + key);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw DatasetError(DatasetErrorKind::Schema, std::string("manifest field ") + key + ": " + e.what());
  }
}

}  // namespace

void write_dataset(const Dataset& ds, const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw DatasetError(DatasetErrorKind::Io, "cannot create " + root.string());
  fs::remove(root / "manifest.json");
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && entry.path().filename().string().rfind("ep_", 0) == 0) fs::remove_all(entry.path());

  for (const Episode& ep : ds.episodes) {
    const fs::path dir = root / episode_dir(ep.id);
    fs::create_directories(dir);
    std::map<std::string, std::string> sums;
    {
      StreamWriter w(dir / "image.f32");
      std::vector<float> buf;
      for (const Frame& f : ep.frames) {
        if (f.levels.size() != 3u * 64u * 64u) throw std::invalid_argument("write_dataset: frame without a 3x64x64 image");
        buf.resize(f.levels.size());
        for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(f.levels[i]) / 255.0f;
        w.bytes(buf.data(), buf.size() * sizeof(float));
      }
      sums["image.f32"] = hex32(w.finish());
    }
    {
      StreamWriter w(dir / "speed.f32");
      for (const Frame& f : ep.frames) w.f32(f.speed);
      sums["speed.f32"] = hex32(w.finish());
    }
    {
      StreamWriter w(dir / "command.u8");
      for (const Frame& f : ep.frames) w.u8(static_cast<std::uint8_t>(f.command));
      sums["command.u8"] = hex32(w.finish());
    }
    {
      StreamWriter w(dir / "action.f32");
      for (const Frame& f : ep.frames) {
        w.f32(as_float(f.action.steer));
        w.f32(as_float(f.action.throttle));
        w.f32(as_float(f.action.brake));
      }
      sums["action.f32"] = hex32(w.finish());
    }
    {
      StreamWriter w(dir / "afford.f32");
      for (const Frame& f : ep.frames) {
        w.f32(as_float(f.afford.hp));
        w.f32(as_float(f.afford.hv));
        w.f32(as_float(f.afford.hr));
        w.f32(as_float(f.afford.psi));
      }
      sums["afford.f32"] = hex32(w.finish());
    }
    {
      StreamWriter w(dir / "pose.f32");
      for (const Frame& f : ep.frames)
        for (float v : f.pose) w.f32(v);
      sums["pose.f32"] = hex32(w.finish());
    }
    {
      StreamWriter w(dir / "events.u8");
      for (const Frame& f : ep.frames) w.u8(f.events);
      sums["events.u8"] = hex32(w.finish());
    }
    {
      StreamWriter w(dir / "camera.u8");
      for (const Frame& f : ep.frames) w.u8(static_cast<std::uint8_t>(f.camera));
      sums["camera.u8"] = hex32(w.finish());
    }
    std::ofstream cs(dir / "checksums.json", std::ios::trunc);
    cs << json(sums).dump(2) << "\n";
    if (!cs) throw DatasetError(DatasetErrorKind::Io, "cannot write checksums for " + dir.string());
  }
  // The manifest is the commit point.
  DatasetManifest m = ds.manifest;
  m.total_frames = ds.frame_count();
  const fs::path tmp = root / "manifest.json.tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << manifest_json(m, ds.episodes).dump(2) << "\n";
    if (!out) throw DatasetError(DatasetErrorKind::Io, "cannot write manifest");
  }
  fs::rename(tmp, root / "manifest.json");
}

Dataset read_dataset(const fs::path& root) {
  std::ifstream in(root / "manifest.json");
  if (!in) throw DatasetError(DatasetErrorKind::Io, "no manifest.json under " + root.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DatasetError(DatasetErrorKind::Schema, std::string("manifest is not valid JSON: ") + e.what());
  }
  Dataset ds;
  DatasetManifest& m = ds.manifest;
  m.schema = get_field<std::string>(j, "schema");
  if (m.schema != kDatasetSchema)
    throw DatasetError(DatasetErrorKind::Schema, "schema version mismatch: " + m.schema + " (expected " + kDatasetSchema + ")");
  try {
    const std::string role = get_field<std::string>(j, "role");
    if (role != "Du" && role != "Dl") throw DatasetError(DatasetErrorKind::Schema, "bad role: " + role);
    m.role = role == "Du" ? DatasetRole::Du : DatasetRole::Dl;
    m.policy = policy_kind_from_string(get_field<std::string>(j, "policy"));
    m.map_id = get_field<std::string>(j, "map_id");
    for (const auto& c : get_field<std::vector<std::string>>(j, "cameras")) m.cameras.push_back(camera_from_string(c));
    for (const auto& d : get_field<std::vector<std::string>>(j, "densities")) m.densities.push_back(density_from_string(d));
  } catch (const std::invalid_argument& e) {
    throw DatasetError(DatasetErrorKind::Schema, e.what());
  }
  m.conditions = get_field<std::vector<int>>(j, "conditions");
  m.fps = get_field<int>(j, "fps");
  m.seed = get_field<std::uint64_t>(j, "seed");
  m.total_frames = get_field<std::int64_t>(j, "total_frames");
  m.fraction = get_field<double>(j, "fraction");
  m.sigma_target = get_field<double>(j, "sigma_target");
  m.warnings = get_field<std::vector<std::string>>(j, "warnings");

  std::int64_t counted = 0;
  for (const json& je : get_field<json>(j, "episodes")) {
    Episode ep;
    ep.id = get_field<int>(je, "id");
    try {
      ep.density = density_from_string(get_field<std::string>(je, "density"));
    } catch (const std::invalid_argument& e) {
      throw DatasetError(DatasetErrorKind::Schema, e.what());
    }
    ep.condition = get_field<int>(je, "condition");
    ep.route = get_field<int>(je, "route");
    ep.seed = get_field<std::uint64_t>(je, "seed");
    ep.source_episode = get_field<int>(je, "source_episode");
    ep.source_start = get_field<int>(je, "source_start");
    const auto n = get_field<std::size_t>(je, "frames");
    const fs::path dir = root / get_field<std::string>(je, "dir");

    std::map<std::string, std::vector<char>> data;
    for (const char* name : kStreams) {
      std::vector<char> buf = read_file(dir / name);
      if (buf.size() != n * stream_record_bytes(name))
        throw DatasetError(DatasetErrorKind::Truncated, "stream " + (dir / name).string() + " has " +
                                                            std::to_string(buf.size()) + " bytes, expected " +
                                                            std::to_string(n * stream_record_bytes(name)));
      data[name] = std::move(buf);
    }
    json sums;
    {
      std::ifstream cs(dir / "checksums.json");
      if (!cs) throw DatasetError(DatasetErrorKind::MissingStream, "missing checksums.json in " + dir.string());
      try {
        cs >> sums;
      } catch (const json::exception& e) {
        throw DatasetError(DatasetErrorKind::Schema, std::string("bad checksums.json: ") + e.what());
      }
    }
    for (const char* name : kStreams) {
      if (!sums.contains(name)) throw DatasetError(DatasetErrorKind::Schema, std::string("no checksum for ") + name);
      const auto& buf = data[name];
      const auto crc = static_cast<std::uint32_t>(
          crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
      if (hex32(crc) != sums[name].get<std::string>())
        throw DatasetError(DatasetErrorKind::Checksum, "checksum mismatch in " + (dir / name).string());
    }

    auto f32 = [&](const char* name, std::size_t i) {
      float v;
      std::memcpy(&v, data[name].data() + i * sizeof(float), sizeof(float));
      return v;
    };
    auto u8 = [&](const char* name, std::size_t i) { return static_cast<std::uint8_t>(data[name][i]); };
    const std::size_t px = 3 * 64 * 64;
    ep.frames.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      Frame& f = ep.frames[i];
      f.levels.resize(px);
      for (std::size_t p = 0; p < px; ++p) {
        const float v = f32("image.f32", i * px + p);
        const long level = std::lround(v * 255.0f);
        if (level < 0 || level > 255 || static_cast<float>(level) / 255.0f != v)
          throw DatasetError(DatasetErrorKind::Schema, "image value off the 8-bit grid in " + dir.string());
        f.levels[p] = static_cast<std::uint8_t>(level);
      }
      f.speed = f32("speed.f32", i);
      const std::uint8_t cmd = u8("command.u8", i);
      const std::uint8_t cam = u8("camera.u8", i);
      if (cmd > 3 || cam > 2) throw DatasetError(DatasetErrorKind::Schema, "enum value out of range in " + dir.string());
      f.command = static_cast<Command>(cmd);
      f.camera = static_cast<Camera>(cam);
      f.action = Action(f32("action.f32", 3 * i), f32("action.f32", 3 * i + 1), f32("action.f32", 3 * i + 2));
      f.afford = {f32("afford.f32", 4 * i), f32("afford.f32", 4 * i + 1), f32("afford.f32", 4 * i + 2),
                  f32("afford.f32", 4 * i + 3)};
      for (int k = 0; k < 4; ++k) f.pose[k] = f32("pose.f32", 4 * i + k);
      f.events = u8("events.u8", i);
      f.condition = ep.condition;
      f.episode = ep.id;
      f.index = static_cast<int>(i);
    }
    counted += static_cast<std::int64_t>(n);
    ds.episodes.push_back(std::move(ep));
  }
  if (counted != m.total_frames)
    throw DatasetError(DatasetErrorKind::Schema, "manifest frame count " + std::to_string(m.total_frames) +
                                                     " differs from stream total " + std::to_string(counted));
  return ds;
}

}  // namespace affordrep

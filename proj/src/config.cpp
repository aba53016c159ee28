#include "affordrep/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "affordrep/checkpoint.hpp"

namespace affordrep {

using nlohmann::json;

const char* to_string(DriveSource s) {
  switch (s) {
    case DriveSource::Expert: return "expert";
    case DriveSource::Probe: return "probe";
    case DriveSource::Finetune: return "finetune";
  }
  return "?";
}

namespace {

DriveSource drive_source_from_string(const std::string& s) {
  if (s == "expert") return DriveSource::Expert;
  if (s == "probe") return DriveSource::Probe;
  if (s == "finetune") return DriveSource::Finetune;
  throw std::invalid_argument("unknown driver: " + s);
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }
std::string index(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

const char* type_name(const json& v) { return v.type_name(); }

// Field reader over one JSON object that remembers which keys were consumed.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  const json* find(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string at(const std::string& key) const { return join(path_, key); }

  void number(const std::string& key, double& v, double lo = -std::numeric_limits<double>::infinity(),
              double hi = std::numeric_limits<double>::infinity()) {
    if (const json* x = find(key)) v = as_number(*x, at(key), lo, hi);
  }
  void integer(const std::string& key, int& v, long long lo, long long hi) {
    if (const json* x = find(key)) v = static_cast<int>(as_integer(*x, at(key), lo, hi));
  }
  void integer64(const std::string& key, std::int64_t& v, long long lo, long long hi) {
    if (const json* x = find(key)) v = as_integer(*x, at(key), lo, hi);
  }
  void seed(const std::string& key, std::uint64_t& v) {
    if (const json* x = find(key)) v = as_seed(*x, at(key));
  }
  void boolean(const std::string& key, bool& v) {
    if (const json* x = find(key)) {
      if (!x->is_boolean()) throw ConfigError(at(key), std::string("expected a boolean, got ") + type_name(*x));
      v = x->get<bool>();
    }
  }
  template <typename Parse>
  void text(const std::string& key, Parse&& parse) {
    if (const json* x = find(key)) parse(as_text(*x, at(key)), at(key));
  }
  template <typename Elem>
  void list(const std::string& key, Elem&& elem, bool allow_empty = false) {
    const json* x = find(key);
    if (!x) return;
    if (!x->is_array()) throw ConfigError(at(key), std::string("expected an array, got ") + type_name(*x));
    if (x->empty() && !allow_empty) throw ConfigError(at(key), "must not be empty");
    for (std::size_t i = 0; i < x->size(); ++i) elem((*x)[i], index(at(key), i));
  }
  // Missing sections read as empty objects so every field takes its default.
  Obj sub(const std::string& key) {
    const json* x = find(key);
    return Obj(x ? *x : empty(), at(key));
  }
  void done() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(at(k), "unknown field");
  }

  static double as_number(const json& x, const std::string& path, double lo, double hi) {
    if (!x.is_number()) throw ConfigError(path, std::string("expected a number, got ") + type_name(x));
    const double v = x.get<double>();
    if (!std::isfinite(v) || v < lo || v > hi) throw ConfigError(path, "value out of range");
    return v;
  }
  static long long as_integer(const json& x, const std::string& path, long long lo, long long hi) {
    if (!x.is_number_integer()) throw ConfigError(path, std::string("expected an integer, got ") + type_name(x));
    if (x.is_number_unsigned() && x.get<std::uint64_t>() > static_cast<std::uint64_t>(hi))
      throw ConfigError(path, "value out of range");
    const long long v = x.get<long long>();
    if (v < lo || v > hi) throw ConfigError(path, "value out of range");
    return v;
  }
  static std::uint64_t as_seed(const json& x, const std::string& path) {
    if (!x.is_number_unsigned() && !(x.is_number_integer() && x.get<long long>() >= 0))
      throw ConfigError(path, "expected a non-negative integer seed");
    return x.get<std::uint64_t>();
  }
  static std::string as_text(const json& x, const std::string& path) {
    if (!x.is_string()) throw ConfigError(path, std::string("expected a string, got ") + type_name(x));
    return x.get<std::string>();
  }

 private:
  static const json& empty() {
    static const json e = json::object();
    return e;
  }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// Converts std::invalid_argument from enum parsers into a ConfigError at `path`.
template <typename F>
auto at_path(const std::string& path, F&& f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
}

constexpr long long kBig = 1LL << 40;

std::vector<std::uint64_t> seeds_from(Obj& o, const std::string& key, std::vector<std::uint64_t> def) {
  bool given = false;
  std::vector<std::uint64_t> out;
  o.list(key, [&](const json& x, const std::string& p) {
    given = true;
    out.push_back(Obj::as_seed(x, p));
  });
  return given ? out : def;
}

void read_sim(Obj o, SimConfig& s) {
  o.seed("town_a_seed", s.town_a_seed);
  o.seed("town_b_seed", s.town_b_seed);
  o.number("lane_width", s.lane_width, 2.0, 6.0);
  o.number("turn_radius", s.turn_radius, 4.0, 40.0);
  o.number("stub_length", s.stub_length, 10.0, 200.0);
  {
    Obj k = o.sub("kinematics");
    k.number("throttle_accel", s.kinematics.throttle_accel, 0.0, 50.0);
    k.number("brake_decel", s.kinematics.brake_decel, 0.0, 50.0);
    k.number("drag", s.kinematics.drag, 0.0, 10.0);
    k.number("wheelbase", s.kinematics.wheelbase, 0.5, 10.0);
    k.number("max_steer", s.kinematics.max_steer, 0.01, 1.5);
    k.done();
  }
  {
    Obj r = o.sub("raster");
    r.integer("size", s.raster.size, 64, 64);
    r.number("resolution", s.raster.resolution, 0.05, 5.0);
    r.integer("anchor_row", s.raster.anchor_row, 0, 63);
    r.integer("anchor_col", s.raster.anchor_col, 0, 63);
    r.done();
  }
  {
    Obj d = o.sub("density");
    for (auto [name, counts] : {std::pair{"empty", &s.empty}, {"regular", &s.regular}, {"dense", &s.dense}}) {
      Obj c = d.sub(name);
      c.integer("vehicles", counts->vehicles, 0, 500);
      c.integer("pedestrians", counts->pedestrians, 0, 500);
      c.done();
    }
    d.done();
  }
  {
    Obj l = o.sub("lights");
    l.number("green", s.lights.green, 0.5, 600.0);
    l.number("amber", s.lights.amber, 0.0, 60.0);
    l.number("all_red", s.lights.all_red, 0.0, 60.0);
    l.done();
  }
  o.number("dt", s.dt, 1e-3, 1.0);
  o.number("hazard_distance", s.hazard_distance, 0.0, 100.0);
  o.number("command_distance", s.command_distance, 0.0, 200.0);
  o.number("lateral_camera_offset", s.lateral_camera_offset, 0.0, 3.0);
  o.number("pedestrian_cross_probability", s.pedestrian_cross_probability, 0.0, 1.0);
  o.number("pedestrian_cross_speed", s.pedestrian_cross_speed, 0.0, 10.0);
  o.number("sidewalk_offset", s.sidewalk_offset, 0.0, 20.0);
  o.number("vehicle_length", s.vehicle_length, 0.5, 20.0);
  o.number("vehicle_width", s.vehicle_width, 0.5, 5.0);
  o.number("pedestrian_size", s.pedestrian_size, 0.1, 3.0);
  o.integer("routes_per_town", s.routes_per_town, 1, 1000);
  o.number("town_a_min_route", s.town_a_min_route, 0.0, 1e5);
  o.number("town_b_min_route", s.town_b_min_route, 0.0, 1e5);
  o.done();
}

void read_gains(Obj o, PIDGains& g) {
  o.number("kp", g.kp);
  o.number("ki", g.ki);
  o.number("kd", g.kd);
  o.number("speed_kp", g.speed_kp);
  o.number("speed_ki", g.speed_ki);
  o.number("speed_kd", g.speed_kd);
  o.number("v_target", g.v_target, 0.0, 50.0);
  o.number("tau", g.tau, 1e-6, 1.0 - 1e-6);
  o.number("i_max", g.i_max, 1e-9, 1e6);
  o.done();
}

void read_collect(Obj o, CollectConfig& c) {
  o.text("map", [&](const std::string& s, const std::string& p) {
    if (s != "townA" && s != "townB") throw ConfigError(p, "unknown map: " + s);
    c.map_id = s;
  });
  o.integer64("steps", c.duration_steps, 1, kBig);
  o.seed("seed", c.seed);
  o.integer("episode_cap", c.episode_cap, 1, 1000000);
  bool cams = false;
  std::vector<Camera> cameras;
  o.list("cameras", [&](const json& x, const std::string& p) {
    cams = true;
    cameras.push_back(at_path(p, [&] { return camera_from_string(Obj::as_text(x, p)); }));
  });
  if (cams) {
    if (cameras.front() != Camera::Center) throw ConfigError(o.at("cameras"), "the first camera must be center");
    c.cameras = cameras;
  }
  bool dens = false;
  std::vector<Density> densities;
  o.list("densities", [&](const json& x, const std::string& p) {
    dens = true;
    densities.push_back(at_path(p, [&] { return density_from_string(Obj::as_text(x, p)); }));
  });
  if (dens) c.densities = densities;
  bool conds = false;
  std::vector<int> conditions;
  o.list("conditions", [&](const json& x, const std::string& p) {
    conds = true;
    conditions.push_back(static_cast<int>(Obj::as_integer(x, p, 0, 3)));
  });
  if (conds) c.conditions = conditions;
  {
    Obj p = o.sub("policy");
    p.text("kind", [&](const std::string& s, const std::string& path) {
      c.policy.kind = at_path(path, [&] { return policy_kind_from_string(s); });
    });
    p.seed("seed", c.policy.seed);
    Obj r = p.sub("random");
    r.number("steer_std", c.policy.random.steer_std, 0.0, 2.0);
    r.number("steer_decay", c.policy.random.steer_decay, 0.0, 1.0);
    r.number("p_go_to_stop", c.policy.random.p_go_to_stop, 0.0, 1.0);
    r.number("p_stop_to_go", c.policy.random.p_stop_to_go, 0.0, 1.0);
    r.number("go_throttle", c.policy.random.go_throttle, 0.0, 1.0);
    r.number("stop_brake", c.policy.random.stop_brake, 0.0, 1.0);
    r.done();
    p.done();
  }
  {
    Obj p = o.sub("perturbation");
    PerturbationConfig& q = c.perturbation;
    p.boolean("enabled", q.enabled);
    p.number("start_probability", q.start_probability, 0.0, 1.0);
    p.number("steer_min", q.steer_min, 0.0, 1.0);
    p.number("steer_max", q.steer_max, 0.0, 1.0);
    p.integer("min_steps", q.min_steps, 1, 100000);
    p.integer("max_steps", q.max_steps, 1, 100000);
    if (q.steer_min > q.steer_max) throw ConfigError(p.at("steer_min"), "must not exceed steer_max");
    if (q.min_steps > q.max_steps) throw ConfigError(p.at("min_steps"), "must not exceed max_steps");
    p.done();
  }
  o.done();
}

std::vector<PretrainMethod> read_methods(Obj& o) {
  std::vector<PretrainMethod> out;
  const json* x = o.find("method");
  if (!x) return {PretrainMethod::Bc};
  const std::string path = o.at("method");
  auto one = [&](const json& v, const std::string& p) {
    out.push_back(at_path(p, [&] { return pretrain_method_from_string(Obj::as_text(v, p)); }));
  };
  if (x->is_array()) {
    if (x->empty()) throw ConfigError(path, "must not be empty");
    for (std::size_t i = 0; i < x->size(); ++i) one((*x)[i], index(path, i));
  } else {
    one(*x, path);
  }
  return out;
}

void read_pretrain(Obj o, PretrainStage& s) {
  s.methods = read_methods(o);
  TrainConfig& t = s.train;
  o.number("lr", t.lr, 0.0, 1.0);
  o.integer("batch", t.batch, 2, 100000);
  o.integer("iterations", t.iterations, 0, 100000000);
  o.number("lambda_v", t.weights.lambda_v, 0.0, 1e6);
  o.number("lambda_fwd", t.weights.lambda_fwd, 0.0, 1e6);
  s.seeds = seeds_from(o, "seeds", s.seeds);
  {
    Obj e = o.sub("encoder");
    EncoderConfig& c = t.encoder;
    e.integer("image_size", c.image_size, 64, 64);
    bool given = false;
    std::vector<int> ch;
    e.list("channels", [&](const json& x, const std::string& p) {
      given = true;
      ch.push_back(static_cast<int>(Obj::as_integer(x, p, 1, 4096)));
    });
    if (given) {
      if (ch.size() != 3) throw ConfigError(e.at("channels"), "expected exactly 3 entries");
      c.channels = {ch[0], ch[1], ch[2]};
    }
    e.integer("image_features", c.image_features, 1, 1 << 16);
    e.integer("branch", c.branch, 1, 1 << 16);
    e.integer("d_z", c.d_z, 1, 1 << 16);
    e.done();
  }
  {
    Obj h = o.sub("heads");
    h.integer("hidden", t.heads.hidden, 1, 1 << 16);
    h.integer("embed", t.heads.embed, 1, 1 << 16);
    h.number("dropout", t.heads.dropout, 0.0, 0.99);
    h.done();
  }
  o.done();
}

void read_affordance(Obj o, AffordanceStage& s) {
  AffordanceTrainConfig& t = s.train;
  o.text("mode", [&](const std::string& v, const std::string& p) {
    t.mode = at_path(p, [&] { return head_mode_from_string(v); });
  });
  o.integer("iterations", t.iterations, 0, 100000000);
  o.integer("batch", t.batch, 1, 100000);
  o.number("lr", t.lr, 0.0, 1.0);
  o.number("weight_decay", t.weight_decay, 0.0, 1e6);
  o.number("lambda_psi", t.loss.lambda_psi, 0.0, 1e6);
  bool given = false;
  std::vector<double> pw;
  o.list("pos_weight", [&](const json& x, const std::string& p) {
    given = true;
    pw.push_back(Obj::as_number(x, p, 0.0, 1e6));
  });
  if (given) {
    if (pw.size() != 3) throw ConfigError(o.at("pos_weight"), "expected exactly 3 entries");
    t.loss.pos_weight = {pw[0], pw[1], pw[2]};
  }
  s.seeds = seeds_from(o, "seeds", s.seeds);
  o.done();
}

std::vector<double> doubles_from(Obj& o, const std::string& key, std::vector<double> def) {
  bool given = false;
  std::vector<double> out;
  o.list(key, [&](const json& x, const std::string& p) {
    given = true;
    out.push_back(Obj::as_number(x, p, -1e6, 1e6));
  });
  return given ? out : def;
}

void read_controller(Obj o, ControllerStage& s) {
  if (const json* g = o.find("gains")) {
    if (g->is_string()) {
      if (g->get<std::string>() != "tune") throw ConfigError(o.at("gains"), "expected an object or \"tune\"");
      s.tune = true;
    } else {
      s.tune = false;
      read_gains(Obj(*g, o.at("gains")), s.gains);
    }
  }
  {
    Obj g = o.sub("grid");
    if (const json* st = g.find("start")) read_gains(Obj(*st, g.at("start")), s.grid.start);
    s.grid.kp = doubles_from(g, "kp", s.grid.kp);
    s.grid.ki = doubles_from(g, "ki", s.grid.ki);
    s.grid.kd = doubles_from(g, "kd", s.grid.kd);
    g.integer("max_sweeps", s.grid.max_sweeps, 1, 100);
    g.done();
  }
  o.done();
}

void read_eval(Obj o, EvalStage& s) {
  bool towns = false;
  std::vector<std::string> tv;
  o.list("towns", [&](const json& x, const std::string& p) {
    towns = true;
    const std::string t = Obj::as_text(x, p);
    if (t != "townA" && t != "townB") throw ConfigError(p, "unknown map: " + t);
    tv.push_back(t);
  });
  if (towns) s.towns = tv;
  bool dens = false;
  std::vector<Density> dv;
  o.list("densities", [&](const json& x, const std::string& p) {
    dens = true;
    dv.push_back(at_path(p, [&] { return density_from_string(Obj::as_text(x, p)); }));
  });
  if (dens) s.densities = dv;
  bool conds = false;
  std::vector<int> cv;
  o.list("conditions", [&](const json& x, const std::string& p) {
    conds = true;
    cv.push_back(static_cast<int>(Obj::as_integer(x, p, 0, 3)));
  });
  if (conds) s.conditions = cv;
  s.seeds = seeds_from(o, "seeds", s.seeds);
  o.integer("routes", s.routes, 1, 1000);
  o.integer("step_cap", s.step_cap, 1, 10000000);
  o.text("driver", [&](const std::string& v, const std::string& p) {
    s.driver = at_path(p, [&] { return drive_source_from_string(v); });
  });
  o.text("method", [&](const std::string& v, const std::string& p) {
    s.method = at_path(p, [&] { return pretrain_method_from_string(v); });
  });
  {
    Obj t = o.sub("test");
    t.text("map", [&](const std::string& v, const std::string& p) {
      if (v != "townA" && v != "townB") throw ConfigError(p, "unknown map: " + v);
      s.test.map_id = v;
    });
    t.integer64("steps", s.test.steps, 1, kBig);
    t.seed("seed", s.test.seed);
    t.done();
  }
  o.done();
}

json gains_json(const PIDGains& g) {
  return {{"kp", g.kp},         {"ki", g.ki},         {"kd", g.kd},   {"speed_kp", g.speed_kp},
          {"speed_ki", g.speed_ki}, {"speed_kd", g.speed_kd}, {"v_target", g.v_target}, {"tau", g.tau},
          {"i_max", g.i_max}};
}

template <typename E>
json names(const std::vector<E>& v) {
  json a = json::array();
  for (const E& e : v) a.push_back(to_string(e));
  return a;
}

}  // namespace

ExperimentConfig parse_config(const json& doc) {
  ExperimentConfig cfg;
  Obj root(doc, "");
  root.text("schema", [](const std::string& s, const std::string& p) {
    if (s != kConfigSchema) throw ConfigError(p, "unsupported schema " + s);
  });
  read_sim(root.sub("sim"), cfg.sim);
  read_collect(root.sub("collect"), cfg.collect);
  cfg.collect.sim = cfg.sim;
  {
    Obj w = root.sub("weak");
    w.number("fraction", cfg.weak.fraction, 1e-9, 1.0);
    w.number("sigma_target", cfg.weak.sigma_target, 1e-6, 10.0);
    w.seed("seed", cfg.weak.seed);
    w.done();
  }
  read_pretrain(root.sub("pretrain"), cfg.pretrain);
  read_affordance(root.sub("affordance"), cfg.affordance);
  read_controller(root.sub("controller"), cfg.controller);
  read_eval(root.sub("eval"), cfg.eval);
  root.done();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(doc);
}

json to_json(const ExperimentConfig& cfg) {
  const SimConfig& s = cfg.sim;
  auto counts = [](const DensityCounts& d) { return json{{"vehicles", d.vehicles}, {"pedestrians", d.pedestrians}}; };
  json sim = {
      {"town_a_seed", s.town_a_seed},
      {"town_b_seed", s.town_b_seed},
      {"lane_width", s.lane_width},
      {"turn_radius", s.turn_radius},
      {"stub_length", s.stub_length},
      {"kinematics",
       {{"throttle_accel", s.kinematics.throttle_accel},
        {"brake_decel", s.kinematics.brake_decel},
        {"drag", s.kinematics.drag},
        {"wheelbase", s.kinematics.wheelbase},
        {"max_steer", s.kinematics.max_steer}}},
      {"raster",
       {{"size", s.raster.size},
        {"resolution", s.raster.resolution},
        {"anchor_row", s.raster.anchor_row},
        {"anchor_col", s.raster.anchor_col}}},
      {"density", {{"empty", counts(s.empty)}, {"regular", counts(s.regular)}, {"dense", counts(s.dense)}}},
      {"lights", {{"green", s.lights.green}, {"amber", s.lights.amber}, {"all_red", s.lights.all_red}}},
      {"dt", s.dt},
      {"hazard_distance", s.hazard_distance},
      {"command_distance", s.command_distance},
      {"lateral_camera_offset", s.lateral_camera_offset},
      {"pedestrian_cross_probability", s.pedestrian_cross_probability},
      {"pedestrian_cross_speed", s.pedestrian_cross_speed},
      {"sidewalk_offset", s.sidewalk_offset},
      {"vehicle_length", s.vehicle_length},
      {"vehicle_width", s.vehicle_width},
      {"pedestrian_size", s.pedestrian_size},
      {"routes_per_town", s.routes_per_town},
      {"town_a_min_route", s.town_a_min_route},
      {"town_b_min_route", s.town_b_min_route}};

  const CollectConfig& c = cfg.collect;
  const RandomPolicyConfig& r = c.policy.random;
  const PerturbationConfig& q = c.perturbation;
  json conditions = c.conditions;
  json collect = {
      {"map", c.map_id},
      {"steps", c.duration_steps},
      {"seed", c.seed},
      {"episode_cap", c.episode_cap},
      {"cameras", names(c.cameras)},
      {"densities", names(c.densities)},
      {"conditions", conditions},
      {"policy",
       {{"kind", to_string(c.policy.kind)},
        {"seed", c.policy.seed},
        {"random",
         {{"steer_std", r.steer_std},
          {"steer_decay", r.steer_decay},
          {"p_go_to_stop", r.p_go_to_stop},
          {"p_stop_to_go", r.p_stop_to_go},
          {"go_throttle", r.go_throttle},
          {"stop_brake", r.stop_brake}}}}},
      {"perturbation",
       {{"enabled", q.enabled},
        {"start_probability", q.start_probability},
        {"steer_min", q.steer_min},
        {"steer_max", q.steer_max},
        {"min_steps", q.min_steps},
        {"max_steps", q.max_steps}}}};

  const TrainConfig& t = cfg.pretrain.train;
  json pretrain = {{"method", names(cfg.pretrain.methods)},
                   {"lr", t.lr},
                   {"batch", t.batch},
                   {"iterations", t.iterations},
                   {"lambda_v", t.weights.lambda_v},
                   {"lambda_fwd", t.weights.lambda_fwd},
                   {"seeds", cfg.pretrain.seeds},
                   {"encoder", to_json(t.encoder)},
                   {"heads", to_json(t.heads)}};

  const AffordanceTrainConfig& a = cfg.affordance.train;
  json affordance = {{"mode", to_string(a.mode)},
                     {"iterations", a.iterations},
                     {"batch", a.batch},
                     {"lr", a.lr},
                     {"weight_decay", a.weight_decay},
                     {"lambda_psi", a.loss.lambda_psi},
                     {"pos_weight", a.loss.pos_weight},
                     {"seeds", cfg.affordance.seeds}};

  const GainGrid& g = cfg.controller.grid;
  json controller = {{"gains", cfg.controller.tune ? json("tune") : gains_json(cfg.controller.gains)},
                     {"grid",
                      {{"start", gains_json(g.start)},
                       {"kp", g.kp},
                       {"ki", g.ki},
                       {"kd", g.kd},
                       {"max_sweeps", g.max_sweeps}}}};

  const EvalStage& e = cfg.eval;
  json eval = {{"towns", e.towns},
               {"densities", names(e.densities)},
               {"conditions", e.conditions},
               {"seeds", e.seeds},
               {"routes", e.routes},
               {"step_cap", e.step_cap},
               {"driver", to_string(e.driver)},
               {"method", to_string(e.method)},
               {"test", {{"map", e.test.map_id}, {"steps", e.test.steps}, {"seed", e.test.seed}}}};

  return {{"schema", kConfigSchema},
          {"sim", sim},
          {"collect", collect},
          {"weak", {{"fraction", cfg.weak.fraction}, {"sigma_target", cfg.weak.sigma_target}, {"seed", cfg.weak.seed}}},
          {"pretrain", pretrain},
          {"affordance", affordance},
          {"controller", controller},
          {"eval", eval}};
}

void apply_seed_override(ExperimentConfig& cfg, std::uint64_t n) {
  cfg.collect.seed = n;
  cfg.weak.seed = n;
  cfg.pretrain.seeds = {n};
  cfg.affordance.seeds = {n};
  cfg.eval.seeds = {n};
}

std::string config_hash(const ExperimentConfig& cfg) { return sha256_hex(to_json(cfg).dump()); }

std::string stage_hash(const ExperimentConfig& cfg, const std::string& stage) {
  const json full = to_json(cfg);
  json part = json::object();
  auto data = [&] {
    part["sim"] = full.at("sim");
    part["collect"] = full.at("collect");
    part["weak"] = full.at("weak");
    part["test"] = full.at("eval").at("test");
  };
  if (stage == "collect") {
    data();
  } else if (stage == "pretrain") {
    data();
    part["pretrain"] = full.at("pretrain");
  } else if (stage == "probe" || stage == "finetune") {
    data();
    part["pretrain"] = full.at("pretrain");
    part["affordance"] = full.at("affordance");
  } else if (stage == "tune-pid") {
    part["sim"] = full.at("sim");
    part["controller"] = full.at("controller");
  } else if (stage == "drive") {
    part = full;
  } else {
    throw std::invalid_argument("unknown stage: " + stage);
  }
  part["stage"] = stage;
  return sha256_hex(part.dump());
}

}  // namespace affordrep

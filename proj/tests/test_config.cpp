#include <doctest.h>

#include <fstream>

#include "affordrep/config.hpp"
#include "affordrep/report.hpp"

using namespace affordrep;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = AFFORDREP_SOURCE_DIR;

json read(const fs::path& p) {
  std::ifstream f(p);
  return json::parse(f);
}

std::string error_path(const json& doc) {
  try {
    parse_config(doc);
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "<no error>";
}

}  // namespace

TEST_CASE("config: defaults round-trip and shipped configs parse") {
  const json d = to_json(ExperimentConfig{});
  CHECK(to_json(parse_config(d)) == d);
  CHECK(to_json(parse_config(json::object())) == d);
  for (const char* name : {"default.json", "toy.json"}) {
    const ExperimentConfig c = load_config(kSource / "data/configs" / name);
    CHECK(to_json(parse_config(to_json(c))) == to_json(c));
  }
  const ExperimentConfig def = load_config(kSource / "data/configs/default.json");
  CHECK(def.collect.duration_steps == 40000);
  CHECK(def.pretrain.methods.size() == 4);
  CHECK(def.pretrain.train.lr == 2e-4);
  CHECK(def.weak.sigma_target == 0.06);
  CHECK(def.collect.sim.dt == def.sim.dt);
}

TEST_CASE("config: schema violations name the field path") {
  CHECK(error_path({{"pretrain", {{"method", "behaviour"}}}}) == "pretrain.method");
  CHECK(error_path({{"pretrain", {{"method", {"bc", "nope"}}}}}) == "pretrain.method[1]");
  CHECK(error_path({{"collect", {{"stepz", 10}}}}) == "collect.stepz");
  CHECK(error_path({{"pretrain", {{"batch", "64"}}}}) == "pretrain.batch");
  CHECK(error_path({{"pretrain", {{"batch", 6.5}}}}) == "pretrain.batch");
  CHECK(error_path({{"weak", {{"fraction", 0.0}}}}) == "weak.fraction");
  CHECK(error_path({{"weak", {{"seed", -1}}}}) == "weak.seed");
  CHECK(error_path({{"affordance", {{"weight_decay", -1.0}}}}) == "affordance.weight_decay");
  CHECK(error_path({{"collect", {{"cameras", {"left", "center"}}}}}) == "collect.cameras");
  CHECK(error_path({{"collect", {{"densities", {"busy"}}}}}) == "collect.densities[0]");
  CHECK(error_path({{"eval", {{"test", {{"map", "townC"}}}}}}) == "eval.test.map");
  CHECK(error_path({{"controller", {{"gains", "auto"}}}}) == "controller.gains");
  CHECK(error_path({{"controller", {{"gains", {{"tau", 1.5}}}}}}) == "controller.gains.tau");
  CHECK(error_path({{"pretrain", {{"encoder", {{"channels", {4, 4}}}}}}}) == "pretrain.encoder.channels");
  CHECK(error_path({{"schema", "affordrep-config/0"}}) == "schema");
  CHECK(error_path(json::array()) == "<root>");
  CHECK(error_path({{"sim", 3}}) == "sim");
}

TEST_CASE("config: controller gains accept an object or \"tune\"") {
  const ExperimentConfig t = parse_config({{"controller", {{"gains", "tune"}}}});
  CHECK(t.controller.tune);
  CHECK(to_json(t)["controller"]["gains"] == "tune");
  const ExperimentConfig g = parse_config({{"controller", {{"gains", {{"kp", 3.0}}}}}});
  CHECK_FALSE(g.controller.tune);
  CHECK(g.controller.gains.kp == 3.0);
  CHECK(g.controller.gains.ki == PIDGains{}.ki);
}

TEST_CASE("config: hashes are canonical and stage hashes track dependencies") {
  const json a = json::parse(R"({"weak": {"seed": 3, "fraction": 0.1}, "eval": {"routes": 5}})");
  const json b = json::parse(R"({"eval": {"routes": 5}, "weak": {"fraction": 0.1, "seed": 3}})");
  const ExperimentConfig ca = parse_config(a), cb = parse_config(b);
  CHECK(config_hash(ca) == config_hash(cb));
  CHECK(config_hash(ca).size() == 64);

  ExperimentConfig base;
  ExperimentConfig evalonly = base;
  evalonly.eval.routes = 3;
  CHECK(stage_hash(base, "collect") == stage_hash(evalonly, "collect"));
  CHECK(stage_hash(base, "pretrain") == stage_hash(evalonly, "pretrain"));
  CHECK(stage_hash(base, "drive") != stage_hash(evalonly, "drive"));
  CHECK(config_hash(base) != config_hash(evalonly));

  ExperimentConfig iters = base;
  iters.pretrain.train.iterations = 7;
  CHECK(stage_hash(base, "collect") == stage_hash(iters, "collect"));
  CHECK(stage_hash(base, "pretrain") != stage_hash(iters, "pretrain"));
  CHECK(stage_hash(base, "probe") != stage_hash(iters, "probe"));
  CHECK(stage_hash(base, "tune-pid") == stage_hash(iters, "tune-pid"));

  ExperimentConfig test = base;
  test.eval.test.steps = 10;
  CHECK(stage_hash(base, "collect") != stage_hash(test, "collect"));
  CHECK(stage_hash(base, "collect") != stage_hash(base, "pretrain"));
  CHECK_THROWS_AS(stage_hash(base, "bogus"), std::invalid_argument);
}

TEST_CASE("config: seed override replaces every stage seed") {
  ExperimentConfig c;
  apply_seed_override(c, 9);
  CHECK(c.collect.seed == 9);
  CHECK(c.weak.seed == 9);
  CHECK(c.pretrain.seeds == std::vector<std::uint64_t>{9});
  CHECK(c.affordance.seeds == std::vector<std::uint64_t>{9});
  CHECK(c.eval.seeds == std::vector<std::uint64_t>{9});
}

TEST_CASE("route fixtures match the generated route tables") {
  for (const char* town : {"townA", "townB"}) {
    const json doc = read(kSource / "data/routes" / (std::string(town) + ".json"));
    const RoadNetwork net = generate_map(town);
    CHECK(doc.at("seed").get<std::uint64_t>() == net.seed);
    REQUIRE(doc.at("routes").size() == net.routes.size());
    const double min_len = std::string(town) == "townA" ? 300.0 : 150.0;
    for (std::size_t i = 0; i < net.routes.size(); ++i) {
      const json& r = doc.at("routes")[i];
      CHECK(r.at("lanes").get<std::vector<int>>() == net.routes[i].lanes);
      CHECK(r.at("start_s").get<double>() == doctest::Approx(net.routes[i].start_s).epsilon(1e-12));
      CHECK(r.at("goal_s").get<double>() == doctest::Approx(net.routes[i].goal_s).epsilon(1e-12));
      CHECK(r.at("length").get<double>() >= min_len - 1e-9);
    }
  }
}

TEST_CASE("report: CSV is order independent and markdown aggregates seeds") {
  auto row = [](std::string method, std::uint64_t seed, double hp, double straight) {
    ProbeRow r;
    r.stage = "probe";
    r.method = std::move(method);
    r.data = "expert";
    r.report.town = "townB";
    r.report.seed = seed;
    r.report.f1_hp = hp;
    r.report.mae.straight = straight;
    r.report.mae.n_straight = 10;
    r.report.mae.pooled = straight;
    return r;
  };
  std::vector<ProbeRow> rows{row("bc", 1, 0.5, 0.02), row("none", 0, 0.2, 0.05), row("bc", 0, 0.7, 0.04)};
  std::vector<ProbeRow> shuffled{rows[2], rows[0], rows[1]};
  CHECK(probe_csv(rows) == probe_csv(shuffled));
  const std::string md = probe_markdown(rows);
  // bc: F1 hp mean 0.6, sample std sqrt(0.02) = 0.141; straight MAE 0.03 rad = 1.72 deg
  CHECK(md.find("| probe | expert | bc | 2 | 0.600 ± 0.141 |") != std::string::npos);
  CHECK(md.find("1.72 ± 0.81") != std::string::npos);
  CHECK(md.find("| probe | expert | none | 1 | 0.200 ± 0.000 |") != std::string::npos);
  CHECK(md.find("n/a") != std::string::npos);  // empty left regime
  const ProbeRow back = probe_row_from_json(to_json(rows[0]));
  CHECK(back.report.mae.straight == rows[0].report.mae.straight);
  CHECK_FALSE(back.report.mae.left.has_value());
  CHECK(back.method == "bc");
}

TEST_CASE("report: training log round trip and SVG output is deterministic") {
  const fs::path p = fs::temp_directory_path() / "affordrep_test_log.csv";
  std::vector<LogRow> log{{1, 0.5, 2e-4}, {2, 0.25, 1e-4}};
  write_training_log(log, p);
  const auto back = read_training_log(p);
  REQUIRE(back.size() == 2);
  CHECK(back[1].iteration == 2);
  CHECK(back[1].loss == 0.25);
  CHECK(back[1].lr == 1e-4);
  fs::remove(p);

  const std::vector<Series> s{{"a <b>", {{0, 1}, {1, 0.5}}}};
  const std::string svg = svg_line_chart("t", "x", "y", s, true);
  CHECK(svg == svg_line_chart("t", "x", "y", s, true));
  CHECK(svg.find("a &lt;b&gt;") != std::string::npos);
  CHECK(svg.rfind("</svg>") != std::string::npos);
  CHECK(svg_bar_chart("t", "y", {"c"}, {}).find("<svg") == 0);
}

#include <doctest.h>

#include <fstream>
#include <sstream>

#include "affordrep/checkpoint.hpp"
#include "affordrep/pipeline.hpp"

using namespace affordrep;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kSource = AFFORDREP_SOURCE_DIR;
const fs::path kToy = kSource / "data/configs/toy.json";

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "affordrep");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

Result stage(const std::string& verb, const fs::path& out, const fs::path& config = kToy) {
  return invoke({verb, "--config", config.string(), "--out", out.string()});
}

fs::path fresh(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("affordrep_cli_" + name);
  fs::remove_all(p);
  return p;
}

json read(const fs::path& p) {
  std::ifstream f(p);
  return json::parse(f);
}

fs::path write_config(const std::string& name, const std::function<void(json&)>& edit) {
  json doc = read(kToy);
  edit(doc);
  const fs::path p = fs::temp_directory_path() / ("affordrep_cfg_" + name + ".json");
  std::ofstream(p) << doc.dump();
  return p;
}

// Full toy pipeline, run once and shared by the cases below.
const fs::path& toy_run() {
  static const fs::path dir = [] {
    const fs::path d = fresh("toy");
    for (const char* verb : {"collect", "pretrain", "probe", "finetune", "drive"}) {
      const Result r = stage(verb, d);
      REQUIRE_MESSAGE(r.code == cli::kExitOk, verb << ": " << r.err);
    }
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("cli: toy pipeline writes every artifact with provenance") {
  const fs::path& d = toy_run();
  for (const char* p : {"collect/du/manifest.json", "collect/dl/manifest.json", "collect/test/manifest.json",
                        "pretrain/bc/seed_0/encoder/manifest.json", "pretrain/inverse/seed_1/log.csv",
                        "probe/bc/seed_1/head/params.f32", "probe/report.csv", "probe/report.md",
                        "finetune/inverse/seed_0/encoder/params.f32", "drive/driving.csv", "drive/driving.md",
                        "drive/selection.json"})
    CHECK_MESSAGE(fs::exists(d / p), p);
  CHECK_FALSE(fs::exists(d / cli::kLockName));

  // every recorded input hash equals the producing stage's recorded output hash
  for (const char* s : {"pretrain", "probe", "finetune", "drive"}) {
    const json prov = read(d / s / "provenance.json");
    CHECK(prov.at("config_hash").get<std::string>().size() == 64);
    CHECK_FALSE(prov.at("inputs").empty());
    for (const json& in : prov.at("inputs")) {
      const json up = read(d / in.at("stage").get<std::string>() / "provenance.json");
      CHECK(up.at("outputs").at(in.at("path").get<std::string>()) == in.at("sha256"));
    }
    for (const auto& [path, hash] : prov.at("outputs").items()) CHECK(cli::artifact_hash(d / path) == hash);
  }
  const json sel = read(d / "drive/selection.json");
  CHECK(sel.at("method") == "bc");
  CHECK(sel.at("driver") == "probe");
}

TEST_CASE("cli: re-running a stage overwrites with identical bytes") {
  const fs::path& d = toy_run();
  const std::string collect = tree_sha256(d / "collect");
  const std::string pre = tree_sha256(d / "pretrain");
  const std::string probe = tree_sha256(d / "probe");
  REQUIRE(stage("collect", d).code == 0);
  REQUIRE(stage("pretrain", d).code == 0);
  REQUIRE(stage("probe", d).code == 0);
  CHECK(tree_sha256(d / "collect") == collect);
  CHECK(tree_sha256(d / "pretrain") == pre);
  CHECK(tree_sha256(d / "probe") == probe);
}

TEST_CASE("cli: report output is byte-stable") {
  const fs::path& d = toy_run();
  const fs::path a = fresh("report_a"), b = fresh("report_b");
  REQUIRE(invoke({"report", "--out", a.string(), d.string()}).code == 0);
  REQUIRE(invoke({"report", "--out", b.string(), (d / "pretrain").string(), (d / "probe").string(),
               (d / "finetune").string(), (d / "drive").string()})
              .code == 0);
  for (const char* f : {"report.csv", "report.md", "loss_curves.svg", "scores.svg"}) {
    CHECK_MESSAGE(fs::exists(a / f), f);
    CHECK(sha256_file(a / f) == sha256_file(b / f));
  }
  std::ifstream csv(a / "report.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header.rfind("stage,data,method,seed,town,f1_hp", 0) == 0);
  CHECK(invoke({"report", "--out", a.string(), (a / "nothing").string()}).code == cli::kExitMissingInput);
}

TEST_CASE("cli: schema violations exit with code 2 and the field path") {
  const fs::path bad = write_config("badmethod", [](json& j) { j["pretrain"]["method"] = {"bc", "behaviour"}; });
  const Result r = stage("pretrain", fresh("bad"), bad);
  CHECK(r.code == cli::kExitSchema);
  CHECK(r.err.find("pretrain.method[1]") != std::string::npos);

  const fs::path garbage = fs::temp_directory_path() / "affordrep_cfg_garbage.json";
  std::ofstream(garbage) << "{ not json";
  CHECK(stage("collect", fresh("garbage"), garbage).code == cli::kExitSchema);
  CHECK(invoke({"collect", "--out", "/tmp/x"}).code == cli::kExitSchema);
  CHECK(invoke({"dance"}).code == cli::kExitSchema);
  CHECK(invoke({"collect", "--config", kToy.string(), "--out", "/tmp/x", "--seed-override", "abc"}).code ==
        cli::kExitSchema);
  CHECK(invoke({"--help"}).code == 0);
}

TEST_CASE("cli: missing upstream artifacts exit with code 3") {
  const fs::path d = fresh("missing");
  const Result r = stage("probe", d);
  CHECK(r.code == cli::kExitMissingInput);
  CHECK(r.err.find("collect") != std::string::npos);
  CHECK(stage("pretrain", d).code == cli::kExitMissingInput);
  const fs::path tune = write_config("tune", [](json& j) { j["controller"]["gains"] = "tune"; });
  CHECK(stage("drive", d, tune).code == cli::kExitMissingInput);
}

TEST_CASE("cli: stale or tampered inputs exit with code 4") {
  const fs::path& src = toy_run();
  const fs::path d = fresh("stale");
  fs::copy(src, d, fs::copy_options::recursive);

  const fs::path changed = write_config("iters", [](json& j) { j["pretrain"]["iterations"] = 21; });
  const Result r = stage("probe", d, changed);
  CHECK(r.code == cli::kExitStaleInput);
  CHECK(r.err.find("pretrain") != std::string::npos);

  // unrelated eval edits do not invalidate upstream stages
  const fs::path evaledit = write_config("evaledit", [](json& j) { j["eval"]["step_cap"] = 100; });
  CHECK(stage("probe", d, evaledit).code == cli::kExitOk);

  {
    std::ofstream f(d / "pretrain/bc/seed_0/log.csv", std::ios::app);
    f << "x";
  }
  const Result t = stage("probe", d);
  CHECK(t.code == cli::kExitStaleInput);
  CHECK(t.err.find("hash mismatch") != std::string::npos);
  fs::remove_all(d);
}

TEST_CASE("cli: a held lock rejects concurrent invocations with code 5") {
  const fs::path d = fresh("lock");
  {
    cli::OutputLock lock(d);
    CHECK_THROWS_AS(cli::OutputLock{d}, cli::LockError);
    CHECK(stage("collect", d).code == cli::kExitLocked);
  }
  CHECK(stage("collect", d).code == cli::kExitOk);
  CHECK_FALSE(fs::exists(d / cli::kLockName));
  fs::remove_all(d);
}

TEST_CASE("cli: seed override is recorded and changes the stage hash") {
  const fs::path d = fresh("override");
  REQUIRE(invoke({"collect", "--config", kToy.string(), "--out", d.string(), "--seed-override", "7"}).code == 0);
  const json prov = read(d / "collect/provenance.json");
  CHECK(prov.at("seed_override") == 7);
  CHECK(read(d / "collect/config.json").at("collect").at("seed") == 7);
  // without the override the collect outputs no longer match the config
  CHECK(stage("pretrain", d).code == cli::kExitStaleInput);
  fs::remove_all(d);
}

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "affordrep/datasets.hpp"
#include "affordrep/stats.hpp"
#include "dataset_support.hpp"
#include "test_support.hpp"

using namespace affordrep;
namespace fs = std::filesystem;

namespace {

CollectConfig small_collect(std::int64_t steps = 240) {
  CollectConfig c;
  c.map_id = "townA";
  c.duration_steps = steps;
  c.episode_cap = 150;
  c.seed = 11;
  return c;
}

const Dataset& small_du() {
  static const Dataset ds = collect(small_collect());
  return ds;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("affordrep_test_" + name);
  fs::remove_all(p);
  return p;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

DatasetErrorKind read_error(const fs::path& root) {
  try {
    read_dataset(root);
  } catch (const DatasetError& e) {
    return e.kind();
  }
  FAIL("read_dataset accepted a damaged dataset");
  return DatasetErrorKind::Io;
}

}  // namespace

TEST_CASE("collect: step budget, camera-major layout and lateral poses") {
  const Dataset& ds = small_du();
  CHECK(ds.frame_count() == 240 * 3);
  CHECK(ds.manifest.total_frames == ds.frame_count());
  CHECK(ds.episodes.size() == 2);  // 150 + 90 with the cap
  for (const Episode& ep : ds.episodes) {
    const std::size_t t = ep.frames.size() / 3;
    REQUIRE(ep.frames.size() == 3 * t);
    for (std::size_t i = 0; i < t; ++i) {
      const Frame& c = ep.frames[i];
      const Frame& l = ep.frames[t + i];
      const Frame& r = ep.frames[2 * t + i];
      CHECK(c.camera == Camera::Center);
      CHECK(l.camera == Camera::Left);
      CHECK(r.camera == Camera::Right);
      CHECK(c.events == l.events);
      CHECK(c.command == r.command);
      const double dl = std::hypot(l.pose[0] - c.pose[0], l.pose[1] - c.pose[1]);
      CHECK(dl == doctest::Approx(1.0).epsilon(1e-5));
      // left camera sits on the left of the heading
      const double side = std::cos(c.pose[2]) * (l.pose[1] - c.pose[1]) - std::sin(c.pose[2]) * (l.pose[0] - c.pose[0]);
      CHECK(side > 0.0);
      CHECK(c.levels.size() == 3u * 64u * 64u);
    }
  }
}

TEST_CASE("collect: deterministic for a seed, different across seeds") {
  CHECK(collect(small_collect()) == small_du());
  CollectConfig other = small_collect();
  other.seed = 12;
  CHECK_FALSE(collect(other) == small_du());
}

TEST_CASE("collect: stored centre frames replay exactly from the scenario seed") {
  const Dataset& ds = small_du();
  const Episode& ep = ds.episodes[0];
  auto net = std::make_shared<const RoadNetwork>(generate_map("townA"));
  WorldState st = spawn_scenario(net, ep.density, ep.route, ep.condition, ep.seed);
  const std::size_t t = ep.frames.size() / 3;
  PIDState pid;
  const PIDGains gains;
  for (std::size_t i = 0; i < t; ++i) {
    const Frame& f = ep.frames[i];
    const Affordances a = compute_affordances(st);
    CHECK(f.afford.hp == static_cast<float>(a.hp));
    CHECK(f.afford.hv == static_cast<float>(a.hv));
    CHECK(f.afford.hr == static_cast<float>(a.hr));
    CHECK(f.afford.psi == static_cast<float>(a.psi));
    CHECK(f.pose[0] == static_cast<float>(st.ego.pose.x));
    CHECK(f.speed == static_cast<float>(st.ego.speed));
    CHECK(f.levels == render_levels(st, Camera::Center));
    const Frame& left = ep.frames[t + i];
    const Affordances al = compute_affordances(with_camera_pose(st, Camera::Left));
    CHECK(left.afford.psi == static_cast<float>(al.psi));
    // lateral labels come from the expert at the shifted pose, before the PID update
    const Action la = control(al, st.ego.speed, gains, pid, st.config.dt).first;
    CHECK(left.action.steer == static_cast<float>(la.steer));
    CHECK(left.action.throttle == static_cast<float>(la.throttle));
    pid = control(a, st.ego.speed, gains, pid, st.config.dt).second;
    const StepEvents ev = advance(st, f.action, st.config.dt);
    CHECK(ev.flags() == f.events);
  }
}

TEST_CASE("collect: random policy runs and is labelled as such") {
  CollectConfig c = small_collect(120);
  c.policy.kind = PolicyKind::Random;
  c.policy.seed = 3;
  const Dataset ds = collect(c);
  CHECK(ds.manifest.policy == PolicyKind::Random);
  CHECK(ds.frame_count() == 360);
  CHECK(ds == collect(c));
}

TEST_CASE("collect: rejects empty budgets") {
  CollectConfig c = small_collect();
  c.duration_steps = 0;
  CHECK_THROWS_AS(collect(c), std::invalid_argument);
  c = small_collect();
  c.cameras.clear();
  CHECK_THROWS_AS(collect(c), std::invalid_argument);
}

TEST_CASE("write/read round trip is lossless and byte-deterministic") {
  const fs::path a = scratch("rt_a");
  const fs::path b = scratch("rt_b");
  write_dataset(small_du(), a);
  write_dataset(collect(small_collect()), b);
  const Dataset back = read_dataset(a);
  CHECK(back.manifest == small_du().manifest);
  REQUIRE(back.episodes.size() == small_du().episodes.size());
  for (std::size_t e = 0; e < back.episodes.size(); ++e) {
    const Episode& x = back.episodes[e];
    const Episode& y = small_du().episodes[e];
    CHECK(x.seed == y.seed);
    CHECK(x.source_start == y.source_start);
    REQUIRE(x.frames.size() == y.frames.size());
    for (std::size_t i = 0; i < x.frames.size(); ++i) {
      const Frame& f = x.frames[i];
      const Frame& g = y.frames[i];
      REQUIRE_MESSAGE(f.action == g.action, i);
      REQUIRE_MESSAGE(f.afford == g.afford, i);
      REQUIRE_MESSAGE(f.pose == g.pose, i);
      REQUIRE_MESSAGE(f.levels == g.levels, i);
      REQUIRE_MESSAGE(f.index == g.index, i);
      REQUIRE_MESSAGE(f == g, i);
    }
  }
  CHECK(back == small_du());
  std::set<std::string> names;
  for (const auto& e : fs::recursive_directory_iterator(a))
    if (e.is_regular_file()) names.insert(fs::relative(e.path(), a).string());
  std::set<std::string> names_b;
  for (const auto& e : fs::recursive_directory_iterator(b))
    if (e.is_regular_file()) names_b.insert(fs::relative(e.path(), b).string());
  CHECK(names == names_b);
  for (const auto& n : names) CHECK_MESSAGE(slurp(a / n) == slurp(b / n), n);

  // rewriting over an existing tree leaves no stale episodes
  Dataset one = small_du();
  one.episodes.resize(1);
  write_dataset(one, a);
  CHECK_FALSE(fs::exists(a / "ep_1"));
  CHECK(read_dataset(a).episodes.size() == 1);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("read_dataset: each kind of damage is reported distinctly") {
  const fs::path root = scratch("damage");
  auto fresh = [&] {
    Dataset one = small_du();
    one.episodes.resize(1);
    one.manifest.total_frames = one.frame_count();
    write_dataset(one, root);
  };

  fresh();
  {
    std::fstream f(root / "ep_0" / "action.f32", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(5);
    char c = 0;
    f.read(&c, 1);
    f.seekp(5);
    c = static_cast<char>(c ^ 0x5a);
    f.write(&c, 1);
  }
  CHECK(read_error(root) == DatasetErrorKind::Checksum);

  fresh();
  fs::resize_file(root / "ep_0" / "speed.f32", fs::file_size(root / "ep_0" / "speed.f32") - 4);
  CHECK(read_error(root) == DatasetErrorKind::Truncated);

  fresh();
  fs::remove(root / "ep_0" / "events.u8");
  CHECK(read_error(root) == DatasetErrorKind::MissingStream);

  fresh();
  {
    std::string text;
    {
      std::ifstream in(root / "manifest.json");
      text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    const auto pos = text.find(kDatasetSchema);
    REQUIRE(pos != std::string::npos);
    text.replace(pos, std::string(kDatasetSchema).size(), "affordrep-ds/0");
    std::ofstream out(root / "manifest.json", std::ios::trunc);
    out << text;
  }
  CHECK(read_error(root) == DatasetErrorKind::Schema);

  fs::remove(root / "manifest.json");
  CHECK(read_error(root) == DatasetErrorKind::Io);
  fs::remove_all(root);
}

TEST_CASE("iterate_pairs: stays inside episodes and camera blocks") {
  Dataset ds;
  for (int n : {5, 3}) {
    Episode ep;
    ep.id = static_cast<int>(ds.episodes.size());
    ep.frames.resize(n);
    ds.episodes.push_back(ep);
  }
  auto pairs = iterate_pairs(ds, 1);
  CHECK(pairs.size() == 4 + 2);
  CHECK(pairs.front() == PairRef{0, 0});
  CHECK(pairs.back() == PairRef{1, 1});
  CHECK(iterate_pairs(ds, 3).size() == 2 + 0);

  // two camera blocks of 4 frames each
  Dataset cams;
  Episode ep;
  ep.frames.resize(8);
  for (int i = 4; i < 8; ++i) ep.frames[i].camera = Camera::Left;
  cams.episodes.push_back(ep);
  const auto cp = iterate_pairs(cams, 1);
  CHECK(cp.size() == 6);
  for (const PairRef& p : cp) CHECK(cams.episodes[0].frames[p.t].camera == cams.episodes[0].frames[p.t + 1].camera);

  auto shuffled = iterate_pairs(ds, 1, 7u);
  CHECK(shuffled == iterate_pairs(ds, 1, 7u));
  std::sort(shuffled.begin(), shuffled.end());
  CHECK(shuffled == pairs);
  CHECK_THROWS_AS(iterate_pairs(ds, 0), std::invalid_argument);
}

TEST_CASE("subsample_weak: balanced heading distribution at 1%") {
  const Dataset du = testsupport::synthetic_du(50, 100, 5);  // 200k centre frames
  const double sigma = 0.06;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const WeakSplitResult r = subsample_weak(du, 0.01, sigma, seed);
    CHECK_FALSE(r.fell_back);
    CHECK(r.dl.manifest.role == DatasetRole::Dl);
    CHECK(r.dl.frame_count() == 2000);
    std::vector<double> psi;
    std::set<std::pair<int, int>> sources;
    for (const Episode& ep : r.dl.episodes) {
      CHECK(sources.insert({ep.source_episode, ep.source_start}).second);
      CHECK(ep.source_start % kWeakWindow == 0);
      for (std::size_t j = 0; j < ep.frames.size(); ++j) {
        const Frame& src = du.episodes[ep.source_episode].frames[ep.source_start + j];
        CHECK(ep.frames[j].afford == src.afford);
        psi.push_back(ep.frames[j].afford.psi);
      }
    }
    CHECK(std::abs(mean(psi)) <= 0.01);
    CHECK(ks_test_normal(psi, 0.0, sigma).p_value > 0.01);
    CHECK(subsample_weak(du, 0.01, sigma, seed).dl == r.dl);
  }
}

TEST_CASE("subsample_weak: truncates the last window to the exact target") {
  const Dataset du = testsupport::synthetic_du(10, 100, 9);  // 40k frames
  const WeakSplitResult r = subsample_weak(du, 0.00101, 0.06, 4);
  CHECK(r.dl.frame_count() == static_cast<std::int64_t>(std::ceil(0.00101 * 40000)));
  CHECK(r.dl.episodes.back().frames.size() == 1);
}

TEST_CASE("subsample_weak: infeasible requests fall back to all centre frames") {
  const Dataset& du = small_du();
  const WeakSplitResult all = subsample_weak(du, 1.0, 0.06, 1);
  CHECK(all.fell_back);
  CHECK(all.dl.manifest.warnings.size() == 1);
  CHECK(all.dl.frame_count() == 240);
  for (const Episode& ep : all.dl.episodes)
    for (const Frame& f : ep.frames) CHECK(f.camera == Camera::Center);

  // half the windows of a tiny set is more than the effective sample size allows
  const Dataset tiny = testsupport::synthetic_du(1, 20, 2);
  const WeakSplitResult r = subsample_weak(tiny, 0.5, 0.02, 1);
  CHECK(r.fell_back);
  CHECK(r.ess < 10.0);
  CHECK(r.dl.frame_count() == 800);

  CHECK_THROWS_AS(subsample_weak(du, 0.0, 0.06, 1), std::invalid_argument);
  CHECK_THROWS_AS(subsample_weak(du, 0.5, -1.0, 1), std::invalid_argument);
}

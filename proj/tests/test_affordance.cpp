#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "affordrep/affordance.hpp"
#include "affordrep/checkpoint.hpp"
#include "gradcheck.hpp"
#include "test_support.hpp"

using namespace affordrep;
namespace fs = std::filesystem;

namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.image_size = 64;
  c.channels = {2, 2, 2};
  c.image_features = 2;
  c.branch = 2;
  c.d_z = 4;
  return c;
}

// Encoder that copies speed into z0 and the Left/Right command bits into z1/z2.
Encoder<float> oracle_encoder() {
  Encoder<float> e(small_config());
  for (auto& p : e.params()) p.value->setZero();
  e.speed_net.layers[0].W(0, 0) = 1.0f;
  e.speed_net.layers[1].W(0, 0) = 1.0f;
  e.command_net.layers[0].W(0, 1) = 1.0f;
  e.command_net.layers[0].W(1, 2) = 1.0f;
  e.command_net.layers[1].W = Mat<float>::Identity(2, 2);
  const int fi = e.cfg.image_features, br = e.cfg.branch;
  e.join.W(0, fi) = 1.0f;
  e.join.W(1, fi + br) = 1.0f;
  e.join.W(2, fi + br + 1) = 1.0f;
  return e;
}

// psi = speed - 3, hp = Left, hv = Right, hr = Left or Right.
Dataset oracle_set(int n, std::uint64_t seed) {
  Dataset ds;
  ds.manifest.cameras = {Camera::Center};
  ds.manifest.map_id = "synthetic";
  Rng rng(seed);
  Episode ep;
  for (int i = 0; i < n; ++i) {
    Frame f;
    f.levels.assign(3 * 64 * 64, 0);
    f.speed = static_cast<float>(rng.uniform(2.5, 3.5));
    f.command = static_cast<Command>(rng.below(4));
    f.afford.psi = static_cast<float>(f.speed - 3.0);
    f.afford.hp = f.command == Command::Left;
    f.afford.hv = f.command == Command::Right;
    f.afford.hr = f.command == Command::Left || f.command == Command::Right;
    f.index = i;
    ep.frames.push_back(f);
  }
  ds.episodes.push_back(std::move(ep));
  ds.manifest.total_frames = ds.frame_count();
  return ds;
}

AffordanceTrainConfig fast_cfg(int iterations = 1500, double lr = 1e-2) {
  AffordanceTrainConfig c;
  c.iterations = iterations;
  c.batch = 32;
  c.lr = lr;
  c.weight_decay = 0.0;
  return c;
}

bool same_params(AffordanceHead<float> a, AffordanceHead<float> b) {
  auto pa = a.params(), pb = b.params();
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (*pa[i].value != *pb[i].value) return false;
  return true;
}

}  // namespace

TEST_CASE("probe: linear head recovers affordances from an informative encoder") {
  const Encoder<float> enc = oracle_encoder();
  const ProbeResult r = train_probe(enc, oracle_set(400, 1), fast_cfg(3000, 3e-3), 7);
  const ProbeReport rep = evaluate_affordances(enc, r.head, oracle_set(300, 2));
  CHECK(rep.f1_hp == doctest::Approx(1.0));
  CHECK(rep.f1_hv == doctest::Approx(1.0));
  CHECK(rep.f1_hr == doctest::Approx(1.0));
  CHECK(rep.mae.pooled < 0.01);
  CHECK(r.log.size() == 3000);
}

TEST_CASE("probe: frozen encoder parameters are bit-identical afterwards") {
  Encoder<float> enc(small_config());
  enc.init(3);
  const std::string before = params_sha256(enc.params());
  train_probe(enc, oracle_set(100, 1), fast_cfg(50), 1);
  CHECK(params_sha256(enc.params()) == before);
}

TEST_CASE("probe: uninformative features converge to base rates and the median") {
  Encoder<float> enc(small_config());
  for (auto& p : enc.params()) p.value->setZero();
  Dataset ds = oracle_set(500, 4);
  Rng rng(9);
  std::vector<double> psis;
  int hp = 0, hv = 0;
  for (auto& f : ds.episodes[0].frames) {
    f.afford.hp = rng.bernoulli(0.7);
    f.afford.hv = rng.bernoulli(0.2);
    f.afford.hr = 0;
    hp += f.afford.hp > 0.5;
    hv += f.afford.hv > 0.5;
    psis.push_back(f.afford.psi);
  }
  const double n = 500.0, rate_hp = hp / n, rate_hv = hv / n;
  std::nth_element(psis.begin(), psis.begin() + 250, psis.end());
  const ProbeResult r = train_probe(enc, ds, fast_cfg(3000, 3e-3), 2);
  const auto preds = predict_frames(enc, r.head, centre_frames(ds));
  CHECK(preds[0].p_hp == doctest::Approx(rate_hp).epsilon(0.03));
  CHECK(preds[0].p_hv == doctest::Approx(rate_hv).epsilon(0.05));
  CHECK(std::abs(preds[0].psi - psis[250]) < 0.02);
  const ProbeReport rep = evaluate_affordances(enc, r.head, ds);
  // constant classifier: all-positive for a majority class, all-negative otherwise
  CHECK(rep.f1_hp == doctest::Approx(2.0 * rate_hp / (1.0 + rate_hp)));
  CHECK(rep.f1_hv == 0.0);
}

TEST_CASE("probe: zero learning rate leaves the head at initialization") {
  const Encoder<float> enc = oracle_encoder();
  const ProbeResult r = train_probe(enc, oracle_set(64, 1), fast_cfg(20, 0.0), 5);
  AffordanceHead<float> init(HeadMode::Linear, enc.cfg.d_z);
  init.init(5);
  CHECK(same_params(r.head, init));
}

TEST_CASE("probe: deterministic per seed") {
  const Encoder<float> enc = oracle_encoder();
  const Dataset ds = oracle_set(100, 1);
  const auto a = train_probe(enc, ds, fast_cfg(100), 3);
  const auto b = train_probe(enc, ds, fast_cfg(100), 3);
  const auto c = train_probe(enc, ds, fast_cfg(100), 4);
  CHECK(same_params(a.head, b.head));
  CHECK_FALSE(same_params(a.head, c.head));
  for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].loss == b.log[i].loss);
}

TEST_CASE("probe: standardization statistics come from the stats dataset") {
  const Encoder<float> enc = oracle_encoder();
  const Dataset dl = oracle_set(50, 1), du = oracle_set(300, 9);
  const ProbeResult own = train_probe(enc, dl, fast_cfg(5), 1);
  const ProbeResult ext = train_probe(enc, dl, fast_cfg(5), 1, &du);
  // two-pass mean and population std of the encodings, in double
  for (const auto& [ds, head] : {std::pair{&dl, &own.head}, std::pair{&du, &ext.head}}) {
    const auto frames = centre_frames(*ds);
    const Mat<double> z = enc.forward(batch_from_frames<float>(frames)).cast<double>();
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      double m = 0.0, v = 0.0;
      for (Eigen::Index c = 0; c < z.cols(); ++c) m += z(r, c);
      m /= static_cast<double>(z.cols());
      for (Eigen::Index c = 0; c < z.cols(); ++c) v += (z(r, c) - m) * (z(r, c) - m);
      const double sd = std::sqrt(v / static_cast<double>(z.cols()));
      CHECK(head->mean(r, 0) == doctest::Approx(m).epsilon(1e-5));
      CHECK(head->inv_std(r, 0) == doctest::Approx(1.0 / std::max(sd, 1e-6)).epsilon(1e-4));
    }
  }
  CHECK(own.head.mean(0, 0) != ext.head.mean(0, 0));
}

TEST_CASE("probe: weight decay shrinks weights but not biases") {
  const Encoder<float> enc = oracle_encoder();
  const Dataset ds = oracle_set(200, 1);
  AffordanceTrainConfig c = fast_cfg(600, 1e-2);
  const ProbeResult plain = train_probe(enc, ds, c, 1);
  c.weight_decay = 10.0;
  const ProbeResult decayed = train_probe(enc, ds, c, 1);
  const auto& wp = plain.head.net.layers[0];
  const auto& wd = decayed.head.net.layers[0];
  CHECK(wd.W.norm() < 0.5f * wp.W.norm());
  CHECK(wd.b.norm() > 0.0f);
  for (const auto& row : decayed.log) CHECK(std::isfinite(row.loss));
}

TEST_CASE("probe and finetune: invalid inputs") {
  const Encoder<float> enc = oracle_encoder();
  Dataset empty;
  CHECK_THROWS_AS(train_probe(enc, empty, fast_cfg(), 1), std::invalid_argument);
  CHECK_THROWS_AS(train_finetune(enc, empty, fast_cfg(), 1), std::invalid_argument);
  AffordanceTrainConfig bad = fast_cfg();
  bad.batch = 0;
  CHECK_THROWS_AS(train_probe(enc, oracle_set(10, 1), bad, 1), std::invalid_argument);
  bad = fast_cfg();
  bad.weight_decay = -0.5;
  CHECK_THROWS_AS(train_probe(enc, oracle_set(10, 1), bad, 1), std::invalid_argument);
  CHECK_THROWS_AS(train_probe(enc, oracle_set(10, 1), fast_cfg(), 1, &empty), std::invalid_argument);
  CHECK_THROWS_AS(head_mode_from_string("mlp4"), std::invalid_argument);
  CHECK(head_mode_from_string(to_string(HeadMode::Mlp3)) == HeadMode::Mlp3);
}

TEST_CASE("finetune: adapts an encoder that hides psi from the probe") {
  Encoder<float> blind = oracle_encoder();
  blind.join.W(0, blind.cfg.image_features) = 0.0f;  // speed no longer reaches z
  const Dataset train = oracle_set(400, 1), held = oracle_set(200, 2);
  const ProbeResult probe = train_probe(blind, train, fast_cfg(800), 1);
  FinetuneResult ft = train_finetune(blind, train, fast_cfg(800, 3e-3), 1);
  CHECK(ft.head.mode == HeadMode::Mlp3);
  const double lp = affordance_eval_loss(blind, probe.head, held);
  const double lf = affordance_eval_loss(ft.encoder, ft.head, held);
  CHECK(lp > 0.2);
  CHECK(lf <= lp);
  CHECK(params_sha256(ft.encoder.params()) != params_sha256(blind.params()));
}

TEST_CASE("prediction: sigmoid and wrapped psi") {
  const auto p = prediction_from_output(10.0, -10.0, 0.0, 4.0);
  CHECK(p.p_hp > 0.9999);
  CHECK(p.p_hv < 1e-4);
  CHECK(p.p_hr == doctest::Approx(0.5));
  CHECK(p.psi == doctest::Approx(4.0 - 2.0 * std::numbers::pi));
}

TEST_CASE("prediction: batch, frame and single paths agree") {
  Encoder<float> enc(small_config());
  enc.init(1);
  AffordanceHead<float> head(HeadMode::Mlp3, 4);
  head.init(2);
  const WorldState st = testsupport::state_on_lane(testsupport::town("townA"), 0, 10.0, 3.0);
  Observation a = render_observation(st, Camera::Center);
  Observation b = render_observation(st, Camera::Left);
  b.command = {0, 0, 1, 0};
  const auto batch = predict_batch(enc, head, {&a, &b});
  const auto pa = predict(enc, head, a), pb = predict(enc, head, b);
  CHECK(batch[0].p_hp == doctest::Approx(pa.p_hp).epsilon(1e-5));
  CHECK(batch[1].psi == doctest::Approx(pb.psi).epsilon(1e-5));
  CHECK(batch[1].p_hr == doctest::Approx(pb.p_hr).epsilon(1e-5));

  Frame f;
  f.levels = render_levels(st, Camera::Center);
  f.speed = 3.0f;
  const auto viaframe = predict_frames(enc, head, {&f});
  const auto viaobs = predict(enc, head, f.observation());
  CHECK(viaframe[0].psi == doctest::Approx(viaobs.psi).epsilon(1e-5));
  CHECK(viaframe[0].p_hv == doctest::Approx(viaobs.p_hv).epsilon(1e-5));
}

TEST_CASE("affordance loss: gradients match finite differences") {
  for (HeadMode mode : {HeadMode::Linear, HeadMode::Mlp3}) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      AffordanceHead<double> head(mode, 4);
      head.init(seed);
      Rng rng(seed + 100);
      head.mean = Mat<double>::Random(4, 1) * 0.3;
      head.inv_std = Mat<double>::Random(4, 1).cwiseAbs() + Mat<double>::Constant(4, 1, 0.5);
      Mat<double> z = Mat<double>::Random(4, 5);
      Mat<double> target(4, 5);
      for (int j = 0; j < 5; ++j)
        target.col(j) << rng.bernoulli(0.5), rng.bernoulli(0.5), rng.bernoulli(0.5), rng.uniform(-1, 1);
      AffordanceLossConfig cfg;
      cfg.lambda_psi = 0.7;
      cfg.pos_weight = {2.0, 1.0, 0.5};
      Mat<double> dz = Mat<double>::Zero(4, 5);
      auto ps = head.params();
      ps.push_back({"z", &z, &dz});
      // z's gradient is returned rather than accumulated; fold it in explicitly.
      const double err = testsupport::max_gradient_error(ps, [&] {
        Mat<double> d;
        const double l = affordance_loss(head, z, target, cfg, d);
        dz += d;
        return l;
      });
      CHECK(err < 1e-5);
    }
  }
}

TEST_CASE("affordance loss: lambda_psi zero removes psi entirely") {
  AffordanceHead<double> head(HeadMode::Linear, 4);
  head.init(1);
  const Mat<double> z = Mat<double>::Random(4, 6);
  Mat<double> t1 = Mat<double>::Zero(4, 6), t2 = t1;
  t2.row(3).setConstant(2.0);
  AffordanceLossConfig cfg;
  cfg.lambda_psi = 0.0;
  Mat<double> dz1, dz2;
  nn::zero_grads(head.params());
  const double l1 = affordance_loss(head, z, t1, cfg, dz1);
  CHECK(head.net.layers[0].gW.row(3).norm() == 0.0);
  CHECK(head.net.layers[0].gb(3) == 0.0);
  const double l2 = affordance_loss(head, z, t2, cfg, dz2);
  CHECK(l1 == l2);
  CHECK(dz1 == dz2);
  // a confident correct logit costs almost nothing
  head.net.layers[0].W.setZero();
  head.net.layers[0].b << 20, -20, 20, 0;
  Mat<double> t = Mat<double>::Zero(4, 6);
  t.row(0).setOnes();
  t.row(2).setOnes();
  CHECK(affordance_loss(head, z, t, cfg, dz1) < 1e-8);
}

TEST_CASE("head checkpoint: round trip and kind check") {
  const fs::path dir = fs::temp_directory_path() / "affordrep_test_head";
  fs::remove_all(dir);
  AffordanceHead<float> head(HeadMode::Mlp3, 4);
  head.init(4);
  head.mean << 1, 2, 3, 4;
  head.inv_std << 0.5, 0.25, 2, 1;
  save_head(dir, head, {{"note", "x"}});
  const AffordanceHead<float> back = load_head(dir);
  CHECK(back.mode == HeadMode::Mlp3);
  CHECK(back.mean == head.mean);
  CHECK(back.inv_std == head.inv_std);
  CHECK(same_params(back, head));
  CHECK(read_checkpoint_meta(dir).at("note") == "x");
  CHECK_THROWS_AS(load_encoder(dir), CheckpointError);
  fs::remove_all(dir);
}

TEST_CASE("learned driver: produces bounded actions and resets its PID") {
  auto enc = std::make_shared<Encoder<float>>(small_config());
  enc->init(1);
  auto head = std::make_shared<AffordanceHead<float>>(HeadMode::Linear, 4);
  head->init(1);
  LearnedDriver d(enc, head, PIDGains{});
  const WorldState st = testsupport::state_on_lane(testsupport::town("townA"), 0, 10.0, 2.0);
  const Action a1 = d.act(st, 0.1);
  d.act(st, 0.1);
  d.reset();
  const Action a3 = d.act(st, 0.1);
  CHECK(a1 == a3);
  CHECK(std::abs(a1.steer) <= 1.0);
  CHECK(a1.throttle >= 0.0);
  CHECK(a1.throttle <= 1.0);
  CHECK(a1.brake >= 0.0);
  CHECK(a1.brake <= 1.0);
}

#include <doctest.h>

#include <cmath>
#include <fstream>

#include "affordrep/checkpoint.hpp"
#include "affordrep/encoder.hpp"
#include "gradcheck.hpp"

using namespace affordrep;
using testsupport::random_actions;
using testsupport::random_obs;
namespace fs = std::filesystem;

namespace {

using Toy = testsupport::ToyModel;

PairBatch<double> permuted(const PairBatch<double>& p, const std::vector<int>& perm) {
  PairBatch<double> o = p;
  const int hw = 64;
  for (std::size_t k = 0; k < perm.size(); ++k) {
    const int from = perm[k];
    o.first.image.middleCols(k * hw, hw) = p.first.image.middleCols(from * hw, hw);
    o.second.image.middleCols(k * hw, hw) = p.second.image.middleCols(from * hw, hw);
    o.first.speed.col(k) = p.first.speed.col(from);
    o.second.speed.col(k) = p.second.speed.col(from);
    o.first.command.col(k) = p.first.command.col(from);
    o.second.command.col(k) = p.second.command.col(from);
    o.action.col(k) = p.action.col(from);
  }
  return o;
}

Dataset toy_dataset(int episodes, int frames, std::uint64_t seed) {
  Dataset ds;
  Rng rng(seed);
  for (int e = 0; e < episodes; ++e) {
    Episode ep;
    ep.id = e;
    for (int i = 0; i < frames; ++i) {
      Frame f;
      f.levels.resize(3 * 64 * 64);
      // a bright bar whose column encodes the steering label
      const double steer = rng.uniform(-1.0, 1.0);
      const int col = 32 + static_cast<int>(std::lround(steer * 20.0));
      for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 64; ++c) f.levels[r * 64 + c] = std::abs(c - col) <= 1 ? 220 : 90;
      f.speed = static_cast<float>(rng.uniform(0.0, 6.0));
      f.action = Action(steer, 0.5, 0.0);
      f.episode = e;
      f.index = i;
      ep.frames.push_back(f);
    }
    ds.episodes.push_back(ep);
  }
  ds.manifest.total_frames = ds.frame_count();
  return ds;
}

}  // namespace

TEST_CASE("gradients match central differences for every pretraining loss") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    CAPTURE(seed);
    Toy t(seed);
    const LossWeights w;
    CHECK(testsupport::max_gradient_error(t.params(), [&] { return bc_loss(t.enc, t.heads, t.frames, w, nullptr); }) <
          1e-4);
    // dropout mask replayed identically on every evaluation
    CHECK(testsupport::max_gradient_error(t.params(), [&] {
            Rng r(seed);
            return bc_loss(t.enc, t.heads, t.frames, w, &r);
          }) < 1e-4);
    CHECK(testsupport::max_gradient_error(t.params(), [&] { return inverse_loss(t.enc, t.heads, t.pairs); }) < 1e-4);
    CHECK(testsupport::max_gradient_error(t.params(), [&] { return forward_loss(t.enc, t.heads, t.pairs, 1.0); }) <
          1e-4);
    CHECK(testsupport::max_gradient_error(t.params(), [&] { return contrastive_loss(t.enc, t.heads, t.pairs); }) <
          1e-4);
  }
}

TEST_CASE("toy instances stay under the parameter budget") {
  Toy t(1);
  CHECK(nn::param_count(t.params()) <= 1000);
}

TEST_CASE("losses vanish on rigged heads") {
  Toy t(3, 1);
  const Mat<double> z = t.enc.forward(t.frames.obs);
  // f_a and f_s output their targets regardless of z
  auto& la = t.heads.fa.layers.back();
  la.W.setZero();
  la.b = t.frames.action;
  auto& ls = t.heads.fs.layers.back();
  ls.W.setZero();
  ls.b = t.frames.speed;
  CHECK(bc_loss(t.enc, t.heads, t.frames, LossWeights{}, nullptr) == 0.0);

  auto& li = t.heads.fim.layers.back();
  li.W.setZero();
  li.b = t.pairs.action;
  CHECK(inverse_loss(t.enc, t.heads, t.pairs) == 0.0);

  // f_wd(z, a) = z_{t+1}: zero the weights and put z_{t+1} in the bias
  const Mat<double> z1 = t.enc.forward(t.pairs.second);
  t.heads.fwd_join.W.setZero();
  t.heads.fwd_join.b = z1;
  CHECK(forward_loss(t.enc, t.heads, t.pairs, 1.0) == doctest::Approx(0.0).epsilon(1e-15));
  (void)z;
}

TEST_CASE("contrastive term: analytic limits") {
  Mat<double> gW = Mat<double>::Zero(2, 2), dzt, dzt1;
  Mat<double> zt(2, 2), zt1(2, 2);
  zt << 1, 0, 0, 1;
  zt1 = zt;
  // zero logits: every entry costs ln 2
  CHECK(detail::contrastive_term<double>(Mat<double>::Zero(2, 2), zt, zt1, gW, dzt, dzt1) ==
        doctest::Approx(std::log(2.0)));
  // W = c * (2I - 11^T): +c on positives, -c on negatives; loss -> 0 as c grows
  Mat<double> shape(2, 2);
  shape << 1, -1, -1, 1;
  double prev = 1e9;
  for (double c : {1.0, 5.0, 20.0, 60.0}) {
    const double l = detail::contrastive_term<double>(c * shape, zt, zt1, gW, dzt, dzt1);
    CHECK(l < prev);
    prev = l;
  }
  CHECK(prev < 1e-20);
}

TEST_CASE("loss reductions: duplication, permutation and ordering") {
  Toy t(5, 3);
  const LossWeights w;
  const double bc = bc_loss(t.enc, t.heads, t.frames, w, nullptr);
  FrameBatch<double> dup;
  dup.obs = concat(t.frames.obs, t.frames.obs);
  dup.action.resize(3, 6);
  dup.action << t.frames.action, t.frames.action;
  dup.speed.resize(1, 6);
  dup.speed << t.frames.speed, t.frames.speed;
  CHECK(bc_loss(t.enc, t.heads, dup, w, nullptr) == doctest::Approx(bc).epsilon(1e-12));

  const std::vector<int> perm{2, 0, 1};
  const PairBatch<double> p = permuted(t.pairs, perm);
  CHECK(inverse_loss(t.enc, t.heads, p) == doctest::Approx(inverse_loss(t.enc, t.heads, t.pairs)).epsilon(1e-12));
  CHECK(forward_loss(t.enc, t.heads, p, 1.0) ==
        doctest::Approx(forward_loss(t.enc, t.heads, t.pairs, 1.0)).epsilon(1e-12));
  CHECK(contrastive_loss(t.enc, t.heads, p) ==
        doctest::Approx(contrastive_loss(t.enc, t.heads, t.pairs)).epsilon(1e-12));

  // lambda_fwd = 0 is exactly the inverse loss
  CHECK(forward_loss(t.enc, t.heads, t.pairs, 0.0) == inverse_loss(t.enc, t.heads, t.pairs));

  // swapping t and t+1 changes the inverse loss
  PairBatch<double> swapped = t.pairs;
  std::swap(swapped.first, swapped.second);
  CHECK(inverse_loss(t.enc, t.heads, swapped) != doctest::Approx(inverse_loss(t.enc, t.heads, t.pairs)));

  // contrastive never reads actions
  PairBatch<double> no_actions = t.pairs;
  no_actions.action.setZero();
  CHECK(contrastive_loss(t.enc, t.heads, no_actions) == contrastive_loss(t.enc, t.heads, t.pairs));
}

TEST_CASE("losses are non-negative and reject bad batches") {
  Toy t(7, 1);
  CHECK(bc_loss(t.enc, t.heads, t.frames, LossWeights{}, nullptr) >= 0.0);
  CHECK(forward_loss(t.enc, t.heads, t.pairs, 1.0) >= 0.0);
  CHECK_THROWS_AS(contrastive_loss(t.enc, t.heads, t.pairs), std::invalid_argument);
  PairBatch<double> bad = t.pairs;
  bad.second = concat(bad.second, bad.second);
  CHECK_THROWS_AS(inverse_loss(t.enc, t.heads, bad), std::invalid_argument);
}

TEST_CASE("encode: finite, deterministic and command-sensitive") {
  Encoder<float> enc;
  enc.init(3);
  Observation zero;
  zero.image.assign(3 * 64 * 64, 0.0f);
  const auto z = encode(enc, zero);
  CHECK(z.size() == 128);
  for (float v : z) CHECK(std::isfinite(v));
  CHECK(encode(enc, zero) == z);

  Observation other = zero;
  other.command = one_hot(Command::Left);
  const auto z2 = encode(enc, other);
  double diff = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) diff += std::abs(z2[i] - z[i]);
  CHECK(diff > 1e-4);

  Observation bad = zero;
  bad.image[17] = std::nanf("");
  CHECK_THROWS_AS(encode(enc, bad), std::invalid_argument);
}

TEST_CASE("attention_map: range, zero case and activation-dump oracle") {
  Encoder<float> enc;
  enc.init(9);
  Observation obs;
  Rng rng(4);
  obs.image.resize(3 * 64 * 64);
  for (float& v : obs.image) v = static_cast<float>(rng.uniform());
  for (int layer = 0; layer < 3; ++layer) {
    const Mat<float> m = attention_map(enc, obs, layer);
    CHECK(m.rows() == 32 >> layer);
    CHECK(m.minCoeff() >= 0.0f);
    CHECK(m.maxCoeff() <= 1.0f);
    // recompute from the dumped activation with plain loops
    EncoderCache<float> c;
    enc.forward(batch_from_observations<float>({&obs}), c);
    const auto& act = c.act[layer];
    const int side = 32 >> layer;
    std::vector<double> avg(side * side, 0.0);
    for (int p = 0; p < side * side; ++p) {
      for (int ch = 0; ch < act.rows(); ++ch) avg[p] += act(ch, p);
      avg[p] /= act.rows();
    }
    const double lo = *std::min_element(avg.begin(), avg.end());
    const double hi = *std::max_element(avg.begin(), avg.end());
    for (int p = 0; p < side * side; ++p)
      CHECK(m(p / side, p % side) == doctest::Approx((avg[p] - lo) / (hi - lo)).epsilon(1e-4));
  }
  CHECK_THROWS_AS(attention_map(enc, obs, 3), std::invalid_argument);

  // bias-free conv stack on a black image gives a constant map -> zeros
  for (auto& c : enc.conv) c.b.setZero();
  Observation black;
  black.image.assign(3 * 64 * 64, 0.0f);
  CHECK(attention_map(enc, black, 1).isZero());
}

TEST_CASE("learning-rate schedule halves exactly once at ceil(0.75 K)") {
  TrainConfig cfg;
  for (int k : {1, 2, 3, 4, 7, 100, 3000, 20000}) {
    cfg.iterations = k;
    const int half = static_cast<int>(std::ceil(0.75 * k));
    CHECK(lr_halving_iteration(k) == half);
    CHECK(lr_at(cfg, half) == cfg.lr / 2.0);
    if (half > 1) CHECK(lr_at(cfg, half - 1) == cfg.lr);
    CHECK(lr_at(cfg, k) == cfg.lr / 2.0);
  }
}

TEST_CASE("pretrain: none is a seeded random init") {
  const Dataset ds = toy_dataset(1, 4, 1);
  TrainConfig cfg;
  cfg.seed = 5;
  auto a = pretrain(ds, PretrainMethod::None, cfg);
  auto b = pretrain(ds, PretrainMethod::None, cfg);
  CHECK(params_sha256(a.encoder.params()) == params_sha256(b.encoder.params()));
  CHECK(a.log.empty());
  cfg.seed = 6;
  auto c = pretrain(ds, PretrainMethod::None, cfg);
  CHECK(params_sha256(a.encoder.params()) != params_sha256(c.encoder.params()));
}

TEST_CASE("pretrain: bc learns on a toy set, logs lr, and is bit-reproducible") {
  const Dataset ds = toy_dataset(5, 100, 2);
  TrainConfig cfg;
  cfg.iterations = 200;
  cfg.batch = 16;
  cfg.seed = 1;
  const auto r = pretrain(ds, PretrainMethod::Bc, cfg);
  REQUIRE(r.log.size() == 200);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 20; ++i) {
    first += r.log[i].loss / 20.0;
    last += r.log[180 + i].loss / 20.0;
  }
  MESSAGE("bc toy loss: first-20 mean " << first << ", last-20 mean " << last);
  CHECK(last < 0.7 * first);
  CHECK(r.log[lr_halving_iteration(200) - 1].lr == cfg.lr / 2.0);
  CHECK(r.log[lr_halving_iteration(200) - 2].lr == cfg.lr);

  cfg.iterations = 12;
  const auto x = pretrain(ds, PretrainMethod::Bc, cfg);
  const auto y = pretrain(ds, PretrainMethod::Bc, cfg);
  auto px = const_cast<Encoder<float>&>(x.encoder).params();
  auto py = const_cast<Encoder<float>&>(y.encoder).params();
  CHECK(params_sha256(px) == params_sha256(py));
}

TEST_CASE("pretrain: pair methods run and keep parameters finite") {
  const Dataset ds = toy_dataset(2, 20, 3);
  TrainConfig cfg;
  cfg.iterations = 6;
  cfg.batch = 8;
  for (PretrainMethod m : {PretrainMethod::Inverse, PretrainMethod::Forward, PretrainMethod::Contrastive}) {
    auto r = pretrain(ds, m, cfg);
    CHECK(r.log.size() == 6);
    for (const auto& p : r.encoder.params()) CHECK(p.value->allFinite());
  }
  CHECK(pretrain_method_from_string("inverse") == PretrainMethod::Inverse);
  CHECK_THROWS_AS(pretrain_method_from_string("st-dim"), std::invalid_argument);
}

TEST_CASE("pretrain: NaN loss aborts with a diagnostic") {
  Dataset ds = toy_dataset(1, 10, 4);
  ds.episodes[0].frames[3].speed = std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg;
  cfg.iterations = 3;
  cfg.batch = 10;
  try {
    pretrain(ds, PretrainMethod::Bc, cfg);
    FAIL("expected a TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("iteration 1") != std::string::npos);
    CHECK(std::string(e.what()).find("0:3") != std::string::npos);
  }
}

TEST_CASE("checkpoints round-trip and detect corruption") {
  Encoder<float> enc;
  enc.init(12);
  const fs::path dir = fs::temp_directory_path() / "affordrep_test_ckpt";
  fs::remove_all(dir);
  save_encoder(dir, enc, {{"method", "bc"}, {"seed", 12}});
  const Encoder<float> back = load_encoder(dir);
  CHECK(back.cfg == enc.cfg);
  CHECK(params_sha256(const_cast<Encoder<float>&>(back).params()) == params_sha256(enc.params()));
  CHECK(read_checkpoint_meta(dir).at("method") == "bc");

  // saving twice yields identical bytes
  const fs::path dir2 = dir.string() + "_b";
  save_encoder(dir2, enc, {{"method", "bc"}, {"seed", 12}});
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  };
  CHECK(slurp(dir / "params.f32") == slurp(dir2 / "params.f32"));
  CHECK(slurp(dir / "manifest.json") == slurp(dir2 / "manifest.json"));

  {
    std::fstream f(dir / "params.f32", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(100);
    f.put('\x7f');
  }
  CHECK_THROWS_AS(load_encoder(dir), CheckpointError);

  Encoder<float> wrong_shape(EncoderConfig{64, {8, 8, 8}, 16, 8, 16});
  CHECK_THROWS_AS(load_checkpoint(dir2, "encoder", wrong_shape.params()), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(dir2, "heads", enc.params()), CheckpointError);
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("training log CSV") {
  const fs::path p = fs::temp_directory_path() / "affordrep_test_log.csv";
  write_training_log({{1, 0.5, 2e-4}, {2, 0.25, 1e-4}}, p);
  std::ifstream in(p);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "iteration,loss,lr");
  CHECK(row == "1,0.5,0.0002");
  fs::remove(p);
}

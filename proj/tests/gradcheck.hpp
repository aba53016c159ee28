#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "affordrep/encoder.hpp"

namespace testsupport {

using affordrep::nn::Mat;

// Tiny network sizes so every parameter can be finite-differenced.
inline affordrep::EncoderConfig toy_encoder_config() {
  affordrep::EncoderConfig c;
  c.image_size = 8;
  c.channels = {2, 3, 2};
  c.image_features = 4;
  c.branch = 3;
  c.d_z = 4;
  return c;
}

inline affordrep::HeadsConfig toy_heads_config() {
  affordrep::HeadsConfig c;
  c.hidden = 5;
  c.embed = 4;
  return c;
}

inline affordrep::ObsBatch<double> random_obs(int batch, int size, affordrep::Rng& rng) {
  affordrep::ObsBatch<double> o;
  o.image.resize(3, static_cast<Eigen::Index>(batch) * size * size);
  for (Eigen::Index j = 0; j < o.image.cols(); ++j)
    for (Eigen::Index i = 0; i < 3; ++i) o.image(i, j) = rng.uniform();
  o.speed.resize(1, batch);
  o.command = Mat<double>::Zero(4, batch);
  for (int b = 0; b < batch; ++b) {
    o.speed(0, b) = rng.uniform(0.0, 6.0);
    o.command(static_cast<Eigen::Index>(rng.below(4)), b) = 1.0;
  }
  return o;
}

inline Mat<double> random_actions(int batch, affordrep::Rng& rng) {
  Mat<double> a(3, batch);
  for (int b = 0; b < batch; ++b) a.col(b) << rng.uniform(-1, 1), rng.uniform(), rng.uniform();
  return a;
}

// Relative error |a - n| / max(|a|, |n|, floor); the floor keeps gradients that
// are zero up to finite-difference noise from dominating.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// `loss` must recompute the loss from the current parameters and accumulate
// gradients into them.
inline double max_gradient_error(const affordrep::nn::ParamList<double>& ps, const std::function<double()>& loss,
                                 double h = 1e-5) {
  affordrep::nn::zero_grads(ps);
  loss();
  std::vector<Mat<double>> analytic;
  for (const auto& p : ps) analytic.push_back(*p.grad);
  double worst = 0.0;
  for (std::size_t k = 0; k < ps.size(); ++k) {
    Mat<double>& v = *ps[k].value;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double orig = v.data()[i];
      v.data()[i] = orig + h;
      const double lp = loss();
      v.data()[i] = orig - h;
      const double lm = loss();
      v.data()[i] = orig;
      worst = std::max(worst, relative_error(analytic[k].data()[i], (lp - lm) / (2.0 * h)));
    }
  }
  return worst;
}

// Encoder and heads at toy size with random batches; biases are randomized too.
struct ToyModel {
  affordrep::Encoder<double> enc{testsupport::toy_encoder_config()};
  affordrep::Heads<double> heads{testsupport::toy_encoder_config().d_z, testsupport::toy_heads_config()};
  affordrep::FrameBatch<double> frames;
  affordrep::PairBatch<double> pairs;

  explicit ToyModel(std::uint64_t seed, int batch = 3) {
    enc.init(seed);
    heads.init(seed + 1);
    affordrep::Rng rng(seed + 2);
    for (auto& p : params())
      if (p.value->cols() == 1)
        for (Eigen::Index i = 0; i < p.value->size(); ++i) p.value->data()[i] = rng.uniform(-0.2, 0.2);
    frames.obs = random_obs(batch, 8, rng);
    frames.action = random_actions(batch, rng);
    frames.speed = Mat<double>::Random(1, batch).cwiseAbs() * 5.0;
    pairs.first = random_obs(batch, 8, rng);
    pairs.second = random_obs(batch, 8, rng);
    pairs.action = random_actions(batch, rng);
  }
  affordrep::nn::ParamList<double> params() {
    auto ps = enc.params();
    for (const auto& p : heads.params()) ps.push_back(p);
    return ps;
  }
};

}  // namespace testsupport

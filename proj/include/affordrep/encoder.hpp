#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "affordrep/datasets.hpp"
#include "affordrep/nn.hpp"
#include "json.hpp"

namespace affordrep {

using nn::Mat;

struct EncoderConfig {
  int image_size = 64;
  std::array<int, 3> channels{16, 32, 64};
  int image_features = 128;
  int branch = 32;  // speed and command branch width
  int d_z = 128;

  void validate() const;
  int flat_size() const;
  bool operator==(const EncoderConfig&) const = default;
};

struct HeadsConfig {
  int hidden = 64;
  int embed = 64;  // forward-model action embedding
  double dropout = 0.5;
  bool operator==(const HeadsConfig&) const = default;
};

nlohmann::json to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const HeadsConfig& c);
HeadsConfig heads_config_from_json(const nlohmann::json& j);

template <typename T>
struct ObsBatch {
  Mat<T> image;    // [3, B*H*W]
  Mat<T> speed;    // [1, B]
  Mat<T> command;  // [4, B]
  int size() const { return static_cast<int>(speed.cols()); }
};

template <typename T>
ObsBatch<T> concat(const ObsBatch<T>& a, const ObsBatch<T>& b) {
  ObsBatch<T> o;
  o.image.resize(a.image.rows(), a.image.cols() + b.image.cols());
  o.image << a.image, b.image;
  o.speed.resize(1, a.speed.cols() + b.speed.cols());
  o.speed << a.speed, b.speed;
  o.command.resize(a.command.rows(), a.command.cols() + b.command.cols());
  o.command << a.command, b.command;
  return o;
}

template <typename T>
ObsBatch<T> batch_from_observations(const std::vector<const Observation*>& obs) {
  if (obs.empty()) throw std::invalid_argument("empty observation batch");
  const int n = obs.front()->size;
  const Eigen::Index hw = static_cast<Eigen::Index>(n) * n;
  const auto b = static_cast<Eigen::Index>(obs.size());
  ObsBatch<T> o;
  o.image.resize(kImageChannels, b * hw);
  o.speed.resize(1, b);
  o.command.resize(kCommandCount, b);
  for (Eigen::Index i = 0; i < b; ++i) {
    const Observation& x = *obs[i];
    if (x.size != n || static_cast<Eigen::Index>(x.image.size()) != kImageChannels * hw)
      throw std::invalid_argument("observation batch with mixed image sizes");
    if (!std::isfinite(x.speed)) throw std::invalid_argument("observation speed is not finite");
    for (int c = 0; c < kImageChannels; ++c)
      for (Eigen::Index p = 0; p < hw; ++p) {
        const float v = x.image[c * hw + p];
        if (!std::isfinite(v)) throw std::invalid_argument("observation image contains NaN or Inf");
        o.image(c, i * hw + p) = static_cast<T>(v);
      }
    o.speed(0, i) = static_cast<T>(x.speed);
    for (int k = 0; k < kCommandCount; ++k) o.command(k, i) = static_cast<T>(x.command[k]);
  }
  return o;
}

template <typename T>
ObsBatch<T> batch_from_frames(const std::vector<const Frame*>& frames) {
  if (frames.empty()) throw std::invalid_argument("empty frame batch");
  const Eigen::Index hw = 64 * 64;
  const auto b = static_cast<Eigen::Index>(frames.size());
  ObsBatch<T> o;
  o.image.resize(kImageChannels, b * hw);
  o.speed.resize(1, b);
  o.command = Mat<T>::Zero(kCommandCount, b);
  for (Eigen::Index i = 0; i < b; ++i) {
    const Frame& f = *frames[i];
    if (static_cast<Eigen::Index>(f.levels.size()) != kImageChannels * hw)
      throw std::invalid_argument("frame has no 3x64x64 image");
    for (int c = 0; c < kImageChannels; ++c)
      for (Eigen::Index p = 0; p < hw; ++p)
        o.image(c, i * hw + p) = static_cast<T>(static_cast<float>(f.levels[c * hw + p]) / 255.0f);
    o.speed(0, i) = static_cast<T>(f.speed);
    o.command(static_cast<int>(f.command), i) = T(1);
  }
  return o;
}

template <typename T>
struct EncoderCache {
  int batch = 0;
  std::array<Mat<T>, 3> cols;
  std::array<Mat<T>, 3> act;  // post-ELU conv outputs
  Mat<T> img_feat;            // post-ELU fc output
  nn::MlpCache<T> speed, command;
  Mat<T> joined;
};

// h_theta: conv image branch + speed and command branches, joined linearly.
template <typename T>
struct Encoder {
  EncoderConfig cfg;
  std::array<nn::Conv<T>, 3> conv;
  nn::Linear<T> fc;
  nn::Mlp<T> speed_net, command_net;
  nn::Linear<T> join;

  Encoder() : Encoder(EncoderConfig{}) {}
  explicit Encoder(const EncoderConfig& c) : cfg(c) {
    cfg.validate();
    int size = c.image_size;
    int cin = kImageChannels;
    for (int i = 0; i < 3; ++i) {
      conv[i] = nn::Conv<T>(cin, c.channels[i], size, size);
      cin = c.channels[i];
      size = conv[i].ho();
    }
    fc = nn::Linear<T>(c.flat_size(), c.image_features);
    speed_net = nn::Mlp<T>({1, c.branch, c.branch}, true);
    command_net = nn::Mlp<T>({kCommandCount, c.branch, c.branch}, true);
    join = nn::Linear<T>(c.image_features + 2 * c.branch, c.d_z);
  }

  void init(std::uint64_t seed) {
    Rng rng(derive_seed({seed, 0x656e63ULL}));
    for (auto& l : conv) l.init(rng);
    fc.init(rng);
    speed_net.init(rng);
    command_net.init(rng);
    join.init(rng);
  }

  Mat<T> forward(const ObsBatch<T>& x, EncoderCache<T>& c) const {
    const int b = x.size();
    c.batch = b;
    const Mat<T>* in = &x.image;
    for (int i = 0; i < 3; ++i) {
      c.act[i] = nn::elu<T>(conv[i].forward(*in, b, c.cols[i]));
      in = &c.act[i];
    }
    const Eigen::Map<const Mat<T>> flat(c.act[2].data(), cfg.flat_size(), b);
    c.img_feat = nn::elu<T>(fc.forward(flat));
    const Mat<T> s = speed_net.forward(x.speed, c.speed, nullptr);
    const Mat<T> m = command_net.forward(x.command, c.command, nullptr);
    c.joined.resize(c.img_feat.rows() + s.rows() + m.rows(), b);
    c.joined << c.img_feat, s, m;
    return join.forward(c.joined);
  }
  Mat<T> forward(const ObsBatch<T>& x) const {
    EncoderCache<T> c;
    return forward(x, c);
  }

  void backward(const Mat<T>& dz, const EncoderCache<T>& c) {
    const Mat<T> dj = join.backward(c.joined, dz);
    const int fi = cfg.image_features, br = cfg.branch;
    speed_net.backward(dj.middleRows(fi, br), c.speed);
    command_net.backward(dj.middleRows(fi + br, br), c.command);
    const Mat<T> dfeat = nn::elu_backward<T>(c.img_feat, dj.topRows(fi));
    const Eigen::Map<const Mat<T>> flat(c.act[2].data(), cfg.flat_size(), c.batch);
    Mat<T> dflat = fc.backward(flat, dfeat);
    Mat<T> g = Eigen::Map<const Mat<T>>(dflat.data(), cfg.channels[2], dflat.size() / cfg.channels[2]);
    for (int i = 2; i >= 0; --i) {
      g = nn::elu_backward<T>(c.act[i], g);
      g = conv[i].backward(c.cols[i], g, c.batch);
    }
  }

  nn::ParamList<T> params() {
    nn::ParamList<T> ps;
    for (int i = 0; i < 3; ++i) conv[i].collect(ps, "enc.conv" + std::to_string(i));
    fc.collect(ps, "enc.fc");
    speed_net.collect(ps, "enc.speed");
    command_net.collect(ps, "enc.command");
    join.collect(ps, "enc.join");
    return ps;
  }

  template <typename U>
  Encoder<U> cast() const {
    Encoder<U> o(cfg);
    for (int i = 0; i < 3; ++i) o.conv[i] = conv[i].template cast<U>();
    o.fc = fc.template cast<U>();
    o.speed_net = speed_net.template cast<U>();
    o.command_net = command_net.template cast<U>();
    o.join = join.template cast<U>();
    return o;
  }
};

// Pre-training heads: f_a, f_s, f_im, f_wd and the bilinear f_c.
template <typename T>
struct Heads {
  HeadsConfig cfg;
  int d_z = 0;
  nn::Mlp<T> fa, fs, fim, fwd_embed;
  nn::Linear<T> fwd_join;
  Mat<T> fc, gfc;

  Heads() : Heads(EncoderConfig{}.d_z, HeadsConfig{}) {}
  Heads(int dz, const HeadsConfig& c) : cfg(c), d_z(dz) {
    fa = nn::Mlp<T>({dz, c.hidden, c.hidden, 3}, false, 1, c.dropout);
    fs = nn::Mlp<T>({dz, c.hidden, 1});
    fim = nn::Mlp<T>({2 * dz, c.hidden, 3});
    fwd_embed = nn::Mlp<T>({3, c.embed, c.embed}, true);
    fwd_join = nn::Linear<T>(dz + c.embed, dz);
    fc = Mat<T>::Zero(dz, dz);
    gfc = Mat<T>::Zero(dz, dz);
  }

  void init(std::uint64_t seed) {
    Rng rng(derive_seed({seed, 0x6865616473ULL}));
    fa.init(rng);
    fs.init(rng);
    fim.init(rng);
    fwd_embed.init(rng);
    fwd_join.init(rng);
    nn::init_uniform(fc, std::sqrt(3.0) / d_z, rng);
  }

  nn::ParamList<T> params() {
    nn::ParamList<T> ps;
    fa.collect(ps, "head.fa");
    fs.collect(ps, "head.fs");
    fim.collect(ps, "head.fim");
    fwd_embed.collect(ps, "head.fwd_embed");
    fwd_join.collect(ps, "head.fwd_join");
    ps.push_back({"head.fc", &fc, &gfc});
    return ps;
  }

  template <typename U>
  Heads<U> cast() const {
    Heads<U> o(d_z, cfg);
    o.fa = fa.template cast<U>();
    o.fs = fs.template cast<U>();
    o.fim = fim.template cast<U>();
    o.fwd_embed = fwd_embed.template cast<U>();
    o.fwd_join = fwd_join.template cast<U>();
    o.fc = fc.template cast<U>();
    return o;
  }
};

struct LossWeights {
  double lambda_v = 0.05;
  double lambda_fwd = 1.0;
};

template <typename T>
struct FrameBatch {
  ObsBatch<T> obs;
  Mat<T> action;  // [3, B]
  Mat<T> speed;   // [1, B] speed target
};

template <typename T>
struct PairBatch {
  ObsBatch<T> first, second;
  Mat<T> action;  // [3, B], the action taken at the first frame
};

namespace detail {

template <typename T>
T sgn(T v) {
  return static_cast<T>((v > T(0)) - (v < T(0)));
}

// Sum of |pred - target| over rows, mean over columns; writes d/dpred into grad.
template <typename T>
T l1_mean(const Mat<T>& pred, const Mat<T>& target, Mat<T>& grad) {
  const T inv = T(1) / static_cast<T>(pred.cols());
  grad = (pred - target).unaryExpr([inv](T v) { return sgn(v) * inv; });
  return (pred - target).cwiseAbs().sum() * inv;
}

template <typename T>
void check_batch(int b, int minimum, const char* what) {
  if (b < minimum) throw std::invalid_argument(std::string(what) + ": batch too small");
}

}  // namespace detail

// The losses below return the batch loss and accumulate gradients into the
// encoder and head parameters (callers zero them first). `dropout` == nullptr
// runs the heads in eval mode.

template <typename T>
T bc_loss(Encoder<T>& enc, Heads<T>& heads, const FrameBatch<T>& batch, const LossWeights& w, Rng* dropout) {
  detail::check_batch<T>(batch.obs.size(), 1, "bc_loss");
  EncoderCache<T> ec;
  const Mat<T> z = enc.forward(batch.obs, ec);
  nn::MlpCache<T> ca, cs;
  const Mat<T> a = heads.fa.forward(z, ca, dropout);
  const Mat<T> s = heads.fs.forward(z, cs, nullptr);
  Mat<T> ga, gs;
  const T la = detail::l1_mean(a, batch.action, ga);
  const T ls = detail::l1_mean(s, batch.speed, gs);
  gs *= static_cast<T>(w.lambda_v);
  Mat<T> dz = heads.fa.backward(ga, ca);
  dz += heads.fs.backward(gs, cs);
  enc.backward(dz, ec);
  return la + static_cast<T>(w.lambda_v) * ls;
}

namespace detail {

template <typename T>
struct PairForward {
  EncoderCache<T> cache;
  Mat<T> z;  // [d_z, 2B]: first B columns are z_t
  int b = 0;
  auto zt() const { return z.leftCols(b); }
  auto zt1() const { return z.rightCols(b); }
};

template <typename T>
PairForward<T> encode_pairs(const Encoder<T>& enc, const PairBatch<T>& batch) {
  PairForward<T> p;
  p.b = batch.first.size();
  if (batch.second.size() != p.b) throw std::invalid_argument("pair batch halves differ in size");
  p.z = enc.forward(concat(batch.first, batch.second), p.cache);
  return p;
}

// Inverse term; adds its gradient w.r.t. [z_t; z_t1] into dz.
template <typename T>
T inverse_term(Heads<T>& heads, const PairForward<T>& p, const Mat<T>& action, Mat<T>& dz) {
  const int dzn = heads.d_z;
  Mat<T> joint(2 * dzn, p.b);
  joint << p.zt(), p.zt1();
  nn::MlpCache<T> c;
  const Mat<T> out = heads.fim.forward(joint, c, nullptr);
  Mat<T> g;
  const T loss = l1_mean(out, action, g);
  const Mat<T> dj = heads.fim.backward(g, c);
  dz.leftCols(p.b) += dj.topRows(dzn);
  dz.rightCols(p.b) += dj.bottomRows(dzn);
  return loss;
}

}  // namespace detail

template <typename T>
T inverse_loss(Encoder<T>& enc, Heads<T>& heads, const PairBatch<T>& batch) {
  detail::check_batch<T>(batch.first.size(), 1, "inverse_loss");
  auto p = detail::encode_pairs(enc, batch);
  Mat<T> dz = Mat<T>::Zero(p.z.rows(), p.z.cols());
  const T loss = detail::inverse_term(heads, p, batch.action, dz);
  enc.backward(dz, p.cache);
  return loss;
}

template <typename T>
T forward_loss(Encoder<T>& enc, Heads<T>& heads, const PairBatch<T>& batch, double lambda_fwd) {
  detail::check_batch<T>(batch.first.size(), 1, "forward_loss");
  auto p = detail::encode_pairs(enc, batch);
  Mat<T> dz = Mat<T>::Zero(p.z.rows(), p.z.cols());
  T loss = detail::inverse_term(heads, p, batch.action, dz);
  if (lambda_fwd != 0.0) {
    nn::MlpCache<T> ce;
    const Mat<T> emb = heads.fwd_embed.forward(batch.action, ce, nullptr);
    Mat<T> joint(heads.d_z + emb.rows(), p.b);
    joint << p.zt(), emb;
    const Mat<T> pred = heads.fwd_join.forward(joint);
    const Mat<T> diff = pred - p.zt1();
    const T lam = static_cast<T>(lambda_fwd);
    const T inv = T(1) / static_cast<T>(p.b);
    loss += lam * diff.squaredNorm() * inv;
    const Mat<T> g = (T(2) * lam * inv) * diff;
    const Mat<T> dj = heads.fwd_join.backward(joint, g);
    dz.leftCols(p.b) += dj.topRows(heads.d_z);
    heads.fwd_embed.backward(dj.bottomRows(emb.rows()), ce);
    dz.rightCols(p.b) -= g;
  }
  enc.backward(dz, p.cache);
  return loss;
}

namespace detail {

// Logit matrix L(i, j) = zt(i)^T W zt1(j); mean BCE against the identity.
template <typename T>
T contrastive_term(const Mat<T>& W, const Mat<T>& zt, const Mat<T>& zt1, Mat<T>& gW, Mat<T>& dzt, Mat<T>& dzt1) {
  const auto b = zt.cols();
  const Mat<T> wz1 = W * zt1;
  const Mat<T> logits = zt.transpose() * wz1;
  const T inv = T(1) / static_cast<T>(b * b);
  T loss = 0;
  Mat<T> g(b, b);
  for (Eigen::Index i = 0; i < b; ++i)
    for (Eigen::Index j = 0; j < b; ++j) {
      const T l = logits(i, j);
      const T y = i == j ? T(1) : T(0);
      // softplus(l) - y*l, computed stably
      loss += std::max(l, T(0)) + std::log1p(std::exp(-std::abs(l))) - y * l;
      g(i, j) = (T(1) / (T(1) + std::exp(-l)) - y) * inv;
    }
  gW.noalias() += zt * g * zt1.transpose();
  dzt = wz1 * g.transpose();
  dzt1 = W.transpose() * zt * g;
  return loss * inv;
}

}  // namespace detail

template <typename T>
T contrastive_loss(Encoder<T>& enc, Heads<T>& heads, const PairBatch<T>& batch) {
  detail::check_batch<T>(batch.first.size(), 2, "contrastive_loss");
  auto p = detail::encode_pairs(enc, batch);
  Mat<T> dzt, dzt1;
  const T loss = detail::contrastive_term<T>(heads.fc, p.zt(), p.zt1(), heads.gfc, dzt, dzt1);
  Mat<T> dz(p.z.rows(), p.z.cols());
  dz << dzt, dzt1;
  enc.backward(dz, p.cache);
  return loss;
}

enum class PretrainMethod : std::uint8_t { None, Bc, Inverse, Forward, Contrastive };
const char* to_string(PretrainMethod m);
PretrainMethod pretrain_method_from_string(const std::string& s);

struct TrainConfig {
  double lr = 2e-4;
  int batch = 64;
  int iterations = 20000;
  LossWeights weights;
  std::uint64_t seed = 0;
  EncoderConfig encoder;
  HeadsConfig heads;

  void validate() const;
};

// Iteration at which the learning rate is halved: ceil(0.75 K).
int lr_halving_iteration(int iterations);
// Learning rate used at 1-based iteration i.
double lr_at(const TrainConfig& cfg, int iteration);

struct LogRow {
  int iteration = 0;
  double loss = 0.0;
  double lr = 0.0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PretrainResult {
  Encoder<float> encoder;
  Heads<float> heads;
  std::vector<LogRow> log;
};

PretrainResult pretrain(const Dataset& du, PretrainMethod method, const TrainConfig& cfg);
void write_training_log(const std::vector<LogRow>& log, const std::filesystem::path& path);

// Eval-mode embedding of one observation; rejects non-finite inputs.
std::vector<float> encode(const Encoder<float>& enc, const Observation& obs);

// Channel mean of conv layer `layer` (0..2) after its activation, min-max
// normalized; a constant map becomes all zeros.
Mat<float> attention_map(const Encoder<float>& enc, const Observation& obs, int layer);

void save_encoder(const std::filesystem::path& dir, const Encoder<float>& enc, const nlohmann::json& extra = {});
Encoder<float> load_encoder(const std::filesystem::path& dir);

}  // namespace affordrep

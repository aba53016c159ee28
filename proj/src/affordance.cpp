#include "affordrep/affordance.hpp"

#include <algorithm>
#include <cmath>

#include "affordrep/checkpoint.hpp"

namespace affordrep {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(HeadMode m) { return m == HeadMode::Linear ? "linear" : "mlp3"; }

HeadMode head_mode_from_string(const std::string& s) {
  if (s == "linear") return HeadMode::Linear;
  if (s == "mlp3") return HeadMode::Mlp3;
  throw std::invalid_argument("unknown head mode: " + s);
}

void AffordanceTrainConfig::validate() const {
  if (iterations < 0) throw std::invalid_argument("affordance iterations must be non-negative");
  if (batch < 1) throw std::invalid_argument("affordance batch must be positive");
  if (!(lr >= 0.0)) throw std::invalid_argument("affordance lr must be non-negative");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("affordance weight_decay must be non-negative");
}

namespace {

constexpr int kEmbedChunk = 64;

std::vector<const Frame*> training_frames(const Dataset& dl) {
  std::vector<const Frame*> out = centre_frames(dl);
  if (out.empty()) throw std::invalid_argument("affordance training needs a non-empty Dl with centre frames");
  return out;
}

Mat<float> targets_of(const std::vector<const Frame*>& frames) {
  Mat<float> t(4, static_cast<Eigen::Index>(frames.size()));
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const Affordances& a = frames[i]->afford;
    t.col(static_cast<Eigen::Index>(i)) << static_cast<float>(a.hp), static_cast<float>(a.hv),
        static_cast<float>(a.hr), static_cast<float>(a.psi);
  }
  return t;
}

Mat<float> embed_frames(const Encoder<float>& enc, const std::vector<const Frame*>& frames) {
  Mat<float> z(enc.cfg.d_z, static_cast<Eigen::Index>(frames.size()));
  for (std::size_t s = 0; s < frames.size(); s += kEmbedChunk) {
    const std::size_t e = std::min(frames.size(), s + kEmbedChunk);
    const std::vector<const Frame*> chunk(frames.begin() + static_cast<std::ptrdiff_t>(s),
                                          frames.begin() + static_cast<std::ptrdiff_t>(e));
    z.middleCols(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(e - s)) =
        enc.forward(batch_from_frames<float>(chunk));
  }
  return z;
}

void fit_standardization(AffordanceHead<float>& head, const Mat<float>& z) {
  const Eigen::VectorXd mean = z.cast<double>().rowwise().mean();
  const Eigen::VectorXd var = (z.cast<double>().colwise() - mean).array().square().rowwise().mean();
  head.mean = mean.cast<float>();
  head.inv_std = var.array().sqrt().max(1e-6).inverse().matrix().cast<float>();
}

// Epoch-shuffled index stream over [0, n).
class IndexStream {
 public:
  IndexStream(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) { refill(); }
  std::vector<std::size_t> next(std::size_t b) {
    b = std::min(b, n_);
    if (pos_ + b > order_.size()) refill();
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(pos_ + b));
    pos_ += b;
    return out;
  }

 private:
  void refill() {
    order_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
    Rng rng(derive_seed({seed_, epoch_++, 0x69647873ULL}));
    shuffle_in_place(order_, rng);
    pos_ = 0;
  }
  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t pos_ = 0;
  std::vector<std::size_t> order_;
};

Mat<float> gather_cols(const Mat<float>& m, const std::vector<std::size_t>& idx) {
  Mat<float> out(m.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.col(static_cast<Eigen::Index>(i)) = m.col(static_cast<Eigen::Index>(idx[i]));
  return out;
}

// At most this many frames feed the standardization statistics.
constexpr std::size_t kStatsFrames = 4096;

std::vector<const Frame*> stats_frames(const Dataset& ds) {
  const auto all = centre_frames(ds);
  if (all.empty()) throw std::invalid_argument("standardization source has no centre frames");
  const std::size_t stride = (all.size() + kStatsFrames - 1) / kStatsFrames;
  std::vector<const Frame*> out;
  for (std::size_t i = 0; i < all.size(); i += stride) out.push_back(all[i]);
  return out;
}

void decay_weights(const nn::ParamList<float>& ps, double wd) {
  if (wd <= 0.0) return;
  for (const auto& p : ps)
    if (p.value->cols() > 1) *p.grad += static_cast<float>(wd) * *p.value;
}

void check_loss(float loss, int it, const char* what) {
  if (!std::isfinite(loss))
    throw TrainingError(std::string("non-finite ") + what + " loss at iteration " + std::to_string(it));
}

}  // namespace

ProbeResult train_probe(const Encoder<float>& enc, const Dataset& dl, const AffordanceTrainConfig& cfg,
                        std::uint64_t seed, const Dataset* stats) {
  cfg.validate();
  const auto frames = training_frames(dl);
  Encoder<float>& frozen = const_cast<Encoder<float>&>(enc);
  const std::string before = params_sha256(frozen.params());

  const Mat<float> z = embed_frames(enc, frames);
  const Mat<float> target = targets_of(frames);
  ProbeResult res{AffordanceHead<float>(HeadMode::Linear, enc.cfg.d_z), {}};
  if (cfg.mode != HeadMode::Linear) res.head = AffordanceHead<float>(cfg.mode, enc.cfg.d_z);
  res.head.init(seed);
  fit_standardization(res.head, stats ? embed_frames(enc, stats_frames(*stats)) : z);

  auto ps = res.head.params();
  nn::Adam adam;
  IndexStream stream(frames.size(), seed);
  for (int it = 1; it <= cfg.iterations; ++it) {
    const auto idx = stream.next(static_cast<std::size_t>(cfg.batch));
    nn::zero_grads(ps);
    Mat<float> dz;
    const float loss = affordance_loss(res.head, gather_cols(z, idx), gather_cols(target, idx), cfg.loss, dz);
    check_loss(loss, it, "probe");
    decay_weights(ps, cfg.weight_decay);
    adam.step(ps, cfg.lr);
    res.log.push_back({it, loss});
  }
  if (params_sha256(frozen.params()) != before) throw std::logic_error("probe training modified the frozen encoder");
  return res;
}

FinetuneResult train_finetune(const Encoder<float>& enc, const Dataset& dl, const AffordanceTrainConfig& cfg,
                              std::uint64_t seed) {
  cfg.validate();
  const auto frames = training_frames(dl);
  FinetuneResult res{enc, AffordanceHead<float>(HeadMode::Mlp3, enc.cfg.d_z), {}};
  res.head.init(seed);  // identity standardization: z moves with the encoder

  auto ps = res.encoder.params();
  const auto head_ps = res.head.params();
  for (const auto& p : head_ps) ps.push_back(p);
  nn::Adam adam;
  IndexStream stream(frames.size(), seed);
  for (int it = 1; it <= cfg.iterations; ++it) {
    const auto idx = stream.next(static_cast<std::size_t>(cfg.batch));
    std::vector<const Frame*> chunk;
    for (std::size_t i : idx) chunk.push_back(frames[i]);
    nn::zero_grads(ps);
    EncoderCache<float> cache;
    const Mat<float> z = res.encoder.forward(batch_from_frames<float>(chunk), cache);
    Mat<float> dz;
    const float loss = affordance_loss(res.head, z, targets_of(chunk), cfg.loss, dz);
    check_loss(loss, it, "finetune");
    res.encoder.backward(dz, cache);
    decay_weights(head_ps, cfg.weight_decay);
    adam.step(ps, cfg.lr);
    res.log.push_back({it, loss});
  }
  return res;
}

double affordance_eval_loss(const Encoder<float>& enc, const AffordanceHead<float>& head, const Dataset& ds,
                            const AffordanceLossConfig& cfg) {
  const auto frames = training_frames(ds);
  AffordanceHead<double> h = head.cast<double>();
  const Mat<double> z = embed_frames(enc, frames).cast<double>();
  const Mat<double> target = targets_of(frames).cast<double>();
  Mat<double> dz;
  return affordance_loss(h, z, target, cfg, dz);
}

AffordancePrediction prediction_from_output(double hp_logit, double hv_logit, double hr_logit, double psi_raw) {
  auto sigmoid = [](double l) { return 1.0 / (1.0 + std::exp(-l)); };
  return {sigmoid(hp_logit), sigmoid(hv_logit), sigmoid(hr_logit), wrap_angle(psi_raw)};
}

namespace {

std::vector<AffordancePrediction> predictions_from(const Mat<float>& out) {
  std::vector<AffordancePrediction> res;
  for (Eigen::Index j = 0; j < out.cols(); ++j) res.push_back(prediction_from_output(out(0, j), out(1, j), out(2, j), out(3, j)));
  return res;
}

}  // namespace

AffordancePrediction predict(const Encoder<float>& enc, const AffordanceHead<float>& head, const Observation& obs) {
  return predict_batch(enc, head, {&obs}).front();
}

std::vector<AffordancePrediction> predict_batch(const Encoder<float>& enc, const AffordanceHead<float>& head,
                                                const std::vector<const Observation*>& obs) {
  return predictions_from(head.forward(enc.forward(batch_from_observations<float>(obs))));
}

std::vector<AffordancePrediction> predict_frames(const Encoder<float>& enc, const AffordanceHead<float>& head,
                                                 const std::vector<const Frame*>& frames) {
  if (frames.empty()) return {};
  return predictions_from(head.forward(embed_frames(enc, frames)));
}

ProbeReport evaluate_affordances(const Encoder<float>& enc, const AffordanceHead<float>& head, const Dataset& test) {
  const auto frames = centre_frames(test);
  if (frames.empty()) throw std::invalid_argument("evaluate_affordances: no centre-camera frames");
  const auto preds = predict_frames(enc, head, frames);
  std::array<std::vector<int>, 3> p, g;
  std::vector<double> psi_pred, psi_gt;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const Affordances& a = frames[i]->afford;
    const double prob[3] = {preds[i].p_hp, preds[i].p_hv, preds[i].p_hr};
    const double gt[3] = {a.hp, a.hv, a.hr};
    for (int k = 0; k < 3; ++k) {
      p[k].push_back(prob[k] >= 0.5 ? 1 : 0);
      g[k].push_back(gt[k] >= 0.5 ? 1 : 0);
    }
    psi_pred.push_back(preds[i].psi);
    psi_gt.push_back(a.psi);
  }
  ProbeReport r;
  r.town = test.manifest.map_id;
  r.f1_hp = f1(p[0], g[0]);
  r.f1_hv = f1(p[1], g[1]);
  r.f1_hr = f1(p[2], g[2]);
  r.mae = mae_by_regime(psi_pred, psi_gt);
  return r;
}

namespace {

nn::ParamList<float> head_tensors(AffordanceHead<float>& head) {
  auto ps = head.params();
  ps.push_back({"afford.mean", &head.mean, nullptr});
  ps.push_back({"afford.inv_std", &head.inv_std, nullptr});
  return ps;
}

}  // namespace

void save_head(const fs::path& dir, const AffordanceHead<float>& head, const json& extra) {
  json meta = extra.is_object() ? extra : json::object();
  meta["mode"] = to_string(head.mode);
  meta["d_z"] = head.d_z;
  save_checkpoint(dir, "affordance", meta, head_tensors(const_cast<AffordanceHead<float>&>(head)));
}

AffordanceHead<float> load_head(const fs::path& dir) {
  const json meta = read_checkpoint_meta(dir);
  AffordanceHead<float> head(head_mode_from_string(meta.at("mode").get<std::string>()), meta.at("d_z").get<int>());
  load_checkpoint(dir, "affordance", head_tensors(head));
  return head;
}

Action LearnedDriver::act(const WorldState& state, double dt) {
  const Observation obs = render_observation(state, Camera::Center);
  const AffordancePrediction p = predict(*enc_, *head_, obs);
  return control_inplace(p.as_affordances(), state.ego.speed, gains_, pid_, dt);
}

}  // namespace affordrep

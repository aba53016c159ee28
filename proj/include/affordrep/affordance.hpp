#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "affordrep/controller.hpp"
#include "affordrep/datasets.hpp"
#include "affordrep/encoder.hpp"
#include "affordrep/evalbench.hpp"
#include "affordrep/policies.hpp"

namespace affordrep {

enum class HeadMode : std::uint8_t { Linear, Mlp3 };
const char* to_string(HeadMode m);
HeadMode head_mode_from_string(const std::string& s);

// g_phi. Output rows are logits for hp, hv, hr and the raw psi estimate.
// Inputs are standardized with statistics frozen at training start.
template <typename T>
struct AffordanceHead {
  HeadMode mode = HeadMode::Linear;
  int d_z = 0;
  Mat<T> mean, inv_std;  // [d_z, 1]
  nn::Mlp<T> net;

  AffordanceHead() = default;
  AffordanceHead(HeadMode m, int dz) : mode(m), d_z(dz), mean(Mat<T>::Zero(dz, 1)), inv_std(Mat<T>::Ones(dz, 1)) {
    if (m == HeadMode::Linear) net = nn::Mlp<T>({dz, 4});
    else net = nn::Mlp<T>({dz, dz, std::max(1, dz / 2), 4});
  }

  void init(std::uint64_t seed) {
    Rng rng(derive_seed({seed, 0x61666648ULL}));
    net.init(rng);
  }

  Mat<T> standardize(const Mat<T>& z) const {
    return ((z.colwise() - mean.col(0)).array().colwise() * inv_std.col(0).array()).matrix();
  }
  Mat<T> forward(const Mat<T>& z, nn::MlpCache<T>& c) const { return net.forward(standardize(z), c, nullptr); }
  Mat<T> forward(const Mat<T>& z) const {
    nn::MlpCache<T> c;
    return forward(z, c);
  }
  // Gradient w.r.t. z (before standardization); accumulates head gradients.
  Mat<T> backward(const Mat<T>& dout, const nn::MlpCache<T>& c) {
    const Mat<T> ds = net.backward(dout, c);
    return (ds.array().colwise() * inv_std.col(0).array()).matrix();
  }

  nn::ParamList<T> params() {
    nn::ParamList<T> ps;
    net.collect(ps, "afford");
    return ps;
  }

  template <typename U>
  AffordanceHead<U> cast() const {
    AffordanceHead<U> o(mode, d_z);
    o.mean = mean.template cast<U>();
    o.inv_std = inv_std.template cast<U>();
    o.net = net.template cast<U>();
    return o;
  }
};

struct AffordanceLossConfig {
  double lambda_psi = 1.0;
  std::array<double, 3> pos_weight{1.0, 1.0, 1.0};  // optional positive-class weights for hp, hv, hr
};

// Mean over the batch of BCE(hp) + BCE(hv) + BCE(hr) + lambda_psi * |psi_hat - psi|.
// `target` is [4, B] (hp, hv, hr in {0, 1}, psi). Returns the loss, accumulates
// head gradients and writes d loss / d z into dz.
template <typename T>
T affordance_loss(AffordanceHead<T>& head, const Mat<T>& z, const Mat<T>& target, const AffordanceLossConfig& cfg,
                  Mat<T>& dz) {
  if (z.cols() == 0) throw std::invalid_argument("affordance_loss: empty batch");
  nn::MlpCache<T> c;
  const Mat<T> out = head.forward(z, c);
  const auto b = out.cols();
  const T inv = T(1) / static_cast<T>(b);
  Mat<T> g(4, b);
  T loss = 0;
  for (Eigen::Index j = 0; j < b; ++j) {
    for (int k = 0; k < 3; ++k) {
      const T l = out(k, j);
      const T y = target(k, j);
      const T pw = static_cast<T>(cfg.pos_weight[k]);
      const T sp_pos = std::max(l, T(0)) + std::log1p(std::exp(-std::abs(l)));  // softplus(l)
      const T sp_neg = sp_pos - l;                                               // softplus(-l)
      loss += pw * y * sp_neg + (T(1) - y) * sp_pos;
      const T s = T(1) / (T(1) + std::exp(-l));
      g(k, j) = (s * (T(1) - y) - pw * y * (T(1) - s)) * inv;
    }
    const T d = out(3, j) - target(3, j);
    loss += static_cast<T>(cfg.lambda_psi) * std::abs(d);
    g(3, j) = static_cast<T>(cfg.lambda_psi) * detail::sgn(d) * inv;
  }
  dz = head.backward(g, c);
  return loss * inv;
}

struct AffordanceTrainConfig {
  HeadMode mode = HeadMode::Linear;
  int iterations = 3000;
  int batch = 64;
  double lr = 1e-3;
  double weight_decay = 1.0;  // L2 on head weight matrices, not biases
  AffordanceLossConfig loss;

  void validate() const;
};

struct AffordanceLogRow {
  int iteration = 0;
  double loss = 0.0;
};

struct ProbeResult {
  AffordanceHead<float> head;
  std::vector<AffordanceLogRow> log;
};

struct FinetuneResult {
  Encoder<float> encoder;
  AffordanceHead<float> head;
  std::vector<AffordanceLogRow> log;
};

// Frozen encoder; throws std::logic_error if the encoder parameters change.
// Standardization is fit on the centre frames of `stats` (unlabelled use only) when given, else on dl.
ProbeResult train_probe(const Encoder<float>& enc, const Dataset& dl, const AffordanceTrainConfig& cfg,
                        std::uint64_t seed, const Dataset* stats = nullptr);
// Joint update of encoder and an mlp3 head (cfg.mode is ignored).
FinetuneResult train_finetune(const Encoder<float>& enc, const Dataset& dl, const AffordanceTrainConfig& cfg,
                              std::uint64_t seed);

// Mean affordance loss of a model on a dataset (eval mode).
double affordance_eval_loss(const Encoder<float>& enc, const AffordanceHead<float>& head, const Dataset& ds,
                            const AffordanceLossConfig& cfg = {});

struct AffordancePrediction {
  double p_hp = 0.0, p_hv = 0.0, p_hr = 0.0;
  double psi = 0.0;  // wrapped to [-pi, pi]
  Affordances as_affordances() const { return {p_hp, p_hv, p_hr, psi}; }
};

AffordancePrediction prediction_from_output(double hp_logit, double hv_logit, double hr_logit, double psi_raw);
AffordancePrediction predict(const Encoder<float>& enc, const AffordanceHead<float>& head, const Observation& obs);
std::vector<AffordancePrediction> predict_batch(const Encoder<float>& enc, const AffordanceHead<float>& head,
                                                const std::vector<const Observation*>& obs);
std::vector<AffordancePrediction> predict_frames(const Encoder<float>& enc, const AffordanceHead<float>& head,
                                                 const std::vector<const Frame*>& frames);

// F1 per binary affordance (threshold 0.5) and regime-split psi MAE on the
// centre-camera frames of `test`.
ProbeReport evaluate_affordances(const Encoder<float>& enc, const AffordanceHead<float>& head, const Dataset& test);

void save_head(const std::filesystem::path& dir, const AffordanceHead<float>& head, const nlohmann::json& extra = {});
AffordanceHead<float> load_head(const std::filesystem::path& dir);

// Drives from the centre camera: predicted affordances into the PID controller.
class LearnedDriver : public Driver {
 public:
  LearnedDriver(std::shared_ptr<const Encoder<float>> enc, std::shared_ptr<const AffordanceHead<float>> head,
                PIDGains gains)
      : enc_(std::move(enc)), head_(std::move(head)), gains_(gains) {}
  void reset() override { pid_ = {}; }
  Action act(const WorldState& state, double dt) override;

 private:
  std::shared_ptr<const Encoder<float>> enc_;
  std::shared_ptr<const AffordanceHead<float>> head_;
  PIDGains gains_;
  PIDState pid_;
};

}  // namespace affordrep

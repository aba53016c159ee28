#include "affordrep/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "affordrep/checkpoint.hpp"

namespace affordrep {

namespace fs = std::filesystem;
using nlohmann::json;

void EncoderConfig::validate() const {
  if (image_size < 8 || image_size % 8 != 0) throw std::invalid_argument("encoder image_size must be a positive multiple of 8");
  for (int c : channels)
    if (c < 1) throw std::invalid_argument("encoder channels must be positive");
  if (image_features < 1 || branch < 1 || d_z < 1) throw std::invalid_argument("encoder widths must be positive");
}

int EncoderConfig::flat_size() const {
  const int s = image_size / 8;
  return channels[2] * s * s;
}

json to_json(const EncoderConfig& c) {
  return {{"image_size", c.image_size}, {"channels", c.channels}, {"image_features", c.image_features},
          {"branch", c.branch}, {"d_z", c.d_z}};
}

EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig c;
  c.image_size = j.value("image_size", c.image_size);
  if (j.contains("channels")) c.channels = j.at("channels").get<std::array<int, 3>>();
  c.image_features = j.value("image_features", c.image_features);
  c.branch = j.value("branch", c.branch);
  c.d_z = j.value("d_z", c.d_z);
  c.validate();
  return c;
}

json to_json(const HeadsConfig& c) { return {{"hidden", c.hidden}, {"embed", c.embed}, {"dropout", c.dropout}}; }

HeadsConfig heads_config_from_json(const json& j) {
  HeadsConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.embed = j.value("embed", c.embed);
  c.dropout = j.value("dropout", c.dropout);
  if (c.hidden < 1 || c.embed < 1 || c.dropout < 0.0 || c.dropout >= 1.0)
    throw std::invalid_argument("invalid heads config");
  return c;
}

const char* to_string(PretrainMethod m) {
  switch (m) {
    case PretrainMethod::None: return "none";
    case PretrainMethod::Bc: return "bc";
    case PretrainMethod::Inverse: return "inverse";
    case PretrainMethod::Forward: return "forward";
    case PretrainMethod::Contrastive: return "contrastive";
  }
  return "?";
}

PretrainMethod pretrain_method_from_string(const std::string& s) {
  for (PretrainMethod m : {PretrainMethod::None, PretrainMethod::Bc, PretrainMethod::Inverse, PretrainMethod::Forward,
                           PretrainMethod::Contrastive})
    if (s == to_string(m)) return m;
  throw std::invalid_argument("unknown pretraining method: " + s);
}

void TrainConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("iterations must be positive");
  if (batch < 1) throw std::invalid_argument("batch must be positive");
  if (!(lr >= 0.0)) throw std::invalid_argument("lr must be non-negative");
  encoder.validate();
}

int lr_halving_iteration(int iterations) {
  // ceil(0.75 K) in integers
  return (3 * iterations + 3) / 4;
}

double lr_at(const TrainConfig& cfg, int iteration) {
  return iteration >= lr_halving_iteration(cfg.iterations) ? cfg.lr / 2.0 : cfg.lr;
}

namespace {

std::vector<const Frame*> frame_ptrs(const Dataset& ds) {
  std::vector<const Frame*> out;
  for (const Episode& e : ds.episodes)
    for (const Frame& f : e.frames) out.push_back(&f);
  return out;
}

FrameBatch<float> make_frame_batch(const std::vector<const Frame*>& frames) {
  FrameBatch<float> b;
  b.obs = batch_from_frames<float>(frames);
  b.action.resize(3, static_cast<Eigen::Index>(frames.size()));
  b.speed.resize(1, static_cast<Eigen::Index>(frames.size()));
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const Action& a = frames[i]->action;
    b.action.col(static_cast<Eigen::Index>(i)) << static_cast<float>(a.steer), static_cast<float>(a.throttle),
        static_cast<float>(a.brake);
    b.speed(0, static_cast<Eigen::Index>(i)) = frames[i]->speed;
  }
  return b;
}

PairBatch<float> make_pair_batch(const Dataset& ds, const std::vector<PairRef>& refs) {
  std::vector<const Frame*> first, second;
  for (const PairRef& r : refs) {
    first.push_back(&ds.episodes[r.episode].frames[r.t]);
    second.push_back(&ds.episodes[r.episode].frames[r.t + 1]);
  }
  const FrameBatch<float> fb = make_frame_batch(first);
  PairBatch<float> p;
  p.first = fb.obs;
  p.action = fb.action;
  p.second = batch_from_frames<float>(second);
  return p;
}

std::string describe_batch(const std::vector<std::pair<int, int>>& ids) {
  std::ostringstream ss;
  for (std::size_t i = 0; i < ids.size() && i < 16; ++i) ss << (i ? " " : "") << ids[i].first << ":" << ids[i].second;
  if (ids.size() > 16) ss << " ...";
  return ss.str();
}

}  // namespace

PretrainResult pretrain(const Dataset& du, PretrainMethod method, const TrainConfig& cfg) {
  cfg.validate();
  PretrainResult res{Encoder<float>(cfg.encoder), Heads<float>(cfg.encoder.d_z, cfg.heads), {}};
  res.encoder.init(cfg.seed);
  res.heads.init(cfg.seed);
  if (method == PretrainMethod::None) return res;
  if (du.frame_count() == 0) throw std::invalid_argument("pretrain: empty dataset");

  nn::ParamList<float> ps = res.encoder.params();
  for (const auto& p : res.heads.params()) ps.push_back(p);
  nn::Adam adam;
  Rng dropout(derive_seed({cfg.seed, 0x64726f70ULL}));

  const bool pairs = method != PretrainMethod::Bc;
  std::vector<const Frame*> frames;
  std::vector<PairRef> pair_refs;
  std::size_t cursor = 0;
  std::uint64_t epoch = 0;
  auto refill = [&] {
    if (pairs) {
      pair_refs = iterate_pairs(du, 1, derive_seed({cfg.seed, epoch}));
    } else {
      frames = frame_ptrs(du);
      Rng rng(derive_seed({cfg.seed, epoch, 0x6263ULL}));
      shuffle_in_place(frames, rng);
    }
    ++epoch;
    cursor = 0;
  };
  refill();
  const std::size_t available = pairs ? pair_refs.size() : frames.size();
  const std::size_t need = method == PretrainMethod::Contrastive ? 2 : 1;
  if (available < need) throw std::invalid_argument("pretrain: dataset too small for one batch");
  const std::size_t bsz = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), available);

  for (int it = 1; it <= cfg.iterations; ++it) {
    if (cursor + bsz > available) refill();
    std::vector<std::pair<int, int>> ids;
    nn::zero_grads(ps);
    float loss = 0.0f;
    if (pairs) {
      std::vector<PairRef> chunk(pair_refs.begin() + static_cast<std::ptrdiff_t>(cursor),
                                 pair_refs.begin() + static_cast<std::ptrdiff_t>(cursor + bsz));
      for (const PairRef& r : chunk) ids.emplace_back(du.episodes[r.episode].id, r.t);
      const PairBatch<float> b = make_pair_batch(du, chunk);
      if (method == PretrainMethod::Inverse) loss = inverse_loss(res.encoder, res.heads, b);
      else if (method == PretrainMethod::Forward) loss = forward_loss(res.encoder, res.heads, b, cfg.weights.lambda_fwd);
      else loss = contrastive_loss(res.encoder, res.heads, b);
    } else {
      std::vector<const Frame*> chunk(frames.begin() + static_cast<std::ptrdiff_t>(cursor),
                                      frames.begin() + static_cast<std::ptrdiff_t>(cursor + bsz));
      for (const Frame* f : chunk) ids.emplace_back(f->episode, f->index);
      loss = bc_loss(res.encoder, res.heads, make_frame_batch(chunk), cfg.weights, &dropout);
    }
    cursor += bsz;
    if (!std::isfinite(loss)) {
      std::ostringstream msg;
      msg << "non-finite " << to_string(method) << " loss at iteration " << it << "; batch (episode:frame) "
          << describe_batch(ids);
      throw TrainingError(msg.str());
    }
    const double lr = lr_at(cfg, it);
    adam.step(ps, lr);
    for (const auto& p : ps)
      if (!p.value->allFinite())
        throw TrainingError("non-finite parameter " + p.name + " after iteration " + std::to_string(it));
    res.log.push_back({it, loss, lr});
  }
  return res;
}

void write_training_log(const std::vector<LogRow>& log, const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write training log " + path.string());
  out << "iteration,loss,lr\n";
  out << std::setprecision(9);
  for (const LogRow& r : log) out << r.iteration << "," << r.loss << "," << r.lr << "\n";
}

std::vector<float> encode(const Encoder<float>& enc, const Observation& obs) {
  const Mat<float> z = enc.forward(batch_from_observations<float>({&obs}));
  return {z.data(), z.data() + z.size()};
}

Mat<float> attention_map(const Encoder<float>& enc, const Observation& obs, int layer) {
  if (layer < 0 || layer > 2) throw std::invalid_argument("attention_map: layer must be 0, 1 or 2");
  EncoderCache<float> c;
  enc.forward(batch_from_observations<float>({&obs}), c);
  const nn::Conv<float>& conv = enc.conv[layer];
  const int h = conv.ho(), w = conv.wo();
  const Mat<float> avg = c.act[layer].colwise().mean();  // [1, h*w]
  Mat<float> out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) out(y, x) = avg(0, y * w + x);
  const float lo = out.minCoeff(), hi = out.maxCoeff();
  if (!(hi > lo)) return Mat<float>::Zero(h, w);
  return (out.array() - lo) / (hi - lo);
}

void save_encoder(const fs::path& dir, const Encoder<float>& enc, const json& extra) {
  json meta = extra.is_object() ? extra : json::object();
  meta["encoder"] = to_json(enc.cfg);
  save_checkpoint(dir, "encoder", meta, const_cast<Encoder<float>&>(enc).params());
}

Encoder<float> load_encoder(const fs::path& dir) {
  const json meta = read_checkpoint_meta(dir);
  if (!meta.contains("encoder")) throw CheckpointError("checkpoint has no encoder config");
  Encoder<float> enc(encoder_config_from_json(meta.at("encoder")));
  load_checkpoint(dir, "encoder", enc.params());
  return enc;
}

}  // namespace affordrep

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "affordrep/policies.hpp"
#include "affordrep/worldsim.hpp"

namespace affordrep {

inline constexpr const char* kDatasetSchema = "affordrep-ds/1";

enum class DatasetRole : std::uint8_t { Du, Dl };
const char* to_string(DatasetRole r);

struct Frame {
  RasterLevels levels;  // [3, 64, 64] 8-bit levels; may be empty for synthetic sets
  float speed = 0.0f;
  Command command = Command::Continue;
  Action action;
  Affordances afford;
  std::array<float, 4> pose{};  // x, y, heading of the camera pose; ego speed
  std::uint8_t events = 0;
  Camera camera = Camera::Center;
  int condition = 0;
  int episode = 0;
  int index = 0;  // position within the episode streams

  Observation observation() const { return observation_from_levels(levels, speed, command, 64); }
  bool operator==(const Frame&) const = default;
};

struct Episode {
  int id = 0;
  Density density = Density::Empty;
  int condition = 0;
  int route = 0;
  std::uint64_t seed = 0;
  int source_episode = -1;  // Dl only
  int source_start = -1;
  std::vector<Frame> frames;  // camera-major: all frames of one camera, then the next
  bool operator==(const Episode&) const = default;
};

struct DatasetManifest {
  std::string schema = kDatasetSchema;
  DatasetRole role = DatasetRole::Du;
  PolicyKind policy = PolicyKind::Expert;
  std::string map_id;
  std::vector<Camera> cameras;
  std::vector<Density> densities;
  std::vector<int> conditions;
  int fps = 20;
  std::uint64_t seed = 0;
  std::int64_t total_frames = 0;
  double fraction = 0.0;  // Dl only
  double sigma_target = 0.0;
  std::vector<std::string> warnings;
  bool operator==(const DatasetManifest&) const = default;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Episode> episodes;

  std::int64_t frame_count() const;
  bool operator==(const Dataset&) const = default;
};

enum class DatasetErrorKind { Schema, Truncated, Checksum, MissingStream, Io };

class DatasetError : public std::runtime_error {
 public:
  DatasetError(DatasetErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  DatasetErrorKind kind() const { return kind_; }

 private:
  DatasetErrorKind kind_;
};

// Expert collection can inject short steering perturbations so the recorded
// heading distribution is wide enough to balance; the recovered trajectory is
// still driven by the expert.
struct PerturbationConfig {
  bool enabled = true;
  double start_probability = 0.02;
  double steer_min = 0.1;
  double steer_max = 0.3;
  int min_steps = 10;
  int max_steps = 30;
};

struct CollectConfig {
  PolicyConfig policy;
  std::string map_id = "townA";
  std::int64_t duration_steps = 1000;
  std::vector<Camera> cameras{Camera::Center, Camera::Left, Camera::Right};
  std::vector<Density> densities{Density::Empty, Density::Regular, Density::Dense};
  std::vector<int> conditions{0, 1, 2, 3};
  std::uint64_t seed = 0;
  int episode_cap = 2000;
  PerturbationConfig perturbation;
  SimConfig sim;
};

Dataset collect(const CollectConfig& cfg);

struct WeakSplitResult {
  Dataset dl;
  bool fell_back = false;
  double ess = 0.0;
};

// Weak-label split: 40-frame centre-camera windows chosen by systematic
// importance resampling toward Normal(0, sigma_target) over window-mean psi.
inline constexpr int kWeakWindow = 40;
WeakSplitResult subsample_weak(const Dataset& du, double fraction, double sigma_target, std::uint64_t seed);

void write_dataset(const Dataset& ds, const std::filesystem::path& root);
Dataset read_dataset(const std::filesystem::path& root);

struct PairRef {
  int episode = 0;  // index into Dataset::episodes
  int t = 0;        // index of the first frame; the second is t + gap
  bool operator==(const PairRef&) const = default;
  auto operator<=>(const PairRef&) const = default;
};

// Pairs never cross episodes or camera blocks; without a seed the order is
// episode, then frame.
std::vector<PairRef> iterate_pairs(const Dataset& ds, int gap = 1,
                                   std::optional<std::uint64_t> shuffle_seed = std::nullopt);

// Centre-camera frames in episode order.
std::vector<const Frame*> centre_frames(const Dataset& ds);

// Fisher-Yates with the project RNG (std::shuffle is implementation defined).
template <typename T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

}  // namespace affordrep

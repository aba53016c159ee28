#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "affordrep/nn.hpp"
#include "json.hpp"

namespace affordrep {

inline constexpr const char* kCheckpointSchema = "affordrep-ckpt/1";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// dir/manifest.json (meta, tensor names and shapes, CRC32) and
// dir/params.f32 (little-endian float32, each tensor row-major, in list order).
void save_checkpoint(const std::filesystem::path& dir, const std::string& kind, const nlohmann::json& meta,
                     const nn::ParamList<float>& params);

// Fills `params` by name; every listed tensor must be present with the same shape.
// Returns the stored meta object.
nlohmann::json load_checkpoint(const std::filesystem::path& dir, const std::string& kind,
                               const nn::ParamList<float>& params);

nlohmann::json read_checkpoint_meta(const std::filesystem::path& dir);

// SHA-256 over names, shapes and raw float bytes; hex encoded.
std::string params_sha256(const nn::ParamList<float>& params);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

// Content hash of a directory tree: SHA-256 over sorted "relpath NUL filehash LF"
// records of every regular file not named in `exclude`.
std::string tree_sha256(const std::filesystem::path& root, const std::vector<std::string>& exclude = {});

}  // namespace affordrep

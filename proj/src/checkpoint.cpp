#include "affordrep/checkpoint.hpp"

#include <openssl/evp.h>
#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <vector>

namespace affordrep {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<float> row_major(const nn::Mat<float>& m) {
  std::vector<float> out(static_cast<std::size_t>(m.size()));
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[k++] = m(i, j);
  return out;
}

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new()) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1) throw std::runtime_error("sha256 init failed");
  }
  ~Sha256() { EVP_MD_CTX_free(ctx_); }
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_, data, n); }
  std::string hex() {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_, md, &len);
    std::ostringstream ss;
    for (unsigned int i = 0; i < len; ++i) ss << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return ss.str();
  }

 private:
  EVP_MD_CTX* ctx_;
};

}  // namespace

std::string sha256_hex(const std::string& bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  Sha256 h;
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

std::string tree_sha256(const fs::path& root, const std::vector<std::string>& exclude) {
  if (!fs::is_directory(root)) throw std::runtime_error("not a directory: " + root.string());
  std::vector<std::string> rel;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const std::string r = fs::relative(e.path(), root).generic_string();
    if (std::find(exclude.begin(), exclude.end(), r) != exclude.end()) continue;
    rel.push_back(r);
  }
  std::sort(rel.begin(), rel.end());
  Sha256 h;
  for (const auto& r : rel) {
    const std::string line = r + '\0' + sha256_file(root / r) + '\n';
    h.update(line.data(), line.size());
  }
  return h.hex();
}

std::string params_sha256(const nn::ParamList<float>& params) {
  Sha256 h;
  for (const auto& p : params) {
    h.update(p.name.data(), p.name.size());
    const std::int64_t shape[2] = {p.value->rows(), p.value->cols()};
    h.update(shape, sizeof shape);
    h.update(p.value->data(), static_cast<std::size_t>(p.value->size()) * sizeof(float));
  }
  return h.hex();
}

void save_checkpoint(const fs::path& dir, const std::string& kind, const json& meta,
                     const nn::ParamList<float>& params) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw CheckpointError("cannot create checkpoint directory " + dir.string());
  json tensors = json::array();
  std::vector<float> blob;
  for (const auto& p : params) {
    const auto rm = row_major(*p.value);
    tensors.push_back({{"name", p.name}, {"shape", {p.value->rows(), p.value->cols()}}, {"offset", blob.size()}});
    blob.insert(blob.end(), rm.begin(), rm.end());
  }
  const auto crc = crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(blob.data()),
                         static_cast<uInt>(blob.size() * sizeof(float)));
  {
    std::ofstream out(dir / "params.f32", std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size() * sizeof(float)));
    if (!out) throw CheckpointError("cannot write " + (dir / "params.f32").string());
  }
  json m;
  m["schema"] = kCheckpointSchema;
  m["kind"] = kind;
  m["meta"] = meta;
  m["tensors"] = tensors;
  m["count"] = blob.size();
  m["crc32"] = static_cast<std::uint32_t>(crc);
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  out << m.dump(2) << "\n";
  if (!out) throw CheckpointError("cannot write checkpoint manifest in " + dir.string());
}

namespace {

json read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw CheckpointError("no checkpoint manifest in " + dir.string());
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint manifest: ") + e.what());
  }
  if (m.value("schema", "") != kCheckpointSchema)
    throw CheckpointError("checkpoint schema mismatch in " + dir.string());
  return m;
}

}  // namespace

json read_checkpoint_meta(const fs::path& dir) { return read_manifest(dir).at("meta"); }

json load_checkpoint(const fs::path& dir, const std::string& kind, const nn::ParamList<float>& params) {
  const json m = read_manifest(dir);
  if (m.at("kind").get<std::string>() != kind)
    throw CheckpointError("checkpoint kind is " + m.at("kind").get<std::string>() + ", expected " + kind);
  std::ifstream in(dir / "params.f32", std::ios::binary);
  if (!in) throw CheckpointError("missing params.f32 in " + dir.string());
  const auto count = m.at("count").get<std::size_t>();
  std::vector<float> blob(count);
  in.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(count * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(float)) || in.peek() != EOF)
    throw CheckpointError("params.f32 size does not match the manifest");
  const auto crc = crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(blob.data()),
                         static_cast<uInt>(blob.size() * sizeof(float)));
  if (static_cast<std::uint32_t>(crc) != m.at("crc32").get<std::uint32_t>())
    throw CheckpointError("checkpoint CRC mismatch in " + dir.string());

  std::map<std::string, json> by_name;
  for (const json& t : m.at("tensors")) by_name[t.at("name").get<std::string>()] = t;
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks tensor " + p.name);
    const auto shape = it->second.at("shape").get<std::vector<Eigen::Index>>();
    if (shape.size() != 2 || shape[0] != p.value->rows() || shape[1] != p.value->cols())
      throw CheckpointError("shape mismatch for tensor " + p.name);
    const auto off = it->second.at("offset").get<std::size_t>();
    if (off + static_cast<std::size_t>(p.value->size()) > blob.size())
      throw CheckpointError("tensor " + p.name + " runs past the blob");
    std::size_t k = off;
    for (Eigen::Index i = 0; i < p.value->rows(); ++i)
      for (Eigen::Index j = 0; j < p.value->cols(); ++j) (*p.value)(i, j) = blob[k++];
  }
  return m.at("meta");
}

}  // namespace affordrep

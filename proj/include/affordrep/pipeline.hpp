#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace affordrep::cli {

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;        // runtime failure (training divergence, tuning exhausted, I/O)
inline constexpr int kExitSchema = 2;         // bad flags or config schema violation
inline constexpr int kExitMissingInput = 3;   // an upstream artifact does not exist
inline constexpr int kExitStaleInput = 4;     // upstream artifact hash or config hash mismatch
inline constexpr int kExitLocked = 5;         // another invocation holds the output lock

inline constexpr const char* kProvenanceSchema = "affordrep-provenance/1";
inline constexpr const char* kLockName = ".affordrep.lock";

class MissingInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class StaleInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class LockError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Exclusive lock on an output directory, created with O_EXCL and removed on destruction.
class OutputLock {
 public:
  explicit OutputLock(const std::filesystem::path& out_dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::filesystem::path path_;
};

// Hash of a file or directory tree as recorded in provenance records.
std::string artifact_hash(const std::filesystem::path& p);

// Entry point shared by the affordrep binary and tests. argv[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace affordrep::cli

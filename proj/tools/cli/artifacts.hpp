#pragma once

// Artifact plumbing shared by the subcommands: output-directory policy,
// input path resolution, the run manifest and the voxel grid file.
//
// Grid file (little-endian):
//   "SGVG" | u32 version | u32 resolution | f64 values[4 * R^3] | u64 FNV-1a

#include <chrono>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "shapeguide/codec.hpp"

namespace shapeguide::cli {

namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PreconditionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class OutputExistsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kDatasetFile = "dataset.sgds";
inline constexpr const char* kCheckpointFile = "model.ckpt";
inline constexpr const char* kManifestFile = "manifest.json";

/// Creates `dir`; a non-empty existing directory is an error unless `force`.
/// Nothing is deleted when forcing, files are overwritten in place.
void prepare_output_dir(const fs::path& dir, bool force);
/// Same policy for a single output file; creates the parent directory.
void prepare_output_file(const fs::path& file, bool force);

/// A directory resolves to the named file inside it.
fs::path resolve_input(const fs::path& path, const char* file_in_dir);

struct Invocation {
  std::string command;
  std::vector<std::string> argv;
};

/// Collects what a run consumed and produced, then writes manifest.json.
class Manifest {
 public:
  explicit Manifest(const Invocation& inv);

  nlohmann::json& config() { return doc_["config"]; }
  void config(const std::map<std::string, std::string>& kv);
  void seed(const std::string& name, std::uint64_t v) { doc_["seeds"][name] = v; }
  void input(const std::string& name, const fs::path& p) { doc_["inputs"][name] = p.string(); }
  void output(const fs::path& p) { doc_["outputs"].push_back(p.string()); }
  nlohmann::json& result() { return doc_["result"]; }

  /// Stamps the wall-clock time and writes `path`.
  void write(const fs::path& path);

 private:
  nlohmann::json doc_;
  std::chrono::steady_clock::time_point start_;
};

nlohmann::json read_manifest(const fs::path& path);

void write_grid(const VoxelGrid& grid, const fs::path& path);
VoxelGrid read_grid(const fs::path& path);

std::string tool_version();

}  // namespace shapeguide::cli

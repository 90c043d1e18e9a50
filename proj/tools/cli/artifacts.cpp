#include "artifacts.hpp"

#include <sys/resource.h>

#include <ctime>
#include <fstream>

#include "shapeguide/binio.hpp"

#ifndef SHAPEGUIDE_VERSION
#define SHAPEGUIDE_VERSION "dev"
#endif

namespace shapeguide::cli {

namespace {

constexpr std::string_view kGridMagic = "SGVG";
constexpr std::uint32_t kGridVersion = 1;

std::string utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

std::string tool_version() { return SHAPEGUIDE_VERSION; }

void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw OutputExistsError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir) && !force)
      throw OutputExistsError("output directory " + dir.string() + " is not empty (use --force)");
    return;
  }
  fs::create_directories(dir);
}

void prepare_output_file(const fs::path& file, bool force) {
  if (fs::exists(file) && !force) throw OutputExistsError("output " + file.string() + " exists (use --force)");
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
}

fs::path resolve_input(const fs::path& path, const char* file_in_dir) {
  fs::path p = fs::is_directory(path) ? path / file_in_dir : path;
  if (!fs::exists(p)) throw MissingFileError("no such file: " + p.string());
  return p;
}

Manifest::Manifest(const Invocation& inv) : start_(std::chrono::steady_clock::now()) {
  doc_["command"] = inv.command;
  doc_["argv"] = inv.argv;
  doc_["tool_version"] = tool_version();
  doc_["started_utc"] = utc_now();
  doc_["config"] = nlohmann::json::object();
  doc_["seeds"] = nlohmann::json::object();
  doc_["inputs"] = nlohmann::json::object();
  doc_["outputs"] = nlohmann::json::array();
}

void Manifest::config(const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) doc_["config"][k] = v;
}

void Manifest::write(const fs::path& path) {
  doc_["wall_clock_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  rusage ru{};
  getrusage(RUSAGE_SELF, &ru);
  doc_["peak_rss_mb"] = static_cast<double>(ru.ru_maxrss) / 1024.0;  // ru_maxrss is in KiB on Linux
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc_.dump(2) << '\n';
}

nlohmann::json read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("no such file: " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_grid(const VoxelGrid& grid, const fs::path& path) {
  ByteWriter w;
  w.put_raw(kGridMagic);
  w.put<std::uint32_t>(kGridVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(grid.resolution));
  w.put_array<double>(grid.values);
  w.seal();
  write_file_bytes(path.string(), w.bytes());
}

VoxelGrid read_grid(const fs::path& path) {
  const auto bytes = read_file_bytes(path.string());
  ByteReader r(bytes, path.string());
  if (bytes.size() < kGridMagic.size() || r.get_raw(kGridMagic.size()) != kGridMagic) r.fail("not a grid file");
  ByteReader body(bytes, path.string());
  body.check_seal();
  body.get_raw(kGridMagic.size());
  if (body.get<std::uint32_t>() != kGridVersion) body.fail("unsupported grid version");
  const auto res = body.get<std::uint32_t>();
  if (res == 0 || res > 256) body.fail("bad resolution");
  VoxelGrid g = VoxelGrid::empty(static_cast<int>(res));
  g.values = body.get_array<double>(g.values.size());
  if (body.remaining() != 0) body.fail("trailing bytes");
  return g;
}

}  // namespace shapeguide::cli

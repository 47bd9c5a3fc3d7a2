#pragma once

// Output bookkeeping: every file a command writes is recorded with its
// SHA-256 so a run can be verified and compared byte for byte.

#include <openssl/evp.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "coexist/errors.hpp"
#include "coexist/scenario.hpp"
#include "coexist/scenario_io.hpp"

namespace coexist {

inline constexpr std::string_view kToolkitVersion = "0.1.0";

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xf]);
  }
  return out;
}

inline std::string scenario_digest(const LinkScenario& s) { return sha256_hex(canonical_scenario_string(s)); }

struct ManifestEntry {
  std::string path;  // relative to the output directory
  std::string sha256;
  std::uint64_t bytes = 0;
};

struct RunManifest {
  std::string command;
  std::string scenario_digest;
  std::uint64_t seed = 0;
  std::string toolkit_version{kToolkitVersion};
  std::vector<ManifestEntry> files;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["command"] = command;
    j["scenario_digest"] = scenario_digest;
    j["seed"] = seed;
    j["toolkit_version"] = toolkit_version;
    j["files"] = nlohmann::json::array();
    for (const auto& f : files) j["files"].push_back({{"path", f.path}, {"sha256", f.sha256}, {"bytes", f.bytes}});
    return j;
  }
};

// Writes files under one directory and records each in the manifest.
class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path root) : root_(std::move(root)) {
    std::error_code ec;
    std::filesystem::create_directories(root_, ec);
    if (ec) throw ConfigError("cannot create output directory '" + root_.string() + "': " + ec.message());
  }

  const std::filesystem::path& root() const { return root_; }
  RunManifest& manifest() { return manifest_; }

  void write(const std::string& name, std::string_view content) {
    const auto path = root_ / name;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw ConfigError("write failed for '" + path.string() + "'");
    manifest_.files.push_back({name, sha256_hex(content), content.size()});
  }

  void write_json(const std::string& name, const nlohmann::json& j) { write(name, j.dump(2) + "\n"); }

  // The manifest lists itself last, without a digest of its own.
  void finish() {
    const auto path = root_ / "manifest.json";
    std::ofstream out(path, std::ios::binary);
    out << manifest_.to_json().dump(2) << "\n";
    if (!out) throw ConfigError("write failed for '" + path.string() + "'");
  }

 private:
  std::filesystem::path root_;
  RunManifest manifest_;
};

}  // namespace coexist

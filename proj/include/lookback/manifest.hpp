#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "lookback/util.hpp"
#include "lookback/version.hpp"

namespace lookback {

inline std::string file_hash_hex(const std::filesystem::path& path) {
  return hex64(fnv1a64(read_file_bytes(path)));
}

inline std::string config_hash_hex(const nlohmann::json& config) {
  return hex64(fnv1a64(config.dump()));
}

/// Audit record written alongside every command's outputs: what ran, with what
/// effective configuration and seeds, over which input bytes.
struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::map<std::string, std::uint64_t> seeds;
  std::map<std::string, std::string> input_hashes;  // path -> fnv1a64 of bytes
  std::string tool_version = kVersion;
  std::string started_at;
  std::string finished_at;

  void add_input(const std::filesystem::path& path) {
    std::error_code ec;
    if (std::filesystem::exists(path, ec)) {
      input_hashes[path.string()] = file_hash_hex(path);
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json seed_json = nlohmann::json::object();
    for (const auto& [name, value] : seeds) seed_json[name] = value;
    nlohmann::json hashes = nlohmann::json::object();
    for (const auto& [path, hash] : input_hashes) hashes[path] = hash;
    return nlohmann::json{{"command", command},
                          {"config", config},
                          {"config_hash", config_hash_hex(config)},
                          {"seeds", seed_json},
                          {"input_hashes", hashes},
                          {"tool_version", tool_version},
                          {"started_at", started_at},
                          {"finished_at", finished_at}};
  }

  void write(const std::filesystem::path& path) const {
    write_file_bytes(path, to_json().dump(2) + "\n");
  }
};

/// Manifest path next to an output file: out.jsonl -> out.jsonl.manifest.json
inline std::filesystem::path manifest_path_for(const std::filesystem::path& output) {
  return std::filesystem::path(output.string() + ".manifest.json");
}

} // namespace lookback

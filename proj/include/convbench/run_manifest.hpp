// Every tool run records what it did: the subcommand, the exact flag
// values, the seeds, content digests of the inputs and the paths it wrote.
// The manifest is enough to reproduce the run bit for bit.
#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "convbench/hash.hpp"

namespace convbench {

inline constexpr const char* kToolVersion = "0.1.0";

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Streaming content digest, rendered as "fnv1a64:<16 hex digits>".
inline std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ManifestError("cannot digest missing input " + path);
  uint64_t hash = kFnvOffsetBasis;
  char buffer[1 << 16];
  while (in.read(buffer, sizeof(buffer)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      hash ^= static_cast<unsigned char>(buffer[i]);
      hash *= kFnvPrime;
    }
  }
  char out[32];
  std::snprintf(out, sizeof(out), "fnv1a64:%016llx", static_cast<unsigned long long>(hash));
  return out;
}

struct RunManifest {
  std::string subcommand;
  std::map<std::string, std::string> flags;
  std::map<std::string, uint64_t> seeds;
  std::map<std::string, std::string> inputs;  // path → content digest
  std::vector<std::string> outputs;

  void add_input(const std::string& path) { inputs[path] = file_digest(path); }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["subcommand"] = subcommand;
    j["flags"] = flags;
    j["seeds"] = seeds;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["version"] = kToolVersion;
    return j;
  }

  void save(const std::string& path) const {
    std::string tmp = path + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw ManifestError("cannot write " + path);
      out << to_json().dump(2) << '\n';
    }
    std::filesystem::rename(tmp, path);
  }
};

inline RunManifest run_manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  m.subcommand = j.at("subcommand").get<std::string>();
  for (const auto& [key, value] : j.at("flags").items()) {
    m.flags[key] = value.get<std::string>();
  }
  for (const auto& [key, value] : j.at("seeds").items()) {
    m.seeds[key] = value.get<uint64_t>();
  }
  for (const auto& [key, value] : j.at("inputs").items()) {
    m.inputs[key] = value.get<std::string>();
  }
  for (const auto& value : j.at("outputs")) {
    m.outputs.push_back(value.get<std::string>());
  }
  return m;
}

}  // namespace convbench

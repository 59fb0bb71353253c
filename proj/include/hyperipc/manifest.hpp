#pragma once

#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hyperipc/common.hpp"

namespace hyperipc {

inline constexpr const char* kToolVersion = "0.1.0";

// Every output file references the hash of the manifest that produced it; the
// hash covers the effective configuration and seeds, never wall-clock fields.
struct RunManifest {
  std::string command;
  std::vector<std::pair<std::string, std::string>> config;  // effective key=value
  std::vector<std::string> artifacts;
  double duration_s = 0.0;

  void set(const std::string& key, const std::string& value) {
    config.emplace_back(key, value);
  }
  void set(const std::string& key, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    config.emplace_back(key, buf);
  }
  void set(const std::string& key, long long v) { config.emplace_back(key, std::to_string(v)); }
  void set(const std::string& key, uint64_t v) { config.emplace_back(key, std::to_string(v)); }
  void set(const std::string& key, int v) { config.emplace_back(key, std::to_string(v)); }
  void set(const std::string& key, bool v) { config.emplace_back(key, v ? "true" : "false"); }

  uint64_t hash() const {
    std::string canon = std::string(kToolVersion) + "\n" + command + "\n";
    for (const auto& [k, v] : config) canon += k + "=" + v + "\n";
    return hash64_bytes(canon.data(), canon.size());
  }

  std::string hash_hex() const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)hash());
    return buf;
  }

  void write(const std::string& path) const {
    nlohmann::json j;
    j["tool"] = std::string("hyperipc ") + kToolVersion;
    j["command"] = command;
    nlohmann::json cfg = nlohmann::json::object();
    for (const auto& [k, v] : config) cfg[k] = v;
    j["config"] = cfg;
    j["config_hash"] = hash_hex();
    j["artifacts"] = artifacts;
    j["duration_s"] = duration_s;
    std::ofstream os(path);
    if (!os) throw std::runtime_error("RunManifest: cannot open " + path);
    os << j.dump(2) << "\n";
  }
};

}  // namespace hyperipc

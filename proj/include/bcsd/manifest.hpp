// Copyright 2026 The bcsd Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Run manifests. Every artifact `path` gets a sidecar `path.manifest.json`
// naming the command, its configuration, the hashes of its inputs and
// outputs, the seed and the tool version. Timestamps live only here, so the
// artifacts themselves stay byte-reproducible.

#ifndef BCSD_MANIFEST_HPP
#define BCSD_MANIFEST_HPP

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "bcsd/errors.hpp"
#include "bcsd/sha256.hpp"

namespace bcsd {

inline constexpr std::string_view kToolVersion = "1.0.0";

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct FileDigest {
  std::string path;
  std::string sha256;
};

struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::map<std::string, FileDigest> inputs;   // role -> file
  std::map<std::string, FileDigest> outputs;  // role -> file
  std::optional<std::uint64_t> seed;
  std::string tool_version = std::string(kToolVersion);
  std::string started_at;
  std::string finished_at;

  void add_input(const std::string& role, const std::string& path) {
    inputs[role] = {path, sha256_file(path)};
  }
  void add_output(const std::string& role, const std::string& path) {
    outputs[role] = {path, sha256_file(path)};
  }

  nlohmann::json to_json() const {
    auto files = [](const std::map<std::string, FileDigest>& m) {
      nlohmann::json j = nlohmann::json::object();
      for (const auto& [role, f] : m) j[role] = {{"path", f.path}, {"sha256", f.sha256}};
      return j;
    };
    nlohmann::json j;
    j["command"] = command;
    j["config"] = config;
    j["inputs"] = files(inputs);
    j["outputs"] = files(outputs);
    j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json(nullptr);
    j["tool_version"] = tool_version;
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    return j;
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    try {
      m.command = j.at("command").get<std::string>();
      m.config = j.value("config", nlohmann::json::object());
      auto files = [](const nlohmann::json& obj, std::map<std::string, FileDigest>& out) {
        for (const auto& [role, f] : obj.items()) {
          out[role] = {f.at("path").get<std::string>(), f.at("sha256").get<std::string>()};
        }
      };
      files(j.value("inputs", nlohmann::json::object()), m.inputs);
      files(j.value("outputs", nlohmann::json::object()), m.outputs);
      if (j.contains("seed") && !j.at("seed").is_null()) m.seed = j.at("seed").get<std::uint64_t>();
      m.tool_version = j.value("tool_version", std::string());
      m.started_at = j.value("started_at", std::string());
      m.finished_at = j.value("finished_at", std::string());
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad manifest: ") + e.what());
    }
    return m;
  }
};

inline std::string manifest_path(const std::string& artifact) {
  return artifact + ".manifest.json";
}

inline void write_manifest(const std::string& artifact, const RunManifest& manifest) {
  std::ofstream out(manifest_path(artifact), std::ios::trunc);
  if (!out) throw DataError("cannot write manifest for '" + artifact + "'");
  out << manifest.to_json().dump(2) << "\n";
}

// The sidecar manifest of `artifact`, if one exists.
inline std::optional<RunManifest> read_manifest(const std::string& artifact) {
  const std::string path = manifest_path(artifact);
  if (!std::filesystem::exists(path)) return std::nullopt;
  std::ifstream in(path);
  try {
    return RunManifest::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad manifest '" + path + "': " + e.what());
  }
}

}  // namespace bcsd

#endif  // BCSD_MANIFEST_HPP

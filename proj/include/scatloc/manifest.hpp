#pragma once

#include <chrono>
#include <cstdint>
#include <ctime>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scatloc/errors.hpp"
#include "scatloc/io.hpp"
#include "scatloc/sha256.hpp"
#include "scatloc/version.hpp"

namespace scatloc {

struct ManifestEntry {
  std::string path; // relative to the manifest directory
  std::string sha256;
};

/// Record of one CLI run: resolved config, seed, and hashed artifacts.
/// The embedded config text plus seed and threads suffice to re-run the
/// command and reproduce the same output hashes.
struct RunManifest {
  std::string command;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::string config_text;
  std::string created_utc;
  std::map<std::string, std::string> args; // command-specific file arguments
  std::vector<ManifestEntry> inputs;
  std::vector<ManifestEntry> outputs;
  std::string status = "ok";
  std::vector<std::string> notes;
};

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path + " for hashing");
  Sha256 h;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0)
    h.update(buf, std::size_t(in.gcount()));
  return Sha256::hex(h.digest());
}

inline void write_manifest(const std::string& path, const RunManifest& m) {
  nlohmann::json j;
  j["tool"] = "scatloc";
  j["tool_version"] = version_string;
  j["command"] = m.command;
  j["seed"] = m.seed;
  j["threads"] = m.threads;
  j["created_utc"] = m.created_utc;
  j["config_text"] = m.config_text;
  j["config_sha256"] = sha256_hex(m.config_text);
  j["args"] = m.args;
  auto entries = [](const std::vector<ManifestEntry>& list) {
    nlohmann::json arr = nlohmann::json::array();
    for (const ManifestEntry& e : list) arr.push_back({{"path", e.path}, {"sha256", e.sha256}});
    return arr;
  };
  j["inputs"] = entries(m.inputs);
  j["outputs"] = entries(m.outputs);
  j["status"] = m.status;
  j["notes"] = m.notes;
  detail::write_file_atomic(path, j.dump(2) + "\n");
}

inline RunManifest read_manifest(const std::string& path) {
  const std::vector<std::uint8_t> data = detail::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(data.begin(), data.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw io_error(path + ": " + e.what());
  }
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.threads = j.at("threads").get<unsigned>();
    m.config_text = j.at("config_text").get<std::string>();
    m.created_utc = j.value("created_utc", std::string{});
    m.status = j.value("status", std::string{"ok"});
    if (j.contains("args"))
      for (const auto& [k, v] : j.at("args").items()) m.args[k] = v.get<std::string>();
    for (const auto& e : j.value("inputs", nlohmann::json::array()))
      m.inputs.push_back({e.at("path").get<std::string>(), e.at("sha256").get<std::string>()});
    for (const auto& e : j.value("outputs", nlohmann::json::array()))
      m.outputs.push_back({e.at("path").get<std::string>(), e.at("sha256").get<std::string>()});
    for (const auto& n : j.value("notes", nlohmann::json::array()))
      m.notes.push_back(n.get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw io_error(path + ": manifest schema violation: " + e.what());
  }
  const std::string recorded = j.value("config_sha256", std::string{});
  if (!recorded.empty() && recorded != sha256_hex(m.config_text))
    throw io_error(path + ": embedded config does not match its recorded hash");
  return m;
}

} // namespace scatloc

#include "mist/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <fstream>

#include "mist/errors.hpp"

namespace mist {

namespace {

void require_object(const nlohmann::json& j, const std::string& what) {
  if (!j.is_object()) {
    throw ConfigError(what + " must be a JSON object");
  }
}

std::uint64_t unsigned_field(const nlohmann::json& v, const std::string& key) {
  if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
    throw ConfigError("'" + key + "' must be a non-negative integer");
  }
  return v.get<std::uint64_t>();
}

}  // namespace

nlohmann::json DataConfig::to_json() const { return {{"n", n}, {"size", size}, {"seed", seed}}; }

DataConfig DataConfig::from_json(const nlohmann::json& j) {
  require_object(j, "data config");
  DataConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "n") c.n = unsigned_field(v, key);
    else if (key == "size") c.size = unsigned_field(v, key);
    else if (key == "seed") c.seed = unsigned_field(v, key);
    else throw ConfigError("unknown data key '" + key + "'");
  }
  return c;
}

nlohmann::json PathConfig::to_json() const { return {{"data", data}, {"out", out}}; }

PathConfig PathConfig::from_json(const nlohmann::json& j) {
  require_object(j, "paths config");
  PathConfig c;
  for (const auto& [key, v] : j.items()) {
    if (!v.is_string()) {
      throw ConfigError("path '" + key + "' must be a string");
    }
    if (key == "data") c.data = v.get<std::string>();
    else if (key == "out") c.out = v.get<std::string>();
    else throw ConfigError("unknown paths key '" + key + "'");
  }
  return c;
}

void RunConfig::validate() const {
  arch.validate();
  train.validate();
  if (data.size != arch.size) {
    throw ConfigError("data.size (" + std::to_string(data.size) + ") differs from arch.size (" +
                      std::to_string(arch.size) + ")");
  }
}

nlohmann::json RunConfig::to_json() const {
  return {{"arch", arch.to_json()}, {"train", train.to_json()}, {"data", data.to_json()}, {"paths", paths.to_json()}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  require_object(j, "config");
  RunConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "arch") c.arch = ArchConfig::from_json(v);
    else if (key == "train") c.train = TrainConfig::from_json(v);
    else if (key == "data") c.data = DataConfig::from_json(v);
    else if (key == "paths") c.paths = PathConfig::from_json(v);
    else throw ConfigError("unknown config section '" + key + "'");
  }
  if (!j.contains("data") || !j.at("data").contains("size")) {
    c.data.size = c.arch.size;
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError(path.string() + ": cannot open config file");
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return RunConfig::from_json(j);
}

std::optional<std::uint64_t> env_seed() {
  const char* raw = std::getenv("MIST_SEED");
  if (raw == nullptr || *raw == '\0') {
    return std::nullopt;
  }
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(raw, &end, 10);
  if (errno != 0 || *end != '\0' || raw[0] == '-') {
    throw ConfigError(std::string("MIST_SEED must be a non-negative integer, got '") + raw + "'");
  }
  return v;
}

}  // namespace mist

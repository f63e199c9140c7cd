#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "mist/networks.hpp"
#include "mist/training.hpp"

namespace mist {

/// Parameters of a generated phantom dataset.
struct DataConfig {
  std::size_t n = 100;
  std::size_t size = 64;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static DataConfig from_json(const nlohmann::json& j);
  bool operator==(const DataConfig&) const = default;
};

struct PathConfig {
  std::string data;
  std::string out;

  nlohmann::json to_json() const;
  static PathConfig from_json(const nlohmann::json& j);
  bool operator==(const PathConfig&) const = default;
};

/// Everything a run needs. JSON layout: {"arch": {...}, "train": {...},
/// "data": {...}, "paths": {...}}; every section is optional and unknown keys
/// are rejected at every level.
struct RunConfig {
  ArchConfig arch;
  TrainConfig train;
  DataConfig data;
  PathConfig paths;

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  bool operator==(const RunConfig&) const = default;
};

RunConfig load_run_config(const std::filesystem::path& path);

/// MIST_SEED from the environment, if set. Malformed values throw ConfigError.
std::optional<std::uint64_t> env_seed();

}  // namespace mist

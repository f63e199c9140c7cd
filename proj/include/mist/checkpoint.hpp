#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mist/tensor.hpp"

namespace mist {

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

/// In-memory image of a "MIST1" file.
///
/// Layout (all integers little-endian u32, floats little-endian f32):
///   "MIST1" | header_len | header JSON bytes | count |
///   count x (name_len | name | rank | dims... | data...)
struct Checkpoint {
  nlohmann::json header = nlohmann::json::object();
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const;
};

inline constexpr char kCheckpointMagic[] = "MIST1";

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace mist

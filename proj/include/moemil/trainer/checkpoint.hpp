#pragma once

// MCKP container (little-endian):
//   "MCKP" | u32 version (1) | u32 json_len | canonical JSON (config + state)
//   | u32 tensor count
//   | per tensor: u16 name_len | name | u8 rank | u32 extents[rank] | f32 data

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "moemil/numerics/tensor.hpp"

namespace moemil {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> data;

  bool operator==(const NamedArray&) const = default;
};

struct Checkpoint {
  nlohmann::json meta;
  std::vector<NamedArray> tensors;

  const NamedArray* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c);
// FormatError on malformed bytes, VersionError on an unknown version.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace moemil

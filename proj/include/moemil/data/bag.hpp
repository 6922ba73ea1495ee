#pragma once

// One slide's tokens plus the MBAG binary container.
//
// MBAG layout (little-endian):
//   "MBAG" | u32 version (1) | u32 R | u32 D_in | u32 N | u32 label
//   | u16 id_len | id bytes (UTF-8)
//   then N records: u8 level | u8 path_len | u16 path[path_len]
//                   | u16 row | u16 col | f32 features[D_in]

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "moemil/hierarchy/hierarchy.hpp"

namespace moemil {

inline constexpr std::uint32_t kBagVersion = 1;
inline constexpr std::size_t kBagFixedHeaderBytes = 4 + 5 * 4 + 2;

struct BagRecord {
  int level = 1;
  PatchPath path;
  GridCoord coord;
  std::vector<float> features;

  bool operator==(const BagRecord&) const = default;
};

struct Bag {
  std::string slide_id;
  std::uint32_t label = 0;
  int levels = 1;
  std::vector<BagRecord> records;

  std::size_t size() const { return records.size(); }
  std::size_t d_in() const { return records.empty() ? 0 : records.front().features.size(); }
  // Hierarchy whose token ids are record indices.
  PatchHierarchy hierarchy() const;

  bool operator==(const Bag&) const = default;
};

// Serialized size of one record / a whole bag.
std::size_t bag_record_bytes(std::size_t path_len, std::size_t d_in);
std::size_t bag_file_bytes(const Bag& b);

std::vector<std::uint8_t> encode_bag(const Bag& b);
// Throws FormatError (with the byte offset where relevant) on bad magic,
// version, truncation, trailing bytes, non-finite features or a record set
// that does not form a valid hierarchy.
Bag decode_bag(std::span<const std::uint8_t> bytes);

void write_bag(const Bag& b, const std::filesystem::path& path);
Bag read_bag(const std::filesystem::path& path);

}  // namespace moemil

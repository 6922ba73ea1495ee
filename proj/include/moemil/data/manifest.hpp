#pragma once

// Dataset manifests: CSV `slide_id,path,label,split` with paths relative to
// the manifest's directory.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "moemil/data/bag.hpp"

namespace moemil {

enum class Split { train, val, test };

std::string split_name(Split s);
Split parse_split(const std::string& s);  // ContractError

struct ManifestEntry {
  std::string slide_id;
  std::string path;
  std::uint32_t label = 0;
  Split split = Split::train;

  bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;  // where relative paths resolve

  std::vector<const ManifestEntry*> select(Split s) const;
  std::filesystem::path resolve(const ManifestEntry& e) const;
};

// Stratified by label. Each class is shuffled with one seeded stream (classes
// in ascending label order) and cut by largest-remainder rounding of the
// ratios. Entries keep the input order. Paths default to "<slide_id>.mbag".
struct SplitInput {
  std::string slide_id;
  std::uint32_t label = 0;
  std::string path;
};

Manifest split_manifest(const std::vector<SplitInput>& bags, const std::array<double, 3>& ratios,
                        std::uint64_t seed);

// Per-part counts for n items under largest-remainder rounding; ties in the
// remainder go to the earlier part.
std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<double, 3>& ratios);

void write_manifest(const Manifest& m, const std::filesystem::path& path);
// Validates the header, unique slide ids, labels and split names, and that
// every referenced bag file exists (IoError otherwise).
Manifest read_manifest(const std::filesystem::path& path);

// Reads a manifest entry's bag; IoError/FormatError messages name the slide.
Bag load_entry(const Manifest& m, const ManifestEntry& e);

}  // namespace moemil

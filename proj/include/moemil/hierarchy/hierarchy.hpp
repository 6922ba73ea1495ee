#pragma once

// Multi-resolution patch trees and their two serializations:
//  - region-nested: depth-first preorder, so every coarse region (root) and
//    all of its descendants occupy one contiguous span;
//  - resolution-ordered: all level-1 tokens, then level 2, ..., each level in
//    raster order.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace moemil {

using PatchPath = std::vector<std::uint16_t>;

struct GridCoord {
  std::uint16_t row = 0;
  std::uint16_t col = 0;
  auto operator<=>(const GridCoord&) const = default;
};

struct PatchNode {
  int level = 1;  // 1 = coarsest
  PatchPath path;  // path[0] is the root index; size() == level
  GridCoord coord;
  std::size_t token_id = 0;
};

std::string path_str(const PatchPath& p);

class PatchHierarchy {
 public:
  int levels() const { return levels_; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<PatchNode>& nodes() const { return nodes_; }
  const PatchNode& node(std::size_t i) const { return nodes_.at(i); }
  // Indices into nodes(), ascending root index.
  const std::vector<std::size_t>& roots() const { return roots_; }
  // Indices into nodes(), ascending child index.
  const std::vector<std::size_t>& children(std::size_t i) const { return children_.at(i); }

  // The subtree rooted at node i as a standalone hierarchy (node i becomes a
  // level-1 root; token ids are kept).
  PatchHierarchy subtree(std::size_t i) const;

 private:
  friend PatchHierarchy build_hierarchy(const std::vector<PatchNode>& records, int levels);
  int levels_ = 1;
  std::vector<PatchNode> nodes_;
  std::vector<std::size_t> roots_;
  std::vector<std::vector<std::size_t>> children_;
};

// Validates the records (levels in [1, levels], path length == level, unique
// paths and token ids, every parent present) and links them into a tree.
// Throws StructureError naming the offending path.
PatchHierarchy build_hierarchy(const std::vector<PatchNode>& records, int levels);

enum class ScanScheme { region_nested, resolution_ordered };

struct ScanOrder {
  ScanScheme scheme = ScanScheme::region_nested;
  std::vector<std::size_t> order;      // token ids in sequence order
  std::vector<std::size_t> node_of;    // hierarchy node index per position
  std::vector<int> level_of;           // resolution level per position
  std::vector<std::uint16_t> region_of;  // root index (path[0]) per position

  std::size_t size() const { return order.size(); }
};

ScanOrder region_nested_scan(const PatchHierarchy& h);
ScanOrder resolution_ordered_scan(const PatchHierarchy& h);

struct RegionSegment {
  std::uint16_t root_index;
  std::size_t start;
  std::size_t end;  // exclusive
  bool operator==(const RegionSegment&) const = default;
};

// One half-open span per root, in sequence order. Only valid for
// region-nested scans (ContractError otherwise).
std::vector<RegionSegment> region_segments(const ScanOrder& s);

// Text dump: one line per position, "pos level path row,col token_id region".
void write_scan_text(std::ostream& os, const PatchHierarchy& h, const ScanOrder& s);

// Parsed line of the text dump.
struct ScanTextRow {
  std::size_t pos = 0;
  int level = 0;
  PatchPath path;
  GridCoord coord;
  std::size_t token_id = 0;
  std::uint16_t region = 0;
};

std::vector<ScanTextRow> read_scan_text(std::istream& is);

// Checks a dumped region-nested order: positions 0..n-1, unique tokens, and
// every region (and every subtree) contiguous with parents before
// descendants. Returns an empty string when valid, else the first violation.
std::string validate_region_nested_text(const std::vector<ScanTextRow>& rows);

}  // namespace moemil

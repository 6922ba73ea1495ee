#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "../oracles/oracles.hpp"
#include "moemil/errors.hpp"
#include "moemil/hierarchy/hierarchy.hpp"
#include "moemil/random.hpp"

using namespace moemil;

namespace {

// Irregular tree: every node has 0..max_children children (at least one
// root), shuffled record order, scattered coordinates.
std::vector<PatchNode> random_tree(Rng& rng, int levels, std::size_t roots, std::size_t max_children) {
  std::vector<PatchNode> nodes;
  std::function<void(PatchPath, int)> grow = [&](PatchPath path, int level) {
    PatchNode n;
    n.level = level;
    n.path = path;
    n.coord = {static_cast<std::uint16_t>(rng.below(50)), static_cast<std::uint16_t>(rng.below(50))};
    nodes.push_back(n);
    if (level == levels) return;
    const auto kids = rng.below(max_children + 1);
    for (std::uint16_t c = 1; c <= kids; ++c) {
      PatchPath q = path;
      q.push_back(c);
      grow(q, level + 1);
    }
  };
  for (std::uint16_t r = 0; r < roots; ++r) grow({r}, 1);
  rng.shuffle(nodes);
  for (std::size_t i = 0; i < nodes.size(); ++i) nodes[i].token_id = i;
  return nodes;
}

std::vector<PatchNode> tiny() {
  // root 0 with two children, root 1 with one child that has a grandchild.
  return {
      {2, {1, 1}, {1, 0}, 0}, {1, {0}, {0, 0}, 1}, {3, {1, 1, 1}, {0, 0}, 2},
      {2, {0, 2}, {0, 1}, 3}, {1, {1}, {0, 1}, 4}, {2, {0, 1}, {0, 0}, 5},
  };
}

}  // namespace

TEST(Hierarchy, RegionNestedOrderOnHandBuiltTree) {
  const auto h = build_hierarchy(tiny(), 3);
  const auto s = region_nested_scan(h);
  EXPECT_EQ(s.order, (std::vector<std::size_t>{1, 5, 3, 4, 0, 2}));
  EXPECT_EQ(s.level_of, (std::vector<int>{1, 2, 2, 1, 2, 3}));
  const std::vector<RegionSegment> want{{0, 0, 3}, {1, 3, 6}};
  EXPECT_EQ(region_segments(s), want);
}

TEST(Hierarchy, ResolutionOrderIsLevelThenRaster) {
  const auto h = build_hierarchy(tiny(), 3);
  const auto s = resolution_ordered_scan(h);
  EXPECT_EQ(s.order, (std::vector<std::size_t>{1, 4, 5, 3, 0, 2}));
  EXPECT_THROW(region_segments(s), ContractError);
}

TEST(Hierarchy, RandomTreesMatchRecursiveOracle) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const int levels = 1 + static_cast<int>(rng.below(4));
    const auto nodes = random_tree(rng, levels, 1 + rng.below(6), 3);
    const auto h = build_hierarchy(nodes, levels);
    const auto s = region_nested_scan(h);
    ASSERT_EQ(s.order, oracle::region_nested_order(nodes)) << "seed " << seed;

    // Every root's span is contiguous and roots appear in ascending order.
    std::vector<std::uint16_t> seen;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (seen.empty() || seen.back() != s.region_of[i]) seen.push_back(s.region_of[i]);
    EXPECT_TRUE(std::is_sorted(seen.begin(), seen.end()));
    EXPECT_EQ(std::set<std::uint16_t>(seen.begin(), seen.end()).size(), seen.size());

    const auto r = resolution_ordered_scan(h);
    std::vector<std::size_t> a = r.order, b = s.order;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
    EXPECT_TRUE(std::is_sorted(r.level_of.begin(), r.level_of.end()));
  }
}

TEST(Hierarchy, SubtreeSpansAreContiguous) {
  Rng rng(9);
  const auto nodes = random_tree(rng, 4, 3, 3);
  const auto h = build_hierarchy(nodes, 4);
  const auto s = region_nested_scan(h);
  std::vector<std::size_t> pos_of_node(h.size());
  for (std::size_t p = 0; p < s.size(); ++p) pos_of_node[s.node_of[p]] = p;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const std::size_t span = h.subtree(i).size();
    const auto& pi = h.node(i).path;
    for (std::size_t p = pos_of_node[i]; p < pos_of_node[i] + span; ++p) {
      const auto& q = h.node(s.node_of[p]).path;
      ASSERT_TRUE(q.size() >= pi.size() && std::equal(pi.begin(), pi.end(), q.begin()));
    }
  }
}

TEST(Hierarchy, RejectsMalformedRecords) {
  auto bad = tiny();
  bad[2].path = {1, 2, 1};  // parent {1,2} missing
  EXPECT_THROW(build_hierarchy(bad, 3), StructureError);
  bad = tiny();
  bad[3].path = {0, 1};  // duplicate path
  EXPECT_THROW(build_hierarchy(bad, 3), StructureError);
  bad = tiny();
  bad[0].level = 3;  // level disagrees with path length
  EXPECT_THROW(build_hierarchy(bad, 3), StructureError);
  EXPECT_THROW(build_hierarchy(tiny(), 2), StructureError);  // level 3 record
  bad = tiny();
  bad[1].token_id = 0;
  EXPECT_THROW(build_hierarchy(bad, 3), StructureError);
}

TEST(Hierarchy, ScanTextRoundTripAndValidation) {
  Rng rng(4);
  const auto nodes = random_tree(rng, 3, 4, 2);
  const auto h = build_hierarchy(nodes, 3);
  std::stringstream ss;
  write_scan_text(ss, h, region_nested_scan(h));
  auto rows = read_scan_text(ss);
  ASSERT_EQ(rows.size(), h.size());
  EXPECT_EQ(validate_region_nested_text(rows), "");

  std::stringstream rs;
  write_scan_text(rs, h, resolution_ordered_scan(h));
  auto res_rows = read_scan_text(rs);
  if (h.size() > h.roots().size()) {
    EXPECT_NE(validate_region_nested_text(res_rows), "");
  }

  // Moving a child before its parent breaks the contract.
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].level > rows[i - 1].level) {
      std::swap(rows[i], rows[i - 1]);
      std::swap(rows[i].pos, rows[i - 1].pos);
      EXPECT_NE(validate_region_nested_text(rows), "");
      break;
    }
  }
}

#include "moemil/hierarchy/hierarchy.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "moemil/errors.hpp"

namespace moemil {

std::string path_str(const PatchPath& p) {
  std::string s;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(p[i]);
  }
  return s;
}

PatchHierarchy build_hierarchy(const std::vector<PatchNode>& records, int levels) {
  if (levels < 1) throw StructureError("hierarchy needs at least one level, got " + std::to_string(levels));
  PatchHierarchy h;
  h.levels_ = levels;
  h.nodes_ = records;
  h.children_.assign(records.size(), {});

  std::map<PatchPath, std::size_t> by_path;
  std::unordered_set<std::size_t> tokens;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.level < 1 || r.level > levels) {
      throw StructureError("patch " + path_str(r.path) + " has level " + std::to_string(r.level) +
                           " outside [1," + std::to_string(levels) + "]");
    }
    if (r.path.size() != static_cast<std::size_t>(r.level)) {
      throw StructureError("patch " + path_str(r.path) + " path length does not match level " +
                           std::to_string(r.level));
    }
    if (!by_path.emplace(r.path, i).second) throw StructureError("duplicate patch path " + path_str(r.path));
    if (!tokens.insert(r.token_id).second) {
      throw StructureError("duplicate token id " + std::to_string(r.token_id) + " at path " + path_str(r.path));
    }
  }
  for (const auto& [path, i] : by_path) {
    if (path.size() == 1) {
      h.roots_.push_back(i);
      continue;
    }
    PatchPath parent(path.begin(), path.end() - 1);
    auto it = by_path.find(parent);
    if (it == by_path.end()) {
      throw StructureError("orphan patch " + path_str(path) + ": parent " + path_str(parent) + " is missing");
    }
    // std::map iterates paths lexicographically, so children arrive sorted.
    h.children_[it->second].push_back(i);
  }
  return h;
}

PatchHierarchy PatchHierarchy::subtree(std::size_t i) const {
  const std::size_t depth = nodes_.at(i).path.size() - 1;
  std::vector<PatchNode> recs;
  std::vector<std::size_t> stack{i};
  int max_level = 1;
  while (!stack.empty()) {
    const std::size_t n = stack.back();
    stack.pop_back();
    PatchNode copy = nodes_[n];
    copy.path.erase(copy.path.begin(), copy.path.begin() + static_cast<std::ptrdiff_t>(depth));
    copy.level = static_cast<int>(copy.path.size());
    max_level = std::max(max_level, copy.level);
    recs.push_back(std::move(copy));
    for (auto c : children_[n]) stack.push_back(c);
  }
  return build_hierarchy(recs, max_level);
}

namespace {

void push_position(ScanOrder& s, const PatchHierarchy& h, std::size_t node) {
  const auto& n = h.node(node);
  s.order.push_back(n.token_id);
  s.node_of.push_back(node);
  s.level_of.push_back(n.level);
  s.region_of.push_back(n.path.front());
}

}  // namespace

ScanOrder region_nested_scan(const PatchHierarchy& h) {
  ScanOrder s;
  s.scheme = ScanScheme::region_nested;
  s.order.reserve(h.size());
  // Explicit stack; children pushed in reverse so the smallest index pops first.
  std::vector<std::size_t> stack;
  for (auto root : h.roots()) {
    stack.push_back(root);
    while (!stack.empty()) {
      const std::size_t n = stack.back();
      stack.pop_back();
      push_position(s, h, n);
      const auto& kids = h.children(n);
      for (auto it = kids.rbegin(); it != kids.rend(); ++it) stack.push_back(*it);
    }
  }
  return s;
}

ScanOrder resolution_ordered_scan(const PatchHierarchy& h) {
  std::vector<std::size_t> idx(h.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto& na = h.node(a);
    const auto& nb = h.node(b);
    if (na.level != nb.level) return na.level < nb.level;
    if (na.coord != nb.coord) return na.coord < nb.coord;
    return na.path < nb.path;
  });
  ScanOrder s;
  s.scheme = ScanScheme::resolution_ordered;
  for (auto i : idx) push_position(s, h, i);
  return s;
}

std::vector<RegionSegment> region_segments(const ScanOrder& s) {
  if (s.scheme != ScanScheme::region_nested) {
    throw ContractError("region_segments requires a region-nested scan");
  }
  std::vector<RegionSegment> out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (out.empty() || s.region_of[i] != out.back().root_index || s.level_of[i] == 1) {
      out.push_back({s.region_of[i], i, i + 1});
    } else {
      out.back().end = i + 1;
    }
  }
  return out;
}

void write_scan_text(std::ostream& os, const PatchHierarchy& h, const ScanOrder& s) {
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto& n = h.node(s.node_of[i]);
    os << i << ' ' << n.level << ' ' << path_str(n.path) << ' ' << n.coord.row << ',' << n.coord.col << ' '
       << n.token_id << ' ' << s.region_of[i] << '\n';
  }
}

namespace {

std::vector<unsigned long> parse_csv_numbers(const std::string& field, std::size_t line) {
  std::vector<unsigned long> out;
  std::istringstream is(field);
  std::string part;
  while (std::getline(is, part, ',')) {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
      throw FormatError("scan text line " + std::to_string(line) + ": bad number list '" + field + "'");
    }
    out.push_back(std::stoul(part));
  }
  return out;
}

}  // namespace

std::vector<ScanTextRow> read_scan_text(std::istream& is) {
  std::vector<ScanTextRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string path, coord;
    ScanTextRow r;
    unsigned region = 0;
    if (!(ls >> r.pos >> r.level >> path >> coord >> r.token_id >> region)) {
      throw FormatError("scan text line " + std::to_string(lineno) + ": expected 6 fields");
    }
    for (auto v : parse_csv_numbers(path, lineno)) r.path.push_back(static_cast<std::uint16_t>(v));
    const auto rc = parse_csv_numbers(coord, lineno);
    if (rc.size() != 2) throw FormatError("scan text line " + std::to_string(lineno) + ": bad coord");
    r.coord = {static_cast<std::uint16_t>(rc[0]), static_cast<std::uint16_t>(rc[1])};
    r.region = static_cast<std::uint16_t>(region);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string validate_region_nested_text(const std::vector<ScanTextRow>& rows) {
  struct Span {
    std::size_t first, last, count;
  };
  std::map<PatchPath, Span> spans;
  std::map<PatchPath, std::size_t> node_pos;
  std::unordered_set<std::size_t> tokens;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.pos != i) return "position " + std::to_string(i) + " is labelled " + std::to_string(r.pos);
    if (!tokens.insert(r.token_id).second) return "token " + std::to_string(r.token_id) + " appears twice";
    if (r.path.empty() || r.path.size() != static_cast<std::size_t>(r.level)) {
      return "position " + std::to_string(i) + ": path length does not match level";
    }
    if (r.region != r.path.front()) return "position " + std::to_string(i) + ": region differs from path root";
    if (!node_pos.emplace(r.path, i).second) return "path " + path_str(r.path) + " appears twice";
    for (std::size_t len = 1; len <= r.path.size(); ++len) {
      PatchPath prefix(r.path.begin(), r.path.begin() + static_cast<std::ptrdiff_t>(len));
      auto [it, fresh] = spans.emplace(prefix, Span{i, i, 1});
      if (!fresh) {
        it->second.last = i;
        ++it->second.count;
      }
    }
  }
  for (const auto& [prefix, span] : spans) {
    if (span.last - span.first + 1 != span.count) return "subtree " + path_str(prefix) + " is not contiguous";
    auto it = node_pos.find(prefix);
    if (it != node_pos.end() && it->second != span.first) {
      return "patch " + path_str(prefix) + " does not precede its descendants";
    }
  }
  return {};
}

}  // namespace moemil

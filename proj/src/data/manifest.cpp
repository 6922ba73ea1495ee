#include "moemil/data/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "moemil/errors.hpp"
#include "moemil/random.hpp"

namespace moemil {

std::string split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ContractError("unknown split '" + s + "' (expected train, val or test)");
}

std::vector<const ManifestEntry*> Manifest::select(Split s) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.split == s) out.push_back(&e);
  return out;
}

std::filesystem::path Manifest::resolve(const ManifestEntry& e) const {
  const std::filesystem::path p(e.path);
  return p.is_absolute() ? p : base_dir / p;
}

std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<double, 3>& ratios) {
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = ratios[i] * static_cast<double>(n);
    // Guard against 0.7 * 30 = 20.999999999999996.
    const double fl = std::floor(exact + 1e-9);
    counts[i] = static_cast<std::size_t>(fl);
    rem[i] = exact - fl;
    assigned += counts[i];
  }
  while (assigned < n) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < 3; ++i)
      if (rem[i] > rem[best] + 1e-12) best = i;
    ++counts[best];
    rem[best] = -1.0;
    ++assigned;
  }
  return counts;
}

Manifest split_manifest(const std::vector<SplitInput>& bags, const std::array<double, 3>& ratios,
                        std::uint64_t seed) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0)) throw ContractError("split ratios must be non-negative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ContractError("split ratios must sum to 1");
  const auto parts = static_cast<std::size_t>(std::count_if(ratios.begin(), ratios.end(), [](double r) { return r > 0.0; }));

  std::map<std::uint32_t, std::vector<std::size_t>> by_label;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < bags.size(); ++i) {
    if (!ids.insert(bags[i].slide_id).second) throw ContractError("duplicate slide id '" + bags[i].slide_id + "'");
    by_label[bags[i].label].push_back(i);
  }

  Manifest m;
  m.entries.resize(bags.size());
  for (std::size_t i = 0; i < bags.size(); ++i) {
    m.entries[i].slide_id = bags[i].slide_id;
    m.entries[i].label = bags[i].label;
    m.entries[i].path = bags[i].path.empty() ? bags[i].slide_id + ".mbag" : bags[i].path;
  }
  Rng rng(seed);
  for (auto& [label, members] : by_label) {
    if (members.size() < parts) {
      throw ContractError("class " + std::to_string(label) + " has " + std::to_string(members.size()) +
                          " slides, fewer than the " + std::to_string(parts) + " split parts");
    }
    rng.shuffle(members);
    const auto counts = split_counts(members.size(), ratios);
    std::size_t pos = 0;
    for (std::size_t part = 0; part < 3; ++part)
      for (std::size_t j = 0; j < counts[part]; ++j) m.entries[members[pos++]].split = static_cast<Split>(part);
  }
  return m;
}

namespace {

void check_field(const std::string& s, const char* what) {
  if (s.find_first_of(",\"\n\r") != std::string::npos) {
    throw ContractError(std::string("manifest ") + what + " '" + s + "' contains a comma, quote or newline");
  }
}

}  // namespace

void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "slide_id,path,label,split\n";
  for (const auto& e : m.entries) {
    check_field(e.slide_id, "slide id");
    check_field(e.path, "path");
    os << e.slide_id << ',' << e.path << ',' << e.label << ',' << split_name(e.split) << '\n';
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write manifest " + path.string());
  f << os.str();
  if (!f) throw IoError("failed writing manifest " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read manifest " + path.string());
  Manifest m;
  m.base_dir = path.parent_path();
  std::string line;
  std::size_t line_no = 0;
  std::set<std::string> ids;
  auto fail = [&](const std::string& msg) {
    throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != "slide_id,path,label,split") fail("expected header 'slide_id,path,label,split'");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    if (cols.size() != 4) fail("expected 4 columns, got " + std::to_string(cols.size()));
    ManifestEntry e;
    e.slide_id = cols[0];
    e.path = cols[1];
    if (e.slide_id.empty()) fail("empty slide id");
    if (!ids.insert(e.slide_id).second) fail("duplicate slide id '" + e.slide_id + "'");
    try {
      std::size_t used = 0;
      const unsigned long v = std::stoul(cols[2], &used);
      if (used != cols[2].size() || v > 0xFFFFFFFFul) throw std::invalid_argument("range");
      e.label = static_cast<std::uint32_t>(v);
      e.split = parse_split(cols[3]);
    } catch (const ContractError& err) {
      fail(err.what());
    } catch (const std::exception&) {
      fail("bad label '" + cols[2] + "'");
    }
    m.entries.push_back(std::move(e));
  }
  if (line_no == 0) throw FormatError(path.string() + ": empty manifest");
  for (const auto& e : m.entries) {
    if (!std::filesystem::exists(m.resolve(e))) {
      throw IoError("manifest " + path.string() + ": bag file for slide '" + e.slide_id + "' not found at " +
                    m.resolve(e).string());
    }
  }
  return m;
}

Bag load_entry(const Manifest& m, const ManifestEntry& e) {
  try {
    Bag b = read_bag(m.resolve(e));
    if (b.slide_id != e.slide_id || b.label != e.label) {
      throw FormatError("bag file disagrees with manifest (id '" + b.slide_id + "', label " + std::to_string(b.label) +
                        ")");
    }
    return b;
  } catch (const FormatError& err) {
    throw FormatError("slide '" + e.slide_id + "': " + err.what());
  } catch (const IoError& err) {
    throw IoError("slide '" + e.slide_id + "': " + err.what());
  }
}

}  // namespace moemil

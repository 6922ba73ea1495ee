#include "moemil/data/bag.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "moemil/errors.hpp"

namespace moemil {

static_assert(std::endian::native == std::endian::little, "MBAG I/O assumes a little-endian host");

PatchHierarchy Bag::hierarchy() const {
  std::vector<PatchNode> nodes;
  nodes.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    nodes.push_back({r.level, r.path, r.coord, i});
  }
  return build_hierarchy(nodes, levels);
}

std::size_t bag_record_bytes(std::size_t path_len, std::size_t d_in) { return 1 + 1 + 2 * path_len + 4 + 4 * d_in; }

std::size_t bag_file_bytes(const Bag& b) {
  std::size_t n = kBagFixedHeaderBytes + b.slide_id.size();
  for (const auto& r : b.records) n += bag_record_bytes(r.path.size(), r.features.size());
  return n;
}

namespace {

class Writer {
 public:
  explicit Writer(std::size_t reserve) { buf_.reserve(reserve); }
  template <typename V>
  void put(V v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(V));
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  template <typename V>
  V get(const char* what) {
    need(sizeof(V), what);
    V v;
    std::memcpy(&v, b_.data() + off_, sizeof(V));
    off_ += sizeof(V);
    return v;
  }
  void need(std::size_t n, const char* what) const {
    if (b_.size() - off_ < n) {
      throw FormatError("MBAG truncated at byte " + std::to_string(off_) + " while reading " + what + " (need " +
                        std::to_string(n) + " bytes, " + std::to_string(b_.size() - off_) + " left)");
    }
  }
  const std::uint8_t* take(std::size_t n, const char* what) {
    need(n, what);
    const auto* p = b_.data() + off_;
    off_ += n;
    return p;
  }
  std::size_t offset() const { return off_; }
  std::size_t remaining() const { return b_.size() - off_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t off_ = 0;
};

void check_encodable(const Bag& b) {
  if (b.slide_id.size() > 0xFFFF) throw ContractError("slide id longer than 65535 bytes");
  if (b.levels < 1 || b.levels > 255) throw ContractError("bag levels must lie in [1,255]");
  const std::size_t d = b.d_in();
  for (const auto& r : b.records) {
    if (r.features.size() != d) throw DimensionError("bag '" + b.slide_id + "' mixes feature widths");
    if (r.path.size() > 255 || r.level < 1 || r.level > 255) {
      throw ContractError("bag '" + b.slide_id + "' has a record with an unencodable level/path");
    }
  }
}

}  // namespace

std::vector<std::uint8_t> encode_bag(const Bag& b) {
  check_encodable(b);
  Writer w(bag_file_bytes(b));
  w.bytes("MBAG", 4);
  w.put<std::uint32_t>(kBagVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(b.levels));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(b.d_in()));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(b.records.size()));
  w.put<std::uint32_t>(b.label);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(b.slide_id.size()));
  w.bytes(b.slide_id.data(), b.slide_id.size());
  for (const auto& r : b.records) {
    w.put<std::uint8_t>(static_cast<std::uint8_t>(r.level));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(r.path.size()));
    for (auto p : r.path) w.put<std::uint16_t>(p);
    w.put<std::uint16_t>(r.coord.row);
    w.put<std::uint16_t>(r.coord.col);
    w.bytes(r.features.data(), r.features.size() * sizeof(float));
  }
  return w.take();
}

Bag decode_bag(std::span<const std::uint8_t> bytes) {
  Reader rd(bytes);
  const auto* magic = rd.take(4, "magic");
  if (std::memcmp(magic, "MBAG", 4) != 0) throw FormatError("MBAG bad magic at byte 0");
  const auto version = rd.get<std::uint32_t>("version");
  if (version != kBagVersion) {
    throw FormatError("MBAG unsupported version " + std::to_string(version) + " at byte 4");
  }
  Bag b;
  const auto levels = rd.get<std::uint32_t>("R");
  if (levels < 1 || levels > 255) throw FormatError("MBAG invalid level count " + std::to_string(levels) + " at byte 8");
  b.levels = static_cast<int>(levels);
  const auto d_in = rd.get<std::uint32_t>("D_in");
  const auto n = rd.get<std::uint32_t>("token count");
  if (d_in == 0 && n > 0) throw FormatError("MBAG zero feature width at byte 12");
  b.label = rd.get<std::uint32_t>("label");
  const auto id_len = rd.get<std::uint16_t>("slide id length");
  const auto* id = rd.take(id_len, "slide id");
  b.slide_id.assign(reinterpret_cast<const char*>(id), id_len);

  // Every record needs at least this many bytes; reject impossible counts
  // before allocating.
  const std::size_t min_record = bag_record_bytes(1, d_in);
  if (n > 0 && rd.remaining() / min_record < n) {
    throw FormatError("MBAG truncated: " + std::to_string(n) + " records declared but only " +
                      std::to_string(rd.remaining()) + " bytes follow byte " + std::to_string(rd.offset()));
  }
  b.records.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::size_t rec_off = rd.offset();
    auto& r = b.records[i];
    r.level = rd.get<std::uint8_t>("record level");
    const auto plen = rd.get<std::uint8_t>("record path length");
    if (r.level < 1 || r.level > b.levels || plen != r.level) {
      throw FormatError("MBAG record " + std::to_string(i) + " at byte " + std::to_string(rec_off) +
                        ": level " + std::to_string(r.level) + " / path length " + std::to_string(plen) +
                        " inconsistent with R=" + std::to_string(b.levels));
    }
    r.path.resize(plen);
    for (auto& p : r.path) p = rd.get<std::uint16_t>("record path");
    r.coord.row = rd.get<std::uint16_t>("record row");
    r.coord.col = rd.get<std::uint16_t>("record col");
    const auto* f = rd.take(static_cast<std::size_t>(d_in) * sizeof(float), "record features");
    r.features.resize(d_in);
    std::memcpy(r.features.data(), f, d_in * sizeof(float));
    for (float v : r.features) {
      if (!std::isfinite(v)) {
        throw FormatError("MBAG record " + std::to_string(i) + " at byte " + std::to_string(rec_off) +
                          ": non-finite feature value");
      }
    }
  }
  if (rd.remaining() != 0) {
    throw FormatError("MBAG has " + std::to_string(rd.remaining()) + " trailing bytes at byte " +
                      std::to_string(rd.offset()));
  }
  try {
    (void)b.hierarchy();
  } catch (const StructureError& e) {
    throw FormatError(std::string("MBAG records do not form a valid hierarchy: ") + e.what());
  }
  return b;
}

void write_bag(const Bag& b, const std::filesystem::path& path) {
  const auto bytes = encode_bag(b);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed for " + path.string());
}

Bag read_bag(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  try {
    return decode_bag(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace moemil

#include "moemil/trainer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "moemil/errors.hpp"

namespace moemil {

static_assert(std::endian::native == std::endian::little, "MCKP I/O assumes a little-endian host");

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

namespace {

template <typename U>
void put(std::vector<std::uint8_t>& out, U v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(U));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (n > remaining()) {
      throw FormatError("checkpoint truncated at byte " + std::to_string(pos_) + " while reading " + what);
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  std::vector<std::uint8_t> out = {'M', 'C', 'K', 'P'};
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string meta = c.meta.dump();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  out.insert(out.end(), meta.begin(), meta.end());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    if (t.name.empty() || t.name.size() > 0xFFFF) throw ContractError("checkpoint tensor name length out of range");
    if (t.shape.empty() || t.shape.size() > 255) throw ContractError("checkpoint tensor '" + t.name + "' has bad rank");
    if (shape_numel(t.shape) != t.data.size()) throw ContractError("checkpoint tensor '" + t.name + "' shape/data mismatch");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
    for (auto e : t.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data.data());
    out.insert(out.end(), p, p + t.data.size() * sizeof(float));
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), "MCKP", 4) != 0) throw FormatError("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  const auto meta_len = r.get<std::uint32_t>("config length");
  const auto meta = r.take(meta_len, "config");
  try {
    c.meta = nlohmann::json::parse(meta.begin(), meta.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray t;
    const auto name_len = r.get<std::uint16_t>("tensor name length");
    const auto name = r.take(name_len, "tensor name");
    t.name.assign(name.begin(), name.end());
    if (t.name.empty() || !names.insert(t.name).second) {
      throw FormatError("checkpoint tensor name empty or duplicated at byte " + std::to_string(r.pos()));
    }
    const auto rank = r.get<std::uint8_t>("tensor rank");
    if (rank == 0) throw FormatError("checkpoint tensor '" + t.name + "' has rank 0");
    std::size_t numel = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const auto e = r.get<std::uint32_t>("tensor extent");
      if (e == 0) throw FormatError("checkpoint tensor '" + t.name + "' has a zero extent");
      if (numel > r.remaining() / e) throw FormatError("checkpoint tensor '" + t.name + "' exceeds the file size");
      numel *= e;
      t.shape.push_back(e);
    }
    const auto data = r.take(numel * sizeof(float), "tensor data");
    t.data.resize(numel);
    std::memcpy(t.data.data(), data.data(), data.size());
    c.tensors.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw FormatError("checkpoint has " + std::to_string(r.remaining()) + " trailing bytes");
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(c);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace moemil

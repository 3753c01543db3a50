#include "nbids/container.hpp"

#include "nbids/errors.hpp"
#include "nbids/rng.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string_view>

namespace nbids {

namespace {

constexpr char kMagic[8] = {'N', 'B', 'I', 'D', 'S', 'B', 'O', 'X'};

enum class RecordType : std::uint8_t { tensor = 1, ints = 2, strings = 3, text = 4 };
constexpr std::uint8_t kDtypeF64 = 1;

class Writer {
public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& bytes() { return out_; }

private:
  template <typename T> void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  std::string str() {
    const auto n = u32();
    const auto* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  const std::uint8_t* take(std::size_t n) {
    if (n > size_ - pos_) throw TruncatedError("container truncated at byte " + std::to_string(pos_));
    const auto* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  [[nodiscard]] std::size_t remaining() const { return size_ - pos_; }

private:
  std::uint64_t le(std::size_t n) {
    const auto* p = take(n);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint64_t checksum(const std::uint8_t* data, std::size_t n) {
  return fnv1a64(std::string_view(reinterpret_cast<const char*>(data), n));
}

} // namespace

void Container::put(const std::string& name, Value value) {
  if (auto it = index_.find(name); it != index_.end()) {
    records_[it->second].second = std::move(value);
    return;
  }
  index_[name] = records_.size();
  records_.emplace_back(name, std::move(value));
}

const Container::Value& Container::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw FormatError(kind_ + " file has no record '" + name + "'");
  return records_[it->second].second;
}

const Tensor& Container::tensor(const std::string& name) const {
  const auto* v = std::get_if<Tensor>(&get(name));
  if (!v) throw FormatError("record '" + name + "' is not a tensor");
  return *v;
}

const Container::Ints& Container::ints(const std::string& name) const {
  const auto* v = std::get_if<Ints>(&get(name));
  if (!v) throw FormatError("record '" + name + "' is not an integer array");
  return *v;
}

const Container::Strings& Container::strings(const std::string& name) const {
  const auto* v = std::get_if<Strings>(&get(name));
  if (!v) throw FormatError("record '" + name + "' is not a string list");
  return *v;
}

const Container::Text& Container::text(const std::string& name) const {
  const auto* v = std::get_if<Text>(&get(name));
  if (!v) throw FormatError("record '" + name + "' is not text");
  return *v;
}

std::vector<std::uint8_t> Container::serialize() const {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kContainerVersion);
  w.str(kind_);
  w.u32(static_cast<std::uint32_t>(records_.size()));
  for (const auto& [name, value] : records_) {
    if (const auto* t = std::get_if<Tensor>(&value)) {
      w.u8(static_cast<std::uint8_t>(RecordType::tensor));
      w.str(name);
      w.u8(kDtypeF64);
      w.u32(static_cast<std::uint32_t>(t->rank()));
      for (auto d : t->shape()) w.u64(d);
      for (double v : t->data()) w.u64(std::bit_cast<std::uint64_t>(v));
    } else if (const auto* ints = std::get_if<Ints>(&value)) {
      w.u8(static_cast<std::uint8_t>(RecordType::ints));
      w.str(name);
      w.u64(ints->size());
      for (auto v : *ints) w.u64(static_cast<std::uint64_t>(v));
    } else if (const auto* strs = std::get_if<Strings>(&value)) {
      w.u8(static_cast<std::uint8_t>(RecordType::strings));
      w.str(name);
      w.u32(static_cast<std::uint32_t>(strs->size()));
      for (const auto& s : *strs) w.str(s);
    } else {
      w.u8(static_cast<std::uint8_t>(RecordType::text));
      w.str(name);
      w.str(std::get<Text>(value));
    }
  }
  auto& bytes = w.bytes();
  const auto sum = checksum(bytes.data(), bytes.size());
  w.u64(sum);
  return std::move(bytes);
}

Container Container::parse(const std::vector<std::uint8_t>& bytes, const std::string& expected_kind) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw FormatError("not an nbids container (bad magic bytes)");
  Reader r(bytes.data(), bytes.size());
  r.take(sizeof kMagic);
  const auto version = r.u32();
  if (version != kContainerVersion)
    throw VersionError("container version " + std::to_string(version) + " unsupported (expected " +
                       std::to_string(kContainerVersion) + ")");
  Container c(r.str());
  if (!expected_kind.empty() && c.kind_ != expected_kind)
    throw FormatError("container holds a '" + c.kind_ + "', expected a '" + expected_kind + "'");
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto type = static_cast<RecordType>(r.u8());
    auto name = r.str();
    switch (type) {
    case RecordType::tensor: {
      if (r.u8() != kDtypeF64) throw FormatError("record '" + name + "': unsupported dtype");
      const auto rank = r.u32();
      Shape shape(rank);
      std::uint64_t total = 1;
      for (auto& d : shape) {
        d = r.u64();
        if (d == 0) throw FormatError("record '" + name + "': zero extent");
        total *= d;
      }
      if (total > r.remaining() / 8) throw TruncatedError("record '" + name + "' truncated");
      std::vector<double> values(total);
      for (auto& v : values) v = std::bit_cast<double>(r.u64());
      c.put(name, Tensor(std::move(shape), std::move(values)));
      break;
    }
    case RecordType::ints: {
      const auto n = r.u64();
      if (n > r.remaining() / 8) throw TruncatedError("record '" + name + "' truncated");
      Ints v(n);
      for (auto& x : v) x = static_cast<std::int64_t>(r.u64());
      c.put(name, std::move(v));
      break;
    }
    case RecordType::strings: {
      const auto n = r.u32();
      Strings v;
      for (std::uint32_t k = 0; k < n; ++k) v.push_back(r.str());
      c.put(name, std::move(v));
      break;
    }
    case RecordType::text:
      c.put(name, r.str());
      break;
    default:
      throw FormatError("unknown record type " + std::to_string(static_cast<int>(type)) + " for '" +
                        name + "'");
    }
  }
  const auto body = bytes.size() - r.remaining();
  const auto stored = r.u64();
  if (stored != checksum(bytes.data(), body)) throw FormatError("container checksum mismatch");
  if (r.remaining() != 0) throw FormatError("trailing bytes after container checksum");
  return c;
}

void Container::write(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw PathError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

Container Container::read(const std::filesystem::path& path, const std::string& expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PathError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse(bytes, expected_kind);
}

} // namespace nbids

#pragma once

// Self-describing binary container shared by checkpoints and dataset
// artifacts. Layout, all integers little-endian:
//
//   magic    8 bytes  "NBIDSBOX"
//   version  u32
//   kind     u32 length + UTF-8 bytes
//   count    u32 number of records
//   records  type u8, name (u32 length + bytes), payload
//   checksum u64 FNV-1a over every preceding byte
//
// Payloads: tensor  = dtype u8 (1 = f64), rank u32, rank x u64 extents, raw values
//           ints    = u64 count, count x i64
//           strings = u32 count, count x (u32 length + bytes)
//           text    = u32 length + bytes

#include "nbids/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <variant>
#include <vector>

namespace nbids {

inline constexpr std::uint32_t kContainerVersion = 1;

class Container {
public:
  using Ints = std::vector<std::int64_t>;
  using Strings = std::vector<std::string>;
  using Text = std::string;
  using Value = std::variant<Tensor, Ints, Strings, Text>;

  explicit Container(std::string kind) : kind_(std::move(kind)) {}

  void put(const std::string& name, Value value);

  [[nodiscard]] const std::string& kind() const { return kind_; }
  [[nodiscard]] bool has(const std::string& name) const { return index_.contains(name); }
  [[nodiscard]] const std::vector<std::pair<std::string, Value>>& records() const { return records_; }

  /// Typed accessors throw FormatError when the record is absent or of another type.
  [[nodiscard]] const Tensor& tensor(const std::string& name) const;
  [[nodiscard]] const Ints& ints(const std::string& name) const;
  [[nodiscard]] const Strings& strings(const std::string& name) const;
  [[nodiscard]] const Text& text(const std::string& name) const;

  [[nodiscard]] std::vector<std::uint8_t> serialize() const;
  /// Throws FormatError (bad magic, checksum, record), VersionError or TruncatedError.
  static Container parse(const std::vector<std::uint8_t>& bytes, const std::string& expected_kind);

  void write(const std::filesystem::path& path) const;
  static Container read(const std::filesystem::path& path, const std::string& expected_kind);

private:
  [[nodiscard]] const Value& get(const std::string& name) const;

  std::string kind_;
  std::vector<std::pair<std::string, Value>> records_;
  std::map<std::string, std::size_t> index_;
};

} // namespace nbids

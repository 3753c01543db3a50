#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace nbids {

/// Counter-based 64-bit generator. A stream is identified by
/// (global seed, stream name); the n-th draw of a stream is a pure function
/// of that key and n, so results do not depend on platform or on how many
/// other streams were consumed.
class Rng {
public:
  Rng(std::uint64_t seed, std::string_view stream);

  /// Independent sub-stream, e.g. one per epoch or per layer.
  [[nodiscard]] Rng child(std::string_view name) const;
  [[nodiscard]] Rng child(std::uint64_t index) const;

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller.
  double normal();
  /// Unbiased integer on [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p);

  template <typename T> void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  [[nodiscard]] std::uint64_t key() const { return key_; }
  [[nodiscard]] std::uint64_t counter() const { return counter_; }

private:
  explicit Rng(std::uint64_t key) : key_(key) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t mix64(std::uint64_t x);

} // namespace nbids

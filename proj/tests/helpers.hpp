#pragma once

#include "nbids/rng.hpp"
#include "nbids/tensor.hpp"
#include "oracles.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

namespace testing_util {

inline nbids::Tensor random_tensor(nbids::Shape shape, nbids::Rng& rng, double lo = -1.0, double hi = 1.0) {
  nbids::Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Moves every entry at least `gap` away from zero, keeping its sign.
inline void push_from_zero(nbids::Tensor& t, double gap = 0.05) {
  for (auto& v : t.data())
    if (std::abs(v) < gap) v = v < 0 ? -gap - std::abs(v) : gap + v;
}

/// sum(y * r): a scalar head whose cotangent is the fixed tensor r.
inline double dot(const nbids::Tensor& y, const nbids::Tensor& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

inline void copy_grad(nbids::Tensor& dst, const nbids::Tensor& g) {
  std::copy(g.data().begin(), g.data().end(), dst.grad().begin());
}

/// Rows of a rank-2 tensor.
inline oracle::Mat to_mat(const nbids::Tensor& t) {
  oracle::Mat m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t(i, j);
  return m;
}

/// Slice [i] of a rank-3 tensor as rows.
inline oracle::Mat slice(const nbids::Tensor& t, std::size_t i) {
  oracle::Mat m(t.dim(1), std::vector<double>(t.dim(2)));
  for (std::size_t j = 0; j < t.dim(1); ++j)
    for (std::size_t k = 0; k < t.dim(2); ++k) m[j][k] = t(i, j, k);
  return m;
}

inline double max_abs_diff(const oracle::Mat& a, const oracle::Mat& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) d = std::max(d, std::abs(a[i][j] - b[i][j]));
  return d;
}

inline std::string csv_header(std::size_t cols) {
  std::string h;
  for (std::size_t j = 0; j < cols; ++j) h += (j ? ",f" : "f") + std::to_string(j);
  return h;
}

/// N-BaIoT-shaped CSV: positive features, class `shift` lifts its own block of
/// 11 columns so that classes are separable.
inline void write_traffic_csv(const std::filesystem::path& path, std::size_t rows, std::size_t shift,
                              nbids::Rng& rng, std::size_t cols = 115) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << csv_header(cols) << "\n";
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      double v = 10.0 * rng.uniform();
      if (j / 11 == shift) v += 60.0;
      out << v << (j + 1 == cols ? "\n" : ",");
    }
}

inline const std::vector<std::string>& gafgyt_attacks() {
  static const std::vector<std::string> a{"combo", "junk", "scan", "tcp", "udp"};
  return a;
}

inline const std::vector<std::string>& mirai_attacks() {
  static const std::vector<std::string> a{"ack", "scan", "syn", "udp", "udpplain"};
  return a;
}

/// Nested per-device layout. `with_mirai` false mimics the devices that have
/// no Mirai captures. Class ids follow the default vocabulary; gafgyt_tcp gets
/// a file too (it must be skipped).
inline void write_fake_device(const std::filesystem::path& root, const std::string& device, std::size_t rows,
                              bool with_mirai, std::uint64_t seed) {
  nbids::Rng rng(seed, device);
  write_traffic_csv(root / device / "benign_traffic.csv", rows, 0, rng);
  std::size_t id = 1;
  for (const auto& a : gafgyt_attacks())
    write_traffic_csv(root / device / "gafgyt_attacks" / (a + ".csv"), rows, a == "tcp" ? 10 : id++, rng);
  if (!with_mirai) return;
  for (const auto& a : mirai_attacks()) write_traffic_csv(root / device / "mirai_attacks" / (a + ".csv"), rows, id++, rng);
}

class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() / ("nbids_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  [[nodiscard]] std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

} // namespace testing_util

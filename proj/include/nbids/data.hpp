#pragma once

// N-BaIoT ingestion: directory scan, CSV parsing, per-class balancing,
// stratified train/test split and min-max scaling.
//
// Two on-disk layouts are recognised:
//   <root>/<Device>/benign_traffic.csv
//   <root>/<Device>/{gafgyt,mirai}_attacks/<attack>.csv
// and the flattened form
//   <root>/<n>.benign.csv, <root>/<n>.{gafgyt,mirai}.<attack>.csv
// where <n> is the device number 1..9.

#include "nbids/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nbids {

inline constexpr std::size_t kNbaiotFeatures = 115;

struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

  std::span<double> row(std::size_t i) { return {values.data() + i * cols, cols}; }
  [[nodiscard]] std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
  /// Rows at the given indices, in that order.
  [[nodiscard]] FeatureMatrix gather(std::span<const std::size_t> indices) const;

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;
};

class LabelVocab {
public:
  LabelVocab() = default;
  explicit LabelVocab(std::vector<std::string> names);

  /// benign plus the nine gafgyt/mirai attacks, ids 0..9.
  static LabelVocab nbaiot();

  [[nodiscard]] std::size_t size() const { return names_.size(); }
  [[nodiscard]] const std::string& name(std::size_t id) const { return names_.at(id); }
  [[nodiscard]] std::optional<int> id(const std::string& name) const;
  [[nodiscard]] const std::vector<std::string>& names() const { return names_; }

  friend bool operator==(const LabelVocab&, const LabelVocab&) = default;

private:
  std::vector<std::string> names_;
};

struct RawTable {
  FeatureMatrix features;
  std::vector<int> labels;             ///< class id per row
  std::vector<std::uint32_t> device;   ///< index into devices per row
  std::vector<std::string> devices;
  std::vector<std::string> feature_names;
  std::vector<std::string> sources;    ///< contributing files, load order

  [[nodiscard]] std::size_t size() const { return labels.size(); }
};

/// Maps a file's class key (e.g. "gafgyt_combo") to a vocabulary class name.
/// Keys absent from the map are skipped.
using ClassMap = std::map<std::string, std::string>;
ClassMap default_class_map();

struct SourceFile {
  std::filesystem::path path;
  std::string device;
  std::string class_key;
  int class_id = -1;
  std::size_t rows = 0;      ///< rows that parsed cleanly
  std::size_t rejected = 0;  ///< rows with missing or non-numeric cells
};

struct Inventory {
  std::filesystem::path root;
  LabelVocab vocab;
  std::vector<SourceFile> files; ///< sorted by path
  std::vector<std::string> feature_names;

  [[nodiscard]] std::vector<std::size_t> class_counts() const;
};

/// Lists and validates every usable file under `root`. `device_filter`
/// holds case-insensitive substrings of device names; empty keeps all.
Inventory scan_nbaiot(const std::filesystem::path& root, const std::vector<std::string>& device_filter = {},
                      const ClassMap& class_map = default_class_map(),
                      const LabelVocab& vocab = LabelVocab::nbaiot());

RawTable load_inventory(const Inventory& inv);

RawTable load_nbaiot(const std::filesystem::path& root, const std::vector<std::string>& device_filter = {},
                     const ClassMap& class_map = default_class_map(),
                     const LabelVocab& vocab = LabelVocab::nbaiot());

/// Seeded uniform subsample of exactly `per_class` rows per vocabulary class,
/// output order shuffled.
RawTable balance_classes(const RawTable& table, std::size_t n_classes, std::size_t per_class,
                         std::uint64_t seed, const LabelVocab* vocab = nullptr);

/// Same result as balance_classes(load_inventory(inv), ...) while parsing
/// only the selected rows.
RawTable load_balanced(const Inventory& inv, std::size_t per_class, std::uint64_t seed);

// ---------------------------------------------------------------- scaling

struct MinMaxScaler {
  std::vector<double> min;
  std::vector<double> max;

  static MinMaxScaler fit(const FeatureMatrix& rows);
  /// (x - min) / (max - min) clipped to [0, 1]; constant features map to 0.
  [[nodiscard]] FeatureMatrix transform(const FeatureMatrix& rows) const;

  friend bool operator==(const MinMaxScaler&, const MinMaxScaler&) = default;
};

// ---------------------------------------------------------------- splits

struct StratifiedIndices {
  std::vector<std::size_t> keep;    ///< ascending
  std::vector<std::size_t> holdout; ///< ascending
};

/// Per class, holds out round(count * fraction) seeded-random rows.
StratifiedIndices stratified_indices(std::span<const int> labels, std::size_t n_classes, double fraction,
                                     std::uint64_t seed, std::string_view stream);

struct DatasetSplit {
  FeatureMatrix train_x;
  std::vector<int> train_y;
  FeatureMatrix test_x;
  std::vector<int> test_y;
  MinMaxScaler scaler;
  LabelVocab vocab;
  std::uint64_t seed = 0;
  std::vector<std::string> feature_names;
  std::vector<std::string> provenance;

  friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

DatasetSplit stratified_split(const RawTable& table, const LabelVocab& vocab, double test_fraction,
                              std::uint64_t seed);

/// [n, cols] rows to a single-channel [n, 1, cols] model input.
Tensor to_model_input(const FeatureMatrix& rows, std::size_t expected_cols = kNbaiotFeatures);
FeatureMatrix flatten_input(const Tensor& x);

/// Gaussian classes: class c has mean separation_sigma on its own block of
/// n_features / n_classes features and 0 elsewhere; unit variance.
RawTable make_gaussian_blobs(std::size_t n_classes, std::size_t per_class, std::size_t n_features,
                             double separation_sigma, std::uint64_t seed);

// ---------------------------------------------------------------- artifact

void save_dataset(const std::filesystem::path& path, const DatasetSplit& split);
DatasetSplit load_dataset(const std::filesystem::path& path);

/// Reads a CSV of raw features (header row required).
FeatureMatrix read_feature_csv(const std::filesystem::path& path, std::size_t expected_cols,
                               std::vector<std::string>* header = nullptr);

} // namespace nbids

#include "nbids/data.hpp"

#include "nbids/container.hpp"
#include "nbids/errors.hpp"
#include "nbids/log.hpp"
#include "nbids/rng.hpp"
#include "nbids/text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace nbids {

namespace {

const char* const kFlatDevices[] = {"Danmini_Doorbell",
                                    "Ecobee_Thermostat",
                                    "Ennio_Doorbell",
                                    "Philips_B120N10_Baby_Monitor",
                                    "Provision_PT_737E_Security_Camera",
                                    "Provision_PT_838_Security_Camera",
                                    "Samsung_SNH_1011_N_Webcam",
                                    "SimpleHome_XCS7_1002_WHT_Security_Camera",
                                    "SimpleHome_XCS7_1003_WHT_Security_Camera"};

struct FileKey {
  std::string device;
  std::string class_key;
};

// Recognises both dataset layouts; nullopt for unrelated CSVs.
std::optional<FileKey> classify_path(const fs::path& path, const fs::path& root) {
  const auto stem = path.stem().string();
  const auto parts = text::split(stem, '.');
  if (parts.size() >= 2) {
    auto num = text::parse_int(parts[0]);
    if (num && *num >= 1 && *num <= 9) {
      const std::string device = kFlatDevices[*num - 1];
      if (parts.size() == 2 && parts[1] == "benign") return FileKey{device, "benign"};
      if (parts.size() == 3 && (parts[1] == "gafgyt" || parts[1] == "mirai"))
        return FileKey{device, std::string(parts[1]) + "_" + std::string(parts[2])};
    }
    return std::nullopt;
  }
  const auto parent = path.parent_path();
  if (stem == "benign_traffic" && parent != root) return FileKey{parent.filename().string(), "benign"};
  const auto family_dir = parent.filename().string();
  if (family_dir == "gafgyt_attacks" || family_dir == "mirai_attacks") {
    const auto family = family_dir.substr(0, family_dir.find('_'));
    return FileKey{parent.parent_path().filename().string(), family + "_" + stem};
  }
  return std::nullopt;
}

bool device_selected(const std::string& device, const std::vector<std::string>& filter) {
  if (filter.empty()) return true;
  const auto d = text::to_lower(device);
  return std::any_of(filter.begin(), filter.end(),
                     [&](const std::string& f) { return d.find(text::to_lower(f)) != std::string::npos; });
}

std::vector<std::string> split_header(const std::string& line) {
  std::vector<std::string> cols;
  for (auto c : text::split(line, ',')) cols.emplace_back(text::trim(c));
  return cols;
}

// Parses one data line into `out`; false when the row must be rejected.
bool parse_row(std::string_view line, std::size_t width, double* out) {
  std::size_t col = 0;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    const auto cell = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    if (col >= width) return false;
    auto v = text::parse_double(cell);
    if (!v || !std::isfinite(*v)) return false;
    out[col++] = *v;
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return col == width;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

// Streams a dataset file: validates the header, then calls on_row(ordinal,
// values) for every clean row and returns the number of rejected rows.
template <typename OnRow>
std::size_t stream_file(const fs::path& path, std::size_t width, std::vector<std::string>* header_out,
                        OnRow&& on_row) {
  std::ifstream in(path);
  if (!in) throw PathError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("schema error in '" + path.string() + "': empty file, header required");
  auto header = split_header(strip_cr(line));
  if (header.size() != width)
    throw DataError("schema error in '" + path.string() + "': header has " + std::to_string(header.size()) +
                    " columns, expected " + std::to_string(width));
  if (header_out) *header_out = std::move(header);
  std::vector<double> values(width);
  std::size_t ordinal = 0, rejected = 0;
  while (std::getline(in, line)) {
    line = strip_cr(std::move(line));
    if (text::trim(line).empty()) continue;
    if (parse_row(line, width, values.data()))
      on_row(ordinal++, values);
    else
      ++rejected;
  }
  return rejected;
}

// Floyd's sampling: k distinct values from [0, n), returned ascending.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  std::set<std::size_t> chosen;
  for (std::size_t j = n - k; j < n; ++j) {
    const auto t = static_cast<std::size_t>(rng.below(j + 1));
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  return {chosen.begin(), chosen.end()};
}

std::string class_label(const LabelVocab* vocab, std::size_t c) {
  return vocab && c < vocab->size() ? vocab->name(c) : "class " + std::to_string(c);
}

void append_row(RawTable& t, std::span<const double> values, int label, std::uint32_t device) {
  t.features.values.insert(t.features.values.end(), values.begin(), values.end());
  ++t.features.rows;
  t.labels.push_back(label);
  t.device.push_back(device);
}

RawTable empty_like(const RawTable& src) {
  RawTable t;
  t.features.cols = src.features.cols;
  t.devices = src.devices;
  t.feature_names = src.feature_names;
  t.sources = src.sources;
  return t;
}

RawTable reorder(const RawTable& src, std::span<const std::size_t> order) {
  RawTable t = empty_like(src);
  t.features = src.features.gather(order);
  for (auto i : order) {
    t.labels.push_back(src.labels[i]);
    t.device.push_back(src.device[i]);
  }
  return t;
}

// Per-class selections in vocabulary order, then one seeded global shuffle.
std::vector<std::size_t> balanced_order(const std::vector<std::vector<std::size_t>>& per_class_rows,
                                        std::size_t per_class, std::uint64_t seed, const LabelVocab* vocab) {
  std::vector<std::size_t> order;
  Rng base(seed, "balance");
  for (std::size_t c = 0; c < per_class_rows.size(); ++c) {
    const auto& rows = per_class_rows[c];
    if (rows.size() < per_class)
      throw DataError("balance_classes: class '" + class_label(vocab, c) + "' has only " +
                      std::to_string(rows.size()) + " rows, " + std::to_string(per_class) + " requested");
    auto rng = base.child(c);
    for (auto k : sample_without_replacement(rows.size(), per_class, rng)) order.push_back(rows[k]);
  }
  Rng shuffle(seed, "balance.shuffle");
  shuffle.shuffle(std::span(order));
  return order;
}

} // namespace

FeatureMatrix FeatureMatrix::gather(std::span<const std::size_t> indices) const {
  FeatureMatrix out(indices.size(), cols);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

LabelVocab::LabelVocab(std::vector<std::string> names) : names_(std::move(names)) {
  std::set<std::string> seen(names_.begin(), names_.end());
  if (seen.size() != names_.size()) throw ConfigError("label vocabulary has duplicate names");
}

LabelVocab LabelVocab::nbaiot() {
  return LabelVocab({"benign", "gafgyt_combo", "gafgyt_junk", "gafgyt_scan", "gafgyt_udp", "mirai_ack",
                     "mirai_scan", "mirai_syn", "mirai_udp", "mirai_udpplain"});
}

std::optional<int> LabelVocab::id(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<int>(it - names_.begin());
}

ClassMap default_class_map() {
  ClassMap m;
  const auto vocab = LabelVocab::nbaiot();
  for (const auto& n : vocab.names()) m[n] = n;
  return m;
}

std::vector<std::size_t> Inventory::class_counts() const {
  std::vector<std::size_t> counts(vocab.size(), 0);
  for (const auto& f : files) counts[static_cast<std::size_t>(f.class_id)] += f.rows;
  return counts;
}

Inventory scan_nbaiot(const fs::path& root, const std::vector<std::string>& device_filter,
                      const ClassMap& class_map, const LabelVocab& vocab) {
  if (!fs::is_directory(root)) throw PathError("data directory '" + root.string() + "' does not exist");
  std::vector<fs::path> paths;
  for (const auto& entry : fs::recursive_directory_iterator(root))
    if (entry.is_regular_file() && entry.path().extension() == ".csv") paths.push_back(entry.path());
  std::sort(paths.begin(), paths.end());

  Inventory inv;
  inv.root = root;
  inv.vocab = vocab;
  for (const auto& path : paths) {
    auto key = classify_path(path, root);
    if (!key) {
      log_info("data", "ignoring unrecognised file " + path.string());
      continue;
    }
    if (!device_selected(key->device, device_filter)) continue;
    auto mapped = class_map.find(key->class_key);
    if (mapped == class_map.end()) {
      log_info("data", "skipping " + path.string() + ": class '" + key->class_key + "' not in the label vocabulary");
      continue;
    }
    auto id = vocab.id(mapped->second);
    if (!id) throw ConfigError("class map target '" + mapped->second + "' is not in the label vocabulary");
    SourceFile sf{path, key->device, key->class_key, *id};
    std::vector<std::string> header;
    sf.rejected = stream_file(path, kNbaiotFeatures, &header,
                              [&](std::size_t, const std::vector<double>&) { ++sf.rows; });
    if (inv.feature_names.empty())
      inv.feature_names = header;
    else if (header != inv.feature_names)
      throw DataError("schema error in '" + path.string() + "': column names differ from the first file");
    if (sf.rejected > 0)
      log_info("data", path.string() + ": rejected " + std::to_string(sf.rejected) + " malformed rows");
    log_info("data", key->device + " / " + mapped->second + ": " + std::to_string(sf.rows) + " rows");
    inv.files.push_back(std::move(sf));
  }
  return inv;
}

namespace {

RawTable table_skeleton(const Inventory& inv) {
  RawTable t;
  t.features.cols = kNbaiotFeatures;
  t.feature_names = inv.feature_names;
  std::set<std::string> devices;
  for (const auto& f : inv.files) devices.insert(f.device);
  t.devices.assign(devices.begin(), devices.end());
  for (const auto& f : inv.files) t.sources.push_back(f.path.lexically_relative(inv.root).generic_string());
  return t;
}

std::uint32_t device_index(const RawTable& t, const std::string& device) {
  return static_cast<std::uint32_t>(std::lower_bound(t.devices.begin(), t.devices.end(), device) - t.devices.begin());
}

} // namespace

RawTable load_inventory(const Inventory& inv) {
  RawTable t = table_skeleton(inv);
  for (const auto& f : inv.files) {
    const auto dev = device_index(t, f.device);
    stream_file(f.path, kNbaiotFeatures, nullptr,
                [&](std::size_t, const std::vector<double>& v) { append_row(t, v, f.class_id, dev); });
  }
  return t;
}

RawTable load_nbaiot(const fs::path& root, const std::vector<std::string>& device_filter,
                     const ClassMap& class_map, const LabelVocab& vocab) {
  return load_inventory(scan_nbaiot(root, device_filter, class_map, vocab));
}

RawTable balance_classes(const RawTable& table, std::size_t n_classes, std::size_t per_class,
                         std::uint64_t seed, const LabelVocab* vocab) {
  if (per_class == 0) throw ConfigError("balance_classes: per_class must be positive");
  std::vector<std::vector<std::size_t>> rows(n_classes);
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto c = static_cast<std::size_t>(table.labels[i]);
    if (c >= n_classes) throw LabelError("balance_classes: label " + std::to_string(c) + " in row " + std::to_string(i));
    rows[c].push_back(i);
  }
  return reorder(table, balanced_order(rows, per_class, seed, vocab));
}

RawTable load_balanced(const Inventory& inv, std::size_t per_class, std::uint64_t seed) {
  if (per_class == 0) throw ConfigError("balance_classes: per_class must be positive");
  // Virtual row ids equal the row positions load_inventory would produce.
  std::vector<std::vector<std::size_t>> rows(inv.vocab.size());
  std::vector<std::size_t> file_offset;
  std::size_t total = 0;
  for (const auto& f : inv.files) {
    file_offset.push_back(total);
    for (std::size_t k = 0; k < f.rows; ++k) rows[static_cast<std::size_t>(f.class_id)].push_back(total + k);
    total += f.rows;
  }
  const auto order = balanced_order(rows, per_class, seed, &inv.vocab);

  std::vector<std::size_t> wanted(order.begin(), order.end());
  std::sort(wanted.begin(), wanted.end());
  RawTable dense = table_skeleton(inv);
  auto next = wanted.begin();
  for (std::size_t fi = 0; fi < inv.files.size() && next != wanted.end(); ++fi) {
    const auto& f = inv.files[fi];
    const auto begin = file_offset[fi];
    if (*next >= begin + f.rows) continue;
    const auto dev = device_index(dense, f.device);
    stream_file(f.path, kNbaiotFeatures, nullptr, [&](std::size_t k, const std::vector<double>& v) {
      if (next != wanted.end() && *next == begin + k) {
        append_row(dense, v, f.class_id, dev);
        ++next;
      }
    });
  }
  // dense holds rows sorted by virtual id; map the shuffled order onto it.
  std::vector<std::size_t> positions;
  positions.reserve(order.size());
  for (auto id : order)
    positions.push_back(static_cast<std::size_t>(std::lower_bound(wanted.begin(), wanted.end(), id) - wanted.begin()));
  return reorder(dense, positions);
}

// ---------------------------------------------------------------- scaling

MinMaxScaler MinMaxScaler::fit(const FeatureMatrix& rows) {
  if (rows.rows == 0) throw DataError("min-max scaler: cannot fit on empty input");
  MinMaxScaler s{std::vector<double>(rows.row(0).begin(), rows.row(0).end()),
                 std::vector<double>(rows.row(0).begin(), rows.row(0).end())};
  for (std::size_t i = 1; i < rows.rows; ++i) {
    const auto r = rows.row(i);
    for (std::size_t j = 0; j < rows.cols; ++j) {
      s.min[j] = std::min(s.min[j], r[j]);
      s.max[j] = std::max(s.max[j], r[j]);
    }
  }
  return s;
}

FeatureMatrix MinMaxScaler::transform(const FeatureMatrix& rows) const {
  if (rows.cols != min.size())
    throw ShapeError("min-max scaler: fitted on " + std::to_string(min.size()) + " features, input has " +
                     std::to_string(rows.cols));
  FeatureMatrix out(rows.rows, rows.cols);
  for (std::size_t i = 0; i < rows.rows; ++i) {
    const auto r = rows.row(i);
    auto o = out.row(i);
    for (std::size_t j = 0; j < rows.cols; ++j) {
      const double range = max[j] - min[j];
      o[j] = range > 0.0 ? std::clamp((r[j] - min[j]) / range, 0.0, 1.0) : 0.0;
    }
  }
  return out;
}

// ---------------------------------------------------------------- splits

StratifiedIndices stratified_indices(std::span<const int> labels, std::size_t n_classes, double fraction,
                                     std::uint64_t seed, std::string_view stream) {
  std::vector<std::vector<std::size_t>> rows(n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes)
      throw LabelError("label " + std::to_string(labels[i]) + " in row " + std::to_string(i) + " outside [0, " +
                       std::to_string(n_classes) + ")");
    rows[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  Rng base(seed, stream);
  StratifiedIndices out;
  for (std::size_t c = 0; c < n_classes; ++c) {
    auto& r = rows[c];
    auto rng = base.child(c);
    rng.shuffle(std::span(r));
    const auto n_hold = static_cast<std::size_t>(std::llround(static_cast<double>(r.size()) * fraction));
    out.holdout.insert(out.holdout.end(), r.begin(), r.begin() + static_cast<std::ptrdiff_t>(n_hold));
    out.keep.insert(out.keep.end(), r.begin() + static_cast<std::ptrdiff_t>(n_hold), r.end());
  }
  std::sort(out.keep.begin(), out.keep.end());
  std::sort(out.holdout.begin(), out.holdout.end());
  return out;
}

DatasetSplit stratified_split(const RawTable& table, const LabelVocab& vocab, double test_fraction,
                              std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("stratified_split: test_fraction must lie in (0, 1), got " + text::format_double(test_fraction));
  std::vector<std::size_t> counts(vocab.size(), 0);
  for (int l : table.labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= vocab.size())
      throw LabelError("stratified_split: label " + std::to_string(l) + " outside the vocabulary");
    ++counts[static_cast<std::size_t>(l)];
  }
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] < 5)
      throw DataError("stratified_split: class '" + vocab.name(c) + "' has " + std::to_string(counts[c]) +
                      " rows, at least 5 required");

  const auto idx = stratified_indices(table.labels, vocab.size(), test_fraction, seed, "split");
  DatasetSplit s;
  s.vocab = vocab;
  s.seed = seed;
  s.feature_names = table.feature_names;
  s.provenance = table.sources;
  const auto train_raw = table.features.gather(idx.keep);
  s.scaler = MinMaxScaler::fit(train_raw);
  s.train_x = s.scaler.transform(train_raw);
  s.test_x = s.scaler.transform(table.features.gather(idx.holdout));
  for (auto i : idx.keep) s.train_y.push_back(table.labels[i]);
  for (auto i : idx.holdout) s.test_y.push_back(table.labels[i]);
  return s;
}

Tensor to_model_input(const FeatureMatrix& rows, std::size_t expected_cols) {
  if (rows.cols != expected_cols)
    throw ShapeError("model input needs " + std::to_string(expected_cols) + " feature columns, got " +
                     std::to_string(rows.cols));
  if (rows.rows == 0) throw ShapeError("model input: no rows");
  return Tensor({rows.rows, 1, rows.cols}, rows.values);
}

FeatureMatrix flatten_input(const Tensor& x) {
  if (x.rank() != 3 || x.dim(1) != 1) throw ShapeError("flatten_input: expected [n, 1, L], got " + shape_str(x.shape()));
  FeatureMatrix m(x.dim(0), x.dim(2));
  m.values = x.values();
  return m;
}

RawTable make_gaussian_blobs(std::size_t n_classes, std::size_t per_class, std::size_t n_features,
                             double separation_sigma, std::uint64_t seed) {
  if (n_classes == 0 || per_class == 0 || n_features < n_classes)
    throw ConfigError("gaussian blobs: need n_features >= n_classes > 0 and per_class > 0");
  const std::size_t block = n_features / n_classes;
  RawTable t;
  t.features = FeatureMatrix(n_classes * per_class, n_features);
  t.devices = {"synthetic"};
  for (std::size_t j = 0; j < n_features; ++j) t.feature_names.push_back("f" + std::to_string(j));
  Rng rng(seed, "blobs");
  for (std::size_t c = 0; c < n_classes; ++c)
    for (std::size_t k = 0; k < per_class; ++k) {
      auto row = t.features.row(c * per_class + k);
      for (std::size_t j = 0; j < n_features; ++j) {
        const bool own = j >= c * block && j < (c + 1) * block;
        row[j] = rng.normal() + (own ? separation_sigma : 0.0);
      }
      t.labels.push_back(static_cast<int>(c));
      t.device.push_back(0);
    }
  return t;
}

// ---------------------------------------------------------------- artifact

namespace {

Tensor matrix_tensor(const FeatureMatrix& m) {
  if (m.rows == 0) return Tensor({1, std::max<std::size_t>(m.cols, 1)}, 0.0);
  return Tensor({m.rows, m.cols}, m.values);
}

Container::Ints to_ints(const std::vector<int>& v) { return {v.begin(), v.end()}; }

std::vector<int> from_ints(const Container::Ints& v) { return {v.begin(), v.end()}; }

FeatureMatrix matrix_from(const Tensor& t, std::size_t rows) {
  FeatureMatrix m(rows, t.dim(1));
  if (rows) m.values = t.values();
  return m;
}

} // namespace

void save_dataset(const fs::path& path, const DatasetSplit& s) {
  Container c("dataset");
  c.put("vocab", s.vocab.names());
  c.put("seed", Container::Ints{static_cast<std::int64_t>(s.seed)});
  c.put("feature_names", s.feature_names);
  c.put("provenance", s.provenance);
  c.put("scaler.min", Tensor({s.scaler.min.size()}, s.scaler.min));
  c.put("scaler.max", Tensor({s.scaler.max.size()}, s.scaler.max));
  c.put("train.x", matrix_tensor(s.train_x));
  c.put("train.y", to_ints(s.train_y));
  c.put("test.x", matrix_tensor(s.test_x));
  c.put("test.y", to_ints(s.test_y));
  c.write(path);
}

DatasetSplit load_dataset(const fs::path& path) {
  const auto c = Container::read(path, "dataset");
  DatasetSplit s;
  s.vocab = LabelVocab(c.strings("vocab"));
  const auto& seed = c.ints("seed");
  if (seed.size() != 1) throw FormatError("dataset seed record malformed");
  s.seed = static_cast<std::uint64_t>(seed[0]);
  s.feature_names = c.strings("feature_names");
  s.provenance = c.strings("provenance");
  s.scaler.min = c.tensor("scaler.min").values();
  s.scaler.max = c.tensor("scaler.max").values();
  s.train_y = from_ints(c.ints("train.y"));
  s.test_y = from_ints(c.ints("test.y"));
  s.train_x = matrix_from(c.tensor("train.x"), s.train_y.size());
  s.test_x = matrix_from(c.tensor("test.x"), s.test_y.size());
  if (s.train_x.rows * s.train_x.cols != s.train_x.values.size() ||
      s.test_x.rows * s.test_x.cols != s.test_x.values.size())
    throw FormatError("dataset feature matrices disagree with label counts");
  return s;
}

FeatureMatrix read_feature_csv(const fs::path& path, std::size_t expected_cols, std::vector<std::string>* header) {
  std::ifstream in(path);
  if (!in) throw PathError("cannot open '" + path.string() + "'");
  std::string line;
  FeatureMatrix m;
  m.cols = expected_cols;
  if (!std::getline(in, line)) return m; // empty file: no rows
  auto cols = split_header(strip_cr(line));
  if (cols.size() != expected_cols)
    throw DataError("'" + path.string() + "': header has " + std::to_string(cols.size()) + " columns, expected " +
                    std::to_string(expected_cols));
  if (header) *header = std::move(cols);
  std::vector<double> values(expected_cols);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(std::move(line));
    if (text::trim(line).empty()) continue;
    if (!parse_row(line, expected_cols, values.data()))
      throw DataError("'" + path.string() + "' line " + std::to_string(lineno) + ": expected " +
                      std::to_string(expected_cols) + " numeric cells");
    m.values.insert(m.values.end(), values.begin(), values.end());
    ++m.rows;
  }
  return m;
}

} // namespace nbids

#include "nbids/run_config.hpp"

#include "nbids/errors.hpp"
#include "nbids/text.hpp"

#include <fstream>
#include <sstream>

namespace nbids {

namespace {

std::size_t count_value(const std::string& key, const std::string& v, bool allow_zero) {
  const auto n = text::parse_int(v);
  if (!n || *n < 0 || (!allow_zero && *n == 0))
    throw ConfigError("config key '" + key + "': expected a " + (allow_zero ? "non-negative" : "positive") +
                      " integer, got '" + v + "'");
  return static_cast<std::size_t>(*n);
}

double real_value(const std::string& key, const std::string& v) {
  const auto d = text::parse_double(v);
  if (!d) throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  return *d;
}

bool bool_value(const std::string& key, const std::string& v) {
  const auto l = text::to_lower(v);
  if (l == "true" || l == "1" || l == "yes") return true;
  if (l == "false" || l == "0" || l == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

} // namespace

KeyValues parse_key_values(std::string_view content, const std::string& source) {
  KeyValues kv;
  std::size_t line_no = 0;
  for (auto line : text::split(content, '\n')) {
    ++line_no;
    line = text::trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    const auto key = std::string(text::trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
    kv[key] = std::string(text::trim(line.substr(eq + 1)));
  }
  return kv;
}

KeyValues read_key_value_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PathError("cannot read config file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_key_values(buf.str(), path.string());
}

KeyValues to_key_values(const RunConfig& cfg) {
  KeyValues kv = to_key_values(cfg.model);
  const auto& t = cfg.train;
  kv["batch_size"] = std::to_string(t.batch_size);
  kv["epochs"] = std::to_string(t.epochs);
  kv["early_stop_patience"] = std::to_string(t.early_stop_patience);
  kv["seed"] = std::to_string(t.seed);
  kv["shuffle"] = t.shuffle ? "true" : "false";
  kv["validation_fraction"] = text::format_double(t.validation_fraction);
  kv["learning_rate"] = text::format_double(t.learning_rate);
  kv["min_delta"] = text::format_double(t.min_delta);
  kv["bn_debias"] = t.bn_debias ? "true" : "false";
  kv["data_dir"] = cfg.data_dir;
  kv["device_filter"] = cfg.device_filter;
  kv["per_class"] = std::to_string(cfg.per_class);
  kv["test_fraction"] = text::format_double(cfg.test_fraction);
  return kv;
}

RunConfig apply_key_values(const RunConfig& base, const KeyValues& kv) {
  KeyValues merged = to_key_values(base);
  for (const auto& [k, v] : kv) {
    if (!merged.contains(k)) throw ConfigError("unknown config key '" + k + "'");
    merged[k] = v;
  }
  RunConfig cfg;
  cfg.model = model_config_from(merged);
  auto& t = cfg.train;
  t.batch_size = count_value("batch_size", merged["batch_size"], false);
  t.epochs = count_value("epochs", merged["epochs"], false);
  t.early_stop_patience = count_value("early_stop_patience", merged["early_stop_patience"], false);
  {
    const auto& v = merged["seed"];
    const auto n = text::parse_int(v);
    if (!n || *n < 0) throw ConfigError("config key 'seed': expected a non-negative integer, got '" + v + "'");
    t.seed = static_cast<std::uint64_t>(*n);
  }
  t.shuffle = bool_value("shuffle", merged["shuffle"]);
  t.validation_fraction = real_value("validation_fraction", merged["validation_fraction"]);
  t.learning_rate = real_value("learning_rate", merged["learning_rate"]);
  t.min_delta = real_value("min_delta", merged["min_delta"]);
  t.bn_debias = bool_value("bn_debias", merged["bn_debias"]);
  cfg.data_dir = merged["data_dir"];
  cfg.device_filter = merged["device_filter"];
  cfg.per_class = count_value("per_class", merged["per_class"], false);
  cfg.test_fraction = real_value("test_fraction", merged["test_fraction"]);
  validate(cfg.train);
  if (!(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0))
    throw ConfigError("config key 'test_fraction': must lie in (0, 1)");
  return cfg;
}

std::string render_key_values(const RunConfig& cfg) {
  std::string out = "# resolved run configuration\n";
  for (const auto& [k, v] : to_key_values(cfg)) out += k + " = " + v + "\n";
  return out;
}

void write_run_config(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw PathError("cannot open '" + path.string() + "' for writing");
  out << render_key_values(cfg);
}

RunConfig resolve_run_config(const std::filesystem::path* file, const KeyValues& overrides) {
  RunConfig cfg;
  if (file) cfg = apply_key_values(cfg, read_key_value_file(*file));
  return apply_key_values(cfg, overrides);
}

} // namespace nbids

#include "nbids/checkpoint.hpp"

#include "nbids/container.hpp"
#include "nbids/errors.hpp"

namespace nbids {

namespace {
constexpr const char* kKind = "checkpoint";
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const MinMaxScaler& scaler, const LabelVocab& vocab) {
  Container c(kKind);
  std::vector<std::string> keys, values;
  for (const auto& [k, v] : to_key_values(params.config)) {
    keys.push_back(k);
    values.push_back(v);
  }
  c.put("config.keys", keys);
  c.put("config.values", values);
  c.put("vocab", vocab.names());
  if (!scaler.min.empty()) {
    c.put("scaler.min", Tensor({scaler.min.size()}, scaler.min));
    c.put("scaler.max", Tensor({scaler.max.size()}, scaler.max));
  }
  std::vector<std::string> names;
  for (const auto& e : params.entries()) names.push_back(e.name);
  c.put("param_names", names);
  for (const auto& e : params.entries()) c.put("param." + e.name, *e.tensor);
  c.write(path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  const auto c = Container::read(path, kKind);
  const auto& keys = c.strings("config.keys");
  const auto& values = c.strings("config.values");
  if (keys.size() != values.size()) throw FormatError("checkpoint config keys and values disagree");
  std::map<std::string, std::string> kv;
  for (std::size_t i = 0; i < keys.size(); ++i) kv[keys[i]] = values[i];
  const ModelConfig stored = model_config_from(kv);

  // Shapes come from the config we validate against; the stored tensors must fit them.
  Checkpoint ck{build_model(expected.value_or(stored), 0), {}, LabelVocab(c.strings("vocab"))};
  for (auto& e : ck.params.entries()) {
    const auto record = "param." + e.name;
    if (!c.has(record)) throw ShapeError("checkpoint lacks tensor '" + e.name + "' required by the model config");
    const auto& t = c.tensor(record);
    if (t.shape() != e.tensor->shape())
      throw ShapeError("checkpoint tensor '" + e.name + "' has shape " + shape_str(t.shape()) +
                       ", model config expects " + shape_str(e.tensor->shape()));
    *e.tensor = t;
  }
  if (c.has("scaler.min")) {
    const auto& mn = c.tensor("scaler.min");
    const auto& mx = c.tensor("scaler.max");
    ck.scaler.min = mn.values();
    ck.scaler.max = mx.values();
  }
  return ck;
}

} // namespace nbids

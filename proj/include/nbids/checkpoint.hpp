#pragma once

#include "nbids/data.hpp"
#include "nbids/model.hpp"

#include <filesystem>
#include <optional>

namespace nbids {

struct Checkpoint {
  ModelParams params;
  MinMaxScaler scaler;
  LabelVocab vocab;
};

/// Writes every named tensor, the model config, scaler bounds and the
/// ordered vocabulary into one container of kind "checkpoint".
void save_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                     const MinMaxScaler& scaler, const LabelVocab& vocab);

/// Rebuilds the model from the stored config. With `expected` set, every
/// stored tensor must match the shape that config implies; a mismatch throws
/// ShapeError naming the tensor.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<ModelConfig>& expected = std::nullopt);

} // namespace nbids

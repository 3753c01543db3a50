#pragma once

// The CNN -> BiLSTM -> attention -> dense classifier. Each conv block is
// conv -> ReLU -> batchnorm -> maxpool -> dropout (batchnorm first when
// bn_before_activation is set). The final [C, T] feature map is read as a
// T-step sequence of C-dimensional vectors by the BiLSTM.

#include "nbids/ops.hpp"
#include "nbids/recurrent.hpp"
#include "nbids/tensor.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace nbids {

struct ConvBlockSpec {
  std::size_t filters = 0;
  std::size_t kernel = 0;
  friend bool operator==(const ConvBlockSpec&, const ConvBlockSpec&) = default;
};

struct ModelConfig {
  std::size_t input_len = 115;
  std::size_t input_channels = 1;
  std::vector<ConvBlockSpec> conv_blocks{{128, 5}, {256, 3}, {128, 3}};
  Padding padding = Padding::same;
  std::size_t pool_size = 2;
  std::size_t pool_stride = 2;
  double conv_dropout = 0.3;
  std::size_t lstm_hidden = 128;
  std::size_t attention_dk = 256;
  std::vector<std::size_t> dense_units{256, 128};
  double dense_dropout = 0.4;
  std::size_t n_classes = 10;
  bool bn_before_activation = false;
  double bn_momentum = 0.99;
  double bn_epsilon = 1e-5;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Sequence length after each conv block's pooling stage.
std::vector<std::size_t> derived_lengths(const ModelConfig& cfg);
void validate(const ModelConfig& cfg);

std::map<std::string, std::string> to_key_values(const ModelConfig& cfg);
/// Missing keys keep their defaults; unknown keys are ignored.
ModelConfig model_config_from(const std::map<std::string, std::string>& kv);

struct ConvBlock {
  ConvParams conv;
  BatchNormParams bn;
};

struct ParamRef {
  std::string name;
  Tensor* tensor;
  bool trainable;
};

struct ConstParamRef {
  std::string name;
  const Tensor* tensor;
  bool trainable;
};

struct ModelParams {
  ModelConfig config;
  std::vector<ConvBlock> blocks;
  LstmParams lstm;
  AttentionParams attention;
  std::vector<DenseParams> hidden;
  DenseParams head;

  /// Every tensor under a unique stable name, in a fixed order. Batchnorm
  /// running statistics are listed but not trainable.
  std::vector<ParamRef> entries();
  [[nodiscard]] std::vector<ConstParamRef> entries() const;
  [[nodiscard]] std::size_t parameter_count(bool trainable_only = true) const;
};

using ParamGrads = std::map<std::string, Tensor>;

ModelParams build_model(const ModelConfig& cfg, std::uint64_t seed);

struct ForwardOptions {
  Mode mode = Mode::infer;
  /// Keys the dropout masks of a train-mode pass.
  std::uint64_t dropout_seed = 0;
};

struct BlockCache {
  Conv1dCtx conv;
  Tensor pre_act;  ///< input to the ReLU
  BatchNormCtx bn;
  PoolResult pool;
  DropoutState drop;
};

struct DenseCache {
  Tensor input;
  Tensor pre_act;
  DropoutState drop;
};

struct ModelCache {
  bool valid = false;
  Mode mode = Mode::infer;
  std::vector<BlockCache> blocks;
  BiLstmOutput lstm;
  AttentionOutput attention;
  std::vector<DenseCache> hidden;
  Tensor head_input;
  Tensor logits;
};

struct ForwardResult {
  Tensor logits; ///< [B, n_classes]
  Tensor probs;  ///< softmax(logits)
  ModelCache cache;
  /// Output shape of each conv block (after dropout) and of the BiLSTM sequence.
  std::vector<Shape> block_shapes;
  Shape sequence_shape;
  /// Updated batchnorm running (mean, var) per block; train mode only.
  std::vector<std::pair<Tensor, Tensor>> bn_running;
  /// Batch (mean, unbiased var) per block; train mode only.
  std::vector<std::pair<Tensor, Tensor>> bn_batch;
};

ForwardResult model_forward(const ModelParams& p, const Tensor& x, const ForwardOptions& opts = {});

/// Commits the batchnorm running statistics produced by a train-mode forward.
void apply_running_stats(ModelParams& p, const ForwardResult& fwd);

struct BackwardResult {
  double loss = 0.0;
  ParamGrads grads;
};

BackwardResult model_backward(const ModelParams& p, const ModelCache& cache,
                              std::span<const int> labels);
/// Backward from an explicit dL/dlogits.
ParamGrads model_backward_from_logits(const ModelParams& p, const ModelCache& cache,
                                      const Tensor& dlogits);

} // namespace nbids

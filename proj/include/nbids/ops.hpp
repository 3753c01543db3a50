#pragma once

// Differentiable primitives. Each forward fills an optional context that the
// matching backward consumes; calling backward with an empty context throws
// UsageError. Rank-3 inputs are [batch, channels, length]; the conv and pool
// ops also accept a single rank-2 sample [channels, length].

#include "nbids/tensor.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace nbids {

enum class Mode { train, infer };
enum class Padding { valid, same };
enum class Activation { relu, tanh, sigmoid };

// ---------------------------------------------------------------- conv1d

struct ConvParams {
  Tensor kernels; ///< [out_channels, in_channels, kernel_size]
  Tensor bias;    ///< [out_channels]
  std::size_t stride = 1;
  Padding padding = Padding::same;

  [[nodiscard]] std::size_t out_channels() const { return kernels.dim(0); }
  [[nodiscard]] std::size_t in_channels() const { return kernels.dim(1); }
  [[nodiscard]] std::size_t kernel_size() const { return kernels.dim(2); }
};

/// Output length of a conv over `length` steps.
std::size_t conv_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                               Padding padding);

struct Conv1dCtx {
  bool valid = false;
  bool batched = false;
  std::size_t batch = 0, length = 0, out_length = 0, pad_left = 0;
  Shape input_shape;
  /// im2col matrix [in_channels * kernel, batch * out_length]
  std::vector<double> cols;
};

Tensor conv1d_forward(const Tensor& x, const ConvParams& p, Conv1dCtx* ctx = nullptr);

struct Conv1dGrads {
  Tensor dx, dw, db;
};
Conv1dGrads conv1d_backward(const Conv1dCtx& ctx, const ConvParams& p, const Tensor& dy);

// ---------------------------------------------------------------- maxpool

/// Number of windows with ceil semantics: a trailing partial window is kept.
std::size_t pool_output_length(std::size_t length, std::size_t pool, std::size_t stride);

struct PoolResult {
  Tensor y;
  /// Position along the length axis of each window's maximum, same layout as y.
  std::vector<std::size_t> argmax;
  Shape input_shape;
  Shape output_shape;
};

PoolResult maxpool1d(const Tensor& x, std::size_t pool, std::size_t stride);
Tensor maxpool1d_backward(const PoolResult& fwd, const Tensor& dy);

// ---------------------------------------------------------------- batchnorm

struct BatchNormParams {
  Tensor gamma, beta;                 ///< [channels]
  Tensor running_mean, running_var;   ///< [channels]
  double momentum = 0.99;
  double epsilon = 1e-5;

  static BatchNormParams identity(std::size_t channels);
};

struct BatchNormCtx {
  bool valid = false;
  Mode mode = Mode::infer;
  std::size_t batch = 0, channels = 0, length = 0;
  Tensor xhat;
  std::vector<double> inv_std;
};

struct BatchNormResult {
  Tensor y;
  BatchNormCtx ctx;
  /// Momentum-updated running statistics (train mode); copies of the inputs otherwise.
  Tensor running_mean, running_var;
  /// Per-channel batch mean and unbiased batch variance; train mode only.
  Tensor batch_mean, batch_var;
};

BatchNormResult batchnorm1d(const Tensor& x, const BatchNormParams& p, Mode mode);

struct BatchNormGrads {
  Tensor dx, dgamma, dbeta;
};
BatchNormGrads batchnorm1d_backward(const BatchNormCtx& ctx, const BatchNormParams& p,
                                    const Tensor& dy);

// ---------------------------------------------------------------- elementwise

Tensor activate(Activation kind, const Tensor& x);
/// Derivative evaluated at the cached forward input x; relu'(0) = 0.
Tensor activation_backward(Activation kind, const Tensor& x, const Tensor& dy);

/// Softmax along the last axis with max subtraction.
Tensor softmax(const Tensor& x);
Tensor softmax_backward(const Tensor& y, const Tensor& dy);

struct DropoutState {
  double rate = 0.0;
  std::uint64_t rng_seed = 0;
  /// Values in {0, 1/(1-rate)}; set by a train-mode forward.
  std::optional<Tensor> mask;
};

Tensor dropout(const Tensor& x, DropoutState& s, Mode mode);
Tensor dropout_backward(const DropoutState& s, const Tensor& dy);

// ---------------------------------------------------------------- dense

struct DenseParams {
  Tensor W; ///< [n_in, n_out]
  Tensor b; ///< [n_out]
};

Tensor dense(const Tensor& x, const DenseParams& p);

struct DenseGrads {
  Tensor dx, dW, db;
};
DenseGrads dense_backward(const Tensor& x, const DenseParams& p, const Tensor& dy);

// ---------------------------------------------------------------- loss

struct LossResult {
  double loss = 0.0;
  Tensor dlogits;
  Tensor probs;
};

/// Mean negative log-likelihood of integer labels under softmax(logits).
LossResult sparse_ce_loss(const Tensor& logits, std::span<const int> labels);

} // namespace nbids

#pragma once

// Bidirectional LSTM encoder and single-query key/value attention pooling,
// both with hand-written backward passes. Sequences are [T, D] for a single
// sample or [B, T, D] for a batch; outputs follow the same rank.

#include "nbids/tensor.hpp"

#include <vector>

namespace nbids {

class Rng;

/// One direction of the LSTM. Gate blocks are stacked in the order
/// input, forget, cell, output along the 4H axis.
struct LstmDirection {
  Tensor W_x; ///< [4H, input_dim]
  Tensor W_h; ///< [4H, H]
  Tensor b;   ///< [4H]

  [[nodiscard]] std::size_t hidden() const { return W_h.dim(1); }
  [[nodiscard]] std::size_t input_dim() const { return W_x.dim(1); }
};

struct LstmParams {
  LstmDirection forward;
  LstmDirection backward;

  [[nodiscard]] std::size_t hidden() const { return forward.hidden(); }
  [[nodiscard]] std::size_t input_dim() const { return forward.input_dim(); }
};

/// Glorot-uniform weights, zero biases except the forget block (1.0).
LstmParams init_lstm(std::size_t input_dim, std::size_t hidden, Rng& rng);
void validate(const LstmParams& p);

struct CellCache {
  Tensor x, h_prev, c_prev;
  /// Post-nonlinearity gate values [4H] in i, f, g, o order.
  Tensor gates;
  Tensor c, tanh_c;
};

struct CellOutput {
  Tensor h, c;
  CellCache cache;
};

CellOutput lstm_cell(const Tensor& x_t, const Tensor& h_prev, const Tensor& c_prev,
                     const LstmDirection& p);

struct CellGrads {
  Tensor dx, dh_prev, dc_prev;
  Tensor dW_x, dW_h, db;
};

CellGrads lstm_cell_backward(const CellCache& cache, const LstmDirection& p, const Tensor& dh,
                             const Tensor& dc);

/// Per-direction BPTT record, rows laid out as [B * T] in processing order.
struct DirectionCache {
  std::vector<double> gates;  ///< [T][B][4H], post-nonlinearity
  std::vector<double> c;      ///< [T][B][H]
  std::vector<double> tanh_c; ///< [T][B][H]
  std::vector<double> h;      ///< [T][B][H]
};

struct BiLstmOutput {
  /// [T, 2H] or [B, T, 2H]; row t is [h_t^fwd | h_t^bwd].
  Tensor H_seq;
  bool valid = false;
  bool batched = false;
  Tensor input; ///< forward input as [B, T, D]
  DirectionCache fwd, bwd;
};

BiLstmOutput bilstm_forward(const Tensor& x_seq, const LstmParams& p);

struct LstmGrads {
  Tensor dW_x, dW_h, db;
};

struct BiLstmGrads {
  Tensor dx;
  LstmGrads forward, backward;
};

BiLstmGrads bilstm_backward(const BiLstmOutput& ctx, const LstmParams& p, const Tensor& dH_seq);

// ---------------------------------------------------------------- attention

struct AttentionParams {
  Tensor W_a; ///< [2H, d_k] key projection
  Tensor q;   ///< [d_k] learned query

  [[nodiscard]] std::size_t dk() const { return q.dim(0); }
};

AttentionParams init_attention(std::size_t value_dim, std::size_t dk, Rng& rng);

struct AttentionCtx {
  bool valid = false;
  bool batched = false;
  std::size_t batch = 0, steps = 0, width = 0;
  Tensor V; ///< [B, T, 2H]
  Tensor K; ///< [B * T, d_k]
};

struct AttentionOutput {
  Tensor a; ///< [2H] or [B, 2H]
  Tensor d; ///< [T] or [B, T]
  AttentionCtx ctx;
};

/// K = tanh(V W_a), d = softmax(q K^T), a = d V. No 1/sqrt(d_k) scaling.
AttentionOutput attention_forward(const Tensor& V, const AttentionParams& p);

struct AttentionGrads {
  Tensor dV, dW_a, dq;
};

AttentionGrads attention_backward(const AttentionOutput& fwd, const AttentionParams& p,
                                  const Tensor& da);

/// Glorot-uniform fill for a weight matrix with the given fan in/out.
void glorot_uniform(Tensor& w, std::size_t fan_in, std::size_t fan_out, Rng& rng);

} // namespace nbids

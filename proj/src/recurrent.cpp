#include "nbids/recurrent.hpp"

#include "nbids/errors.hpp"
#include "nbids/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace nbids {

namespace {

double sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

// Applies the gate nonlinearities in place to a [rows, 4H] pre-activation block.
void gate_nonlinearity(double* pre, std::size_t rows, std::size_t H) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* z = pre + r * 4 * H;
    for (std::size_t j = 0; j < H; ++j) {
      z[j] = sigmoid(z[j]);
      z[H + j] = sigmoid(z[H + j]);
      z[2 * H + j] = std::tanh(z[2 * H + j]);
      z[3 * H + j] = sigmoid(z[3 * H + j]);
    }
  }
}

void check_direction(const LstmDirection& d, const char* which) {
  if (d.W_x.rank() != 2 || d.W_h.rank() != 2 || d.b.rank() != 1)
    throw ShapeError(std::string("lstm ") + which + ": weights must be matrices and bias a vector");
  const std::size_t H = d.W_h.dim(1);
  if (d.W_h.dim(0) != 4 * H || d.W_x.dim(0) != 4 * H || d.b.dim(0) != 4 * H)
    throw ShapeError(std::string("lstm ") + which + ": W_x " + shape_str(d.W_x.shape()) + ", W_h " +
                     shape_str(d.W_h.shape()) + ", b " + shape_str(d.b.shape()) +
                     " inconsistent with 4H gate blocks");
}

struct Btd {
  std::size_t B, T, D;
};

Btd as_btd(const Tensor& x, const char* op) {
  if (x.rank() == 3) return {x.dim(0), x.dim(1), x.dim(2)};
  if (x.rank() == 2) return {1, x.dim(0), x.dim(1)};
  throw ShapeError(std::string(op) + ": expected [T, D] or [B, T, D], got " + shape_str(x.shape()));
}

void run_direction(const Tensor& X, std::size_t B, std::size_t T, const LstmDirection& p,
                   bool reversed, std::size_t offset, Tensor& H_seq, DirectionCache& cache) {
  const std::size_t D = p.input_dim(), H = p.hidden(), G = 4 * H;
  std::vector<double> xw(B * T * G);
  gemm(false, true, B * T, G, D, 1.0, X.data().data(), p.W_x.data().data(), 0.0, xw.data());

  cache.gates.assign(T * B * G, 0.0);
  cache.c.assign(T * B * H, 0.0);
  cache.tanh_c.assign(T * B * H, 0.0);
  cache.h.assign(T * B * H, 0.0);
  std::vector<double> zeros(B * H, 0.0);
  auto hs = H_seq.data();

  for (std::size_t s = 0; s < T; ++s) {
    const std::size_t t = reversed ? T - 1 - s : s;
    const double* h_prev = s == 0 ? zeros.data() : cache.h.data() + (s - 1) * B * H;
    const double* c_prev = s == 0 ? zeros.data() : cache.c.data() + (s - 1) * B * H;
    double* z = cache.gates.data() + s * B * G;
    for (std::size_t b = 0; b < B; ++b) {
      const double* src = xw.data() + (b * T + t) * G;
      for (std::size_t k = 0; k < G; ++k) z[b * G + k] = src[k] + p.b[k];
    }
    if (s > 0) gemm(false, true, B, G, H, 1.0, h_prev, p.W_h.data().data(), 1.0, z);
    gate_nonlinearity(z, B, H);
    double* c = cache.c.data() + s * B * H;
    double* tc = cache.tanh_c.data() + s * B * H;
    double* h = cache.h.data() + s * B * H;
    for (std::size_t b = 0; b < B; ++b) {
      const double* zg = z + b * G;
      for (std::size_t j = 0; j < H; ++j) {
        const std::size_t k = b * H + j;
        c[k] = zg[H + j] * c_prev[k] + zg[j] * zg[2 * H + j];
        tc[k] = std::tanh(c[k]);
        h[k] = zg[3 * H + j] * tc[k];
        hs[(b * T + t) * 2 * H + offset + j] = h[k];
      }
    }
  }
}

void backprop_direction(const Tensor& X, std::size_t B, std::size_t T, const LstmDirection& p,
                        bool reversed, std::size_t offset, const DirectionCache& cache,
                        const Tensor& dH_seq, Tensor& dX, LstmGrads& grads) {
  const std::size_t D = p.input_dim(), H = p.hidden(), G = 4 * H;
  std::vector<double> dpre(B * T * G, 0.0);   // rows b*T + t
  std::vector<double> hprev(B * T * H, 0.0);  // rows b*T + t
  std::vector<double> dh_next(B * H, 0.0), dc_next(B * H, 0.0), dz(B * G);
  const auto dHs = dH_seq.data();

  for (std::size_t s = T; s-- > 0;) {
    const std::size_t t = reversed ? T - 1 - s : s;
    const double* z = cache.gates.data() + s * B * G;
    const double* tc = cache.tanh_c.data() + s * B * H;
    const double* c_prev = s == 0 ? nullptr : cache.c.data() + (s - 1) * B * H;
    const double* h_prev = s == 0 ? nullptr : cache.h.data() + (s - 1) * B * H;
    for (std::size_t b = 0; b < B; ++b) {
      const double* zg = z + b * G;
      double* dzg = dz.data() + b * G;
      for (std::size_t j = 0; j < H; ++j) {
        const std::size_t k = b * H + j;
        const double i = zg[j], f = zg[H + j], g = zg[2 * H + j], o = zg[3 * H + j];
        const double dh = dHs[(b * T + t) * 2 * H + offset + j] + dh_next[k];
        const double dc = dc_next[k] + dh * o * (1.0 - tc[k] * tc[k]);
        const double cp = c_prev ? c_prev[k] : 0.0;
        dzg[j] = dc * g * i * (1.0 - i);
        dzg[H + j] = dc * cp * f * (1.0 - f);
        dzg[2 * H + j] = dc * i * (1.0 - g * g);
        dzg[3 * H + j] = dh * tc[k] * o * (1.0 - o);
        dc_next[k] = dc * f;
        if (h_prev) hprev[(b * T + t) * H + j] = h_prev[k];
      }
      std::copy_n(dzg, G, dpre.data() + (b * T + t) * G);
    }
    gemm(false, false, B, H, G, 1.0, dz.data(), p.W_h.data().data(), 0.0, dh_next.data());
  }

  grads.dW_x = Tensor(p.W_x.shape());
  grads.dW_h = Tensor(p.W_h.shape());
  grads.db = Tensor(p.b.shape());
  gemm(true, false, G, D, B * T, 1.0, dpre.data(), X.data().data(), 0.0, grads.dW_x.data().data());
  gemm(true, false, G, H, B * T, 1.0, dpre.data(), hprev.data(), 0.0, grads.dW_h.data().data());
  for (std::size_t r = 0; r < B * T; ++r)
    for (std::size_t k = 0; k < G; ++k) grads.db[k] += dpre[r * G + k];
  gemm(false, false, B * T, D, G, 1.0, dpre.data(), p.W_x.data().data(), 1.0, dX.data().data());
}

} // namespace

void glorot_uniform(Tensor& w, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : w.data()) v = rng.uniform(-limit, limit);
}

LstmParams init_lstm(std::size_t input_dim, std::size_t hidden, Rng& rng) {
  if (input_dim == 0 || hidden == 0) throw ConfigError("lstm: input_dim and hidden must be positive");
  auto make = [&](Rng r) {
    LstmDirection d{Tensor({4 * hidden, input_dim}), Tensor({4 * hidden, hidden}),
                    Tensor({4 * hidden}, 0.0)};
    auto rx = r.child("W_x");
    auto rh = r.child("W_h");
    glorot_uniform(d.W_x, input_dim, 4 * hidden, rx);
    glorot_uniform(d.W_h, hidden, 4 * hidden, rh);
    for (std::size_t j = hidden; j < 2 * hidden; ++j) d.b[j] = 1.0;
    return d;
  };
  return {make(rng.child("forward")), make(rng.child("backward"))};
}

void validate(const LstmParams& p) {
  check_direction(p.forward, "forward");
  check_direction(p.backward, "backward");
  if (p.forward.W_x.shape() != p.backward.W_x.shape() || p.forward.W_h.shape() != p.backward.W_h.shape())
    throw ShapeError("lstm: forward and backward directions differ in shape");
}

CellOutput lstm_cell(const Tensor& x_t, const Tensor& h_prev, const Tensor& c_prev,
                     const LstmDirection& p) {
  check_direction(p, "cell");
  const std::size_t H = p.hidden(), D = p.input_dim(), G = 4 * H;
  require_shape(x_t, {D}, "lstm_cell x_t");
  require_shape(h_prev, {H}, "lstm_cell h_prev");
  require_shape(c_prev, {H}, "lstm_cell c_prev");
  CellOutput out{Tensor({H}), Tensor({H}), {x_t, h_prev, c_prev, Tensor({G}), Tensor({H}), Tensor({H})}};
  auto z = out.cache.gates.data();
  std::copy(p.b.data().begin(), p.b.data().end(), z.begin());
  gemm(false, true, 1, G, D, 1.0, x_t.data().data(), p.W_x.data().data(), 1.0, z.data());
  gemm(false, true, 1, G, H, 1.0, h_prev.data().data(), p.W_h.data().data(), 1.0, z.data());
  gate_nonlinearity(z.data(), 1, H);
  for (std::size_t j = 0; j < H; ++j) {
    out.c[j] = z[H + j] * c_prev[j] + z[j] * z[2 * H + j];
    out.cache.tanh_c[j] = std::tanh(out.c[j]);
    out.h[j] = z[3 * H + j] * out.cache.tanh_c[j];
  }
  out.cache.c = out.c;
  return out;
}

CellGrads lstm_cell_backward(const CellCache& cache, const LstmDirection& p, const Tensor& dh,
                             const Tensor& dc_in) {
  if (cache.gates.empty()) throw UsageError("lstm_cell_backward: missing forward cache");
  const std::size_t H = p.hidden(), D = p.input_dim(), G = 4 * H;
  require_shape(dh, {H}, "lstm_cell_backward dh");
  require_shape(dc_in, {H}, "lstm_cell_backward dc");
  CellGrads g{Tensor({D}), Tensor({H}), Tensor({H}), Tensor(p.W_x.shape()), Tensor(p.W_h.shape()),
              Tensor({G})};
  const auto z = cache.gates.data();
  for (std::size_t j = 0; j < H; ++j) {
    const double i = z[j], f = z[H + j], gg = z[2 * H + j], o = z[3 * H + j];
    const double tc = cache.tanh_c[j];
    const double dc = dc_in[j] + dh[j] * o * (1.0 - tc * tc);
    g.db[j] = dc * gg * i * (1.0 - i);
    g.db[H + j] = dc * cache.c_prev[j] * f * (1.0 - f);
    g.db[2 * H + j] = dc * i * (1.0 - gg * gg);
    g.db[3 * H + j] = dh[j] * tc * o * (1.0 - o);
    g.dc_prev[j] = dc * f;
  }
  // Pre-activation gradients double as db; outer products give the weights.
  gemm(true, false, G, D, 1, 1.0, g.db.data().data(), cache.x.data().data(), 0.0, g.dW_x.data().data());
  gemm(true, false, G, H, 1, 1.0, g.db.data().data(), cache.h_prev.data().data(), 0.0,
       g.dW_h.data().data());
  gemm(false, false, 1, D, G, 1.0, g.db.data().data(), p.W_x.data().data(), 0.0, g.dx.data().data());
  gemm(false, false, 1, H, G, 1.0, g.db.data().data(), p.W_h.data().data(), 0.0,
       g.dh_prev.data().data());
  return g;
}

BiLstmOutput bilstm_forward(const Tensor& x_seq, const LstmParams& p) {
  validate(p);
  if (x_seq.empty()) throw ShapeError("bilstm_forward: empty sequence");
  const auto [B, T, D] = as_btd(x_seq, "bilstm_forward");
  if (D != p.input_dim())
    throw ShapeError("bilstm_forward: input_dim " + std::to_string(D) + " but weights expect " +
                     std::to_string(p.input_dim()));
  const std::size_t H = p.hidden();
  BiLstmOutput out;
  out.batched = x_seq.rank() == 3;
  out.input = x_seq.reshaped({B, T, D});
  Tensor hs({B, T, 2 * H});
  run_direction(out.input, B, T, p.forward, false, 0, hs, out.fwd);
  run_direction(out.input, B, T, p.backward, true, H, hs, out.bwd);
  out.H_seq = out.batched ? std::move(hs) : hs.reshaped({T, 2 * H});
  out.valid = true;
  return out;
}

BiLstmGrads bilstm_backward(const BiLstmOutput& ctx, const LstmParams& p, const Tensor& dH_seq) {
  if (!ctx.valid) throw UsageError("bilstm_backward: missing forward cache");
  const std::size_t B = ctx.input.dim(0), T = ctx.input.dim(1), D = ctx.input.dim(2);
  const std::size_t H = p.hidden();
  require_shape(dH_seq, ctx.batched ? Shape{B, T, 2 * H} : Shape{T, 2 * H}, "bilstm_backward dL/dH");
  const Tensor dH = dH_seq.reshaped({B, T, 2 * H});
  BiLstmGrads g;
  Tensor dX({B, T, D});
  backprop_direction(ctx.input, B, T, p.forward, false, 0, ctx.fwd, dH, dX, g.forward);
  backprop_direction(ctx.input, B, T, p.backward, true, H, ctx.bwd, dH, dX, g.backward);
  g.dx = ctx.batched ? std::move(dX) : dX.reshaped({T, D});
  return g;
}

// ---------------------------------------------------------------- attention

AttentionParams init_attention(std::size_t value_dim, std::size_t dk, Rng& rng) {
  if (value_dim == 0 || dk == 0) throw ConfigError("attention: dimensions must be positive");
  AttentionParams p{Tensor({value_dim, dk}), Tensor({dk})};
  auto rw = rng.child("W_a");
  auto rq = rng.child("q");
  glorot_uniform(p.W_a, value_dim, dk, rw);
  // q is a [d_k, 1] projection in spirit
  glorot_uniform(p.q, dk, 1, rq);
  return p;
}

AttentionOutput attention_forward(const Tensor& V, const AttentionParams& p) {
  const auto [B, T, W] = as_btd(V, "attention_forward");
  if (p.W_a.rank() != 2 || p.q.rank() != 1 || p.W_a.dim(1) != p.q.dim(0))
    throw ShapeError("attention_forward: W_a " + shape_str(p.W_a.shape()) + " and q " +
                     shape_str(p.q.shape()) + " disagree");
  if (W != p.W_a.dim(0))
    throw ShapeError("attention_forward: V width " + std::to_string(W) + " but W_a has " +
                     std::to_string(p.W_a.dim(0)) + " rows");
  const std::size_t dk = p.dk();
  AttentionOutput out;
  out.ctx.batched = V.rank() == 3;
  out.ctx.batch = B;
  out.ctx.steps = T;
  out.ctx.width = W;
  out.ctx.V = V.reshaped({B, T, W});
  out.ctx.K = Tensor({B * T, dk});
  auto Ks = out.ctx.K.data();
  gemm(false, false, B * T, dk, W, 1.0, V.data().data(), p.W_a.data().data(), 0.0, Ks.data());
  for (auto& k : Ks) k = std::tanh(k);

  Tensor d({B, T});
  Tensor a({B, W});
  const auto vs = V.data();
  for (std::size_t b = 0; b < B; ++b) {
    double* dr = d.data().data() + b * T;
    for (std::size_t t = 0; t < T; ++t) {
      double s = 0.0;
      const double* k = Ks.data() + (b * T + t) * dk;
      for (std::size_t j = 0; j < dk; ++j) s += k[j] * p.q[j];
      dr[t] = s;
    }
    const double m = *std::max_element(dr, dr + T);
    double sum = 0.0;
    for (std::size_t t = 0; t < T; ++t) sum += (dr[t] = std::exp(dr[t] - m));
    for (std::size_t t = 0; t < T; ++t) dr[t] /= sum;
    for (std::size_t t = 0; t < T; ++t) {
      const double* v = vs.data() + (b * T + t) * W;
      for (std::size_t j = 0; j < W; ++j) a(b, j) += dr[t] * v[j];
    }
  }
  out.a = out.ctx.batched ? std::move(a) : a.reshaped({W});
  out.d = out.ctx.batched ? std::move(d) : d.reshaped({T});
  out.ctx.valid = true;
  return out;
}

AttentionGrads attention_backward(const AttentionOutput& fwd, const AttentionParams& p,
                                  const Tensor& da_in) {
  const auto& ctx = fwd.ctx;
  if (!ctx.valid) throw UsageError("attention_backward: missing forward cache");
  const std::size_t B = ctx.batch, T = ctx.steps, W = ctx.width, dk = p.dk();
  require_shape(da_in, ctx.batched ? Shape{B, W} : Shape{W}, "attention_backward dL/da");
  const auto vs = ctx.V.data();
  const auto Ks = ctx.K.data();
  const auto ds = fwd.d.data();
  const auto das = da_in.data();

  AttentionGrads g{Tensor({B, T, W}), Tensor(p.W_a.shape()), Tensor(p.q.shape())};
  auto dV = g.dV.data();
  Tensor dZ({B * T, dk});
  auto dz = dZ.data();
  std::vector<double> dd(T);
  for (std::size_t b = 0; b < B; ++b) {
    const double* da = das.data() + b * W;
    const double* d = ds.data() + b * T;
    // a = sum_t d_t V_t
    double dot = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      const double* v = vs.data() + (b * T + t) * W;
      double* dv = dV.data() + (b * T + t) * W;
      double s = 0.0;
      for (std::size_t j = 0; j < W; ++j) {
        dv[j] = d[t] * da[j];
        s += da[j] * v[j];
      }
      dd[t] = s;
      dot += d[t] * s;
    }
    // softmax, then score_t = q . K_t, then K = tanh(Z)
    for (std::size_t t = 0; t < T; ++t) {
      const double dscore = d[t] * (dd[t] - dot);
      const double* k = Ks.data() + (b * T + t) * dk;
      double* z = dz.data() + (b * T + t) * dk;
      for (std::size_t j = 0; j < dk; ++j) {
        g.dq[j] += dscore * k[j];
        z[j] = dscore * p.q[j] * (1.0 - k[j] * k[j]);
      }
    }
  }
  gemm(true, false, W, dk, B * T, 1.0, vs.data(), dz.data(), 0.0, g.dW_a.data().data());
  gemm(false, true, B * T, W, dk, 1.0, dz.data(), p.W_a.data().data(), 1.0, dV.data());
  if (!ctx.batched) g.dV = g.dV.reshaped({T, W});
  return g;
}

} // namespace nbids

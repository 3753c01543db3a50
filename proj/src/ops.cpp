#include "nbids/ops.hpp"

#include "nbids/errors.hpp"
#include "nbids/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace nbids {

namespace {

struct Bcl {
  std::size_t batch, channels, length;
  bool batched;
};

Bcl as_bcl(const Tensor& x, const char* op) {
  if (x.rank() == 3) return {x.dim(0), x.dim(1), x.dim(2), true};
  if (x.rank() == 2) return {1, x.dim(0), x.dim(1), false};
  throw ShapeError(std::string(op) + ": expected [C, L] or [B, C, L], got " + shape_str(x.shape()));
}

double sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

} // namespace

// ---------------------------------------------------------------- conv1d

std::size_t conv_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                               Padding padding) {
  if (stride == 0 || kernel == 0) throw ConfigError("conv: kernel and stride must be positive");
  if (padding == Padding::same) return (length + stride - 1) / stride;
  if (length < kernel) return 0;
  return (length - kernel) / stride + 1;
}

Tensor conv1d_forward(const Tensor& x, const ConvParams& p, Conv1dCtx* ctx) {
  const auto [B, C, L, batched_in] = as_bcl(x, "conv1d_forward");
  if (p.kernels.rank() != 3 || p.bias.rank() != 1 || p.bias.dim(0) != p.kernels.dim(0))
    throw ShapeError("conv1d_forward: kernels " + shape_str(p.kernels.shape()) + " and bias " +
                     shape_str(p.bias.shape()) + " disagree");
  if (C != p.in_channels())
    throw ShapeError("conv1d_forward: input has " + std::to_string(C) + " channels, kernels expect " +
                     std::to_string(p.in_channels()));
  const std::size_t K = p.kernel_size();
  const std::size_t S = p.stride;
  const std::size_t Cout = p.out_channels();
  const std::size_t Lout = conv_output_length(L, K, S, p.padding);
  if (Lout == 0)
    throw ShapeError("conv1d_forward: input length " + std::to_string(L) +
                     " shorter than kernel " + std::to_string(K) + " under valid padding");
  std::size_t pad_left = 0;
  if (p.padding == Padding::same) {
    const std::size_t needed = (Lout - 1) * S + K;
    pad_left = needed > L ? (needed - L) / 2 : 0;
  }

  const std::size_t rows = C * K;
  const std::size_t ncols = B * Lout;
  std::vector<double> cols(rows * ncols, 0.0);
  const auto xs = x.data();
  for (std::size_t ci = 0; ci < C; ++ci)
    for (std::size_t tau = 0; tau < K; ++tau) {
      double* row = cols.data() + (ci * K + tau) * ncols;
      for (std::size_t b = 0; b < B; ++b) {
        const double* xin = xs.data() + (b * C + ci) * L;
        for (std::size_t t = 0; t < Lout; ++t) {
          const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * S + tau) -
                                     static_cast<std::ptrdiff_t>(pad_left);
          if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(L)) row[b * Lout + t] = xin[pos];
        }
      }
    }

  std::vector<double> out(Cout * ncols);
  gemm(false, false, Cout, ncols, rows, 1.0, p.kernels.data().data(), cols.data(), 0.0, out.data());

  Tensor y(x.rank() == 3 ? Shape{B, Cout, Lout} : Shape{Cout, Lout});
  auto ys = y.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < Cout; ++j) {
      const double bj = p.bias[j];
      const double* src = out.data() + j * ncols + b * Lout;
      double* dst = ys.data() + (b * Cout + j) * Lout;
      for (std::size_t t = 0; t < Lout; ++t) dst[t] = src[t] + bj;
    }

  if (ctx) {
    ctx->valid = true;
    ctx->batched = x.rank() == 3;
    ctx->batch = B;
    ctx->length = L;
    ctx->out_length = Lout;
    ctx->pad_left = pad_left;
    ctx->input_shape = x.shape();
    ctx->cols = std::move(cols);
  }
  return y;
}

Conv1dGrads conv1d_backward(const Conv1dCtx& ctx, const ConvParams& p, const Tensor& dy) {
  if (!ctx.valid) throw UsageError("conv1d_backward: missing forward context");
  const std::size_t B = ctx.batch, L = ctx.length, Lout = ctx.out_length;
  const std::size_t C = p.in_channels(), K = p.kernel_size(), S = p.stride;
  const std::size_t Cout = p.out_channels();
  require_shape(dy, ctx.batched ? Shape{B, Cout, Lout} : Shape{Cout, Lout}, "conv1d_backward dL/dy");

  const std::size_t rows = C * K;
  const std::size_t ncols = B * Lout;
  // dy as [Cout, B*Lout]
  std::vector<double> dym(Cout * ncols);
  const auto dys = dy.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < Cout; ++j)
      std::copy_n(dys.data() + (b * Cout + j) * Lout, Lout, dym.data() + j * ncols + b * Lout);

  Conv1dGrads g{Tensor(ctx.input_shape), Tensor(p.kernels.shape()), Tensor(p.bias.shape())};
  gemm(false, true, Cout, rows, ncols, 1.0, dym.data(), ctx.cols.data(), 0.0, g.dw.data().data());
  for (std::size_t j = 0; j < Cout; ++j) {
    double s = 0.0;
    const double* r = dym.data() + j * ncols;
    for (std::size_t c = 0; c < ncols; ++c) s += r[c];
    g.db[j] = s;
  }

  std::vector<double> dcols(rows * ncols);
  gemm(true, false, rows, ncols, Cout, 1.0, p.kernels.data().data(), dym.data(), 0.0, dcols.data());
  auto dxs = g.dx.data();
  for (std::size_t ci = 0; ci < C; ++ci)
    for (std::size_t tau = 0; tau < K; ++tau) {
      const double* row = dcols.data() + (ci * K + tau) * ncols;
      for (std::size_t b = 0; b < B; ++b) {
        double* dxin = dxs.data() + (b * C + ci) * L;
        for (std::size_t t = 0; t < Lout; ++t) {
          const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(t * S + tau) -
                                     static_cast<std::ptrdiff_t>(ctx.pad_left);
          if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(L)) dxin[pos] += row[b * Lout + t];
        }
      }
    }
  return g;
}

// ---------------------------------------------------------------- maxpool

std::size_t pool_output_length(std::size_t length, std::size_t pool, std::size_t stride) {
  if (pool == 0 || stride == 0) throw ConfigError("maxpool: pool and stride must be positive");
  if (length < pool) return 0;
  return (length - pool + stride - 1) / stride + 1;
}

PoolResult maxpool1d(const Tensor& x, std::size_t pool, std::size_t stride) {
  const auto [B, C, L, batched_in] = as_bcl(x, "maxpool1d");
  const std::size_t Lout = pool_output_length(L, pool, stride);
  if (Lout == 0)
    throw ShapeError("maxpool1d: pool " + std::to_string(pool) + " exceeds length " +
                     std::to_string(L));
  const Shape out_shape = x.rank() == 3 ? Shape{B, C, Lout} : Shape{C, Lout};
  PoolResult r{Tensor(out_shape), std::vector<std::size_t>(B * C * Lout), x.shape(), out_shape};
  const auto xs = x.data();
  auto ys = r.y.data();
  for (std::size_t row = 0; row < B * C; ++row) {
    const double* in = xs.data() + row * L;
    for (std::size_t t = 0; t < Lout; ++t) {
      const std::size_t start = t * stride;
      const std::size_t end = std::min(start + pool, L);
      std::size_t best = start;
      for (std::size_t s = start + 1; s < end; ++s)
        if (in[s] > in[best]) best = s;
      ys[row * Lout + t] = in[best];
      r.argmax[row * Lout + t] = best;
    }
  }
  return r;
}

Tensor maxpool1d_backward(const PoolResult& fwd, const Tensor& dy) {
  if (fwd.input_shape.empty()) throw UsageError("maxpool1d_backward: missing forward result");
  require_shape(dy, fwd.output_shape, "maxpool1d_backward dL/dy");
  Tensor dx(fwd.input_shape);
  const std::size_t L = fwd.input_shape.back();
  const std::size_t Lout = fwd.output_shape.back();
  auto dxs = dx.data();
  const auto dys = dy.data();
  for (std::size_t i = 0; i < dys.size(); ++i) dxs[(i / Lout) * L + fwd.argmax[i]] += dys[i];
  return dx;
}

// ---------------------------------------------------------------- batchnorm

BatchNormParams BatchNormParams::identity(std::size_t channels) {
  return {Tensor({channels}, 1.0), Tensor({channels}, 0.0), Tensor({channels}, 0.0),
          Tensor({channels}, 1.0)};
}

BatchNormResult batchnorm1d(const Tensor& x, const BatchNormParams& p, Mode mode) {
  if (x.rank() != 3) throw ShapeError("batchnorm1d: expected [B, C, L], got " + shape_str(x.shape()));
  const std::size_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
  for (const Tensor* t : {&p.gamma, &p.beta, &p.running_mean, &p.running_var})
    require_shape(*t, {C}, "batchnorm1d parameter");
  if (!(p.epsilon > 0.0)) throw ConfigError("batchnorm1d: epsilon must be positive");
  const std::size_t n = B * L;
  if (mode == Mode::train && n < 2)
    throw ShapeError("batchnorm1d: degenerate batch, train mode needs B*L >= 2, got " +
                     std::to_string(n));

  BatchNormResult r{Tensor(x.shape()), {}, p.running_mean, p.running_var, {}, {}};
  if (mode == Mode::train) {
    r.batch_mean = Tensor({C});
    r.batch_var = Tensor({C});
  }
  r.ctx.mode = mode;
  r.ctx.batch = B;
  r.ctx.channels = C;
  r.ctx.length = L;
  r.ctx.xhat = Tensor(x.shape());
  r.ctx.inv_std.resize(C);
  const auto xs = x.data();
  auto ys = r.y.data();
  auto xh = r.ctx.xhat.data();
  for (std::size_t c = 0; c < C; ++c) {
    double mean, var;
    if (mode == Mode::train) {
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < L; ++t) s += xs[(b * C + c) * L + t];
      mean = s / static_cast<double>(n);
      double ss = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < L; ++t) {
          const double d = xs[(b * C + c) * L + t] - mean;
          ss += d * d;
        }
      var = ss / static_cast<double>(n);
      const double unbiased = ss / static_cast<double>(n - 1);
      r.batch_mean[c] = mean;
      r.batch_var[c] = unbiased;
      r.running_mean[c] = p.momentum * p.running_mean[c] + (1.0 - p.momentum) * mean;
      r.running_var[c] = p.momentum * p.running_var[c] + (1.0 - p.momentum) * unbiased;
    } else {
      mean = p.running_mean[c];
      var = p.running_var[c];
    }
    const double inv = 1.0 / std::sqrt(var + p.epsilon);
    r.ctx.inv_std[c] = inv;
    const double g = p.gamma[c], be = p.beta[c];
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < L; ++t) {
        const std::size_t i = (b * C + c) * L + t;
        xh[i] = (xs[i] - mean) * inv;
        ys[i] = g * xh[i] + be;
      }
  }
  r.ctx.valid = true;
  return r;
}

BatchNormGrads batchnorm1d_backward(const BatchNormCtx& ctx, const BatchNormParams& p,
                                    const Tensor& dy) {
  if (!ctx.valid) throw UsageError("batchnorm1d_backward: missing forward context");
  const std::size_t B = ctx.batch, C = ctx.channels, L = ctx.length;
  require_shape(dy, {B, C, L}, "batchnorm1d_backward dL/dy");
  BatchNormGrads g{Tensor(dy.shape()), Tensor({C}), Tensor({C})};
  const auto dys = dy.data();
  const auto xh = ctx.xhat.data();
  auto dxs = g.dx.data();
  const double n = static_cast<double>(B * L);
  for (std::size_t c = 0; c < C; ++c) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < L; ++t) {
        const std::size_t i = (b * C + c) * L + t;
        sum_dy += dys[i];
        sum_dy_xh += dys[i] * xh[i];
      }
    g.dbeta[c] = sum_dy;
    g.dgamma[c] = sum_dy_xh;
    const double scale = p.gamma[c] * ctx.inv_std[c];
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < L; ++t) {
        const std::size_t i = (b * C + c) * L + t;
        if (ctx.mode == Mode::train)
          dxs[i] = scale * (dys[i] - sum_dy / n - xh[i] * sum_dy_xh / n);
        else
          dxs[i] = scale * dys[i];
      }
  }
  return g;
}

// ---------------------------------------------------------------- elementwise

Tensor activate(Activation kind, const Tensor& x) {
  Tensor y(x.shape());
  const auto xs = x.data();
  auto ys = y.data();
  switch (kind) {
  case Activation::relu:
    for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = xs[i] > 0.0 ? xs[i] : 0.0;
    break;
  case Activation::tanh:
    for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = std::tanh(xs[i]);
    break;
  case Activation::sigmoid:
    for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = sigmoid(xs[i]);
    break;
  }
  return y;
}

Tensor activation_backward(Activation kind, const Tensor& x, const Tensor& dy) {
  require_shape(dy, x.shape(), "activation_backward dL/dy");
  Tensor dx(x.shape());
  const auto xs = x.data();
  const auto dys = dy.data();
  auto dxs = dx.data();
  switch (kind) {
  case Activation::relu:
    for (std::size_t i = 0; i < xs.size(); ++i) dxs[i] = xs[i] > 0.0 ? dys[i] : 0.0;
    break;
  case Activation::tanh:
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double t = std::tanh(xs[i]);
      dxs[i] = dys[i] * (1.0 - t * t);
    }
    break;
  case Activation::sigmoid:
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double s = sigmoid(xs[i]);
      dxs[i] = dys[i] * s * (1.0 - s);
    }
    break;
  }
  return dx;
}

Tensor softmax(const Tensor& x) {
  if (x.rank() == 0) throw ShapeError("softmax: empty tensor");
  const std::size_t C = x.shape().back();
  Tensor y(x.shape());
  const auto xs = x.data();
  auto ys = y.data();
  for (std::size_t r = 0; r < xs.size() / C; ++r) {
    const double* in = xs.data() + r * C;
    double* out = ys.data() + r * C;
    const double m = *std::max_element(in, in + C);
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += (out[c] = std::exp(in[c] - m));
    for (std::size_t c = 0; c < C; ++c) out[c] /= s;
  }
  return y;
}

Tensor softmax_backward(const Tensor& y, const Tensor& dy) {
  require_shape(dy, y.shape(), "softmax_backward dL/dy");
  const std::size_t C = y.shape().back();
  Tensor dx(y.shape());
  const auto ys = y.data();
  const auto dys = dy.data();
  auto dxs = dx.data();
  for (std::size_t r = 0; r < ys.size() / C; ++r) {
    double dot = 0.0;
    for (std::size_t c = 0; c < C; ++c) dot += ys[r * C + c] * dys[r * C + c];
    for (std::size_t c = 0; c < C; ++c) dxs[r * C + c] = ys[r * C + c] * (dys[r * C + c] - dot);
  }
  return dx;
}

Tensor dropout(const Tensor& x, DropoutState& s, Mode mode) {
  if (!(s.rate >= 0.0 && s.rate < 1.0))
    throw ConfigError("dropout: rate must lie in [0, 1), got " + std::to_string(s.rate));
  if (mode == Mode::infer || s.rate == 0.0) {
    s.mask.reset();
    return x;
  }
  const double keep = 1.0 - s.rate;
  const double scale = 1.0 / keep;
  Rng rng(s.rng_seed, "dropout");
  Tensor mask(x.shape());
  for (auto& m : mask.data()) m = rng.bernoulli(keep) ? scale : 0.0;
  Tensor y(x.shape());
  const auto xs = x.data();
  const auto ms = mask.data();
  auto ys = y.data();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = xs[i] * ms[i];
  s.mask = std::move(mask);
  return y;
}

Tensor dropout_backward(const DropoutState& s, const Tensor& dy) {
  if (!s.mask) return dy; // identity forward
  require_shape(dy, s.mask->shape(), "dropout_backward dL/dy");
  Tensor dx(dy.shape());
  const auto ms = s.mask->data();
  const auto dys = dy.data();
  auto dxs = dx.data();
  for (std::size_t i = 0; i < dys.size(); ++i) dxs[i] = dys[i] * ms[i];
  return dx;
}

// ---------------------------------------------------------------- dense

Tensor dense(const Tensor& x, const DenseParams& p) {
  if (x.rank() != 2 || p.W.rank() != 2 || x.dim(1) != p.W.dim(0) || p.b.rank() != 1 ||
      p.b.dim(0) != p.W.dim(1))
    throw ShapeError("dense: x " + shape_str(x.shape()) + ", W " + shape_str(p.W.shape()) + ", b " +
                     shape_str(p.b.shape()) + " disagree");
  const std::size_t B = x.dim(0), n_out = p.W.dim(1);
  Tensor y({B, n_out});
  auto ys = y.data();
  for (std::size_t r = 0; r < B; ++r) std::copy_n(p.b.data().data(), n_out, ys.data() + r * n_out);
  gemm(false, false, B, n_out, x.dim(1), 1.0, x.data().data(), p.W.data().data(), 1.0, ys.data());
  return y;
}

DenseGrads dense_backward(const Tensor& x, const DenseParams& p, const Tensor& dy) {
  const std::size_t B = x.dim(0), n_in = p.W.dim(0), n_out = p.W.dim(1);
  require_shape(dy, {B, n_out}, "dense_backward dL/dy");
  DenseGrads g{Tensor(x.shape()), Tensor(p.W.shape()), Tensor(p.b.shape())};
  gemm(false, true, B, n_in, n_out, 1.0, dy.data().data(), p.W.data().data(), 0.0, g.dx.data().data());
  gemm(true, false, n_in, n_out, B, 1.0, x.data().data(), dy.data().data(), 0.0, g.dW.data().data());
  const auto dys = dy.data();
  for (std::size_t r = 0; r < B; ++r)
    for (std::size_t j = 0; j < n_out; ++j) g.db[j] += dys[r * n_out + j];
  return g;
}

// ---------------------------------------------------------------- loss

LossResult sparse_ce_loss(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw ShapeError("sparse_ce_loss: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  for (std::size_t r = 0; r < B; ++r)
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= C)
      throw LabelError("sparse_ce_loss: label " + std::to_string(labels[r]) + " in row " +
                       std::to_string(r) + " outside [0, " + std::to_string(C) + ")");
  LossResult r{0.0, Tensor(logits.shape()), softmax(logits)};
  const auto ls = logits.data();
  auto g = r.dlogits.data();
  const auto ps = r.probs.data();
  const double inv_b = 1.0 / static_cast<double>(B);
  for (std::size_t i = 0; i < B; ++i) {
    const double* row = ls.data() + i * C;
    const double m = *std::max_element(row, row + C);
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += std::exp(row[c] - m);
    const auto y = static_cast<std::size_t>(labels[i]);
    r.loss += (m + std::log(s) - row[y]) * inv_b;
    for (std::size_t c = 0; c < C; ++c) g[i * C + c] = (ps[i * C + c] - (c == y ? 1.0 : 0.0)) * inv_b;
  }
  return r;
}

} // namespace nbids

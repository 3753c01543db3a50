#include "nbids/tensor.hpp"

#include "nbids/errors.hpp"
#include "nbids/rng.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace nbids {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape_));
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto d : shape_)
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape_));
  if (shape_size(shape_) != data_.size())
    throw ShapeError("shape " + shape_str(shape_) + " needs " + std::to_string(shape_size(shape_)) +
                     " elements, got " + std::to_string(data_.size()));
}

void Tensor::zero_grad() { grad_.emplace(data_.size(), 0.0); }

std::span<double> Tensor::grad() {
  if (!grad_) throw UsageError("tensor has no gradient buffer");
  return *grad_;
}

std::span<const double> Tensor::grad() const {
  if (!grad_) throw UsageError("tensor has no gradient buffer");
  return *grad_;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_shape(const Tensor& t, const Shape& expected, const char* what) {
  if (t.shape() != expected)
    throw ShapeError(std::string(what) + ": expected shape " + shape_str(expected) + ", got " +
                     shape_str(t.shape()));
}

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
} // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, const double* b, double beta, double* c) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  MutMap C(c, M, N);
  if (beta == 0.0)
    C.setZero();
  else if (beta != 1.0)
    C *= beta;
  // A stored as m x k (or k x m when transposed); same for B.
  ConstMap A(a, trans_a ? K : M, trans_a ? M : K);
  ConstMap B(b, trans_b ? N : K, trans_b ? K : N);
  if (!trans_a && !trans_b)
    C.noalias() += alpha * A * B;
  else if (trans_a && !trans_b)
    C.noalias() += alpha * A.transpose() * B;
  else if (!trans_a && trans_b)
    C.noalias() += alpha * A * B.transpose();
  else
    C.noalias() += alpha * A.transpose() * B.transpose();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  Tensor c({a.dim(0), b.dim(1)});
  gemm(false, false, a.dim(0), b.dim(1), a.dim(1), 1.0, a.data().data(), b.data().data(), 0.0,
       c.data().data());
  return c;
}

MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& dc) {
  require_shape(dc, {a.dim(0), b.dim(1)}, "matmul_backward dL/dc");
  MatmulGrads g{Tensor(a.shape()), Tensor(b.shape())};
  // dA = dC * B^T, dB = A^T * dC
  gemm(false, true, a.dim(0), a.dim(1), b.dim(1), 1.0, dc.data().data(), b.data().data(), 0.0,
       g.da.data().data());
  gemm(true, false, b.dim(0), b.dim(1), a.dim(0), 1.0, a.data().data(), dc.data().data(), 0.0,
       g.db.data().data());
  return g;
}

GradCheckResult grad_check(const ScalarFn& fn, std::vector<Tensor> inputs,
                           const GradCheckOptions& options) {
  for (auto& t : inputs) t.zero_grad();
  fn(inputs, true);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& t : inputs) {
    analytic.emplace_back(t.grad().begin(), t.grad().end());
    t.drop_grad();
  }

  std::size_t total = 0;
  for (const auto& t : inputs) total += t.size();
  const std::size_t want = options.max_coords == 0 ? total : std::min(options.max_coords, total);

  // Candidate flat indices: all of them in order, or a seeded random order.
  std::vector<std::size_t> order(total);
  for (std::size_t f = 0; f < total; ++f) order[f] = f;
  if (options.max_coords != 0) {
    Rng rng(options.seed, "grad_check.coords");
    rng.shuffle(std::span(order));
  }
  std::vector<std::size_t> starts;
  for (std::size_t i = 0, off = 0; i < inputs.size(); off += inputs[i++].size()) starts.push_back(off);

  GradCheckResult result;
  for (std::size_t f : order) {
    if (result.checked == want) break;
    const auto i = static_cast<std::size_t>(std::upper_bound(starts.begin(), starts.end(), f) - starts.begin()) - 1;
    const std::size_t j = f - starts[i];
    double& x = inputs[i][j];
    const double saved = x;
    x = saved + options.eps;
    const double up = fn(inputs, false);
    const std::uint64_t region_up = options.region ? options.region(inputs) : 0;
    x = saved - options.eps;
    const double down = fn(inputs, false);
    const std::uint64_t region_down = options.region ? options.region(inputs) : 0;
    x = saved;
    if (region_up != region_down) {
      ++result.skipped_kinks;
      continue;
    }
    const double numeric = (up - down) / (2.0 * options.eps);
    const double a = analytic[i][j];
    const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
    ++result.checked;
    if (err > result.max_rel_error || result.checked == 1) {
      result.max_rel_error = err;
      result.worst_input = i;
      result.worst_index = j;
      result.worst_analytic = a;
      result.worst_numeric = numeric;
    }
  }
  return result;
}

} // namespace nbids

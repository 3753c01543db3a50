#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nbids {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Dense row-major tensor of doubles with an optional gradient buffer.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] std::size_t rank() const { return shape_.size(); }
  [[nodiscard]] std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  [[nodiscard]] std::span<const double> data() const { return data_; }
  [[nodiscard]] const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  [[nodiscard]] bool has_grad() const { return grad_.has_value(); }
  /// Allocates (or re-zeroes) the gradient buffer.
  void zero_grad();
  void drop_grad() { grad_.reset(); }
  std::span<double> grad();
  [[nodiscard]] std::span<const double> grad() const;

  /// Same data, new shape with equal element count.
  [[nodiscard]] Tensor reshaped(Shape shape) const;
  [[nodiscard]] bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

private:
  Shape shape_;
  std::vector<double> data_;
  std::optional<std::vector<double>> grad_;
};

void require_shape(const Tensor& t, const Shape& expected, const char* what);

/// Row-major GEMM kernel: C = alpha * op(A) * op(B) + beta * C, where op(A)
/// is m x k and op(B) is k x n.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, const double* b, double beta, double* c);

Tensor matmul(const Tensor& a, const Tensor& b);

struct MatmulGrads {
  Tensor da;
  Tensor db;
};
MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& dc);

/// Scalar function of a set of tensors. When called for the analytic pass the
/// closure writes dF/dinput into each input's grad buffer (already zeroed).
using ScalarFn = std::function<double(std::vector<Tensor>& inputs, bool want_grad)>;

struct GradCheckOptions {
  double eps = 1e-5;
  /// 0 checks every coordinate; otherwise a seeded random subsample.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
  /// Optional fingerprint of the piecewise-smooth region the inputs lie in
  /// (e.g. ReLU signs and max-pool winners). A coordinate whose +eps and -eps
  /// probes land in different regions straddles a kink, where a central
  /// difference is not a derivative estimate; it is skipped and another is
  /// drawn in its place.
  std::function<std::uint64_t(const std::vector<Tensor>&)> region;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Central finite differences against the closure's analytic gradient.
/// Relative error per coordinate is |a - n| / max(1e-8, |a| + |n|).
GradCheckResult grad_check(const ScalarFn& fn, std::vector<Tensor> inputs,
                           const GradCheckOptions& options = {});

} // namespace nbids

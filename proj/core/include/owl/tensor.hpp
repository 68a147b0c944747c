#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace owl {

using Real = double;

// Dense row-major matrix. All numeric storage in the project is double.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, Real fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<Real> data);
  Matrix(std::initializer_list<std::initializer_list<Real>> rows);

  static Matrix identity(std::size_t n);
  static Matrix zeros(std::size_t rows, std::size_t cols) { return {rows, cols}; }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  Real& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  Real operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<Real> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const Real> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<Real> flat() noexcept { return data_; }
  std::span<const Real> flat() const noexcept { return data_; }
  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }

  void fill(Real v);
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<Real> data_;
};

// a (m x k) * b (k x n). Throws kDimensionMismatch on a.cols != b.rows and
// kNumeric if the product is not finite.
Matrix matmul(const Matrix& a, const Matrix& b);

// Accumulating kernels used by the model's forward/backward code.
// y[n] += x[k] * W[k x n]
void gemv_acc(std::span<const Real> x, const Matrix& w, std::span<Real> y);
// y[k] += W[k x n] * g[n]
void gemv_t_acc(const Matrix& w, std::span<const Real> g, std::span<Real> y);
// W[k x n] += x[k] outer g[n]
void outer_acc(std::span<const Real> x, std::span<const Real> g, Matrix& w);

// Numerically stable softmax (max-subtracted). Throws on empty input.
std::vector<Real> softmax_row(std::span<const Real> v);
void softmax_inplace(std::span<Real> v);
std::vector<Real> log_softmax_row(std::span<const Real> v);

// Nearest-rank percentile: sort ascending, pick element ceil(p/100 * n)
// (1-based), clamped to [1, n].
Real percentile(std::span<const Real> samples, Real p);

Real sum(std::span<const Real> v);

}  // namespace owl

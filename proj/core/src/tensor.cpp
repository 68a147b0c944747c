#include "owl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "owl/error.hpp"

namespace owl {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid argument";
    case ErrorKind::kDimensionMismatch: return "dimension mismatch";
    case ErrorKind::kNumeric: return "numeric failure";
    case ErrorKind::kIntegrity: return "integrity";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kDegenerate: return "degenerate";
  }
  return "unknown";
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<Real> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(data_.size() == rows_ * cols_, ErrorKind::kDimensionMismatch,
          "matrix data length " + std::to_string(data_.size()) + " != " +
              std::to_string(rows_) + "x" + std::to_string(cols_));
}

Matrix::Matrix(std::initializer_list<std::initializer_list<Real>> rows) {
  rows_ = rows.size();
  cols_ = rows_ ? rows.begin()->size() : 0;
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    require(r.size() == cols_, ErrorKind::kDimensionMismatch, "ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

void Matrix::fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](Real x) { return std::isfinite(x); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), ErrorKind::kDimensionMismatch,
          "matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
              " * " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    gemv_acc(a.row(i), b, out.row(i));
  }
  require(out.all_finite(), ErrorKind::kNumeric, "matmul produced non-finite values");
  return out;
}

void gemv_acc(std::span<const Real> x, const Matrix& w, std::span<Real> y) {
  const std::size_t n = w.cols();
  Real* __restrict yp = y.data();
  for (std::size_t k = 0; k < x.size(); ++k) {
    const Real xk = x[k];
    if (xk == 0.0) continue;
    const Real* __restrict wr = w.data() + k * n;
    for (std::size_t j = 0; j < n; ++j) yp[j] += xk * wr[j];
  }
}

void gemv_t_acc(const Matrix& w, std::span<const Real> g, std::span<Real> y) {
  const std::size_t n = w.cols();
  const Real* __restrict gp = g.data();
  for (std::size_t k = 0; k < w.rows(); ++k) {
    const Real* __restrict wr = w.data() + k * n;
    Real acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += wr[j] * gp[j];
    y[k] += acc;
  }
}

void outer_acc(std::span<const Real> x, std::span<const Real> g, Matrix& w) {
  const std::size_t n = w.cols();
  const Real* __restrict gp = g.data();
  for (std::size_t k = 0; k < x.size(); ++k) {
    const Real xk = x[k];
    if (xk == 0.0) continue;
    Real* __restrict wr = w.data() + k * n;
    for (std::size_t j = 0; j < n; ++j) wr[j] += xk * gp[j];
  }
}

void softmax_inplace(std::span<Real> v) {
  require(!v.empty(), ErrorKind::kInvalidArgument, "softmax of empty vector");
  const Real mx = *std::max_element(v.begin(), v.end());
  Real total = 0.0;
  for (auto& x : v) {
    x = std::exp(x - mx);
    total += x;
  }
  for (auto& x : v) x /= total;
}

std::vector<Real> softmax_row(std::span<const Real> v) {
  std::vector<Real> out(v.begin(), v.end());
  softmax_inplace(out);
  return out;
}

std::vector<Real> log_softmax_row(std::span<const Real> v) {
  require(!v.empty(), ErrorKind::kInvalidArgument, "log_softmax of empty vector");
  const Real mx = *std::max_element(v.begin(), v.end());
  Real total = 0.0;
  for (Real x : v) total += std::exp(x - mx);
  const Real lse = mx + std::log(total);
  std::vector<Real> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - lse;
  return out;
}

Real percentile(std::span<const Real> samples, Real p) {
  require(!samples.empty(), ErrorKind::kInvalidArgument, "percentile of empty sample set");
  require(p >= 0.0 && p <= 100.0, ErrorKind::kInvalidArgument,
          "percentile p=" + std::to_string(p) + " outside [0,100]");
  std::vector<Real> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<long long>(sorted.size());
  auto rank = static_cast<long long>(std::ceil(p * static_cast<Real>(n) / 100.0));
  rank = std::clamp(rank, 1LL, n);
  return sorted[static_cast<std::size_t>(rank - 1)];
}

Real sum(std::span<const Real> v) {
  Real s = 0.0;
  for (Real x : v) s += x;
  return s;
}

}  // namespace owl

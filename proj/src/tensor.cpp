#include "semlink/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "semlink/errors.hpp"

namespace semlink {

namespace {

std::string shape_str(const Tensor2& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

// Block of b rows kept hot in cache while sweeping all rows of a.
constexpr std::size_t kBlockK = 64;

void gemm_accumulate(const double* a, std::size_t a_stride_row, std::size_t a_stride_k,
                     const double* b, double* c, std::size_t m, std::size_t kdim, std::size_t n) {
  // zero terms of a may be skipped only when b cannot turn them into NaN
  const bool skip_zeros = std::all_of(b, b + kdim * n, [](double x) { return std::isfinite(x); });
  for (std::size_t k0 = 0; k0 < kdim; k0 += kBlockK) {
    const std::size_t k1 = std::min(kdim, k0 + kBlockK);
    for (std::size_t i = 0; i < m; ++i) {
      double* __restrict ci = c + i * n;
      for (std::size_t k = k0; k < k1; ++k) {
        const double aik = a[i * a_stride_row + k * a_stride_k];
        if (skip_zeros && aik == 0.0) continue;
        const double* __restrict bk = b + k * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
      }
    }
  }
}

}  // namespace

Tensor2::Tensor2(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor2::Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("Tensor2: data length " + std::to_string(data_.size()) +
                         " does not match " + std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Tensor2::Tensor2(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ ? rows.begin()->size() : 0;
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("Tensor2: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Tensor2 Tensor2::row_vector(std::span<const double> v) {
  return Tensor2(1, v.size(), std::vector<double>(v.begin(), v.end()));
}

void Tensor2::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor2::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_str(a) + " * " + shape_str(b));
  }
  Tensor2 c(a.rows(), b.cols());
  gemm_accumulate(a.values().data(), a.cols(), 1, b.values().data(), c.values().data(), a.rows(),
                  a.cols(), b.cols());
  return c;
}

Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b) {
  Tensor2 c(a.cols(), b.cols());
  matmul_tn_accumulate(a, b, c);
  return c;
}

void matmul_tn_accumulate(const Tensor2& a, const Tensor2& b, Tensor2& acc) {
  if (a.rows() != b.rows() || acc.rows() != a.cols() || acc.cols() != b.cols()) {
    throw DimensionError("matmul_tn: " + shape_str(a) + "^T * " + shape_str(b) + " -> " +
                         shape_str(acc));
  }
  // aᵀ viewed with swapped strides.
  gemm_accumulate(a.values().data(), 1, a.cols(), b.values().data(), acc.values().data(), a.cols(),
                  a.rows(), b.cols());
}

Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: " + shape_str(a) + " * " + shape_str(b) + "^T");
  }
  return matmul(a, transpose(b));
}

Tensor2 transpose(const Tensor2& a) {
  Tensor2 t(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
  return t;
}

void add_inplace(Tensor2& a, const Tensor2& b) {
  if (!a.same_shape(b)) throw DimensionError("add: " + shape_str(a) + " vs " + shape_str(b));
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) av[i] += bv[i];
}

void scale_inplace(Tensor2& a, double s) {
  for (double& x : a.values()) x *= s;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void axpy(double s, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw DimensionError("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

}  // namespace semlink

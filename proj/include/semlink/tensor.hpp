#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace semlink {

// Dense row-major matrix of doubles. Vectors are 1×n rows.
class Tensor2 {
 public:
  Tensor2() = default;
  Tensor2(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor2(std::size_t rows, std::size_t cols, std::vector<double> data);
  Tensor2(std::initializer_list<std::initializer_list<double>> rows);

  static Tensor2 row_vector(std::span<const double> v);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Tensor2& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Tensor2&, const Tensor2&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// c = a·b
Tensor2 matmul(const Tensor2& a, const Tensor2& b);
// c = aᵀ·b
Tensor2 matmul_tn(const Tensor2& a, const Tensor2& b);
// c = a·bᵀ
Tensor2 matmul_nt(const Tensor2& a, const Tensor2& b);
// acc += aᵀ·b, used for weight gradients.
void matmul_tn_accumulate(const Tensor2& a, const Tensor2& b, Tensor2& acc);

Tensor2 transpose(const Tensor2& a);
void add_inplace(Tensor2& a, const Tensor2& b);
void scale_inplace(Tensor2& a, double s);

double dot(std::span<const double> a, std::span<const double> b);
// y += s·x
void axpy(double s, std::span<const double> x, std::span<double> y);

}  // namespace semlink

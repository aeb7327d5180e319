#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace circuitscope {

// Row-major dense matrix of doubles. Used for activations, gradients and
// attention patterns; parameters live in a flat store (see checkpoint.hpp).
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> flat() noexcept { return data_; }
  std::span<const double> flat() const noexcept { return data_; }

  void fill(double value);
  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  Matrix& operator+=(const Matrix& other);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// (1 - alpha) * a + alpha * b, elementwise. alpha = 0 and alpha = 1 reproduce
// the endpoints bit-exactly for finite inputs.
Matrix lerp(const Matrix& a, const Matrix& b, double alpha);

// Frobenius inner product.
double dot(const Matrix& a, const Matrix& b);

// Dense kernels on raw row-major buffers. Every output element accumulates
// its terms sequentially in ascending index order, so results are
// reproducible bit-for-bit for a given build.
namespace kernel {

// c[m x n] (+)= a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate);

// c[m x n] (+)= a[m x k] * b[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate);

// c[k x n] (+)= a[m x k]^T * b[m x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate);

// Adds `bias` (length n) to every row of c[m x n].
void add_row_bias(double* c, const double* bias, std::size_t m, std::size_t n);

// out[j] += sum_i a[i][j] for a[m x n].
void sum_rows(const double* a, double* out, std::size_t m, std::size_t n);

}  // namespace kernel

}  // namespace circuitscope

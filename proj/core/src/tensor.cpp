#include "circuitscope/tensor.hpp"

#include <algorithm>

#include "circuitscope/error.hpp"

namespace circuitscope {

void Matrix::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Matrix& Matrix::operator+=(const Matrix& other) {
  if (!same_shape(other)) fail(Errc::shape_mismatch, "matrix += with different shapes");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Matrix lerp(const Matrix& a, const Matrix& b, double alpha) {
  if (!a.same_shape(b)) fail(Errc::shape_mismatch, "lerp with different shapes");
  Matrix out(a.rows(), a.cols());
  const double beta = 1.0 - alpha;
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) po[i] = beta * pa[i] + alpha * pb[i];
  return out;
}

double dot(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) fail(Errc::shape_mismatch, "dot with different shapes");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.data()[i] * b.data()[i];
  return acc;
}

namespace kernel {

void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + k * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void add_row_bias(double* c, const double* bias, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += bias[j];
  }
}

void sum_rows(const double* a, double* out, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += arow[j];
  }
}

}  // namespace kernel
}  // namespace circuitscope

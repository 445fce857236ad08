#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wedl {

// Dense row-major matrix of doubles. All reductions run in ascending index
// order so results are bit-reproducible for a fixed input.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  void set_zero() { std::fill(data.begin(), data.end(), 0.0); }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  static Matrix zeros_like(const Matrix& m) { return Matrix(m.rows, m.cols); }
};

inline void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) throw std::invalid_argument("matmul: inner dimensions differ");
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols; ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

// out += a^T * b
inline void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.rows != b.rows || out.rows != a.cols || out.cols != b.cols)
    throw std::invalid_argument("matmul_tn_acc: shape mismatch");
  for (std::size_t k = 0; k < a.rows; ++k)
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double aki = a(k, i);
      for (std::size_t j = 0; j < b.cols; ++j) out(i, j) += aki * b(k, j);
    }
}

// a * b^T
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) throw std::invalid_argument("matmul_nt: inner dimensions differ");
  Matrix c(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.rows; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += a(i, k) * b(j, k);
      c(i, j) = s;
    }
  return c;
}

inline double row_dot(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
  if (a.cols != b.cols) throw std::invalid_argument("row_dot: column counts differ");
  double s = 0.0;
  for (std::size_t k = 0; k < a.cols; ++k) s += a(i, k) * b(j, k);
  return s;
}

inline double row_sqdist(const Matrix& a, std::size_t i, const Matrix& b, std::size_t j) {
  if (a.cols != b.cols) throw std::invalid_argument("row_sqdist: column counts differ");
  double s = 0.0;
  for (std::size_t k = 0; k < a.cols; ++k) {
    const double d = a(i, k) - b(j, k);
    s += d * d;
  }
  return s;
}

inline void add_scaled(Matrix& dst, const Matrix& src, double scale) {
  check_same_shape(dst, src, "add_scaled");
  for (std::size_t n = 0; n < dst.data.size(); ++n) dst.data[n] += scale * src.data[n];
}

}  // namespace wedl

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace epo {

/// Row-major dense matrix of 64-bit reals.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }

  std::size_t size() const { return data.size(); }
};

inline bool all_finite(std::span<const double> xs) {
  for (double x : xs) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

inline bool all_finite(const Mat& m) { return all_finite(std::span<const double>(m.data)); }

/// C = A * B. Accumulation over the inner index is sequential ascending for
/// every output entry, so results are independent of batching.
inline Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols != b.rows) {
    throw std::invalid_argument("matmul: inner dims mismatch (" +
                                std::to_string(a.cols) + " vs " +
                                std::to_string(b.rows) + ")");
  }
  Mat c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* crow = c.data.data() + i * c.cols;
    const double* arow = a.data.data() + i * a.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      const double* brow = b.data.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

/// C = A * B^T with B given as (p x n); result is (m x p).
inline Mat matmul_bt(const Mat& a, const Mat& b) {
  if (a.cols != b.cols) {
    throw std::invalid_argument("matmul_bt: inner dims mismatch (" +
                                std::to_string(a.cols) + " vs " +
                                std::to_string(b.cols) + ")");
  }
  Mat c(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = a.data.data() + i * a.cols;
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* brow = b.data.data() + j * b.cols;
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
      c.at(i, j) = acc;
    }
  }
  return c;
}

/// Accumulates A^T * B into `out` (shape a.cols x b.cols), given as raw
/// row-major storage. Used for weight gradients: dW += X^T * dZ.
inline void accumulate_at_b(const Mat& a, const Mat& b, std::span<double> out) {
  if (a.rows != b.rows) throw std::invalid_argument("accumulate_at_b: row mismatch");
  if (out.size() != a.cols * b.cols) {
    throw std::invalid_argument("accumulate_at_b: output size mismatch");
  }
  for (std::size_t r = 0; r < a.rows; ++r) {
    const double* arow = a.data.data() + r * a.cols;
    const double* brow = b.data.data() + r * b.cols;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double ari = arow[i];
      double* orow = out.data() + i * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += ari * brow[j];
    }
  }
}

inline void add_row_inplace(Mat& m, std::span<const double> bias) {
  if (bias.size() != m.cols) throw std::invalid_argument("add_row_inplace: width mismatch");
  for (std::size_t r = 0; r < m.rows; ++r) {
    double* row = m.data.data() + r * m.cols;
    for (std::size_t c = 0; c < m.cols; ++c) row[c] += bias[c];
  }
}

/// Accumulates the column sums of `m` into `out`.
inline void accumulate_colsum(const Mat& m, std::span<double> out) {
  if (out.size() != m.cols) throw std::invalid_argument("accumulate_colsum: width mismatch");
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* row = m.data.data() + r * m.cols;
    for (std::size_t c = 0; c < m.cols; ++c) out[c] += row[c];
  }
}

inline double clamp(double x, double lo, double hi) {
  return x < lo ? lo : (x > hi ? hi : x);
}

}  // namespace epo

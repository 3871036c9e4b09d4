#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "epo/mat.hpp"

namespace epo {

/// Per-dimension running mean/variance in the parallel-merge form: each
/// update folds a whole chunk's statistics into the running ones. Outputs
/// are (x - mean) / sqrt(var + 1e-8), clamped to +-10. With no data yet the
/// variance reads as 1 so normalization is the identity (modulo clamping).
class RunningNormalizer {
 public:
  explicit RunningNormalizer(std::size_t dim)
      : mean_(dim, 0.0), m2_(dim, 0.0) {}

  std::size_t dim() const { return mean_.size(); }
  double count() const { return count_; }

  /// Folds a chunk of rows into the running statistics.
  void update(const Mat& rows) {
    if (rows.cols != dim()) throw std::invalid_argument("RunningNormalizer: width mismatch");
    if (rows.rows == 0) return;
    const double m = static_cast<double>(rows.rows);
    std::vector<double> chunk_mean(dim(), 0.0), chunk_m2(dim(), 0.0);
    for (std::size_t r = 0; r < rows.rows; ++r) {
      auto row = rows.row(r);
      for (std::size_t d = 0; d < dim(); ++d) chunk_mean[d] += row[d];
    }
    for (std::size_t d = 0; d < dim(); ++d) chunk_mean[d] /= m;
    for (std::size_t r = 0; r < rows.rows; ++r) {
      auto row = rows.row(r);
      for (std::size_t d = 0; d < dim(); ++d) {
        const double delta = row[d] - chunk_mean[d];
        chunk_m2[d] += delta * delta;
      }
    }
    const double n = count_;
    const double total = n + m;
    for (std::size_t d = 0; d < dim(); ++d) {
      const double delta = chunk_mean[d] - mean_[d];
      mean_[d] += delta * m / total;
      m2_[d] += chunk_m2[d] + delta * delta * n * m / total;
    }
    count_ = total;
  }

  double variance(std::size_t d) const { return count_ > 0.0 ? m2_[d] / count_ : 1.0; }

  void normalize(std::span<const double> in, std::span<double> out) const {
    if (in.size() != dim() || out.size() != dim()) {
      throw std::invalid_argument("RunningNormalizer: row width mismatch");
    }
    for (std::size_t d = 0; d < dim(); ++d) {
      const double z = (in[d] - mean_[d]) / std::sqrt(variance(d) + 1e-8);
      out[d] = clamp(z, -10.0, 10.0);
    }
  }

  Mat normalize(const Mat& rows) const {
    Mat out(rows.rows, rows.cols);
    for (std::size_t r = 0; r < rows.rows; ++r) normalize(rows.row(r), out.row(r));
    return out;
  }

  // checkpoint access
  std::vector<double>& mutable_mean() { return mean_; }
  std::vector<double>& mutable_m2() { return m2_; }
  void set_count(double c) { count_ = c; }
  std::span<const double> mean() const { return mean_; }
  std::span<const double> m2() const { return m2_; }

 private:
  std::vector<double> mean_;
  std::vector<double> m2_;
  double count_ = 0.0;
};

/// Scalar running statistics for value-target normalization. The critic is
/// trained in normalized space; rollout-facing values are mapped back to the
/// raw return scale. Same parallel-merge update as RunningNormalizer.
class ScalarRunningStats {
 public:
  void update(std::span<const double> xs) {
    if (xs.empty()) return;
    const double m = static_cast<double>(xs.size());
    double chunk_mean = 0.0;
    for (double x : xs) chunk_mean += x;
    chunk_mean /= m;
    double chunk_m2 = 0.0;
    for (double x : xs) chunk_m2 += (x - chunk_mean) * (x - chunk_mean);
    const double total = count_ + m;
    const double delta = chunk_mean - mean_;
    mean_ += delta * m / total;
    m2_ += chunk_m2 + delta * delta * count_ * m / total;
    count_ = total;
  }

  double mean() const { return mean_; }
  double variance() const { return count_ > 0.0 ? m2_ / count_ : 1.0; }
  double std_dev() const { return std::sqrt(variance() + 1e-8); }
  double count() const { return count_; }

  double normalize(double x) const { return (x - mean_) / std_dev(); }
  double unnormalize(double v) const { return v * std_dev() + mean_; }

  // checkpoint access
  double m2() const { return m2_; }
  void restore(double mean, double m2, double count) {
    mean_ = mean;
    m2_ = m2;
    count_ = count;
  }

 private:
  double mean_ = 0.0;
  double m2_ = 0.0;
  double count_ = 0.0;
};

/// Affine map from the critic's normalized output to raw-scale values,
/// frozen for the duration of a collection phase.
struct ValueTransform {
  double scale = 1.0;
  double offset = 0.0;
  double to_raw(double v) const { return v * scale + offset; }

  static ValueTransform from(const ScalarRunningStats& stats) {
    return {stats.std_dev(), stats.mean()};
  }
};

}  // namespace epo

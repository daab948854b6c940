#pragma once

// Data-parallel inner loops. The default entry points are OpenMP kernels;
// kernels::serial holds the plain-loop reference implementations they are
// tested and benchmarked against. Every parallel kernel partitions work so
// that each output element is produced by exactly one thread with the same
// summation order as the serial version, so results are bit-identical for
// any thread count.

#include "artprobe/time_series.hpp"

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace artprobe::kernels {

// Neumaier compensated sum.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

struct RowRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

struct ColumnMoments {
  Vector mean;
  Vector stddev;  // population (1/N) standard deviation
  std::size_t count = 0;
};

struct ColumnCorrelation {
  std::vector<double> r;
  std::vector<bool> valid;  // false when either column is constant over the range
};

// Column mean/std pooled over all blocks, visited in order.
ColumnMoments column_moments(std::span<const Matrix* const> blocks);
// Per-column Pearson r between a and b restricted to rows [range.begin, range.end).
ColumnCorrelation column_pearson(const Matrix& a, const Matrix& b, RowRange range);
// out = x * weights^T + intercept (broadcast per row).
Matrix affine_rows(const Matrix& x, const Matrix& weights, const Vector& intercept);
// Filtered decimation: out[k] = sum_j taps[j] * in[clamp(k*factor + j - half)].
Matrix decimate(const Matrix& in, std::span<const double> taps, std::size_t factor,
                std::size_t out_frames);
// Linear interpolation at fractional input positions pos[k], clamped to the last frame.
Matrix interpolate_rows(const Matrix& in, std::span<const double> positions);

namespace serial {
ColumnMoments column_moments(std::span<const Matrix* const> blocks);
ColumnCorrelation column_pearson(const Matrix& a, const Matrix& b, RowRange range);
Matrix affine_rows(const Matrix& x, const Matrix& weights, const Vector& intercept);
Matrix decimate(const Matrix& in, std::span<const double> taps, std::size_t factor,
                std::size_t out_frames);
Matrix interpolate_rows(const Matrix& in, std::span<const double> positions);
}  // namespace serial

namespace detail {
// A column counts as constant when its spread is at rounding level relative
// to its magnitude.
inline bool is_constant(double sum_sq_dev, std::size_t n, double max_abs) {
  if (n == 0) return true;
  return std::sqrt(sum_sq_dev / static_cast<double>(n)) <= 64.0 * 2.220446049250313e-16 * max_abs;
}
}  // namespace detail

}  // namespace artprobe::kernels

#include "artprobe/kernels.hpp"

#include <algorithm>

namespace artprobe::kernels {

ColumnMoments column_moments(std::span<const Matrix* const> blocks) {
  ColumnMoments m;
  const Eigen::Index cols = blocks.empty() ? 0 : blocks.front()->cols();
  m.mean = Vector::Zero(cols);
  m.stddev = Vector::Zero(cols);
  for (const Matrix* b : blocks) m.count += static_cast<std::size_t>(b->rows());
  if (m.count == 0) return m;
  const double n = static_cast<double>(m.count);

#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < cols; ++c) {
    CompensatedSum sum;
    for (const Matrix* b : blocks) {
      const auto col = b->col(c);
      for (Eigen::Index t = 0; t < col.size(); ++t) sum.add(col(t));
    }
    const double mean = sum.value() / n;
    CompensatedSum sq;
    for (const Matrix* b : blocks) {
      const auto col = b->col(c);
      for (Eigen::Index t = 0; t < col.size(); ++t) {
        const double d = col(t) - mean;
        sq.add(d * d);
      }
    }
    m.mean(c) = mean;
    m.stddev(c) = std::sqrt(sq.value() / n);
  }
  return m;
}

ColumnCorrelation column_pearson(const Matrix& a, const Matrix& b, RowRange range) {
  const Eigen::Index cols = a.cols();
  ColumnCorrelation out;
  out.r.assign(static_cast<std::size_t>(cols), 0.0);
  std::vector<char> valid(static_cast<std::size_t>(cols), 0);
  const std::size_t n = range.size();
  if (n < 2) {
    out.valid.assign(static_cast<std::size_t>(cols), false);
    return out;
  }
  const auto begin = static_cast<Eigen::Index>(range.begin);
  const auto len = static_cast<Eigen::Index>(n);

#pragma omp parallel for schedule(static)
  for (Eigen::Index c = 0; c < cols; ++c) {
    const auto ca = a.col(c).segment(begin, len);
    const auto cb = b.col(c).segment(begin, len);
    CompensatedSum sa, sb;
    double max_a = 0.0, max_b = 0.0;
    for (Eigen::Index t = 0; t < len; ++t) {
      sa.add(ca(t));
      sb.add(cb(t));
      max_a = std::max(max_a, std::abs(ca(t)));
      max_b = std::max(max_b, std::abs(cb(t)));
    }
    const double ma = sa.value() / static_cast<double>(n);
    const double mb = sb.value() / static_cast<double>(n);
    CompensatedSum saa, sbb, sab;
    for (Eigen::Index t = 0; t < len; ++t) {
      const double da = ca(t) - ma;
      const double db = cb(t) - mb;
      saa.add(da * da);
      sbb.add(db * db);
      sab.add(da * db);
    }
    if (detail::is_constant(saa.value(), n, max_a) || detail::is_constant(sbb.value(), n, max_b))
      continue;
    out.r[static_cast<std::size_t>(c)] =
        std::clamp(sab.value() / std::sqrt(saa.value() * sbb.value()), -1.0, 1.0);
    valid[static_cast<std::size_t>(c)] = 1;
  }
  out.valid.assign(valid.begin(), valid.end());
  return out;
}

Matrix affine_rows(const Matrix& x, const Matrix& weights, const Vector& intercept) {
  const Eigen::Index rows = x.rows(), outs = weights.rows(), dims = x.cols();
  Matrix y(rows, outs);

#pragma omp parallel for schedule(static)
  for (Eigen::Index t = 0; t < rows; ++t) {
    const double* xr = x.data() + t * dims;
    for (Eigen::Index o = 0; o < outs; ++o) {
      const double* wr = weights.data() + o * dims;
      double acc = 0.0;
      for (Eigen::Index d = 0; d < dims; ++d) acc += xr[d] * wr[d];
      y(t, o) = acc + intercept(o);
    }
  }
  return y;
}

Matrix decimate(const Matrix& in, std::span<const double> taps, std::size_t factor,
                std::size_t out_frames) {
  const auto last = static_cast<std::ptrdiff_t>(in.rows()) - 1;
  const auto half = static_cast<std::ptrdiff_t>(taps.size() / 2);
  const auto frames = static_cast<std::ptrdiff_t>(out_frames);
  Matrix out(static_cast<Eigen::Index>(out_frames), in.cols());

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < frames; ++k) {
    const std::ptrdiff_t start = k * static_cast<std::ptrdiff_t>(factor) - half;
    auto row = out.row(k);
    row.setZero();
    for (std::size_t j = 0; j < taps.size(); ++j) {
      const std::ptrdiff_t src =
          std::clamp<std::ptrdiff_t>(start + static_cast<std::ptrdiff_t>(j), 0, last);
      for (Eigen::Index c = 0; c < in.cols(); ++c) row(c) += taps[j] * in(src, c);
    }
  }
  return out;
}

Matrix interpolate_rows(const Matrix& in, std::span<const double> positions) {
  const Eigen::Index last = in.rows() - 1;
  const auto frames = static_cast<std::ptrdiff_t>(positions.size());
  Matrix out(static_cast<Eigen::Index>(positions.size()), in.cols());

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t k = 0; k < frames; ++k) {
    const double p = std::clamp(positions[static_cast<std::size_t>(k)], 0.0, static_cast<double>(last));
    const auto i0 = static_cast<Eigen::Index>(std::floor(p));
    const Eigen::Index i1 = std::min(i0 + 1, last);
    const double frac = p - static_cast<double>(i0);
    out.row(k) = in.row(i0) + frac * (in.row(i1) - in.row(i0));
  }
  return out;
}

}  // namespace artprobe::kernels

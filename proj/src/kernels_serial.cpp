#include "artprobe/kernels.hpp"

#include <algorithm>

namespace artprobe::kernels::serial {

ColumnMoments column_moments(std::span<const Matrix* const> blocks) {
  ColumnMoments m;
  const Eigen::Index cols = blocks.empty() ? 0 : blocks.front()->cols();
  m.mean = Vector::Zero(cols);
  m.stddev = Vector::Zero(cols);
  for (const Matrix* b : blocks) m.count += static_cast<std::size_t>(b->rows());
  if (m.count == 0) return m;
  const double n = static_cast<double>(m.count);
  for (Eigen::Index c = 0; c < cols; ++c) {
    CompensatedSum sum;
    for (const Matrix* b : blocks)
      for (Eigen::Index t = 0; t < b->rows(); ++t) sum.add((*b)(t, c));
    const double mean = sum.value() / n;
    CompensatedSum sq;
    for (const Matrix* b : blocks)
      for (Eigen::Index t = 0; t < b->rows(); ++t) {
        const double d = (*b)(t, c) - mean;
        sq.add(d * d);
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
  out.valid.assign(static_cast<std::size_t>(cols), false);
  const std::size_t n = range.size();
  if (n < 2) return out;
  const auto rows = [&](auto&& f) {
    for (std::size_t t = range.begin; t < range.end; ++t) f(static_cast<Eigen::Index>(t));
  };
  for (Eigen::Index c = 0; c < cols; ++c) {
    CompensatedSum sa, sb;
    double max_a = 0.0, max_b = 0.0;
    rows([&](Eigen::Index t) {
      sa.add(a(t, c));
      sb.add(b(t, c));
      max_a = std::max(max_a, std::abs(a(t, c)));
      max_b = std::max(max_b, std::abs(b(t, c)));
    });
    const double ma = sa.value() / static_cast<double>(n);
    const double mb = sb.value() / static_cast<double>(n);
    CompensatedSum saa, sbb, sab;
    rows([&](Eigen::Index t) {
      const double da = a(t, c) - ma;
      const double db = b(t, c) - mb;
      saa.add(da * da);
      sbb.add(db * db);
      sab.add(da * db);
    });
    const auto k = static_cast<std::size_t>(c);
    if (detail::is_constant(saa.value(), n, max_a) || detail::is_constant(sbb.value(), n, max_b))
      continue;
    out.r[k] = std::clamp(sab.value() / std::sqrt(saa.value() * sbb.value()), -1.0, 1.0);
    out.valid[k] = true;
  }
  return out;
}

Matrix affine_rows(const Matrix& x, const Matrix& weights, const Vector& intercept) {
  const Eigen::Index rows = x.rows(), outs = weights.rows(), dims = x.cols();
  Matrix y(rows, outs);
  for (Eigen::Index t = 0; t < rows; ++t)
    for (Eigen::Index o = 0; o < outs; ++o) {
      double acc = 0.0;
      for (Eigen::Index d = 0; d < dims; ++d) acc += x(t, d) * weights(o, d);
      y(t, o) = acc + intercept(o);
    }
  return y;
}

Matrix decimate(const Matrix& in, std::span<const double> taps, std::size_t factor,
                std::size_t out_frames) {
  const auto last = static_cast<std::ptrdiff_t>(in.rows()) - 1;
  const auto half = static_cast<std::ptrdiff_t>(taps.size() / 2);
  Matrix out(static_cast<Eigen::Index>(out_frames), in.cols());
  for (std::size_t k = 0; k < out_frames; ++k) {
    const auto centre = static_cast<std::ptrdiff_t>(k * factor);
    for (Eigen::Index c = 0; c < in.cols(); ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < taps.size(); ++j) {
        const std::ptrdiff_t src = std::clamp<std::ptrdiff_t>(
            centre + static_cast<std::ptrdiff_t>(j) - half, 0, last);
        acc += taps[j] * in(src, c);
      }
      out(static_cast<Eigen::Index>(k), c) = acc;
    }
  }
  return out;
}

Matrix interpolate_rows(const Matrix& in, std::span<const double> positions) {
  const Eigen::Index last = in.rows() - 1;
  Matrix out(static_cast<Eigen::Index>(positions.size()), in.cols());
  for (std::size_t k = 0; k < positions.size(); ++k) {
    const double p = std::clamp(positions[k], 0.0, static_cast<double>(last));
    const auto i0 = static_cast<Eigen::Index>(std::floor(p));
    const Eigen::Index i1 = std::min(i0 + 1, last);
    const double frac = p - static_cast<double>(i0);
    for (Eigen::Index c = 0; c < in.cols(); ++c)
      out(static_cast<Eigen::Index>(k), c) = in(i0, c) + frac * (in(i1, c) - in(i0, c));
  }
  return out;
}

}  // namespace artprobe::kernels::serial

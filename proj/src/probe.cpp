#include "artprobe/probe.hpp"

#include "artprobe/error.hpp"
#include "artprobe/tensor_io.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>
#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>

namespace artprobe {
namespace {

using ColMatrix = Eigen::MatrixXd;

// Rows per QR block; the running triangle is stacked on top of each block.
Eigen::Index qr_block_rows(Eigen::Index dims) { return std::max<Eigen::Index>(4 * dims, 512); }

// Reduces the centred system to (R, Q^T Y) with R square upper-triangular.
void streamed_qr(const Matrix& X, const Vector& x_mean, const Matrix& Y, const Vector& y_mean, ColMatrix& r,
                 ColMatrix& qty) {
  const Eigen::Index n = X.rows(), d = X.cols(), k = Y.cols();
  const Eigen::Index block = qr_block_rows(d);
  r.resize(0, d);
  qty.resize(0, k);
  for (Eigen::Index start = 0; start < n; start += block) {
    const Eigen::Index rows = std::min(block, n - start);
    ColMatrix stacked(r.rows() + rows, d);
    ColMatrix rhs(r.rows() + rows, k);
    stacked.topRows(r.rows()) = r;
    rhs.topRows(r.rows()) = qty;
    stacked.bottomRows(rows) = X.middleRows(start, rows).rowwise() - x_mean.transpose();
    rhs.bottomRows(rows) = Y.middleRows(start, rows).rowwise() - y_mean.transpose();
    Eigen::HouseholderQR<ColMatrix> qr(stacked);
    const Eigen::Index keep = std::min(stacked.rows(), d);
    r = qr.matrixQR().topRows(keep).triangularView<Eigen::Upper>();
    rhs.applyOnTheLeft(qr.householderQ().adjoint());
    qty = rhs.topRows(keep);
  }
}

}  // namespace

LinearProbe fit_ols(const Matrix& X, const Matrix& Y, double rank_tolerance) {
  const Eigen::Index n = X.rows(), d = X.cols();
  if (n < 2) throw FitError("OLS needs at least 2 frames, got " + std::to_string(n));
  if (Y.rows() != n) throw ArgumentError("X and Y have different frame counts");
  if (d < 1 || Y.cols() < 1) throw ArgumentError("OLS needs at least one feature and one target");
  if (!X.allFinite() || !Y.allFinite()) throw FitError("OLS input contains non-finite values");

  const Matrix* xs[] = {&X};
  const Matrix* ys[] = {&Y};
  const Vector x_mean = kernels::column_moments(xs).mean;
  const Vector y_mean = kernels::column_moments(ys).mean;

  ColMatrix r, rhs;
  if (n >= d) {
    streamed_qr(X, x_mean, Y, y_mean, r, rhs);
  } else {
    r = X.rowwise() - x_mean.transpose();
    rhs = Y.rowwise() - y_mean.transpose();
  }

  Eigen::BDCSVD<ColMatrix> svd(r, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  const double cutoff = rank_tolerance * (sv.size() ? sv(0) : 0.0);
  Vector inv = Vector::Zero(sv.size());
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > cutoff && sv(i) > 0.0) {
      inv(i) = 1.0 / sv(i);
      ++rank;
    }
  const ColMatrix solution = svd.matrixV() * (inv.asDiagonal() * (svd.matrixU().transpose() * rhs));

  LinearProbe p;
  p.weights = solution.transpose();
  p.intercept = y_mean - p.weights * x_mean;
  p.train_frames = static_cast<std::size_t>(n);
  p.rank_tolerance = rank_tolerance;
  p.rank = rank;
  if (!p.weights.allFinite() || !p.intercept.allFinite()) throw FitError("OLS produced non-finite weights");
  return p;
}

Matrix predict(const LinearProbe& probe, const Matrix& X) {
  if (static_cast<std::size_t>(X.cols()) != probe.dim())
    throw ArgumentError("probe expects " + std::to_string(probe.dim()) + " feature dims, got " +
                        std::to_string(X.cols()));
  return kernels::affine_rows(X, probe.weights, probe.intercept);
}

double pearson_r(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ArgumentError("pearson_r: length mismatch");
  if (a.size() < 2) throw ArgumentError("pearson_r: need at least 2 samples");
  Matrix ma(static_cast<Eigen::Index>(a.size()), 1), mb(static_cast<Eigen::Index>(b.size()), 1);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) throw ArgumentError("pearson_r: non-finite input");
    ma(static_cast<Eigen::Index>(i), 0) = a[i];
    mb(static_cast<Eigen::Index>(i), 0) = b[i];
  }
  const auto c = kernels::serial::column_pearson(ma, mb, {0, a.size()});
  if (!c.valid[0]) throw UndefinedCorrelation("pearson_r: constant input");
  return c.r[0];
}

std::string to_string(ScoreMode m) { return m == ScoreMode::pooled ? "pooled" : "per-utterance-mean"; }

ScoreMode parse_score_mode(const std::string& s) {
  if (s == "pooled") return ScoreMode::pooled;
  if (s == "per-utterance-mean") return ScoreMode::per_utterance_mean;
  throw ArgumentError("unknown scoring mode '" + s + "' (pooled|per-utterance-mean)");
}

std::size_t ChannelScores::valid_count() const { return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), true)); }

double ChannelScores::mean_valid() const {
  double sum = 0.0;
  std::size_t k = 0;
  for (std::size_t c = 0; c < r.size(); ++c)
    if (valid[c]) {
      sum += r[c];
      ++k;
    }
  if (k == 0) throw UndefinedCorrelation("no valid channel correlations");
  return sum / static_cast<double>(k);
}

ChannelScores score_probe(const LinearProbe& probe, const Matrix& X_test, const Matrix& Y_test, ScoreMode mode,
                          std::span<const kernels::RowRange> spans, bool strict) {
  if (X_test.rows() == 0) throw ArgumentError("empty test set");
  if (X_test.rows() != Y_test.rows()) throw ArgumentError("test features and targets are not aligned");
  if (Y_test.cols() != probe.weights.rows()) throw ArgumentError("test targets do not match probe outputs");
  const Matrix predicted = predict(probe, X_test);
  const auto channels = static_cast<std::size_t>(Y_test.cols());

  ChannelScores s;
  s.channels = probe.channels;
  if (s.channels.size() != channels) {
    s.channels.clear();
    for (std::size_t c = 0; c < channels; ++c) s.channels.push_back("ch" + std::to_string(c));
  }
  s.n_test = static_cast<std::size_t>(X_test.rows());

  if (mode == ScoreMode::pooled) {
    const auto c = kernels::column_pearson(Y_test, predicted, {0, s.n_test});
    s.r = c.r;
    s.valid = c.valid;
  } else {
    if (spans.empty()) throw ArgumentError("per-utterance scoring needs utterance spans");
    std::vector<double> sums(channels, 0.0);
    std::vector<std::size_t> counts(channels, 0);
    for (const auto& span : spans) {
      if (span.end > s.n_test || span.begin > span.end) throw ArgumentError("utterance span out of range");
      const auto c = kernels::column_pearson(Y_test, predicted, span);
      for (std::size_t k = 0; k < channels; ++k)
        if (c.valid[k]) {
          sums[k] += c.r[k];
          ++counts[k];
        }
    }
    s.r.assign(channels, 0.0);
    s.valid.assign(channels, false);
    for (std::size_t k = 0; k < channels; ++k)
      if (counts[k]) {
        s.r[k] = sums[k] / static_cast<double>(counts[k]);
        s.valid[k] = true;
      }
  }
  if (strict)
    for (std::size_t k = 0; k < channels; ++k)
      if (!s.valid[k]) throw UndefinedCorrelation("channel '" + s.channels[k] + "' has undefined correlation");
  return s;
}

void save_probe(const LinearProbe& probe, const std::filesystem::path& path) {
  TimeSeries w;
  w.data = probe.weights;
  w.rate_hz = 1.0;
  w.dtype = Dtype::f64;
  for (std::size_t i = 0; i < probe.dim(); ++i) w.channels.push_back("d" + std::to_string(i));
  write_tensor_file(w, path);

  nlohmann::json meta;
  meta["intercept"] = std::vector<double>(probe.intercept.data(), probe.intercept.data() + probe.intercept.size());
  meta["dim"] = probe.dim();
  meta["channels"] = probe.channels;
  meta["rank_tolerance"] = probe.rank_tolerance;
  meta["rank"] = probe.rank;
  meta["train_frames"] = probe.train_frames;
  meta["train_seconds"] = probe.train_seconds;
  std::filesystem::path sidecar = path;
  sidecar += ".json";
  std::ofstream out(sidecar, std::ios::trunc);
  if (!out) throw IoError("cannot write probe metadata '" + sidecar.string() + "'");
  out << meta.dump(1) << '\n';
}

LinearProbe load_probe(const std::filesystem::path& path) {
  const TimeSeries w = read_tensor_file(path);
  std::filesystem::path sidecar = path;
  sidecar += ".json";
  std::ifstream in(sidecar);
  if (!in) throw IoError("cannot open probe metadata '" + sidecar.string() + "'");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
    LinearProbe p;
    p.weights = w.data;
    const auto b = meta.at("intercept").get<std::vector<double>>();
    if (b.size() != static_cast<std::size_t>(p.weights.rows()) || meta.at("dim").get<std::size_t>() != p.dim())
      throw FormatError("probe metadata does not match weight tensor shape");
    p.intercept = Eigen::Map<const Vector>(b.data(), static_cast<Eigen::Index>(b.size()));
    p.channels = meta.at("channels").get<std::vector<std::string>>();
    p.rank_tolerance = meta.at("rank_tolerance").get<double>();
    p.rank = meta.at("rank").get<std::size_t>();
    p.train_frames = meta.at("train_frames").get<std::size_t>();
    p.train_seconds = meta.at("train_seconds").get<double>();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad probe metadata '" + sidecar.string() + "': " + e.what());
  }
}

}  // namespace artprobe

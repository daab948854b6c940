#pragma once

#include "artprobe/kernels.hpp"
#include "artprobe/time_series.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace artprobe {

// Relative singular-value cutoff for the least-squares solve.
inline constexpr double kRankTolerance = 1e-10;

struct LinearProbe {
  Matrix weights;    // targets x D
  Vector intercept;  // targets
  std::vector<std::string> channels;
  std::size_t train_frames = 0;
  double train_seconds = 0.0;
  double rank_tolerance = kRankTolerance;
  std::size_t rank = 0;

  std::size_t dim() const { return static_cast<std::size_t>(weights.cols()); }
};

// Least-squares affine map Y ~ X * W^T + b. Columns are centred first, then
// the centred system is reduced by a streamed Householder QR and solved through
// the SVD of the triangular factor, dropping singular values below
// rank_tolerance * sigma_max. Rank-deficient systems get the minimum-norm W.
LinearProbe fit_ols(const Matrix& X, const Matrix& Y, double rank_tolerance = kRankTolerance);

Matrix predict(const LinearProbe& probe, const Matrix& X);

// Population-normalised Pearson correlation. Throws UndefinedCorrelation when
// either input is constant.
double pearson_r(std::span<const double> a, std::span<const double> b);

enum class ScoreMode { pooled, per_utterance_mean };
std::string to_string(ScoreMode m);
ScoreMode parse_score_mode(const std::string& s);

struct ChannelScores {
  std::vector<std::string> channels;
  std::vector<double> r;
  std::vector<bool> valid;
  std::size_t n_test = 0;

  std::size_t valid_count() const;
  // Mean r over valid channels; throws if none are valid.
  double mean_valid() const;
};

// Correlates each target channel with its prediction on the held-out rows.
// Constant channels are flagged invalid (or throw when strict).
ChannelScores score_probe(const LinearProbe& probe, const Matrix& X_test, const Matrix& Y_test,
                          ScoreMode mode = ScoreMode::pooled, std::span<const kernels::RowRange> spans = {},
                          bool strict = false);

// W goes to an APT1 tensor (rows = target channels); the rest to "<path>.json".
void save_probe(const LinearProbe& probe, const std::filesystem::path& path);
LinearProbe load_probe(const std::filesystem::path& path);

}  // namespace artprobe

#pragma once

#include "artprobe/kernels.hpp"
#include "artprobe/manifest.hpp"
#include "artprobe/time_series.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace artprobe {

inline constexpr double kTargetRateHz = 50.0;

// Anti-aliasing kernel for integer-factor decimation: Blackman-windowed sinc,
// cutoff 0.45 x output rate, 8 zero crossings per side, unit DC gain.
inline constexpr double kAntiAliasCutoff = 0.45;
inline constexpr int kAntiAliasZeroCrossings = 8;

std::vector<double> decimation_taps(std::size_t factor);

// Integer downsampling factors use the polyphase filter above; any other ratio
// uses linear interpolation on the frame-time axis. Output length is
// round(T * target / rate).
TimeSeries resample(const TimeSeries& series, double target_hz);

enum class NormScope { train_only, all_data };
std::string to_string(NormScope s);
NormScope parse_norm_scope(const std::string& s);

struct Normalizer {
  std::vector<std::string> channels;
  Vector mean;
  Vector stddev;
  NormScope scope = NormScope::train_only;
};

Normalizer fit_normalizer(std::span<const TimeSeries> train, NormScope scope = NormScope::train_only);
Normalizer fit_normalizer(std::span<const Matrix* const> blocks, const std::vector<std::string>& channels,
                          NormScope scope);
TimeSeries apply_normalizer(const Normalizer& n, const TimeSeries& series);
void apply_normalizer_inplace(const Normalizer& n, Matrix& data);
TimeSeries invert_normalizer(const Normalizer& n, const TimeSeries& series);

std::pair<Matrix, Matrix> align_pair(const TimeSeries& features, const TimeSeries& ema,
                                     std::size_t frame_tolerance);

enum class SplitPolicy { manifest, standard, seeded };
std::string to_string(SplitPolicy p);
SplitPolicy parse_split_policy(const std::string& s);

// "standard": the last test-size non-rejected utterances in corpus order are test.
// "seeded": a uniformly drawn test set of the same size. "manifest": unchanged.
DatasetManifest make_splits(const DatasetManifest& manifest, SplitPolicy policy, std::uint64_t seed);

// Whole utterances in seeded-shuffle order until the cumulative duration first
// reaches the budget.
std::vector<Utterance> subset_by_duration(const std::vector<Utterance>& train, double budget_seconds,
                                          std::uint64_t seed);

struct PairedUtterance {
  std::string id;
  std::string subject;
  Matrix features;  // T x D
  Matrix ema;       // T x 12
};

struct NormalizerPair {
  std::optional<Normalizer> features;
  std::optional<Normalizer> ema;
};

struct DesignMatrices {
  Matrix X;
  Matrix Y;
  std::vector<kernels::RowRange> spans;
  std::vector<std::string> utterance_ids;
  std::string subject;

  std::size_t rows() const { return static_cast<std::size_t>(X.rows()); }
};

DesignMatrices assemble_design(std::span<const PairedUtterance> utterances, const NormalizerPair& normalizers = {});

// Stacks designs (possibly of different subjects) into one; subject becomes "all".
DesignMatrices concat_designs(std::span<const DesignMatrices> parts);

}  // namespace artprobe

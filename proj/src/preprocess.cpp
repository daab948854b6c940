#include "artprobe/preprocess.hpp"

#include "artprobe/error.hpp"
#include "artprobe/rng.hpp"
#include "artprobe/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace artprobe {
namespace {

bool same_rate(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(std::abs(a), std::abs(b)); }

}  // namespace

std::vector<double> decimation_taps(std::size_t factor) {
  if (factor < 1) throw ArgumentError("decimation factor must be >= 1");
  // Cutoff in cycles per input sample.
  const double fc = kAntiAliasCutoff / static_cast<double>(factor);
  const auto half = static_cast<std::ptrdiff_t>(std::ceil(kAntiAliasZeroCrossings / (2.0 * fc)));
  const std::ptrdiff_t len = 2 * half + 1;
  std::vector<double> taps(static_cast<std::size_t>(len));
  double total = 0.0;
  for (std::ptrdiff_t i = 0; i < len; ++i) {
    const double n = static_cast<double>(i - half);
    const double x = 2.0 * fc * n;
    const double sinc = n == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
    const double phase = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(len - 1);
    const double blackman = 0.42 - 0.5 * std::cos(phase) + 0.08 * std::cos(2.0 * phase);
    taps[static_cast<std::size_t>(i)] = 2.0 * fc * sinc * blackman;
    total += taps[static_cast<std::size_t>(i)];
  }
  for (auto& t : taps) t /= total;
  return taps;
}

TimeSeries resample(const TimeSeries& series, double target_hz) {
  if (!(target_hz > 0.0) || !std::isfinite(target_hz)) throw ArgumentError("resample target rate must be positive");
  if (!(series.rate_hz > 0.0)) throw ArgumentError("resample source rate must be positive");
  TimeSeries out;
  out.channels = series.channels;
  out.dtype = series.dtype;
  out.rate_hz = target_hz;
  if (same_rate(series.rate_hz, target_hz)) {
    out.data = series.data;
    return out;
  }
  const double ratio = series.rate_hz / target_hz;
  const auto frames = static_cast<std::size_t>(
      std::max(1.0, std::round(static_cast<double>(series.frames()) * target_hz / series.rate_hz)));
  const double factor = std::round(ratio);
  if (factor >= 2.0 && std::abs(ratio - factor) <= 1e-9 * ratio) {
    const auto m = static_cast<std::size_t>(factor);
    const auto taps = decimation_taps(m);
    out.data = kernels::decimate(series.data, taps, m, frames);
  } else {
    std::vector<double> positions(frames);
    for (std::size_t k = 0; k < frames; ++k) positions[k] = static_cast<double>(k) * ratio;
    out.data = kernels::interpolate_rows(series.data, positions);
  }
  return out;
}

std::string to_string(NormScope s) { return s == NormScope::train_only ? "train-only" : "all-data"; }

NormScope parse_norm_scope(const std::string& s) {
  if (s == "train-only") return NormScope::train_only;
  if (s == "all-data") return NormScope::all_data;
  throw ArgumentError("unknown normalisation scope '" + s + "' (train-only|all-data)");
}

Normalizer fit_normalizer(std::span<const Matrix* const> blocks, const std::vector<std::string>& channels,
                          NormScope scope) {
  if (blocks.empty()) throw FitError("normaliser needs at least one series");
  for (const Matrix* b : blocks)
    if (static_cast<std::size_t>(b->cols()) != channels.size())
      throw FitError("normaliser inputs have inconsistent channel layouts");
  const auto moments = kernels::column_moments(blocks);
  if (moments.count == 0) throw FitError("normaliser inputs contain no frames");
  for (std::size_t c = 0; c < channels.size(); ++c) {
    const auto i = static_cast<Eigen::Index>(c);
    const double scale = std::max(1.0, std::abs(moments.mean(i)));
    if (!std::isfinite(moments.stddev(i)) || moments.stddev(i) <= 1e-12 * scale)
      throw FitError("channel '" + channels[c] + "' has zero variance");
  }
  return {channels, moments.mean, moments.stddev, scope};
}

Normalizer fit_normalizer(std::span<const TimeSeries> train, NormScope scope) {
  if (train.empty()) throw FitError("normaliser needs at least one series");
  std::vector<const Matrix*> blocks;
  for (const auto& s : train) {
    if (s.channels != train.front().channels) throw FitError("normaliser inputs have inconsistent channel layouts");
    blocks.push_back(&s.data);
  }
  return fit_normalizer(blocks, train.front().channels, scope);
}

void apply_normalizer_inplace(const Normalizer& n, Matrix& data) {
  if (static_cast<std::size_t>(data.cols()) != n.channels.size())
    throw ArgumentError("normaliser expects " + std::to_string(n.channels.size()) + " channels, got " +
                        std::to_string(data.cols()));
  for (Eigen::Index c = 0; c < data.cols(); ++c)
    data.col(c) = (data.col(c).array() - n.mean(c)) / n.stddev(c);
}

TimeSeries apply_normalizer(const Normalizer& n, const TimeSeries& series) {
  if (series.channels != n.channels) throw ArgumentError("channel layout does not match normaliser");
  TimeSeries out = series;
  apply_normalizer_inplace(n, out.data);
  return out;
}

TimeSeries invert_normalizer(const Normalizer& n, const TimeSeries& series) {
  if (series.channels != n.channels) throw ArgumentError("channel layout does not match normaliser");
  TimeSeries out = series;
  for (Eigen::Index c = 0; c < out.data.cols(); ++c)
    out.data.col(c) = out.data.col(c).array() * n.stddev(c) + n.mean(c);
  return out;
}

std::pair<Matrix, Matrix> align_pair(const TimeSeries& features, const TimeSeries& ema, std::size_t frame_tolerance) {
  const auto report = validate_pairing(features, ema, frame_tolerance);
  const auto n = static_cast<Eigen::Index>(report.common_length);
  return {features.data.topRows(n), ema.data.topRows(n)};
}

std::string to_string(SplitPolicy p) {
  switch (p) {
    case SplitPolicy::manifest: return "manifest";
    case SplitPolicy::standard: return "standard";
    case SplitPolicy::seeded: return "seeded";
  }
  return "?";
}

SplitPolicy parse_split_policy(const std::string& s) {
  if (s == "manifest") return SplitPolicy::manifest;
  if (s == "standard") return SplitPolicy::standard;
  if (s == "seeded") return SplitPolicy::seeded;
  throw ArgumentError("unknown split policy '" + s + "' (manifest|standard|seeded)");
}

DatasetManifest make_splits(const DatasetManifest& manifest, SplitPolicy policy, std::uint64_t seed) {
  DatasetManifest out = manifest;
  if (policy == SplitPolicy::manifest) return out;
  for (auto& subject : out.subjects) {
    const auto test_size = corpus_test_size(subject.corpus);
    if (!test_size)
      throw ArgumentError("no held-out test size defined for corpus '" + subject.corpus + "' (subject " +
                          subject.id + ")");
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < subject.utterances.size(); ++i)
      if (subject.utterances[i].split != Split::rejected) usable.push_back(i);
    if (usable.size() < *test_size)
      throw ArgumentError("subject " + subject.id + " has " + std::to_string(usable.size()) +
                          " usable utterances, fewer than the " + std::to_string(*test_size) + " test utterances required");
    if (usable.size() == *test_size)
      throw ArgumentError("subject " + subject.id + " would have no training utterances");
    std::vector<std::size_t> test;
    if (policy == SplitPolicy::standard) {
      test.assign(usable.end() - static_cast<std::ptrdiff_t>(*test_size), usable.end());
    } else {
      auto shuffled = usable;
      portable_shuffle(shuffled, derive_seed(seed, fnv1a(subject.id)));
      test.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(*test_size));
    }
    for (const auto i : usable) subject.utterances[i].split = Split::train;
    for (const auto i : test) subject.utterances[i].split = Split::test;
  }
  return out;
}

std::vector<Utterance> subset_by_duration(const std::vector<Utterance>& train, double budget_seconds,
                                          std::uint64_t seed) {
  if (!(budget_seconds > 0.0)) throw ArgumentError("training budget must be positive");
  double total = 0.0;
  for (const auto& u : train) total += u.duration_seconds;
  constexpr double kSlack = 1e-9;
  if (total + kSlack < budget_seconds)
    throw ArgumentError("training budget " + std::to_string(budget_seconds) + " s exceeds available " +
                        std::to_string(total) + " s");
  std::vector<std::size_t> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  portable_shuffle(order, seed);
  std::vector<Utterance> out;
  double acc = 0.0;
  for (const auto i : order) {
    out.push_back(train[i]);
    acc += train[i].duration_seconds;
    if (acc + kSlack >= budget_seconds) break;
  }
  return out;
}

DesignMatrices assemble_design(std::span<const PairedUtterance> utterances, const NormalizerPair& normalizers) {
  if (utterances.empty()) throw ArgumentError("cannot assemble a design from zero utterances");
  DesignMatrices d;
  d.subject = utterances.front().subject;
  const Eigen::Index dims = utterances.front().features.cols();
  const Eigen::Index targets = utterances.front().ema.cols();
  std::size_t total = 0;
  for (const auto& u : utterances) {
    if (u.subject != d.subject)
      throw ArgumentError("design mixes subjects '" + d.subject + "' and '" + u.subject + "'");
    if (u.features.rows() != u.ema.rows())
      throw ArgumentError("utterance '" + u.id + "' is not aligned");
    if (u.features.cols() != dims || u.ema.cols() != targets)
      throw ArgumentError("utterance '" + u.id + "' has inconsistent dimensions");
    total += static_cast<std::size_t>(u.features.rows());
  }
  d.X.resize(static_cast<Eigen::Index>(total), dims);
  d.Y.resize(static_cast<Eigen::Index>(total), targets);
  std::size_t row = 0;
  for (const auto& u : utterances) {
    const auto n = u.features.rows();
    d.X.middleRows(static_cast<Eigen::Index>(row), n) = u.features;
    d.Y.middleRows(static_cast<Eigen::Index>(row), n) = u.ema;
    d.spans.push_back({row, row + static_cast<std::size_t>(n)});
    d.utterance_ids.push_back(u.id);
    row += static_cast<std::size_t>(n);
  }
  if (normalizers.features) apply_normalizer_inplace(*normalizers.features, d.X);
  if (normalizers.ema) apply_normalizer_inplace(*normalizers.ema, d.Y);
  return d;
}

DesignMatrices concat_designs(std::span<const DesignMatrices> parts) {
  if (parts.empty()) throw ArgumentError("cannot concatenate zero designs");
  DesignMatrices d;
  d.subject = parts.size() == 1 ? parts.front().subject : "all";
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.X.cols() != parts.front().X.cols())
      throw ArgumentError("feature dimension mismatch across subjects (" + std::to_string(parts.front().X.cols()) +
                          " vs " + std::to_string(p.X.cols()) + " for " + p.subject + ")");
    total += p.rows();
  }
  d.X.resize(static_cast<Eigen::Index>(total), parts.front().X.cols());
  d.Y.resize(static_cast<Eigen::Index>(total), parts.front().Y.cols());
  std::size_t row = 0;
  for (const auto& p : parts) {
    const auto n = static_cast<Eigen::Index>(p.rows());
    d.X.middleRows(static_cast<Eigen::Index>(row), n) = p.X;
    d.Y.middleRows(static_cast<Eigen::Index>(row), n) = p.Y;
    for (std::size_t i = 0; i < p.spans.size(); ++i) {
      d.spans.push_back({p.spans[i].begin + row, p.spans[i].end + row});
      d.utterance_ids.push_back(p.subject + "/" + p.utterance_ids[i]);
    }
    row += p.rows();
  }
  return d;
}

}  // namespace artprobe

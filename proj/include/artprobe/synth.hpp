#pragma once

#include "artprobe/manifest.hpp"
#include "artprobe/time_series.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

namespace artprobe {

// How the true feature->EMA maps relate across subjects.
enum class MapSharing {
  shared,       // one map for every subject
  independent,  // an independent gaussian map per subject
  orthogonal,   // maps supported on disjoint feature blocks
};
std::string to_string(MapSharing m);
MapSharing parse_map_sharing(const std::string& s);

struct SynthConfig {
  std::size_t dim = 64;
  std::vector<std::string> subjects = {"S1"};
  std::size_t train_utterances = 60;
  std::size_t test_utterances = 12;
  double utterance_seconds = 10.0;
  double rate_hz = 50.0;
  double snr = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 1;
  // Std of independent gaussian noise added to the informative features, one
  // entry per emitted layer.
  std::vector<double> layer_noise = {0.0};
  MapSharing maps = MapSharing::independent;
  bool identical_subjects = false;
  double band_limit_hz = 8.0;
  std::string representation = "synth";
};

// Driver process: per latent dimension, a sum of this many random-phase
// sinusoids with frequencies below the band limit, scaled to unit variance.
inline constexpr int kDriverSinusoids = 16;
inline constexpr double kDriverMinHz = 0.25;

struct SynthSubject {
  std::string id;
  Matrix true_map;        // 12 x dim
  Vector true_intercept;  // 12
  Vector noise_std;       // 12, set from the realised signal power and snr
};

struct SynthUtterance {
  std::string subject;
  std::string id;
  Split split = Split::train;
  TimeSeries ema;
  std::vector<TimeSeries> layers;  // features per layer, stored at f32 precision
};

struct SyntheticWorld {
  SynthConfig config;
  std::vector<SynthSubject> subjects;
  std::vector<SynthUtterance> utterances;

  DatasetManifest manifest() const;
};

SyntheticWorld gen_world(const SynthConfig& config);

// Writes ema/<S>/<utt>.apt, feats/<rep>/L<layer>/<S>/<utt>.apt, manifest.tsv
// and world.json under dir. Returns the manifest path.
std::filesystem::path write_world(const SyntheticWorld& world, const std::filesystem::path& dir);

// Expected correlation between the noisy target and the recovered signal:
// sqrt(snr / (1 + snr)).
double expected_r(double snr);

}  // namespace artprobe

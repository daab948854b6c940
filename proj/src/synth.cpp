#include "artprobe/synth.hpp"

#include "artprobe/ema_ingest.hpp"
#include "artprobe/error.hpp"
#include "artprobe/kernels.hpp"
#include "artprobe/rng.hpp"
#include "artprobe/tensor_io.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

namespace artprobe {
namespace {

std::string utterance_id(const std::string& subject, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "_u%04zu", i);
  return subject + buf;
}

Matrix driver_process(std::size_t frames, std::size_t dim, double rate_hz, double band_limit, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> freq(kDriverMinHz, band_limit);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  // Each sinusoid has variance a^2/2; 16 of them sum to unit variance.
  const double amplitude = std::sqrt(2.0 / kDriverSinusoids);
  Matrix f = Matrix::Zero(static_cast<Eigen::Index>(frames), static_cast<Eigen::Index>(dim));
  for (std::size_t d = 0; d < dim; ++d)
    for (int k = 0; k < kDriverSinusoids; ++k) {
      const double w = 2.0 * std::numbers::pi * freq(rng) / rate_hz;
      const double p = phase(rng);
      for (std::size_t t = 0; t < frames; ++t)
        f(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(d)) += amplitude * std::sin(w * static_cast<double>(t) + p);
    }
  return f;
}

SynthSubject make_subject(const SynthConfig& c, std::size_t index, std::uint64_t seed) {
  SynthSubject s;
  s.id = c.subjects[index];
  std::mt19937_64 rng(derive_seed(seed, 0x5b, index));
  std::normal_distribution<double> gauss;
  const auto dim = static_cast<Eigen::Index>(c.dim);
  s.true_map = Matrix::Zero(static_cast<Eigen::Index>(kNumEmaChannels), dim);
  Eigen::Index begin = 0, width = dim;
  if (c.maps == MapSharing::orthogonal) {
    width = dim / static_cast<Eigen::Index>(c.subjects.size());
    begin = static_cast<Eigen::Index>(index) * width;
  }
  for (Eigen::Index o = 0; o < s.true_map.rows(); ++o)
    for (Eigen::Index d = begin; d < begin + width; ++d) s.true_map(o, d) = gauss(rng) / std::sqrt(double(width));
  s.true_intercept.resize(static_cast<Eigen::Index>(kNumEmaChannels));
  for (Eigen::Index o = 0; o < s.true_intercept.size(); ++o) s.true_intercept(o) = gauss(rng);
  return s;
}

}  // namespace

std::string to_string(MapSharing m) {
  switch (m) {
    case MapSharing::shared: return "shared";
    case MapSharing::independent: return "independent";
    case MapSharing::orthogonal: return "orthogonal";
  }
  return "?";
}

MapSharing parse_map_sharing(const std::string& s) {
  if (s == "shared") return MapSharing::shared;
  if (s == "independent") return MapSharing::independent;
  if (s == "orthogonal") return MapSharing::orthogonal;
  throw ArgumentError("unknown map sharing '" + s + "' (shared|independent|orthogonal)");
}

double expected_r(double snr) {
  if (std::isnan(snr) || snr < 0.0) throw ArgumentError("snr must be non-negative");
  if (std::isinf(snr)) return 1.0;
  return std::sqrt(snr / (1.0 + snr));
}

SyntheticWorld gen_world(const SynthConfig& config) {
  if (std::isnan(config.snr) || config.snr < 0.0) throw ArgumentError("snr must be non-negative");
  if (config.dim < 1 || config.subjects.empty() || config.train_utterances < 1 || config.test_utterances < 1 ||
      !(config.utterance_seconds > 0) || !(config.rate_hz > 0) || config.layer_noise.empty())
    throw ArgumentError("synthetic world parameters must be positive");
  if (!(config.band_limit_hz > kDriverMinHz) || config.band_limit_hz >= config.rate_hz / 2)
    throw ArgumentError("band limit must lie between 0.25 Hz and the Nyquist rate");
  for (const double s : config.layer_noise)
    if (!(s >= 0.0)) throw ArgumentError("layer noise must be non-negative");
  if (config.maps == MapSharing::orthogonal && config.dim < config.subjects.size())
    throw ArgumentError("orthogonal maps need dim >= number of subjects");

  SyntheticWorld world;
  world.config = config;
  const std::size_t n_subjects = config.subjects.size();
  for (std::size_t s = 0; s < n_subjects; ++s) {
    const std::size_t source = config.identical_subjects || config.maps == MapSharing::shared ? 0 : s;
    auto subject = make_subject(config, config.maps == MapSharing::orthogonal ? s : source, config.seed);
    subject.id = config.subjects[s];
    world.subjects.push_back(std::move(subject));
  }

  const std::size_t per_subject = config.train_utterances + config.test_utterances;
  const auto frames = static_cast<std::size_t>(std::llround(config.utterance_seconds * config.rate_hz));
  if (frames < 2) throw ArgumentError("utterances must span at least 2 frames");
  const std::size_t total = n_subjects * per_subject;
  world.utterances.resize(total);
  std::vector<Matrix> signals(total);

  const auto utt_seed = [&](std::size_t s, std::size_t u) {
    return derive_seed(config.seed, config.identical_subjects ? 0 : s + 1, u);
  };

  // Pass 1: driver features, per-layer observations and the clean EMA signal.
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(total); ++i) {
    const std::size_t s = static_cast<std::size_t>(i) / per_subject, u = static_cast<std::size_t>(i) % per_subject;
    auto& utt = world.utterances[static_cast<std::size_t>(i)];
    utt.subject = config.subjects[s];
    utt.id = utterance_id(utt.subject, u);
    utt.split = u < config.train_utterances ? Split::train : Split::test;
    const std::uint64_t seed = utt_seed(s, u);
    const Matrix driver = driver_process(frames, config.dim, config.rate_hz, config.band_limit_hz, seed);
    std::mt19937_64 rng(derive_seed(seed, 0xfea7));
    std::normal_distribution<double> gauss;
    for (std::size_t l = 0; l < config.layer_noise.size(); ++l) {
      TimeSeries layer;
      layer.rate_hz = config.rate_hz;
      layer.dtype = Dtype::f32;
      for (std::size_t d = 0; d < config.dim; ++d) layer.channels.push_back("d" + std::to_string(d));
      layer.data = driver;
      if (config.layer_noise[l] > 0.0)
        for (Eigen::Index k = 0; k < layer.data.size(); ++k) layer.data.data()[k] += config.layer_noise[l] * gauss(rng);
      layer.data = layer.data.cast<float>().cast<double>();
      utt.layers.push_back(std::move(layer));
    }
    const auto& subject = world.subjects[s];
    signals[static_cast<std::size_t>(i)] = driver * subject.true_map.transpose();
  }

  // Noise std per channel from the realised signal power of each subject.
  for (std::size_t s = 0; s < n_subjects; ++s) {
    std::vector<const Matrix*> blocks;
    for (std::size_t u = 0; u < per_subject; ++u) blocks.push_back(&signals[s * per_subject + u]);
    const auto moments = kernels::column_moments(blocks);
    auto& subject = world.subjects[s];
    subject.noise_std.resize(moments.stddev.size());
    for (Eigen::Index c = 0; c < moments.stddev.size(); ++c) {
      if (config.snr == 0.0)
        subject.noise_std(c) = 1.0;
      else if (std::isinf(config.snr))
        subject.noise_std(c) = 0.0;
      else
        subject.noise_std(c) = moments.stddev(c) / std::sqrt(config.snr);
    }
  }

  // Pass 2: EMA = signal + intercept + noise.
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(total); ++i) {
    const std::size_t s = static_cast<std::size_t>(i) / per_subject, u = static_cast<std::size_t>(i) % per_subject;
    const auto& subject = world.subjects[s];
    auto& utt = world.utterances[static_cast<std::size_t>(i)];
    std::mt19937_64 rng(derive_seed(utt_seed(s, u), 0xe3a));
    std::normal_distribution<double> gauss;
    Matrix y = config.snr == 0.0 ? Matrix::Zero(signals[static_cast<std::size_t>(i)].rows(), signals[static_cast<std::size_t>(i)].cols())
                                 : signals[static_cast<std::size_t>(i)];
    for (Eigen::Index t = 0; t < y.rows(); ++t)
      for (Eigen::Index c = 0; c < y.cols(); ++c) y(t, c) += subject.true_intercept(c) + subject.noise_std(c) * gauss(rng);
    utt.ema.data = std::move(y);
    utt.ema.rate_hz = config.rate_hz;
    utt.ema.channels = canonical_channel_names();
    utt.ema.dtype = Dtype::f64;
  }
  return world;
}

DatasetManifest SyntheticWorld::manifest() const {
  DatasetManifest m;
  for (const auto& s : subjects) m.subjects.push_back({s.id, "synth", {}});
  for (const auto& u : utterances) {
    Utterance e;
    e.id = u.id;
    e.duration_seconds = u.ema.duration_seconds();
    e.split = u.split;
    e.ema_path = "ema/" + u.subject + "/" + u.id + ".apt";
    e.feature_template = "feats/{rep}/L{layer}/" + u.subject + "/" + u.id + ".apt";
    m.find_subject(u.subject)->utterances.push_back(std::move(e));
  }
  return m;
}

std::filesystem::path write_world(const SyntheticWorld& world, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  DatasetManifest m = world.manifest();
  m.root = dir;
  const std::string& rep = world.config.representation;
  const auto n = static_cast<std::ptrdiff_t>(world.utterances.size());
  std::vector<std::string> errors(world.utterances.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& u = world.utterances[static_cast<std::size_t>(i)];
    try {
      write_tensor_file(u.ema, dir / "ema" / u.subject / (u.id + ".apt"));
      for (std::size_t l = 0; l < u.layers.size(); ++l)
        write_tensor_file(u.layers[l], dir / "feats" / rep / ("L" + std::to_string(l)) / u.subject / (u.id + ".apt"));
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw IoError(e);

  const auto& c = world.config;
  nlohmann::json meta;
  meta["dim"] = c.dim;
  meta["subjects"] = c.subjects;
  meta["train_utterances"] = c.train_utterances;
  meta["test_utterances"] = c.test_utterances;
  meta["utterance_seconds"] = c.utterance_seconds;
  meta["rate_hz"] = c.rate_hz;
  meta["snr"] = std::isinf(c.snr) ? nlohmann::json("inf") : nlohmann::json(c.snr);
  meta["seed"] = c.seed;
  meta["layer_noise"] = c.layer_noise;
  meta["maps"] = to_string(c.maps);
  meta["identical_subjects"] = c.identical_subjects;
  meta["band_limit_hz"] = c.band_limit_hz;
  meta["representation"] = c.representation;
  meta["expected_r"] = expected_r(c.snr);
  for (const auto& s : world.subjects) {
    auto& js = meta["truth"][s.id];
    js["intercept"] = std::vector<double>(s.true_intercept.data(), s.true_intercept.data() + s.true_intercept.size());
    js["noise_std"] = std::vector<double>(s.noise_std.data(), s.noise_std.data() + s.noise_std.size());
  }
  std::ofstream(dir / "world.json") << meta.dump(1) << '\n';
  const auto manifest_path = dir / "manifest.tsv";
  save_manifest(m, manifest_path);
  return manifest_path;
}

}  // namespace artprobe

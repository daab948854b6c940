#include "artprobe/experiments.hpp"

#include "artprobe/error.hpp"
#include "artprobe/rng.hpp"
#include "artprobe/tensor_io.hpp"

#include <omp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <tuple>

namespace artprobe {
namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double total_duration(const std::vector<Utterance>& utts) {
  double t = 0.0;
  for (const auto& u : utts) t += u.duration_seconds;
  return t;
}

std::vector<std::pair<std::optional<double>, std::uint64_t>> budget_cells(const ExperimentConfig& c) {
  std::vector<std::pair<std::optional<double>, std::uint64_t>> out;
  if (c.budgets.empty() || c.include_full) out.emplace_back(std::nullopt, 0);
  for (const double b : c.budgets)
    for (const auto seed : c.seeds) out.emplace_back(b, seed);
  return out;
}

CellResult failed(const CellKey& key, const std::string& why) {
  CellResult r;
  r.key = key;
  r.ok = false;
  r.error = why;
  return r;
}

CellResult scored(const CellKey& key, ChannelScores scores, std::size_t frames, double seconds) {
  CellResult r;
  r.key = key;
  r.ok = true;
  r.score = scores.mean_valid();
  r.scores = std::move(scores);
  r.train_frames = frames;
  r.train_seconds = seconds;
  return r;
}

}  // namespace

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::per_speaker: return "per-speaker";
    case Scheme::shared: return "shared";
    case Scheme::loso: return "loso";
  }
  return "?";
}

Scheme parse_scheme(const std::string& s) {
  if (s == "per-speaker") return Scheme::per_speaker;
  if (s == "shared") return Scheme::shared;
  if (s == "loso") return Scheme::loso;
  throw ArgumentError("unknown scheme '" + s + "' (per-speaker|shared|loso)");
}

void ExperimentConfig::validate() const {
  for (std::size_t i = 0; i < budgets.size(); ++i) {
    if (!(budgets[i] > 0.0) || !std::isfinite(budgets[i]))
      throw ArgumentError("training budgets must be positive, got " + format_real(budgets[i]));
    if (i > 0 && !(budgets[i] > budgets[i - 1])) throw ArgumentError("training budgets must be strictly increasing");
  }
  if (!budgets.empty() && seeds.empty()) throw ArgumentError("budgeted runs need at least one seed");
  for (const auto seed : seeds)
    if (seed == 0) throw ArgumentError("seed 0 is reserved for full-data cells");
  for (const auto& rep : representations) {
    if (rep.id.empty()) throw ArgumentError("representation id must not be empty");
    if (rep.layers.empty()) throw ArgumentError("representation '" + rep.id + "' lists no layers");
    for (const int l : rep.layers)
      if (l < 0) throw ArgumentError("layer indices must be non-negative");
  }
  if (!(target_hz > 0.0)) throw ArgumentError("target rate must be positive");
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["manifest"] = c.manifest;
  j["representations"] = nlohmann::json::array();
  for (const auto& r : c.representations) j["representations"].push_back({{"id", r.id}, {"layers", r.layers}});
  j["subjects"] = c.subjects;
  j["scheme"] = to_string(c.scheme);
  j["scoring"] = to_string(c.scoring);
  j["budgets"] = c.budgets;
  j["include_full"] = c.include_full;
  j["seeds"] = c.seeds;
  j["split_policy"] = to_string(c.split_policy);
  j["split_seed"] = c.split_seed;
  j["norm_scope"] = to_string(c.norm_scope);
  j["normalize_features"] = c.normalize_features;
  j["pooled_normalizer"] = c.pooled_normalizer;
  j["target_hz"] = c.target_hz;
  j["frame_tolerance"] = c.frame_tolerance;
  j["strict"] = c.strict;
  return j;
}

ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig c) {
  static const std::set<std::string> kKeys = {
      "manifest",   "representations", "subjects",           "scheme",            "scoring",   "budgets",
      "include_full", "seeds",         "split_policy",       "split_seed",        "norm_scope", "normalize_features",
      "pooled_normalizer", "target_hz", "frame_tolerance",   "strict"};
  if (!j.is_object()) throw ArgumentError("config must be a key/value record");
  for (const auto& [key, _] : j.items())
    if (!kKeys.count(key)) throw ArgumentError("unknown config key '" + key + "'");
  try {
    if (j.contains("manifest")) c.manifest = j["manifest"].get<std::string>();
    if (j.contains("representations")) {
      c.representations.clear();
      for (const auto& r : j["representations"])
        c.representations.push_back({r.at("id").get<std::string>(), r.at("layers").get<std::vector<int>>()});
    }
    if (j.contains("subjects")) c.subjects = j["subjects"].get<std::vector<std::string>>();
    if (j.contains("scheme")) c.scheme = parse_scheme(j["scheme"].get<std::string>());
    if (j.contains("scoring")) c.scoring = parse_score_mode(j["scoring"].get<std::string>());
    if (j.contains("budgets")) {
      c.budgets.clear();
      for (const auto& b : j["budgets"]) c.budgets.push_back(b.is_string() ? parse_budget(b.get<std::string>()) : b.get<double>());
    }
    if (j.contains("include_full")) c.include_full = j["include_full"].get<bool>();
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("split_policy")) c.split_policy = parse_split_policy(j["split_policy"].get<std::string>());
    if (j.contains("split_seed")) c.split_seed = j["split_seed"].get<std::uint64_t>();
    if (j.contains("norm_scope")) c.norm_scope = parse_norm_scope(j["norm_scope"].get<std::string>());
    if (j.contains("normalize_features")) c.normalize_features = j["normalize_features"].get<bool>();
    if (j.contains("pooled_normalizer")) c.pooled_normalizer = j["pooled_normalizer"].get<bool>();
    if (j.contains("target_hz")) c.target_hz = j["target_hz"].get<double>();
    if (j.contains("frame_tolerance")) c.frame_tolerance = j["frame_tolerance"].get<std::size_t>();
    if (j.contains("strict")) c.strict = j["strict"].get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ArgumentError(std::string("bad config value: ") + e.what());
  }
  return c;
}

double parse_budget(const std::string& text) {
  if (text.empty()) throw ArgumentError("empty training budget");
  double scale = 1.0;
  std::string number = text;
  if (text.back() == 's') {
    number.pop_back();
  } else if (text.back() == 'm') {
    number.pop_back();
    scale = 60.0;
  }
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(number.data(), number.data() + number.size(), v);
  if (number.empty() || ec != std::errc() || ptr != number.data() + number.size())
    throw ArgumentError("bad training budget '" + text + "' (expected e.g. 20s, 5m or 300)");
  v *= scale;
  if (!(v > 0.0) || !std::isfinite(v)) throw ArgumentError("training budget must be positive: '" + text + "'");
  return v;
}

std::string budget_label(std::optional<double> budget) { return budget ? format_real(*budget) : "full"; }

std::string CellKey::str() const {
  return representation + "|" + std::to_string(layer) + "|" + subject + "|" + budget_label(budget) + "|" +
         to_string(scheme) + "|" + std::to_string(seed);
}

bool CellKey::operator==(const CellKey& o) const { return str() == o.str(); }
bool CellKey::operator<(const CellKey& o) const { return str() < o.str(); }

// ---------------------------------------------------------------------------
// Data sources

std::uint64_t DataSource::manifest_hash() const {
  std::ostringstream out;
  write_manifest(manifest(), out);
  return fnv1a(out.str());
}

FileSource::FileSource(DatasetManifest manifest) : manifest_(std::move(manifest)) {}

FileSource FileSource::open(const std::filesystem::path& manifest_path) { return FileSource(load_manifest(manifest_path)); }

TimeSeries FileSource::load_ema(const SubjectEntry& subject, const Utterance& u) const {
  const auto path = manifest_.ema_path(u);
  if (!std::filesystem::exists(path))
    throw IoError("missing EMA file for " + subject.id + "/" + u.id + ": " + path.string());
  return read_tensor_file(path);
}

TimeSeries FileSource::load_features(const SubjectEntry& subject, const Utterance& u, const std::string& rep,
                                     int layer) const {
  const auto path = manifest_.feature_path(u, rep, layer);
  if (!std::filesystem::exists(path))
    throw IoError("missing feature file for " + subject.id + "/" + u.id + " (" + rep + " layer " +
                  std::to_string(layer) + "): " + path.string());
  return read_tensor_file(path);
}

MemorySource::MemorySource(std::shared_ptr<const SyntheticWorld> world)
    : world_(std::move(world)), manifest_(world_->manifest()) {
  for (std::size_t i = 0; i < world_->utterances.size(); ++i)
    index_[world_->utterances[i].subject + "/" + world_->utterances[i].id] = i;
}

TimeSeries MemorySource::load_ema(const SubjectEntry& subject, const Utterance& u) const {
  const auto it = index_.find(subject.id + "/" + u.id);
  if (it == index_.end()) throw IoError("no synthetic utterance " + subject.id + "/" + u.id);
  return world_->utterances[it->second].ema;
}

TimeSeries MemorySource::load_features(const SubjectEntry& subject, const Utterance& u, const std::string& rep,
                                       int layer) const {
  const auto it = index_.find(subject.id + "/" + u.id);
  if (it == index_.end()) throw IoError("no synthetic utterance " + subject.id + "/" + u.id);
  const auto& layers = world_->utterances[it->second].layers;
  if (rep != world_->config.representation || layer < 0 || static_cast<std::size_t>(layer) >= layers.size())
    throw IoError("missing feature dump for " + subject.id + "/" + u.id + " (" + rep + " layer " +
                  std::to_string(layer) + ")");
  return layers[static_cast<std::size_t>(layer)];
}

// ---------------------------------------------------------------------------
// Grid store

nlohmann::json cell_to_json(const CellResult& cell, const std::string& settings_hash) {
  nlohmann::json j;
  j["type"] = "cell";
  j["representation"] = cell.key.representation;
  j["layer"] = cell.key.layer;
  j["subject"] = cell.key.subject;
  j["budget"] = budget_label(cell.key.budget);
  j["scheme"] = to_string(cell.key.scheme);
  j["seed"] = cell.key.seed;
  j["settings"] = settings_hash;
  j["status"] = cell.ok ? "ok" : "error";
  if (cell.ok) {
    j["score"] = cell.score;
    j["channels"] = cell.scores.channels;
    j["r"] = cell.scores.r;
    j["valid"] = cell.scores.valid;
    j["n_test"] = cell.scores.n_test;
    j["train_frames"] = cell.train_frames;
    j["train_seconds"] = cell.train_seconds;
  } else {
    j["error"] = cell.error;
  }
  return j;
}

CellResult cell_from_json(const nlohmann::json& j) {
  try {
    CellResult c;
    c.key.representation = j.at("representation").get<std::string>();
    c.key.layer = j.at("layer").get<int>();
    c.key.subject = j.at("subject").get<std::string>();
    const auto budget = j.at("budget").get<std::string>();
    if (budget != "full") c.key.budget = parse_budget(budget);
    c.key.scheme = parse_scheme(j.at("scheme").get<std::string>());
    c.key.seed = j.at("seed").get<std::uint64_t>();
    c.ok = j.at("status").get<std::string>() == "ok";
    if (c.ok) {
      c.score = j.at("score").get<double>();
      c.scores.channels = j.at("channels").get<std::vector<std::string>>();
      c.scores.r = j.at("r").get<std::vector<double>>();
      c.scores.valid = j.at("valid").get<std::vector<bool>>();
      c.scores.n_test = j.at("n_test").get<std::size_t>();
      c.train_frames = j.at("train_frames").get<std::size_t>();
      c.train_seconds = j.at("train_seconds").get<double>();
      if (c.scores.r.size() != c.scores.channels.size() || c.scores.valid.size() != c.scores.channels.size())
        throw FormatError("grid record channel arrays have different lengths");
    } else {
      c.error = j.value("error", std::string());
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad grid record: ") + e.what());
  }
}

std::vector<CellResult> load_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open grid store '" + path.string() + "'");
  std::vector<CellResult> cells;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (j.value("type", "") == "cell") cells.push_back(cell_from_json(j));
  }
  return cells;
}

GridStore::GridStore(std::filesystem::path path) : path_(std::move(path)) {
  if (!std::filesystem::exists(path_)) return;
  std::ifstream in(path_);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      continue;  // torn final line from an interrupted run
    }
    header_written_ = true;
    if (j.value("type", "") == "cell" && j.value("status", "") == "ok") {
      const auto cell = cell_from_json(j);
      completed_[cell.key.str() + "#" + j.value("settings", "")] = j;
    }
  }
}

void GridStore::begin(const nlohmann::json& provenance) {
  if (path_.empty() || header_written_) return;
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::app);
  if (!out) throw IoError("cannot open grid store '" + path_.string() + "'");
  out << provenance.dump() << '\n';
  header_written_ = true;
}

bool GridStore::has(const CellKey& key, const std::string& settings_hash) const {
  return completed_.count(key.str() + "#" + settings_hash) > 0;
}

std::optional<CellResult> GridStore::find(const CellKey& key, const std::string& settings_hash) const {
  const auto it = completed_.find(key.str() + "#" + settings_hash);
  if (it == completed_.end()) return std::nullopt;
  return cell_from_json(it->second);
}

void GridStore::append(const CellResult& cell, const std::string& settings_hash) {
  const auto j = cell_to_json(cell, settings_hash);
  if (cell.ok) completed_[cell.key.str() + "#" + settings_hash] = j;
  if (path_.empty()) return;
  std::ofstream out(path_, std::ios::app);
  if (!out) throw IoError("cannot append to grid store '" + path_.string() + "'");
  out << j.dump() << '\n';
  out.flush();
  if (!out) throw IoError("failed writing grid store '" + path_.string() + "'");
}

std::vector<CellResult> Grid::ok_cells() const {
  std::vector<CellResult> out;
  for (const auto& c : cells)
    if (c.ok) out.push_back(c);
  return out;
}

const CellResult* Grid::find(const CellKey& key) const {
  for (const auto& c : cells)
    if (c.key == key) return &c;
  return nullptr;
}

// ---------------------------------------------------------------------------
// Experiment

struct Experiment::SubjectData {
  const SubjectEntry* entry = nullptr;
  std::vector<Utterance> train;
  std::vector<Utterance> test;
  std::map<std::string, TimeSeries> ema;  // at the target rate, not normalised
  Normalizer ema_norm;
};

Experiment::Experiment(const ExperimentConfig& config, const DataSource& source)
    : config_(config), source_(source), manifest_(make_splits(source.manifest(), config.split_policy, config.split_seed)) {
  config_.validate();
  subjects_ = config_.subjects.empty() ? manifest_.subject_ids() : config_.subjects;
  if (subjects_.empty()) throw ArgumentError("no subjects to probe");
  std::vector<const Matrix*> pooled_blocks;
  std::vector<std::string> channels;
  for (const auto& id : subjects_) {
    auto d = std::make_shared<SubjectData>();
    d->entry = &manifest_.subject(id);
    d->train = d->entry->with_split(Split::train);
    d->test = d->entry->with_split(Split::test);
    if (d->train.empty()) throw ArgumentError("subject " + id + " has no training utterances");
    if (d->test.empty()) throw ArgumentError("subject " + id + " has no test utterances");
    std::vector<const Matrix*> norm_blocks;
    const auto load = [&](const std::vector<Utterance>& utts, bool for_norm) {
      for (const auto& u : utts) {
        TimeSeries ema = source_.load_ema(*d->entry, u);
        if (!all_finite(ema)) throw FormatError("EMA for " + id + "/" + u.id + " has non-finite values; run cleaning first");
        ema = resample(ema, config_.target_hz);
        if (channels.empty()) channels = ema.channels;
        if (ema.channels != channels) throw FormatError("EMA channel layout differs for " + id + "/" + u.id);
        auto [it, _] = d->ema.emplace(u.id, std::move(ema));
        if (for_norm) norm_blocks.push_back(&it->second.data);
      }
    };
    load(d->train, true);
    load(d->test, config_.norm_scope == NormScope::all_data);
    d->ema_norm = fit_normalizer(norm_blocks, channels, config_.norm_scope);
    for (const auto& u : d->train) pooled_blocks.push_back(&d->ema.at(u.id).data);
    if (config_.norm_scope == NormScope::all_data)
      for (const auto& u : d->test) pooled_blocks.push_back(&d->ema.at(u.id).data);
    data_[id] = std::move(d);
  }
  if (config_.pooled_normalizer) pooled_ema_ = fit_normalizer(pooled_blocks, channels, config_.norm_scope);
}

std::string Experiment::settings_hash() const {
  nlohmann::json s;
  s["engine"] = kEngineVersion;
  s["manifest"] = hex64(source_.manifest_hash());
  s["scoring"] = to_string(config_.scoring);
  s["split_policy"] = to_string(config_.split_policy);
  s["split_seed"] = config_.split_seed;
  s["norm_scope"] = to_string(config_.norm_scope);
  s["normalize_features"] = config_.normalize_features;
  s["pooled_normalizer"] = config_.pooled_normalizer;
  s["target_hz"] = config_.target_hz;
  s["frame_tolerance"] = config_.frame_tolerance;
  s["strict"] = config_.strict;
  return hex64(fnv1a(s.dump()));
}

Experiment::LayerData Experiment::load_layer(const std::string& subject, const std::string& rep, int layer,
                                             bool pooled) const {
  const auto it = data_.find(subject);
  if (it == data_.end()) throw ArgumentError("subject " + subject + " not configured");
  const SubjectData& d = *it->second;
  LayerData out;
  out.subject = subject;
  out.train = d.train;
  const Normalizer& ema_norm = pooled && pooled_ema_ ? *pooled_ema_ : d.ema_norm;

  std::vector<Utterance> all = d.train;
  all.insert(all.end(), d.test.begin(), d.test.end());
  for (const auto& u : all) {
    TimeSeries features = source_.load_features(*d.entry, u, rep, layer);
    features = resample(features, config_.target_hz);
    if (!all_finite(features)) throw FormatError("features for " + subject + "/" + u.id + " contain non-finite values");
    auto [x, y] = align_pair(features, d.ema.at(u.id), config_.frame_tolerance);
    apply_normalizer_inplace(ema_norm, y);
    out.paired.emplace(u.id, PairedUtterance{u.id, subject, std::move(x), std::move(y)});
  }
  if (config_.normalize_features) {
    std::vector<const Matrix*> blocks;
    for (const auto& u : d.train) blocks.push_back(&out.paired.at(u.id).features);
    if (config_.norm_scope == NormScope::all_data)
      for (const auto& u : d.test) blocks.push_back(&out.paired.at(u.id).features);
    std::vector<std::string> names;
    for (Eigen::Index c = 0; c < blocks.front()->cols(); ++c) names.push_back("d" + std::to_string(c));
    const auto norm = fit_normalizer(blocks, names, config_.norm_scope);
    for (auto& [_, p] : out.paired) apply_normalizer_inplace(norm, p.features);
  }
  std::vector<PairedUtterance> test;
  for (const auto& u : d.test) test.push_back(out.paired.at(u.id));
  out.test = assemble_design(test);
  return out;
}

namespace {

struct TrainPart {
  DesignMatrices design;
  double seconds = 0.0;
};

TrainPart train_design(const Experiment::LayerData& data, std::optional<double> budget, std::uint64_t seed) {
  const auto chosen = budget ? subset_by_duration(data.train, *budget, derive_seed(seed, fnv1a(data.subject))) : data.train;
  std::vector<PairedUtterance> utts;
  for (const auto& u : chosen) utts.push_back(data.paired.at(u.id));
  return {assemble_design(utts), total_duration(chosen)};
}

LinearProbe fit_probe(const DesignMatrices& train, double seconds, const std::vector<std::string>& channels) {
  LinearProbe p = fit_ols(train.X, train.Y);
  p.train_seconds = seconds;
  p.channels = channels;
  return p;
}

}  // namespace

ChannelScores Experiment::run_probe_cell(const std::string& subject, const std::string& rep, int layer,
                                         std::optional<double> budget, std::uint64_t seed) const {
  CellKey key{rep, layer, subject, budget, Scheme::per_speaker, budget ? seed : 0};
  auto results = run_per_speaker(subject, rep, layer, {key});
  if (!results.front().ok) throw Error(results.front().error);
  return results.front().scores;
}

std::vector<CellResult> Experiment::run_per_speaker(const std::string& subject, const std::string& rep, int layer,
                                                    const std::vector<CellKey>& keys) const {
  std::vector<CellResult> out;
  std::optional<LayerData> data;
  try {
    data = load_layer(subject, rep, layer, false);
  } catch (const std::exception& e) {
    for (const auto& k : keys) out.push_back(failed(k, e.what()));
    return out;
  }
  const auto& channels = data_.at(subject)->ema.begin()->second.channels;
  for (const auto& key : keys) {
    try {
      const auto train = train_design(*data, key.budget, key.seed);
      const auto probe = fit_probe(train.design, train.seconds, channels);
      auto scores = score_probe(probe, data->test.X, data->test.Y, config_.scoring, data->test.spans, config_.strict);
      out.push_back(scored(key, std::move(scores), train.design.rows(), train.seconds));
    } catch (const std::exception& e) {
      out.push_back(failed(key, e.what()));
    }
  }
  return out;
}

std::vector<CellResult> Experiment::run_shared(const std::string& rep, int layer, const std::vector<CellKey>& keys) const {
  std::vector<CellResult> out;
  std::map<std::string, LayerData> layers;
  try {
    for (const auto& s : subjects_) layers.emplace(s, load_layer(s, rep, layer, config_.pooled_normalizer));
    const auto d = layers.begin()->second.test.X.cols();
    for (const auto& [s, data] : layers)
      if (data.test.X.cols() != d)
        throw ArgumentError("feature dimension mismatch across subjects: " + std::to_string(d) + " vs " +
                            std::to_string(data.test.X.cols()) + " for " + s);
  } catch (const std::exception& e) {
    for (const auto& k : keys) out.push_back(failed(k, e.what()));
    return out;
  }
  const auto& channels = data_.at(subjects_.front())->ema.begin()->second.channels;

  // One fit per (budget, seed); keys of the same combination share it.
  std::map<std::string, std::pair<std::optional<LinearProbe>, std::string>> fits;
  for (const auto& key : keys) {
    const std::string combo = budget_label(key.budget) + "#" + std::to_string(key.seed);
    auto [it, fresh] = fits.try_emplace(combo);
    if (fresh) {
      try {
        std::vector<DesignMatrices> parts;
        double seconds = 0.0;
        for (const auto& s : subjects_) {
          auto part = train_design(layers.at(s), key.budget, key.seed);
          seconds += part.seconds;
          parts.push_back(std::move(part.design));
        }
        const auto train = concat_designs(parts);
        it->second.first = fit_probe(train, seconds, channels);
      } catch (const std::exception& e) {
        it->second.second = e.what();
      }
    }
    const auto& [probe, error] = it->second;
    if (!probe) {
      out.push_back(failed(key, error));
      continue;
    }
    try {
      DesignMatrices test;
      if (key.subject == "all") {
        std::vector<DesignMatrices> tests;
        for (const auto& s : subjects_) tests.push_back(layers.at(s).test);
        test = concat_designs(tests);
      } else {
        test = layers.at(key.subject).test;
      }
      auto scores = score_probe(*probe, test.X, test.Y, config_.scoring, test.spans, config_.strict);
      out.push_back(scored(key, std::move(scores), probe->train_frames, probe->train_seconds));
    } catch (const std::exception& e) {
      out.push_back(failed(key, e.what()));
    }
  }
  return out;
}

std::vector<CellResult> Experiment::run_loso(const std::string& rep, int layer, const std::vector<CellKey>& keys) const {
  std::vector<CellResult> out;
  std::map<std::string, LayerData> layers;
  try {
    if (subjects_.size() < 2) throw ArgumentError("leave-one-subject-out needs at least 2 subjects");
    for (const auto& s : subjects_) layers.emplace(s, load_layer(s, rep, layer, config_.pooled_normalizer));
  } catch (const std::exception& e) {
    for (const auto& k : keys) out.push_back(failed(k, e.what()));
    return out;
  }
  const auto& channels = data_.at(subjects_.front())->ema.begin()->second.channels;
  for (const auto& key : keys) {
    try {
      std::vector<DesignMatrices> parts;
      double seconds = 0.0;
      for (const auto& s : subjects_) {
        if (s == key.subject) continue;
        auto part = train_design(layers.at(s), key.budget, key.seed);
        seconds += part.seconds;
        parts.push_back(std::move(part.design));
      }
      const auto train = concat_designs(parts);
      const auto probe = fit_probe(train, seconds, channels);
      const auto& test = layers.at(key.subject).test;
      auto scores = score_probe(probe, test.X, test.Y, config_.scoring, test.spans, config_.strict);
      out.push_back(scored(key, std::move(scores), train.rows(), seconds));
    } catch (const std::exception& e) {
      out.push_back(failed(key, e.what()));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Grid runner

namespace {

struct Task {
  std::string rep;
  int layer = 0;
  std::string subject;  // per-speaker only
  std::vector<CellKey> keys;
};

std::vector<Task> enumerate_tasks(const ExperimentConfig& c, const std::vector<std::string>& subjects) {
  std::vector<Task> tasks;
  const auto combos = budget_cells(c);
  for (const auto& rep : c.representations)
    for (const int layer : rep.layers) {
      if (c.scheme == Scheme::per_speaker) {
        for (const auto& s : subjects) {
          Task t{rep.id, layer, s, {}};
          for (const auto& [budget, seed] : combos) t.keys.push_back({rep.id, layer, s, budget, c.scheme, seed});
          tasks.push_back(std::move(t));
        }
      } else {
        Task t{rep.id, layer, "", {}};
        for (const auto& [budget, seed] : combos) {
          for (const auto& s : subjects) t.keys.push_back({rep.id, layer, s, budget, c.scheme, seed});
          if (c.scheme == Scheme::shared && subjects.size() > 1)
            t.keys.push_back({rep.id, layer, "all", budget, c.scheme, seed});
        }
        tasks.push_back(std::move(t));
      }
    }
  return tasks;
}

}  // namespace

Grid run_grid(const ExperimentConfig& config, const DataSource& source, GridStore* store, std::size_t jobs) {
  if (jobs < 1) throw ArgumentError("--jobs must be at least 1");
  if (config.representations.empty()) throw ArgumentError("no representations configured");
  const Experiment exp(config, source);
  if (config.scheme == Scheme::loso && exp.subjects().size() < 2)
    throw ArgumentError("leave-one-subject-out needs at least 2 subjects");

  Grid grid;
  grid.settings_hash = exp.settings_hash();
  auto recorded = to_json(config);
  recorded.erase("manifest");
  grid.provenance = {{"type", "provenance"},
                     {"engine", kEngineVersion},
                     {"config", recorded},
                     {"config_hash", hex64(fnv1a(recorded.dump()))},
                     {"settings_hash", grid.settings_hash},
                     {"manifest_hash", hex64(source.manifest_hash())}};
  if (store) store->begin(grid.provenance);

  const auto tasks = enumerate_tasks(config, exp.subjects());
  std::vector<std::vector<CellResult>> results(tasks.size());
  std::vector<char> done(tasks.size(), 0);
  std::size_t next_commit = 0;
  std::mutex commit_mutex;
  std::string commit_error;

  const auto run_task = [&](const Task& task) {
    std::vector<CellKey> todo;
    for (const auto& k : task.keys)
      if (!store || !store->has(k, grid.settings_hash)) todo.push_back(k);
    std::vector<CellResult> computed;
    if (!todo.empty()) {
      switch (config.scheme) {
        case Scheme::per_speaker: computed = exp.run_per_speaker(task.subject, task.rep, task.layer, todo); break;
        case Scheme::shared: computed = exp.run_shared(task.rep, task.layer, todo); break;
        case Scheme::loso: computed = exp.run_loso(task.rep, task.layer, todo); break;
      }
    }
    return computed;
  };

  const int saved_levels = omp_get_max_active_levels();
  if (jobs > 1) omp_set_max_active_levels(1);
  const auto n = static_cast<std::ptrdiff_t>(tasks.size());
#pragma omp parallel for schedule(dynamic, 1) num_threads(static_cast<int>(jobs))
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    auto computed = run_task(tasks[static_cast<std::size_t>(i)]);
    std::lock_guard lock(commit_mutex);
    results[static_cast<std::size_t>(i)] = std::move(computed);
    done[static_cast<std::size_t>(i)] = 1;
    while (next_commit < tasks.size() && done[next_commit]) {
      if (store && commit_error.empty()) {
        try {
          for (const auto& cell : results[next_commit]) store->append(cell, grid.settings_hash);
        } catch (const std::exception& e) {
          commit_error = e.what();
        }
      }
      ++next_commit;
    }
  }
  omp_set_max_active_levels(saved_levels);
  if (!commit_error.empty()) throw IoError(commit_error);

  for (std::size_t t = 0; t < tasks.size(); ++t) {
    std::map<std::string, const CellResult*> fresh;
    for (const auto& c : results[t]) fresh[c.key.str()] = &c;
    for (const auto& k : tasks[t].keys) {
      if (const auto it = fresh.find(k.str()); it != fresh.end())
        grid.cells.push_back(*it->second);
      else if (auto cached = store->find(k, grid.settings_hash))
        grid.cells.push_back(std::move(*cached));
    }
  }
  return grid;
}

// ---------------------------------------------------------------------------
// Views

std::map<std::string, LayerProfile> run_layer_sweep(const ExperimentConfig& config, const DataSource& source,
                                                    std::size_t jobs) {
  if (config.representations.size() != 1) throw ArgumentError("a layer sweep takes exactly one representation");
  const auto& layers = config.representations.front().layers;
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i] != static_cast<int>(i)) throw ArgumentError("layer sweep needs layers 0..L-1 in order");
  ExperimentConfig c = config;
  c.scheme = Scheme::per_speaker;
  c.budgets.clear();
  const Grid grid = run_grid(c, source, nullptr, jobs);
  std::vector<std::string> missing;
  std::map<std::string, LayerProfile> profiles;
  std::map<int, std::map<std::string, ChannelScores>> by_layer;
  for (const auto& cell : grid.cells) {
    if (!cell.ok) {
      missing.push_back(cell.key.subject + " layer " + std::to_string(cell.key.layer) + ": " + cell.error);
      continue;
    }
    by_layer[cell.key.layer][cell.key.subject] = cell.scores;
  }
  if (!missing.empty()) {
    std::string msg = "layer sweep has failed cells:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw Error(msg);
  }
  for (const int layer : layers) {
    for (const auto& [subject, scores] : by_layer.at(layer)) profiles[subject].scores.push_back(scores.mean_valid());
    profiles["*"].scores.push_back(articulatory_score(by_layer.at(layer)).overall);
  }
  return profiles;
}

AblationResult run_trainsize_ablation(const ExperimentConfig& config, const DataSource& source, std::size_t jobs) {
  ExperimentConfig c = config;
  c.scheme = Scheme::per_speaker;
  c.include_full = true;
  const Grid grid = run_grid(c, source, nullptr, jobs);
  AblationResult out;
  out.cells = grid.cells;
  std::map<std::pair<std::string, std::string>, std::pair<double, std::size_t>> acc;
  for (const auto& cell : grid.cells) {
    if (!cell.ok) continue;
    auto& a = acc[{cell.key.subject, budget_label(cell.key.budget)}];
    a.first += cell.score;
    ++a.second;
  }
  for (const auto& [k, v] : acc) out.mean_score[k] = v.first / static_cast<double>(v.second);
  return out;
}

namespace {

SchemeResult run_scheme(ExperimentConfig c, Scheme scheme, const DataSource& source, std::size_t jobs) {
  if (c.representations.size() != 1 || c.representations.front().layers.size() != 1)
    throw ArgumentError("scheme runs take exactly one representation and one layer");
  c.scheme = scheme;
  c.budgets.clear();
  c.include_full = true;
  const Grid grid = run_grid(c, source, nullptr, jobs);
  SchemeResult out;
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& cell : grid.cells) {
    if (!cell.ok) throw Error(cell.key.str() + ": " + cell.error);
    if (cell.key.subject == "all") {
      out.pooled = cell.scores;
      continue;
    }
    out.per_subject[cell.key.subject] = cell.scores;
    sum += cell.score;
    ++n;
  }
  out.mean = n ? sum / static_cast<double>(n) : 0.0;
  return out;
}

}  // namespace

SchemeResult run_shared_model(const ExperimentConfig& config, const DataSource& source, std::size_t jobs) {
  return run_scheme(config, Scheme::shared, source, jobs);
}

SchemeResult run_loso(const ExperimentConfig& config, const DataSource& source, std::size_t jobs) {
  return run_scheme(config, Scheme::loso, source, jobs);
}

std::map<std::string, std::vector<double>> per_articulator_table(
    const std::map<int, std::map<std::string, ChannelScores>>& layers) {
  if (layers.empty()) throw ArgumentError("per-articulator table needs at least one layer");
  std::vector<std::string> channels;
  std::map<std::string, std::vector<double>> table;
  for (const auto& [layer, subjects] : layers) {
    const auto score = articulatory_score(subjects);
    if (channels.empty()) channels = subjects.begin()->second.channels;
    if (score.per_channel.size() != channels.size()) {
      std::string missing;
      for (const auto& ch : channels)
        if (std::none_of(score.per_channel.begin(), score.per_channel.end(), [&](const auto& p) { return p.first == ch; }))
          missing += " " + ch;
      throw ArgumentError("layer " + std::to_string(layer) + " is missing channel scores:" + missing);
    }
    for (const auto& [ch, v] : score.per_channel) table[ch].push_back(v);
  }
  return table;
}

nlohmann::json summarize_grid(const Grid& grid) {
  using GroupKey = std::tuple<std::string, int, std::string, std::string, std::uint64_t>;
  std::map<GroupKey, std::map<std::string, ChannelScores>> groups;
  for (const auto& cell : grid.cells) {
    if (!cell.ok || cell.key.subject == "all") continue;
    groups[{cell.key.representation, cell.key.layer, budget_label(cell.key.budget), to_string(cell.key.scheme),
            cell.key.seed}][cell.key.subject] = cell.scores;
  }
  nlohmann::json out;
  out["provenance"] = grid.provenance;
  out["aggregates"] = nlohmann::json::array();
  using MeanKey = std::tuple<std::string, int, std::string, std::string>;
  std::map<MeanKey, std::vector<double>> seed_means;
  for (const auto& [key, subjects] : groups) {
    const auto& [rep, layer, budget, scheme, seed] = key;
    nlohmann::json rec = {{"type", "aggregate"}, {"representation", rep}, {"layer", layer}, {"budget", budget},
                          {"scheme", scheme},    {"seed", seed}};
    try {
      const auto score = articulatory_score(subjects);
      rec["overall"] = score.overall;
      rec["per_subject"] = score.per_subject;
      nlohmann::json per_channel = nlohmann::json::array();
      for (const auto& [ch, v] : score.per_channel) per_channel.push_back({ch, v});
      rec["per_channel"] = per_channel;
      rec["invalid_channels"] = score.invalid_channels;
      seed_means[{rep, layer, budget, scheme}].push_back(score.overall);
    } catch (const std::exception& e) {
      rec["error"] = e.what();
    }
    out["aggregates"].push_back(rec);
  }
  out["seed_means"] = nlohmann::json::array();
  for (const auto& [key, values] : seed_means) {
    const auto& [rep, layer, budget, scheme] = key;
    double sum = 0.0;
    for (const double v : values) sum += v;
    out["seed_means"].push_back({{"representation", rep}, {"layer", layer}, {"budget", budget}, {"scheme", scheme},
                                 {"seeds", values.size()}, {"overall", sum / static_cast<double>(values.size())}});
  }
  return out;
}

}  // namespace artprobe

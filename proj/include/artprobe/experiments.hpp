#pragma once

#include "artprobe/manifest.hpp"
#include "artprobe/preprocess.hpp"
#include "artprobe/probe.hpp"
#include "artprobe/scoring.hpp"
#include "artprobe/synth.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace artprobe {

inline constexpr const char* kEngineVersion = "artprobe 0.1.0";

enum class Scheme { per_speaker, shared, loso };
std::string to_string(Scheme s);
Scheme parse_scheme(const std::string& s);

struct RepresentationSpec {
  std::string id;
  std::vector<int> layers;
};

struct ExperimentConfig {
  std::string manifest;  // path; resolved by the CLI
  std::vector<RepresentationSpec> representations;
  std::vector<std::string> subjects;  // empty = every manifest subject
  Scheme scheme = Scheme::per_speaker;
  ScoreMode scoring = ScoreMode::pooled;
  std::vector<double> budgets;  // seconds; empty = full training split only
  bool include_full = true;     // add the full-data reference cell next to budgets
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  SplitPolicy split_policy = SplitPolicy::manifest;
  std::uint64_t split_seed = 0;
  NormScope norm_scope = NormScope::train_only;
  bool normalize_features = false;
  bool pooled_normalizer = false;  // shared/LOSO only: one EMA normaliser for all subjects
  double target_hz = kTargetRateHz;
  std::size_t frame_tolerance = 3;
  bool strict = false;

  // Throws ArgumentError on unsorted/non-positive budgets or empty seeds.
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base = {});

// Parses "300", "20s", "5m" into seconds.
double parse_budget(const std::string& text);
std::string budget_label(std::optional<double> budget);

struct CellKey {
  std::string representation;
  int layer = 0;
  std::string subject;          // a subject id, or "all" for pooled shared-model scores
  std::optional<double> budget; // nullopt = full training split
  Scheme scheme = Scheme::per_speaker;
  std::uint64_t seed = 0;       // 0 for full-budget cells

  std::string str() const;
  bool operator==(const CellKey& o) const;
  bool operator<(const CellKey& o) const;
};

struct CellResult {
  CellKey key;
  bool ok = false;
  std::string error;
  ChannelScores scores;
  double score = 0.0;  // mean over valid channels
  std::size_t train_frames = 0;
  double train_seconds = 0.0;
};

// Loads paired streams for the experiment engine.
class DataSource {
 public:
  virtual ~DataSource() = default;
  virtual const DatasetManifest& manifest() const = 0;
  virtual TimeSeries load_ema(const SubjectEntry& subject, const Utterance& u) const = 0;
  virtual TimeSeries load_features(const SubjectEntry& subject, const Utterance& u, const std::string& rep,
                                   int layer) const = 0;
  // Hash identifying the manifest contents.
  virtual std::uint64_t manifest_hash() const;
};

class FileSource : public DataSource {
 public:
  explicit FileSource(DatasetManifest manifest);
  static FileSource open(const std::filesystem::path& manifest_path);
  const DatasetManifest& manifest() const override { return manifest_; }
  TimeSeries load_ema(const SubjectEntry& subject, const Utterance& u) const override;
  TimeSeries load_features(const SubjectEntry& subject, const Utterance& u, const std::string& rep,
                           int layer) const override;

 private:
  DatasetManifest manifest_;
};

// Serves a generated world straight from memory.
class MemorySource : public DataSource {
 public:
  explicit MemorySource(std::shared_ptr<const SyntheticWorld> world);
  const DatasetManifest& manifest() const override { return manifest_; }
  TimeSeries load_ema(const SubjectEntry& subject, const Utterance& u) const override;
  TimeSeries load_features(const SubjectEntry& subject, const Utterance& u, const std::string& rep,
                           int layer) const override;

 private:
  std::shared_ptr<const SyntheticWorld> world_;
  DatasetManifest manifest_;
  std::map<std::string, std::size_t> index_;
};

// Line-delimited grid store: a provenance record, then one record per cell in
// deterministic order. Reopening an existing store makes completed cells with
// a matching settings hash available for skipping.
class GridStore {
 public:
  GridStore() = default;  // in-memory only
  explicit GridStore(std::filesystem::path path);

  void begin(const nlohmann::json& provenance);
  bool has(const CellKey& key, const std::string& settings_hash) const;
  std::optional<CellResult> find(const CellKey& key, const std::string& settings_hash) const;
  void append(const CellResult& cell, const std::string& settings_hash);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  bool header_written_ = false;
  std::map<std::string, nlohmann::json> completed_;
};

nlohmann::json cell_to_json(const CellResult& cell, const std::string& settings_hash);
CellResult cell_from_json(const nlohmann::json& j);
std::vector<CellResult> load_grid(const std::filesystem::path& path);

struct Grid {
  nlohmann::json provenance;
  std::string settings_hash;
  std::vector<CellResult> cells;

  std::vector<CellResult> ok_cells() const;
  const CellResult* find(const CellKey& key) const;
};

// Runs every configured cell. Tasks run on up to `jobs` workers; results are
// committed to the store in configuration order so the store contents do not
// depend on scheduling.
Grid run_grid(const ExperimentConfig& config, const DataSource& source, GridStore* store = nullptr,
              std::size_t jobs = 1);

// Per-subject layer data shared by the cell operations below.
class Experiment {
 public:
  Experiment(const ExperimentConfig& config, const DataSource& source);

  const ExperimentConfig& config() const { return config_; }
  const std::vector<std::string>& subjects() const { return subjects_; }
  std::string settings_hash() const;

  ChannelScores run_probe_cell(const std::string& subject, const std::string& rep, int layer,
                               std::optional<double> budget, std::uint64_t seed) const;
  std::vector<CellResult> run_per_speaker(const std::string& subject, const std::string& rep, int layer,
                                          const std::vector<CellKey>& keys) const;
  std::vector<CellResult> run_shared(const std::string& rep, int layer, const std::vector<CellKey>& keys) const;
  std::vector<CellResult> run_loso(const std::string& rep, int layer, const std::vector<CellKey>& keys) const;

  struct LayerData;

 private:
  struct SubjectData;
  LayerData load_layer(const std::string& subject, const std::string& rep, int layer, bool pooled) const;

  ExperimentConfig config_;
  const DataSource& source_;
  DatasetManifest manifest_;
  std::vector<std::string> subjects_;
  std::map<std::string, std::shared_ptr<SubjectData>> data_;
  std::optional<Normalizer> pooled_ema_;
};

struct Experiment::LayerData {
  std::string subject;
  std::vector<Utterance> train;
  std::map<std::string, PairedUtterance> paired;  // by utterance id
  DesignMatrices test;
};

// Convenience views over run_grid.
std::map<std::string, LayerProfile> run_layer_sweep(const ExperimentConfig& config, const DataSource& source,
                                                    std::size_t jobs = 1);

struct AblationResult {
  std::vector<CellResult> cells;
  // (subject, budget label) -> mean over seeds; "full" holds the reference cell.
  std::map<std::pair<std::string, std::string>, double> mean_score;
};
AblationResult run_trainsize_ablation(const ExperimentConfig& config, const DataSource& source, std::size_t jobs = 1);

struct SchemeResult {
  std::map<std::string, ChannelScores> per_subject;
  std::optional<ChannelScores> pooled;  // shared model only
  double mean = 0.0;                    // mean subject score
};
SchemeResult run_shared_model(const ExperimentConfig& config, const DataSource& source, std::size_t jobs = 1);
SchemeResult run_loso(const ExperimentConfig& config, const DataSource& source, std::size_t jobs = 1);

// layer -> subject -> channel scores, pivoted to channel -> per-layer score
// (mean over subjects where valid).
std::map<std::string, std::vector<double>> per_articulator_table(
    const std::map<int, std::map<std::string, ChannelScores>>& layers);

// Aggregate records over subjects for each (rep, layer, budget, scheme, seed)
// group, plus seed means; written next to the grid store.
nlohmann::json summarize_grid(const Grid& grid);

}  // namespace artprobe

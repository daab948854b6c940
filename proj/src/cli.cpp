#include "artprobe/cli.hpp"

#include "artprobe/ema_ingest.hpp"
#include "artprobe/error.hpp"
#include "artprobe/experiments.hpp"
#include "artprobe/manifest.hpp"
#include "artprobe/preprocess.hpp"
#include "artprobe/report.hpp"
#include "artprobe/synth.hpp"
#include "artprobe/tensor_io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

namespace artprobe {
namespace {

namespace fs = std::filesystem;

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

long long parse_int(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw ArgumentError("bad " + what + " '" + s + "'");
  }
}

double parse_real(const std::string& s, const std::string& what) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw ArgumentError("bad " + what + " '" + s + "'");
  }
}

// "0-12", "3", "0,4,8"
std::vector<int> parse_layers(const std::string& s) {
  std::vector<int> out;
  for (const auto& item : split_list(s)) {
    const auto dash = item.find('-', 1);
    if (dash == std::string::npos) {
      out.push_back(static_cast<int>(parse_int(item, "layer")));
      continue;
    }
    const auto lo = parse_int(item.substr(0, dash), "layer range");
    const auto hi = parse_int(item.substr(dash + 1), "layer range");
    if (lo < 0 || hi < lo) throw ArgumentError("bad layer range '" + item + "'");
    for (auto l = lo; l <= hi; ++l) out.push_back(static_cast<int>(l));
  }
  if (out.empty()) throw ArgumentError("empty layer list");
  return out;
}

struct GlobalOptions {
  std::string config;
  std::uint64_t seed = 1;
  bool seed_set = false;
  std::size_t jobs = 1;
  std::string out_dir = "artprobe-out";
  bool strict = false;
};

struct ExperimentOptions {
  std::string manifest;
  std::string rep;
  std::string subjects;
  std::string scoring = "pooled";
  std::string split_policy = "manifest";
  std::string norm_scope = "train-only";
  bool normalize_features = false;
  bool pooled_normalizer = false;
  std::size_t frame_tolerance = 3;
};

void add_experiment_options(CLI::App* cmd, ExperimentOptions& o) {
  cmd->add_option("--manifest", o.manifest, "Dataset manifest (default: $ARTPROBE_DATA/manifest.tsv)");
  cmd->add_option("--rep", o.rep, "Representation id");
  cmd->add_option("--subjects", o.subjects, "Comma-separated subject ids (default: all)");
  cmd->add_option("--scoring", o.scoring, "pooled | per-utterance-mean");
  cmd->add_option("--split-policy", o.split_policy, "manifest | standard | seeded");
  cmd->add_option("--norm-scope", o.norm_scope, "train-only | all-data");
  cmd->add_flag("--normalize-features", o.normalize_features, "Z-score feature dimensions too");
  cmd->add_flag("--pooled-normalizer", o.pooled_normalizer, "One EMA normaliser across subjects (shared/loso)");
  cmd->add_option("--frame-tolerance", o.frame_tolerance, "Allowed feature/EMA frame count gap");
}

ExperimentConfig base_config(const GlobalOptions& g, const ExperimentOptions& o, const std::vector<int>& layers) {
  ExperimentConfig c;
  c.manifest = o.manifest;
  if (!o.rep.empty()) c.representations = {{o.rep, layers}};
  c.subjects = split_list(o.subjects);
  c.scoring = parse_score_mode(o.scoring);
  c.split_policy = parse_split_policy(o.split_policy);
  c.split_seed = g.seed;
  c.norm_scope = parse_norm_scope(o.norm_scope);
  c.normalize_features = o.normalize_features;
  c.pooled_normalizer = o.pooled_normalizer;
  c.frame_tolerance = o.frame_tolerance;
  c.strict = g.strict;
  return c;
}

// Config file values take precedence over flags.
ExperimentConfig finish_config(const GlobalOptions& g, ExperimentConfig c) {
  if (!g.config.empty()) {
    std::ifstream in(g.config);
    if (!in) throw IoError("cannot open config '" + g.config + "'");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ArgumentError("config '" + g.config + "' is not valid JSON: " + e.what());
    }
    c = config_from_json(j, c);
  }
  if (c.manifest.empty()) {
    const char* root = std::getenv(kDataRootEnv);
    if (!root || !*root) throw ArgumentError("no manifest given (--manifest or $" + std::string(kDataRootEnv) + ")");
    c.manifest = (fs::path(root) / "manifest.tsv").string();
  }
  if (c.representations.empty()) throw ArgumentError("no representation given (--rep)");
  c.validate();
  return c;
}

Grid run_and_store(const ExperimentConfig& config, const GlobalOptions& g, std::ostream& err) {
  const auto source = FileSource::open(config.manifest);
  fs::create_directories(g.out_dir);
  GridStore store(fs::path(g.out_dir) / "grid.jsonl");
  Grid grid = run_grid(config, source, &store, g.jobs);
  std::size_t failed = 0;
  for (const auto& c : grid.cells)
    if (!c.ok) {
      ++failed;
      err << "cell " << c.key.str() << " failed: " << c.error << '\n';
    }
  err << "artprobe: " << grid.cells.size() << " cells, " << failed << " failed\n";
  write_text_file(fs::path(g.out_dir) / "summary.json", summarize_grid(grid).dump(2) + "\n");
  return grid;
}

// Full-budget per-speaker cells grouped by representation, one profile per
// representation over contiguous layers from 0.
std::map<std::string, std::map<int, std::map<std::string, ChannelScores>>> full_cells_by_layer(
    const std::vector<CellResult>& cells, Scheme scheme) {
  std::map<std::string, std::map<int, std::map<std::string, ChannelScores>>> out;
  for (const auto& c : cells)
    if (c.ok && !c.key.budget && c.key.scheme == scheme && c.key.subject != "all")
      out[c.key.representation][c.key.layer][c.key.subject] = c.scores;
  return out;
}

std::vector<LayerSeries> layer_series_from_cells(const std::vector<CellResult>& cells, Scheme scheme) {
  std::vector<LayerSeries> series;
  for (const auto& [rep, layers] : full_cells_by_layer(cells, scheme)) {
    LayerSeries s{rep, {}};
    int expect = 0;
    for (const auto& [layer, subjects] : layers) {
      if (layer != expect++)
        throw ArgumentError("representation '" + rep + "' has no full-budget cells for layer " + std::to_string(expect - 1));
      s.profile.scores.push_back(articulatory_score(subjects).overall);
    }
    series.push_back(std::move(s));
  }
  if (series.empty()) throw ArgumentError("grid has no full-budget cells to plot");
  return series;
}

std::vector<ModelScore> model_scores_from_cells(const std::vector<CellResult>& cells, Scheme scheme) {
  std::vector<ModelScore> models;
  for (const auto& [rep, layers] : full_cells_by_layer(cells, scheme)) {
    ModelScore best{rep, 0, -std::numeric_limits<double>::infinity(), {}};
    for (const auto& [layer, subjects] : layers) {
      const auto score = articulatory_score(subjects);
      if (score.overall > best.overall) best = {rep, layer, score.overall, score.per_subject};
    }
    models.push_back(std::move(best));
  }
  if (models.empty()) throw ArgumentError("grid has no full-budget cells to compare");
  return models;
}

std::vector<std::string> subjects_in_order(const std::vector<CellResult>& cells) {
  std::vector<std::string> out;
  for (const auto& c : cells)
    if (c.key.subject != "all" && std::find(out.begin(), out.end(), c.key.subject) == out.end())
      out.push_back(c.key.subject);
  return out;
}

std::vector<std::optional<double>> budgets_in_order(const std::vector<CellResult>& cells) {
  std::set<double> budgets;
  bool full = false;
  for (const auto& c : cells) {
    if (c.key.budget)
      budgets.insert(*c.key.budget);
    else
      full = true;
  }
  std::vector<std::optional<double>> out(budgets.begin(), budgets.end());
  if (full) out.emplace_back(std::nullopt);
  return out;
}

int ingest(const GlobalOptions& g, const std::string& corpus, const std::string& input, const std::string& subject,
           const std::string& map_file, std::size_t max_gap, const std::string& split, const std::string& ext,
           std::ostream& out, std::ostream& err) {
  const auto mapping = map_file.empty() ? default_channel_mapping(corpus) : load_channel_mapping(map_file);
  if (!fs::is_directory(input)) throw IoError("input directory '" + input + "' does not exist");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(input))
    if (entry.is_regular_file() && entry.path().extension() == ext) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ArgumentError("no '" + ext + "' files in '" + input + "'");

  const fs::path root(g.out_dir);
  const fs::path manifest_path = root / "manifest.tsv";
  DatasetManifest manifest = fs::exists(manifest_path) ? load_manifest(manifest_path) : DatasetManifest{};
  manifest.root = root;
  manifest.subjects.erase(std::remove_if(manifest.subjects.begin(), manifest.subjects.end(),
                                         [&](const SubjectEntry& s) { return s.id == subject; }),
                          manifest.subjects.end());
  SubjectEntry entry{subject, corpus, {}};
  std::ostringstream report;
  report << "utterance\tstatus\tdetail\n";
  std::size_t rejected = 0;
  for (const auto& file : files) {
    const auto id = file.stem().string();
    Utterance u;
    u.id = id;
    u.ema_path = (fs::path("ema") / subject / (id + ".apt")).string();
    u.feature_template = "feats/{rep}/L{layer}/" + subject + "/" + id + ".apt";
    try {
      const auto raw = parse_est_track_file(file);
      u.duration_seconds = raw.duration_seconds();
      auto [clean, dropouts] = clean_dropouts(select_canonical_channels(raw, mapping), max_gap);
      if (dropouts.rejected) {
        u.split = Split::rejected;
        ++rejected;
        report << id << "\trejected\tdropout longer than " << max_gap << " frames\n";
      } else {
        write_tensor_file(resample(clean, kTargetRateHz), root / u.ema_path);
        report << id << '\t' << (dropouts.repaired ? "repaired" : "ok") << "\t\n";
      }
    } catch (const FormatError& e) {
      if (g.strict) throw;
      u.split = Split::rejected;
      ++rejected;
      report << id << "\trejected\t" << e.what() << '\n';
    } catch (const MappingError& e) {
      if (g.strict) throw;
      u.split = Split::rejected;
      ++rejected;
      report << id << "\trejected\t" << e.what() << '\n';
    }
    entry.utterances.push_back(std::move(u));
  }
  manifest.subjects.push_back(std::move(entry));
  std::sort(manifest.subjects.begin(), manifest.subjects.end(),
            [](const SubjectEntry& a, const SubjectEntry& b) { return a.id < b.id; });
  if (split != "none") {
    DatasetManifest one;
    one.subjects = {manifest.subject(subject)};
    one = make_splits(one, parse_split_policy(split), g.seed);
    for (auto& s : manifest.subjects)
      if (s.id == subject) s = one.subjects.front();
  }
  save_manifest(manifest, manifest_path);
  write_text_file(root / ("ingest_report_" + subject + ".tsv"), report.str());
  const auto& s = manifest.subject(subject);
  out << subject << ": " << s.with_split(Split::train).size() << " train, " << s.with_split(Split::test).size()
      << " test, " << rejected << " rejected\n";
  err << "artprobe: manifest written to " << manifest_path.string() << '\n';
  return 0;
}

int report(const GlobalOptions& g, const std::string& grid_path, const std::string& kind, const std::string& format,
           std::string output, const std::string& rep, int layer, const std::string& scheme_name, std::ostream& out) {
  const auto path = grid_path.empty() ? fs::path(g.out_dir) / "grid.jsonl" : fs::path(grid_path);
  if (!fs::exists(path)) throw IoError("grid store '" + path.string() + "' does not exist");
  const Scheme scheme = parse_scheme(scheme_name);
  std::vector<CellResult> cells;
  for (auto& c : load_grid(path))
    if (c.key.scheme == scheme && (rep.empty() || c.key.representation == rep)) cells.push_back(std::move(c));

  if (kind == "table") {
    const auto fmt = parse_table_format(format);
    std::set<std::pair<std::string, int>> slices;
    for (const auto& c : cells)
      if (layer < 0 || c.key.layer == layer) slices.insert({c.key.representation, c.key.layer});
    if (slices.size() != 1)
      throw ArgumentError("table needs exactly one representation/layer slice; found " + std::to_string(slices.size()) +
                          " (use --rep and --layer)");
    std::vector<CellResult> slice;
    for (const auto& c : cells)
      if (c.key.layer == slices.begin()->second && c.key.subject != "all") slice.push_back(c);
    const auto table = score_table_from_cells(slice, subjects_in_order(slice), budgets_in_order(slice));
    if (output.empty()) output = (fs::path(g.out_dir) / ("table." + format)).string();
    emit_score_table(table, fmt, fs::path(output));
  } else if (kind == "layers") {
    if (output.empty()) output = (fs::path(g.out_dir) / "layers.json").string();
    emit_layer_series(layer_series_from_cells(cells, scheme), output);
  } else if (kind == "models") {
    if (output.empty()) output = (fs::path(g.out_dir) / "models.json").string();
    emit_model_comparison(model_scores_from_cells(cells, scheme), output);
  } else {
    throw ArgumentError("unknown report kind '" + kind + "' (table|layers|models)");
  }
  out << output << '\n';
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app("Articulatory probing benchmark", "artprobe");
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config, "JSON experiment config; its values override flags");
  app.add_option_function<std::uint64_t>(
      "--seed", [&](std::uint64_t s) { g.seed = s, g.seed_set = true; }, "Seed (world, subset or split, by command)");
  app.add_option("--jobs", g.jobs, "Worker count")->check(CLI::PositiveNumber);
  app.add_option("--out-dir", g.out_dir, "Output directory");
  app.add_flag("--strict", g.strict, "Fail on constant channels and malformed inputs");

  // ingest
  auto* cmd_ingest = app.add_subcommand("ingest", "Convert EST-Track EMA files to APT1 and a manifest");
  std::string corpus, input, subject, map_file, split = "standard", ext = ".ema";
  std::size_t max_gap = kDefaultMaxGapFrames;
  cmd_ingest->add_option("--corpus", corpus, "mngu0 | mocha")->required();
  cmd_ingest->add_option("--input", input, "Directory of EST-Track files")->required();
  cmd_ingest->add_option("--subject", subject, "Subject id")->required();
  cmd_ingest->add_option("--map", map_file, "Channel mapping file (default: built-in for the corpus)");
  cmd_ingest->add_option("--max-gap", max_gap, "Longest dropout run repaired, in frames");
  cmd_ingest->add_option("--split", split, "standard | seeded | none");
  cmd_ingest->add_option("--ext", ext, "Input file extension");

  // synth
  auto* cmd_synth = app.add_subcommand("synth", "Generate a synthetic oracle world");
  SynthConfig sc;
  std::string synth_subjects = "1", snr = "inf", layer_noise = "0", maps = "independent";
  cmd_synth->add_option("--dim", sc.dim, "Feature dimension");
  cmd_synth->add_option("--subjects", synth_subjects, "Subject count or comma-separated ids");
  cmd_synth->add_option("--train-utts", sc.train_utterances, "Training utterances per subject");
  cmd_synth->add_option("--test-utts", sc.test_utterances, "Test utterances per subject");
  cmd_synth->add_option("--utt-seconds", sc.utterance_seconds, "Utterance length");
  cmd_synth->add_option("--snr", snr, "Signal-to-noise power ratio (inf = noiseless)");
  cmd_synth->add_option("--layer-noise", layer_noise, "Comma-separated per-layer feature noise std");
  cmd_synth->add_option("--maps", maps, "independent | shared | orthogonal");
  cmd_synth->add_flag("--identical", sc.identical_subjects, "Every subject gets the same data");
  cmd_synth->add_option("--rep", sc.representation, "Representation id for the feature dumps");

  // probe
  auto* cmd_probe = app.add_subcommand("probe", "Fit and score a single cell");
  ExperimentOptions probe_opts;
  std::string probe_subject, probe_budget;
  int probe_layer = 0;
  add_experiment_options(cmd_probe, probe_opts);
  cmd_probe->add_option("--subject", probe_subject, "Subject id")->required();
  cmd_probe->add_option("--layer", probe_layer, "Layer index")->required();
  cmd_probe->add_option("--budget", probe_budget, "Training budget (e.g. 300, 20s, 5m)");

  // sweep
  auto* cmd_sweep = app.add_subcommand("sweep", "Score every layer on the full training split");
  ExperimentOptions sweep_opts;
  std::string sweep_layers;
  add_experiment_options(cmd_sweep, sweep_opts);
  cmd_sweep->add_option("--layers", sweep_layers, "Layers, e.g. 0-12")->required();

  // ablate
  auto* cmd_ablate = app.add_subcommand("ablate", "Training-size ablation");
  ExperimentOptions ablate_opts;
  std::string ablate_budgets = "20s,30s,1m,5m,10m,20m", ablate_seeds = "1,2,3";
  int ablate_layer = 0;
  bool ablate_no_full = false;
  add_experiment_options(cmd_ablate, ablate_opts);
  cmd_ablate->add_option("--layer", ablate_layer, "Layer index")->required();
  cmd_ablate->add_option("--budgets", ablate_budgets, "Comma-separated budgets");
  cmd_ablate->add_option("--seeds", ablate_seeds, "Comma-separated subset seeds");
  cmd_ablate->add_flag("--no-full", ablate_no_full, "Skip the full-data reference cells");

  // loso / shared
  auto* cmd_loso = app.add_subcommand("loso", "Leave-one-subject-out generalisation");
  auto* cmd_shared = app.add_subcommand("shared", "One probe trained on all subjects");
  ExperimentOptions loso_opts, shared_opts;
  std::string loso_layers, shared_layers;
  add_experiment_options(cmd_loso, loso_opts);
  add_experiment_options(cmd_shared, shared_opts);
  cmd_loso->add_option("--layers", loso_layers, "Layers, e.g. 11 or 0-12")->required();
  cmd_shared->add_option("--layers", shared_layers, "Layers, e.g. 11 or 0-12")->required();

  // report
  auto* cmd_report = app.add_subcommand("report", "Emit tables and plot data from a grid store");
  std::string report_grid, report_kind = "table", report_format = "csv", report_output, report_rep,
                           report_scheme = "per-speaker";
  int report_layer = -1;
  cmd_report->add_option("--grid", report_grid, "Grid store (default: <out-dir>/grid.jsonl)");
  cmd_report->add_option("--kind", report_kind, "table | layers | models");
  cmd_report->add_option("--format", report_format, "csv | json (tables)");
  cmd_report->add_option("--output", report_output, "Output file");
  cmd_report->add_option("--rep", report_rep, "Representation filter");
  cmd_report->add_option("--layer", report_layer, "Layer filter (tables)");
  cmd_report->add_option("--scheme", report_scheme, "per-speaker | shared | loso");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "artprobe: " << e.what() << '\n' << app.help();
    return 1;
  }

  try {
    if (*cmd_ingest) return ingest(g, corpus, input, subject, map_file, max_gap, split, ext, out, err);

    if (*cmd_synth) {
      sc.seed = g.seed;
      sc.snr = parse_real(snr, "snr");
      sc.layer_noise.clear();
      for (const auto& v : split_list(layer_noise)) sc.layer_noise.push_back(parse_real(v, "layer noise"));
      sc.maps = parse_map_sharing(maps);
      const auto names = split_list(synth_subjects);
      if (names.size() == 1 && std::all_of(names[0].begin(), names[0].end(), ::isdigit)) {
        sc.subjects.clear();
        const auto n = parse_int(names[0], "subject count");
        for (long long i = 1; i <= n; ++i) sc.subjects.push_back("S" + std::to_string(i));
      } else {
        sc.subjects = names;
      }
      const auto manifest = write_world(gen_world(sc), g.out_dir);
      out << manifest.string() << '\n';
      return 0;
    }

    if (*cmd_probe) {
      auto c = base_config(g, probe_opts, {probe_layer});
      c.subjects = {probe_subject};
      c.seeds = {g.seed};
      if (!probe_budget.empty()) {
        c.budgets = {parse_budget(probe_budget)};
        c.include_full = false;
      }
      c = finish_config(g, c);
      const auto grid = run_and_store(c, g, err);
      for (const auto& cell : grid.cells) {
        if (!cell.ok) return 1;
        out << cell.key.str() << '\t' << cell.score << '\n';
      }
      return 0;
    }

    if (*cmd_sweep) {
      auto c = finish_config(g, base_config(g, sweep_opts, parse_layers(sweep_layers)));
      c.budgets.clear();
      const auto grid = run_and_store(c, g, err);
      emit_layer_series(layer_series_from_cells(grid.cells, Scheme::per_speaker), fs::path(g.out_dir) / "layers.json");
      for (const auto& s : layer_series_from_cells(grid.cells, Scheme::per_speaker)) {
        const auto [best, score] = best_layer(s.profile);
        out << s.name << "\tbest layer " << best << '\t' << score << '\n';
      }
      return grid.ok_cells().size() == grid.cells.size() ? 0 : 1;
    }

    if (*cmd_ablate) {
      auto c = base_config(g, ablate_opts, {ablate_layer});
      c.budgets.clear();
      for (const auto& b : split_list(ablate_budgets)) c.budgets.push_back(parse_budget(b));
      c.seeds.clear();
      for (const auto& s : split_list(ablate_seeds)) {
        const auto v = parse_int(s, "seed");
        if (v <= 0) throw ArgumentError("seeds must be positive");
        c.seeds.push_back(static_cast<std::uint64_t>(v));
      }
      c.include_full = !ablate_no_full;
      c = finish_config(g, c);
      const auto grid = run_and_store(c, g, err);
      const auto ok = grid.ok_cells();
      std::vector<CellResult> per_subject;
      for (const auto& cell : ok)
        if (cell.key.subject != "all") per_subject.push_back(cell);
      if (!per_subject.empty()) {
        const auto table = score_table_from_cells(per_subject, subjects_in_order(per_subject), budgets_in_order(per_subject));
        emit_score_table(table, TableFormat::csv, fs::path(g.out_dir) / "table.csv");
        emit_score_table(table, TableFormat::csv, out);
      }
      return ok.size() == grid.cells.size() ? 0 : 1;
    }

    if (*cmd_loso || *cmd_shared) {
      const bool loso = static_cast<bool>(*cmd_loso);
      auto c = base_config(g, loso ? loso_opts : shared_opts, parse_layers(loso ? loso_layers : shared_layers));
      c.scheme = loso ? Scheme::loso : Scheme::shared;
      c.budgets.clear();
      c = finish_config(g, c);
      const auto grid = run_and_store(c, g, err);
      for (const auto& cell : grid.cells)
        if (cell.ok) out << cell.key.str() << '\t' << cell.score << '\n';
      return grid.ok_cells().size() == grid.cells.size() ? 0 : 1;
    }

    if (*cmd_report)
      return report(g, report_grid, report_kind, report_format, report_output, report_rep, report_layer, report_scheme,
                    out);
  } catch (const IoError& e) {
    err << "artprobe: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "artprobe: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "artprobe: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace artprobe

#pragma once

#include "artprobe/experiments.hpp"
#include "artprobe/scoring.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace artprobe {

enum class TableFormat { csv, json };
TableFormat parse_table_format(const std::string& s);

// "0.8049" -> "0.80". Halves round away from zero.
std::string format_2dp(double v);

struct ScoreTable {
  std::vector<std::string> columns;  // budget labels
  std::vector<std::string> subjects;
  std::vector<std::vector<double>> values;  // subjects x columns
  std::vector<double> average;              // unweighted subject mean, before rounding
};

ScoreTable make_score_table(std::vector<std::string> subjects, std::vector<std::string> columns,
                            std::vector<std::vector<double>> values);

// Pivots per-speaker cells (one representation/layer) into subjects x budgets.
// Budgeted cells are averaged over seeds. Throws listing every missing
// (subject, budget) pair.
ScoreTable score_table_from_cells(const std::vector<CellResult>& cells, const std::vector<std::string>& subjects,
                                  const std::vector<std::optional<double>>& budgets);

void emit_score_table(const ScoreTable& table, TableFormat format, std::ostream& out);
void emit_score_table(const ScoreTable& table, TableFormat format, const std::filesystem::path& path);

struct LayerSeries {
  std::string name;
  LayerProfile profile;
};
nlohmann::json layer_series_json(const std::vector<LayerSeries>& series);
void emit_layer_series(const std::vector<LayerSeries>& series, const std::filesystem::path& path);

struct ModelScore {
  std::string model;
  int layer = 0;
  double overall = 0.0;
  std::map<std::string, double> per_subject;
};
nlohmann::json model_comparison_json(const std::vector<ModelScore>& models);
void emit_model_comparison(const std::vector<ModelScore>& models, const std::filesystem::path& path);

// Writes through a temporary file and rename.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace artprobe

#include "artprobe/report.hpp"

#include "artprobe/error.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace artprobe {
namespace {

std::string full_precision(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

TableFormat parse_table_format(const std::string& s) {
  if (s == "csv") return TableFormat::csv;
  if (s == "json") return TableFormat::json;
  throw ArgumentError("unknown table format '" + s + "' (csv|json)");
}

std::string format_2dp(double v) {
  if (!std::isfinite(v)) return full_precision(v);
  // Snap to 1e-9 first so decimal halves such as 0.76625 round away from zero.
  const double r = std::round(std::round(v * 1e9) / 1e7) / 100.0;
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", r == 0.0 ? 0.0 : r);
  return buf;
}

ScoreTable make_score_table(std::vector<std::string> subjects, std::vector<std::string> columns,
                            std::vector<std::vector<double>> values) {
  if (subjects.empty() || columns.empty()) throw ArgumentError("score table needs at least one row and column");
  if (values.size() != subjects.size()) throw ArgumentError("score table row count mismatch");
  for (const auto& row : values)
    if (row.size() != columns.size()) throw ArgumentError("score table column count mismatch");
  ScoreTable t{std::move(columns), std::move(subjects), std::move(values), {}};
  for (std::size_t c = 0; c < t.columns.size(); ++c) {
    double sum = 0.0;
    for (const auto& row : t.values) sum += row[c];
    t.average.push_back(sum / static_cast<double>(t.values.size()));
  }
  return t;
}

ScoreTable score_table_from_cells(const std::vector<CellResult>& cells, const std::vector<std::string>& subjects,
                                  const std::vector<std::optional<double>>& budgets) {
  std::map<std::pair<std::string, std::string>, std::pair<double, std::size_t>> acc;
  for (const auto& c : cells) {
    if (!c.ok) continue;
    auto& a = acc[{c.key.subject, budget_label(c.key.budget)}];
    a.first += c.score;
    ++a.second;
  }
  std::vector<std::string> columns;
  for (const auto& b : budgets) columns.push_back(budget_label(b));
  std::vector<std::vector<double>> values;
  std::string missing;
  for (const auto& s : subjects) {
    values.emplace_back();
    for (const auto& col : columns) {
      const auto it = acc.find({s, col});
      if (it == acc.end()) {
        missing += " (" + s + ", " + col + ")";
        values.back().push_back(0.0);
      } else {
        values.back().push_back(it->second.first / static_cast<double>(it->second.second));
      }
    }
  }
  if (!missing.empty()) throw Error("score table is missing cells:" + missing);
  return make_score_table(subjects, columns, std::move(values));
}

void emit_score_table(const ScoreTable& t, TableFormat format, std::ostream& out) {
  if (format == TableFormat::csv) {
    out << "subject";
    for (const auto& c : t.columns) out << ',' << csv_field(c) << ',' << csv_field(c + "_full");
    out << '\n';
    const auto row = [&](const std::string& name, const auto& value_at) {
      out << csv_field(name);
      for (std::size_t c = 0; c < t.columns.size(); ++c)
        out << ',' << format_2dp(value_at(c)) << ',' << full_precision(value_at(c));
      out << '\n';
    };
    for (std::size_t s = 0; s < t.subjects.size(); ++s) row(t.subjects[s], [&](std::size_t c) { return t.values[s][c]; });
    row("Average", [&](std::size_t c) { return t.average[c]; });
    return;
  }
  nlohmann::json j;
  j["columns"] = t.columns;
  j["rows"] = nlohmann::json::array();
  const auto row = [&](const std::string& name, const auto& value_at) {
    nlohmann::json r = {{"subject", name}, {"values", nlohmann::json::array()}, {"full", nlohmann::json::array()}};
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      r["values"].push_back(format_2dp(value_at(c)));
      r["full"].push_back(value_at(c));
    }
    j["rows"].push_back(r);
  };
  for (std::size_t s = 0; s < t.subjects.size(); ++s) row(t.subjects[s], [&](std::size_t c) { return t.values[s][c]; });
  row("Average", [&](std::size_t c) { return t.average[c]; });
  out << j.dump(2) << '\n';
}

void emit_score_table(const ScoreTable& table, TableFormat format, const std::filesystem::path& path) {
  std::ostringstream out;
  emit_score_table(table, format, out);
  write_text_file(path, out.str());
}

nlohmann::json layer_series_json(const std::vector<LayerSeries>& series) {
  if (series.empty()) throw ArgumentError("layer series needs at least one profile");
  nlohmann::json j;
  j["series"] = nlohmann::json::array();
  for (const auto& s : series) {
    nlohmann::json points = nlohmann::json::array();
    for (std::size_t l = 0; l < s.profile.scores.size(); ++l) points.push_back({l, s.profile.scores[l]});
    nlohmann::json rec = {{"name", s.name}, {"points", points}};
    rec["peaks"] = s.profile.scores.size() >= 3 ? find_score_peaks(s.profile) : std::vector<std::size_t>{};
    const auto [best, score] = best_layer(s.profile);
    rec["best_layer"] = best;
    rec["best_score"] = score;
    j["series"].push_back(rec);
  }
  return j;
}

void emit_layer_series(const std::vector<LayerSeries>& series, const std::filesystem::path& path) {
  write_text_file(path, layer_series_json(series).dump(2) + "\n");
}

nlohmann::json model_comparison_json(const std::vector<ModelScore>& models) {
  nlohmann::json j;
  j["bars"] = nlohmann::json::array();
  j["points"] = nlohmann::json::array();
  for (const auto& m : models) {
    if (m.per_subject.empty()) throw ArgumentError("model '" + m.model + "' has no per-subject scores");
    j["bars"].push_back({{"model", m.model}, {"layer", m.layer}, {"score", m.overall}, {"label", format_2dp(m.overall)}});
    for (const auto& [subject, v] : m.per_subject)
      j["points"].push_back({{"model", m.model}, {"subject", subject}, {"score", v}});
  }
  return j;
}

void emit_model_comparison(const std::vector<ModelScore>& models, const std::filesystem::path& path) {
  write_text_file(path, model_comparison_json(models).dump(2) + "\n");
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out.flush()) throw IoError("failed writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

}  // namespace artprobe

#include "artprobe/error.hpp"
#include "artprobe/report.hpp"

#include "fixtures.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace artprobe;

namespace {

// Per-speaker scores at the 5 min, 10 min and full budgets; the 5 min mean sits on a decimal half.
const std::vector<std::string> kSubjects = {"M1", "M2", "M3", "M4", "M5", "M6", "M7", "M8"};
const std::vector<std::vector<double>> kTable = {
    {0.80, 0.82, 0.83}, {0.75, 0.77, 0.78}, {0.78, 0.80, 0.81}, {0.73, 0.75, 0.77},
    {0.77, 0.79, 0.80}, {0.79, 0.80, 0.82}, {0.76, 0.78, 0.80}, {0.75, 0.79, 0.81},
};

CellResult cell(const std::string& subject, std::optional<double> budget, std::uint64_t seed, double score) {
  CellResult c;
  c.key = {"rep", 11, subject, budget, Scheme::per_speaker, budget ? seed : 0};
  c.ok = true;
  c.score = score;
  return c;
}

std::string csv(const ScoreTable& t) {
  std::ostringstream out;
  emit_score_table(t, TableFormat::csv, out);
  return out.str();
}

}  // namespace

TEST_SUITE("report") {

TEST_CASE("two decimal rounding") {
  CHECK(format_2dp(0.8049) == "0.80");
  CHECK(format_2dp(0.76625) == "0.77");
  CHECK(format_2dp(0.7875) == "0.79");
  CHECK(format_2dp(0.8025) == "0.80");
  CHECK(format_2dp(0.125) == "0.13");
  CHECK(format_2dp(-0.125) == "-0.13");
  CHECK(format_2dp(1.0) == "1.00");
  CHECK(format_2dp(0.0) == "0.00");
}

TEST_CASE("table averages round half away from zero") {
  const auto t = make_score_table(kSubjects, {"300", "600", "full"}, kTable);
  REQUIRE(t.average.size() == 3);
  CHECK(format_2dp(t.average[0]) == "0.77");
  CHECK(format_2dp(t.average[1]) == "0.79");
  CHECK(format_2dp(t.average[2]) == "0.80");
  const auto text = csv(t);
  CHECK(text.rfind("subject,300,300_full,600,600_full,full,full_full\n", 0) == 0);
  CHECK(text.find("\nAverage,0.77,0.76625,0.79,0.7875,0.80,0.8025\n") != std::string::npos);
  CHECK(text.find("\nM1,0.80,0.8,0.82,0.82,0.83,0.83\n") != std::string::npos);
}

TEST_CASE("single cell table") {
  const auto t = make_score_table({"S1"}, {"full"}, {{0.8049}});
  CHECK(csv(t) == "subject,full,full_full\nS1,0.80,0.8049\nAverage,0.80,0.8049\n");
}

TEST_CASE("malformed tables are rejected") {
  CHECK_THROWS_AS(make_score_table({}, {"full"}, {}), ArgumentError);
  CHECK_THROWS_AS(make_score_table({"S1"}, {"full"}, {{0.1, 0.2}}), ArgumentError);
  CHECK_THROWS_AS(make_score_table({"S1", "S2"}, {"full"}, {{0.1}}), ArgumentError);
}

TEST_CASE("tables from cells average seeds and name missing cells") {
  std::vector<CellResult> cells;
  for (const auto* s : {"S1", "S2", "S3"}) {
    cells.push_back(cell(s, std::nullopt, 0, 0.9));
    cells.push_back(cell(s, 300.0, 1, 0.7));
    cells.push_back(cell(s, 300.0, 2, 0.8));
  }
  const auto t = score_table_from_cells(cells, {"S1", "S2", "S3"}, {300.0, std::nullopt});
  CHECK(t.columns == std::vector<std::string>{"300", "full"});
  CHECK(t.values[1][0] == doctest::Approx(0.75));
  CHECK(t.values[2][1] == 0.9);

  cells.erase(std::remove_if(cells.begin(), cells.end(),
                             [](const CellResult& c) { return c.key.subject == "S3" && c.key.budget; }),
              cells.end());
  try {
    score_table_from_cells(cells, {"S1", "S2", "S3"}, {300.0, std::nullopt});
    FAIL("expected a missing-cell error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("(S3, 300)") != std::string::npos);
  }
}

TEST_CASE("json tables carry rounded strings and full precision") {
  const auto t = make_score_table({"S1", "S2"}, {"full"}, {{0.81}, {0.7}});
  std::ostringstream out;
  emit_score_table(t, TableFormat::json, out);
  const auto j = nlohmann::json::parse(out.str());
  CHECK(j["columns"] == nlohmann::json({"full"}));
  REQUIRE(j["rows"].size() == 3);
  CHECK(j["rows"][2]["subject"] == "Average");
  CHECK(j["rows"][2]["values"][0] == "0.76");
  CHECK(j["rows"][0]["full"][0].get<double>() == 0.81);
  CHECK_THROWS_AS(parse_table_format("xlsx"), ArgumentError);
}

TEST_CASE("re-emission is byte identical") {
  artprobe::testing::TempDir dir("report");
  const auto t = make_score_table(kSubjects, {"300", "600", "full"}, kTable);
  emit_score_table(t, TableFormat::csv, dir / "a.csv");
  emit_score_table(t, TableFormat::csv, dir / "b.csv");
  std::ifstream a(dir / "a.csv"), b(dir / "b.csv");
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());
  CHECK(sa.str() == csv(t));
}

TEST_CASE("layer series annotate peaks") {
  const std::vector<LayerSeries> series = {
      {"twin", {{0.1, 0.5, 0.3, 0.6, 0.2}}},
      {"short", {{0.4, 0.5}}},
  };
  const auto j = layer_series_json(series);
  REQUIRE(j["series"].size() == 2);
  const auto& twin = j["series"][0];
  CHECK(twin["peaks"] == nlohmann::json({1, 3}));
  CHECK(twin["best_layer"] == 3);
  CHECK(twin["points"][2] == nlohmann::json({2, 0.3}));
  CHECK(j["series"][1]["peaks"].empty());
  CHECK(j["series"][1]["best_layer"] == 1);
}

TEST_CASE("model comparison has one bar per model and one point per subject") {
  std::vector<ModelScore> models;
  for (int m = 0; m < 3; ++m) {
    ModelScore s{"model" + std::to_string(m), 5 + m, 0.7 + 0.01 * m, {}};
    for (int k = 1; k <= 8; ++k) s.per_subject["M" + std::to_string(k)] = 0.6 + 0.01 * k;
    models.push_back(s);
  }
  const auto j = model_comparison_json(models);
  CHECK(j["bars"].size() == 3);
  CHECK(j["points"].size() == 24);
  CHECK(j["bars"][1]["layer"] == 6);
  CHECK(j["bars"][1]["label"] == "0.71");
}

}  // TEST_SUITE

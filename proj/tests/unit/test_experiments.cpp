#include "artprobe/error.hpp"
#include "artprobe/experiments.hpp"

#include "fixtures.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace artprobe;

namespace {

std::shared_ptr<const SyntheticWorld> world(std::vector<std::string> subjects = {"S1", "S2"}, double snr = 1.0,
                                            std::vector<double> layer_noise = {1.0, 0.1, 0.5},
                                            MapSharing maps = MapSharing::independent) {
  SynthConfig c;
  c.dim = 8;
  c.subjects = std::move(subjects);
  c.train_utterances = 12;
  c.test_utterances = 4;
  c.utterance_seconds = 5.0;
  c.snr = snr;
  c.layer_noise = std::move(layer_noise);
  c.maps = maps;
  c.seed = 5;
  return std::make_shared<const SyntheticWorld>(gen_world(c));
}

ExperimentConfig config(std::vector<int> layers = {0, 1, 2}) {
  ExperimentConfig c;
  c.representations = {{"synth", std::move(layers)}};
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Drops selected feature dumps for one utterance.
class HoleySource : public MemorySource {
 public:
  HoleySource(std::shared_ptr<const SyntheticWorld> w, std::string utt, int layer)
      : MemorySource(std::move(w)), utt_(std::move(utt)), layer_(layer) {}
  TimeSeries load_features(const SubjectEntry& s, const Utterance& u, const std::string& rep, int layer) const override {
    if (u.id == utt_ && layer == layer_) throw IoError("missing feature file for " + s.id + "/" + u.id);
    return MemorySource::load_features(s, u, rep, layer);
  }

 private:
  std::string utt_;
  int layer_;
};

}  // namespace

TEST_SUITE("experiments") {

TEST_CASE("budget parsing") {
  CHECK(parse_budget("300") == 300.0);
  CHECK(parse_budget("20s") == 20.0);
  CHECK(parse_budget("5m") == 300.0);
  CHECK(parse_budget("1.5m") == 90.0);
  CHECK_THROWS_AS(parse_budget("-5"), ArgumentError);
  CHECK_THROWS_AS(parse_budget("0"), ArgumentError);
  CHECK_THROWS_AS(parse_budget("5h"), ArgumentError);
  CHECK_THROWS_AS(parse_budget(""), ArgumentError);
  CHECK(budget_label(std::nullopt) == "full");
  CHECK(budget_label(300.0) == "300");
  CHECK(budget_label(2.5) == "2.5");
}

TEST_CASE("the six-step budget schedule is accepted verbatim") {
  auto c = config();
  for (const auto* b : {"20s", "30s", "1m", "5m", "10m", "20m"}) c.budgets.push_back(parse_budget(b));
  CHECK_NOTHROW(c.validate());
  CHECK(c.budgets == std::vector<double>{20, 30, 60, 300, 600, 1200});
  c.budgets = {30, 20};
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c.budgets = {20};
  c.seeds = {};
  CHECK_THROWS_AS(c.validate(), ArgumentError);
}

TEST_CASE("config json round trip and unknown keys") {
  auto c = config();
  c.budgets = {20, 60};
  c.scheme = Scheme::loso;
  c.norm_scope = NormScope::all_data;
  const auto back = config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(config_from_json({{"budgets", {"5m", "10m"}}}).budgets == std::vector<double>{300, 600});
  CHECK_THROWS_AS(config_from_json({{"budget", 5}}), ArgumentError);
  CHECK_THROWS_AS(config_from_json({{"scheme", "loo"}}), ArgumentError);
}

TEST_CASE("per-speaker grid has one cell per subject and layer") {
  const MemorySource src(world());
  const auto grid = run_grid(config(), src);
  REQUIRE(grid.cells.size() == 6);
  for (const auto& cell : grid.cells) {
    CHECK(cell.ok);
    CHECK(cell.scores.channels.size() == 12);
    CHECK(cell.scores.n_test == 4 * 250);
    CHECK(cell.train_seconds == 60.0);
    CHECK(cell.key.seed == 0);
  }
  CHECK(grid.cells[0].key.subject == "S1");
  CHECK(grid.cells[1].key.subject == "S2");
  CHECK(grid.cells[2].key.layer == 1);
}

TEST_CASE("layer sweep finds the least noisy layer") {
  const MemorySource src(world());
  const auto profiles = run_layer_sweep(config(), src);
  REQUIRE(profiles.count("*"));
  CHECK(best_layer(profiles.at("*")).first == 1);
  CHECK(best_layer(profiles.at("S1")).first == 1);
  CHECK(find_score_peaks(profiles.at("*")) == std::vector<std::size_t>{1});
}

TEST_CASE("grid contents do not depend on the worker count") {
  const MemorySource src(world());
  auto c = config();
  c.budgets = {10, 30};
  c.seeds = {1, 2};
  const auto a = run_grid(c, src, nullptr, 1), b = run_grid(c, src, nullptr, 4);
  REQUIRE(a.cells.size() == b.cells.size());
  CHECK(a.cells.size() == 2 * 3 * (1 + 2 * 2));
  for (std::size_t i = 0; i < a.cells.size(); ++i)
    CHECK(cell_to_json(a.cells[i], "x").dump() == cell_to_json(b.cells[i], "x").dump());
}

TEST_CASE("stores are byte identical across worker counts and resume skips completed cells") {
  artprobe::testing::TempDir dir("grid");
  const MemorySource src(world());
  auto c = config();
  c.budgets = {10};
  c.seeds = {1, 2};
  {
    GridStore s1(dir / "a.jsonl"), s8(dir / "b.jsonl");
    run_grid(c, src, &s1, 1);
    run_grid(c, src, &s8, 8);
  }
  const auto a = slurp(dir / "a.jsonl");
  CHECK(a == slurp(dir / "b.jsonl"));

  // Rerunning over the finished store appends nothing.
  {
    GridStore again(dir / "a.jsonl");
    const auto grid = run_grid(c, src, &again, 2);
    CHECK(grid.cells.size() == 18);
  }
  CHECK(slurp(dir / "a.jsonl") == a);

  // A store holding only some cells is completed to the same set.
  {
    std::istringstream lines(a);
    std::string line, partial;
    for (int i = 0; i < 7 && std::getline(lines, line); ++i) partial += line + "\n";
    std::ofstream(dir / "c.jsonl", std::ios::binary) << partial;
    GridStore resumed(dir / "c.jsonl");
    const auto grid = run_grid(c, src, &resumed, 1);
    const auto fresh = run_grid(c, src, nullptr, 1);
    REQUIRE(grid.cells.size() == fresh.cells.size());
    for (std::size_t i = 0; i < grid.cells.size(); ++i)
      CHECK(cell_to_json(grid.cells[i], "x") == cell_to_json(fresh.cells[i], "x"));
    CHECK(load_grid(dir / "c.jsonl").size() == 18);
  }
}

TEST_CASE("grid records round trip") {
  const MemorySource src(world({"S1"}));
  const auto grid = run_grid(config({1}), src);
  const auto j = cell_to_json(grid.cells[0], "abc");
  CHECK(j["settings"] == "abc");
  const auto back = cell_from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.score == grid.cells[0].score);
  CHECK(back.scores.r == grid.cells[0].scores.r);
  CHECK(back.key == grid.cells[0].key);
  CHECK_THROWS_AS(cell_from_json({{"type", "cell"}}), FormatError);
}

TEST_CASE("failures are isolated to their cells") {
  const auto w = world();
  const HoleySource src(w, w->utterances[2].id, 2);  // S1 train utterance, layer 2
  auto c = config();
  c.budgets = {1e6};
  c.seeds = {1};
  const auto grid = run_grid(c, src);
  REQUIRE(grid.cells.size() == 12);
  std::size_t failed = 0;
  for (const auto& cell : grid.cells) {
    if (cell.ok) continue;
    ++failed;
    if (cell.key.budget) {
      if (cell.key.subject == "S1" && cell.key.layer == 2) continue;
      CHECK(cell.error.find("exceeds available") != std::string::npos);
    } else {
      CHECK(cell.key.subject == "S1");
      CHECK(cell.key.layer == 2);
      CHECK(cell.error.find(w->utterances[2].id) != std::string::npos);
    }
  }
  CHECK(failed == 7);  // six starved budget cells plus the S1/L2 full cell
}

TEST_CASE("budgeted cells use nested seeded subsets") {
  const MemorySource src(world({"S1"}));
  auto c = config({1});
  c.budgets = {10, 20, 40};
  c.seeds = {3};
  const auto grid = run_grid(c, src);
  REQUIRE(grid.cells.size() == 4);
  CHECK(grid.cells[1].train_seconds == 10.0);
  CHECK(grid.cells[2].train_seconds == 20.0);
  CHECK(grid.cells[3].train_seconds == 40.0);
  CHECK(grid.cells[3].train_frames == 2000);
}

TEST_CASE("normalisation scope changes settings but not the train-only path") {
  const MemorySource src(world({"S1"}));
  auto a = config({1}), b = config({1});
  b.norm_scope = NormScope::all_data;
  const Experiment ea(a, src), eb(b, src);
  CHECK(ea.settings_hash() != eb.settings_hash());
  const auto ga = run_grid(a, src), gb = run_grid(b, src);
  // Correlation is invariant to the affine normaliser, so only rounding differs.
  CHECK(ga.cells[0].score == doctest::Approx(gb.cells[0].score).epsilon(1e-12));
}

TEST_CASE("shared model and leave-one-subject-out") {
  const auto shared_world = world({"S1", "S2", "S3"}, 3.0, {0.0}, MapSharing::shared);
  const auto ortho_world = world({"S1", "S2", "S3"}, 3.0, {0.0}, MapSharing::orthogonal);
  const auto c = config({0});

  const MemorySource shared_src(shared_world), ortho_src(ortho_world);
  const auto loso_shared = run_loso(c, shared_src);
  const auto loso_ortho = run_loso(c, ortho_src);
  CHECK(loso_shared.per_subject.size() == 3);
  CHECK(loso_shared.mean == doctest::Approx(expected_r(3.0)).epsilon(0.03));
  CHECK(loso_ortho.mean < 0.2);  // no transferable structure

  const auto shared = run_shared_model(c, shared_src);
  REQUIRE(shared.pooled.has_value());
  CHECK(shared.per_subject.size() == 3);
  CHECK(shared.mean == doctest::Approx(expected_r(3.0)).epsilon(0.03));
  CHECK(run_shared_model(c, ortho_src).mean < shared.mean - 0.1);

  const MemorySource single(world({"S1"}));
  CHECK_THROWS_AS(run_loso(c, single), ArgumentError);
}

TEST_CASE("per-articulator table pivots channel scores") {
  const MemorySource src(world());
  const auto grid = run_grid(config(), src);
  std::map<int, std::map<std::string, ChannelScores>> layers;
  for (const auto& cell : grid.cells) layers[cell.key.layer][cell.key.subject] = cell.scores;
  const auto table = per_articulator_table(layers);
  CHECK(table.size() == 12);
  CHECK(table.at("tt_x").size() == 3);
  const double want = (layers[1]["S1"].r[6] + layers[1]["S2"].r[6]) / 2;
  CHECK(table.at("tt_x")[1] == doctest::Approx(want));

  layers[2]["S1"].valid[0] = layers[2]["S2"].valid[0] = false;
  CHECK_THROWS_AS(per_articulator_table(layers), ArgumentError);
}

TEST_CASE("summary aggregates subjects per group and averages seeds") {
  const MemorySource src(world());
  auto c = config({1});
  c.budgets = {30};
  c.seeds = {1, 2};
  const auto grid = run_grid(c, src);
  const auto s = summarize_grid(grid);
  CHECK(s["aggregates"].size() == 3);
  CHECK(s["seed_means"].size() == 2);
  const double a = s["aggregates"][0]["overall"], b = s["aggregates"][1]["overall"];
  for (const auto& m : s["seed_means"])
    if (m["budget"] == "30") CHECK(m["overall"].get<double>() == doctest::Approx((a + b) / 2));
}

TEST_CASE("configuration errors surface before any work") {
  const MemorySource src(world());
  auto c = config();
  c.subjects = {"S9"};
  CHECK_THROWS_AS(run_grid(c, src), ArgumentError);
  c = config();
  c.representations.clear();
  CHECK_THROWS_AS(run_grid(c, src), ArgumentError);
  CHECK_THROWS_AS(run_grid(config(), src, nullptr, 0), ArgumentError);
}

}  // TEST_SUITE

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "prunelab/config.hpp"
#include "prunelab/experiment.hpp"

namespace prunelab {
namespace {

namespace fs = std::filesystem;

const char* kTiny = R"({
  "name": "tiny",
  "dataset": {"kind": "gaussian-clusters", "samples": 300, "classes": 3, "seed": 2},
  "network": {"input": [2], "classes": 3,
              "layers": [{"type": "dense", "in": 2, "out": 12}, {"type": "relu"},
                         {"type": "dense", "in": 12, "out": 3}]},
  "methods": [{"criterion": "WT"}, {"criterion": "FT"}],
  "schedule": {"n_cycles": 2, "r_prune": 0.5, "train": {"epochs": 2, "batch_size": 16, "lr": 0.05}},
  "seeds": [0, 1],
  "distributions": {"train": [{"kind": "uniform-noise", "severity": 1}],
                    "test": [{"kind": "gaussian-noise", "severity": 1}]},
  "evaluation": {"repetitions": 1, "noise_eps": [0, 0.5], "bootstrap_resamples": 100},
  "output": "unused"
})";

class TempRoot : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::path(::testing::TempDir()) /
            ("prunelab-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    ::setenv(kOutputEnv, root_.c_str(), 1);
  }
  void TearDown() override {
    ::unsetenv(kOutputEnv);
    fs::remove_all(root_);
  }
  static RunOptions quiet() {
    RunOptions o;
    o.log = [](const std::string&) {};
    return o;
  }
  fs::path root_;
};

TEST(Config, RoundTripsThroughJson) {
  ExperimentConfig a = parse_config(kTiny);
  ExperimentConfig b = config_from_json(Json::parse(config_to_json(a).dump()));
  EXPECT_TRUE(a == b);
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Config, HashIgnoresSeedsAndOutput) {
  ExperimentConfig a = parse_config(kTiny);
  ExperimentConfig b = a;
  b.seeds = {7};
  b.output = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.schedule.r_prune = 0.4;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, ShippedRecipesParse) {
  for (const char* name : {"fig5-desk.json", "quick-rings.json"}) {
    fs::path p = fs::path(PRUNELAB_SOURCE_DIR) / "recipes" / name;
    EXPECT_NO_THROW(load_config(p.string())) << name;
  }
}

std::string field_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "";
}

std::string edit(const std::string& from, const std::string& to) {
  std::string s = kTiny;
  auto at = s.find(from);
  EXPECT_NE(at, std::string::npos) << from;
  return s.replace(at, from.size(), to);
}

TEST(Config, ErrorsNameTheField) {
  EXPECT_EQ(field_error(edit(R"("seeds": [0, 1])", R"("seeds": [])")), "seeds");
  EXPECT_EQ(field_error(edit(R"("r_prune": 0.5)", R"("r_prune": 1.5)")), "schedule.r_prune");
  EXPECT_EQ(field_error(edit(R"("criterion": "FT")", R"("criterion": "XX")")), "methods[1].criterion");
  EXPECT_EQ(field_error(edit(R"("samples": 300)", R"("samples": "many")")), "dataset.samples");
  EXPECT_EQ(field_error(edit(R"("name": "tiny",)", R"("name": "tiny", "colour": 1,)")), "colour");
  EXPECT_EQ(field_error(edit(R"("kind": "gaussian-noise")", R"("kind": "uniform-noise")")), "distributions");
  EXPECT_THROW(parse_config("{not json"), ConfigError);
}

TEST_F(TempRoot, ZeroCyclesGivesOneCheckpointAndOnePoint) {
  ExperimentConfig cfg = parse_config(kTiny);
  cfg.schedule.n_cycles = 0;
  cfg.seeds = {3};
  cfg.metrics.excess = false;
  RunSummary s = run_experiment(cfg, quiet());
  EXPECT_EQ(s.computed, (std::vector<std::uint64_t>{3}));
  std::size_t plab = 0;
  for (const auto& e : fs::directory_iterator(s.dir / "3" / "checkpoints")) plab += e.path().extension() == ".plab";
  EXPECT_EQ(plab, 2u);  // one per method
  ReportSummary r = report(root_);
  EXPECT_EQ(r.curve("WT", kCleanDist).points(), 1u);
}

TEST_F(TempRoot, RerunIsIdempotent) {
  ExperimentConfig cfg = parse_config(kTiny);
  RunSummary first = run_experiment(cfg, quiet());
  EXPECT_EQ(first.computed.size(), 2u);
  std::string curves = read_text(first.dir / "report" / "curves.csv");
  std::string acc = read_text(first.dir / "0" / "curves" / "accuracy.csv");
  RunSummary second = run_experiment(cfg, quiet());
  EXPECT_TRUE(second.computed.empty());
  EXPECT_EQ(second.skipped.size(), 2u);
  EXPECT_EQ(read_text(first.dir / "report" / "curves.csv"), curves);
  EXPECT_EQ(read_text(first.dir / "0" / "curves" / "accuracy.csv"), acc);
}

TEST_F(TempRoot, IncompleteSeedIsRecomputed) {
  ExperimentConfig cfg = parse_config(kTiny);
  RunSummary first = run_experiment(cfg, quiet());
  fs::remove(first.dir / "1" / "DONE");
  RunSummary again = run_experiment(cfg, quiet());
  EXPECT_EQ(again.computed, (std::vector<std::uint64_t>{1}));
  EXPECT_TRUE(fs::exists(first.dir / "1" / "DONE"));
}

// The report's std column is the sample std over seeds of the per-seed rows.
TEST_F(TempRoot, ReportAggregatesPerSeedRecords) {
  ExperimentConfig cfg = parse_config(kTiny);
  RunSummary s = run_experiment(cfg, quiet());
  CsvTable a0 = read_csv(s.dir / "0" / "curves" / "accuracy.csv");
  CsvTable a1 = read_csv(s.dir / "1" / "curves" / "accuracy.csv");
  ReportSummary r = report(s.dir);
  const PruneAccuracyCurve& c = r.curve("WT", kCleanDist);
  std::vector<double> first;
  for (const CsvTable* t : {&a0, &a1})
    for (const auto& row : t->rows)
      if (row[0] == "WT" && row[1] == "1" && row[3] == kCleanDist) first.push_back(parse_double(row[4]));
  ASSERT_EQ(first.size(), 2u);
  EXPECT_EQ(c.mean_accuracy(1), sample_mean(first));
  EXPECT_EQ(c.std_accuracy(1), sample_std(first));
  // Potentials are recomputable from the raw records.
  EXPECT_EQ(r.potential("WT", kCleanDist, 0.005).potential, prune_potential(c, 0.005).potential);
}

TEST_F(TempRoot, SeedOverrideRunsOneSeed) {
  ExperimentConfig cfg = parse_config(kTiny);
  RunOptions o = quiet();
  o.seed_override = 5;
  RunSummary s = run_experiment(cfg, o);
  EXPECT_EQ(s.computed, (std::vector<std::uint64_t>{5}));
  EXPECT_TRUE(fs::exists(s.dir / "5" / "DONE"));
  EXPECT_FALSE(fs::exists(s.dir / "0"));
}

TEST_F(TempRoot, ReportRejectsMixedConfigs) {
  ExperimentConfig a = parse_config(kTiny);
  a.schedule.n_cycles = 1;
  a.seeds = {0};
  ExperimentConfig b = a;
  b.schedule.r_prune = 0.4;
  run_experiment(a, quiet());
  run_experiment(b, quiet());
  EXPECT_THROW(report(root_), Error);
}

TEST(Csv, NumbersRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456789.125, 0.0}) EXPECT_EQ(parse_double(fmt_double(v)), v);
}

}  // namespace
}  // namespace prunelab

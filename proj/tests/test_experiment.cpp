#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "miranda/experiment/runner.hpp"

namespace miranda {
namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("miranda_exp_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

ExperimentConfig tiny(const fs::path& out) {
  ExperimentConfig c;
  c.climate.sites = 6;
  c.climate.first_year = 2000;
  c.climate.last_year = 2005;
  c.data_seed = 4;
  c.methods = {Method::kVanilla, Method::kMiranda};
  c.seeds = {0, 1};
  c.train.dim = 8;
  c.train.heads = 1;
  c.train.ffn_dim = 8;
  c.train.disc_dim = 8;
  c.train.rank_dim = 8;
  c.train.lr = 1e-3;
  c.train.max_epochs = 2;
  c.out = out.string();
  return c;
}

TEST(ExperimentConfig, JsonRoundTrip) {
  ExperimentConfig c = tiny("/tmp/x");
  c.split.kind = "random";
  c.split.seed = 9;
  c.train.fixed_lambda = 0.5;
  c.train.feature_site = FeatureSite::kLate;
  const json j = to_json(c);
  const ExperimentConfig back = experiment_from_json(j);
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(back.train.fixed_lambda, 0.5);
  EXPECT_EQ(back.climate.sites, 6u);
}

TEST(ExperimentConfig, ErrorsNameTheField) {
  auto message = [](const std::string& text) {
    try {
      experiment_from_json(json::parse(text));
    } catch (const Error& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message(R"({"methods": ["vanilla"]})").find("schema_version"), std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 2})").find("schema_version"), std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1, "train": {"lr": "fast"}})").find("train.lr"), std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1, "train": {"lr": -1}})").find("lr"), std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1, "data": {"climate": {"sitez": 3}}})").find("data.climate.sitez"),
            std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1, "methods": ["adda"]})").find("methods"), std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1, "methods": []})").find("methods"), std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1, "seeds": []})").find("seeds"), std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1, "split": {"kind": "sideways"}})").find("split.kind"), std::string::npos);
  EXPECT_NE(message(R"({"schema_version": 1, "data": {"climate": {"lapse": 1}}})").find("lapse"), std::string::npos);
  EXPECT_EQ(message(R"({"schema_version": 1})"), "no error");
}

TEST(ExperimentConfig, ShippedConfigsLoad) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(MIRANDA_CONFIG_DIR)) {
    if (e.path().extension() != ".json") continue;
    EXPECT_NO_THROW(load_experiment(e.path().string())) << e.path();
    ++n;
  }
  EXPECT_GE(n, 4u);
}

TEST(Generate, DefaultSizeAndHashStable) {
  ExperimentConfig c;
  const Dataset d = load_dataset(c, 2);
  EXPECT_EQ(d.records.size(), 40u * 50u);
  const fs::path dir = scratch("gen");
  fs::create_directories(dir);
  csv_write(d.records, (dir / "a.csv").string());
  csv_write(load_dataset(c, 1).records, (dir / "b.csv").string());
  EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
  fs::remove_all(dir);
}

// Warming splits: test years are warmer, so their dates come earlier.
TEST(Generate, DateShiftOpposesTemperatureShift) {
  ExperimentConfig c;
  c.climate.sites = 10;
  c.climate.warming = 0.5;
  const Dataset d = load_dataset(c);
  const ShiftStats annual = shift_stats(d.records, split_by_annual_temp(d.records, 0.15, 0.15), "annual-temp");
  EXPECT_GT(annual.delta_t, 0.0);
  EXPECT_LT(annual.delta_date, 0.0);
  const ShiftStats chrono = shift_stats(d.records, split_chronological(d.records, 2004, 2011), "chronological");
  EXPECT_GT(chrono.delta_t, 0.0);
  EXPECT_LT(chrono.delta_date, 0.0);
  const ShiftStats elev = shift_stats(d.records, split_by_elevation(d.records, 0.25, 0.15), "elevation");
  EXPECT_LT(elev.delta_t, 0.0);
  EXPECT_GT(elev.delta_date, 0.0);
}

class RunFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(scratch("run"));
    cfg_ = new ExperimentConfig(tiny(*dir_));
    data_ = new ExperimentData(prepare_experiment(*cfg_));
    first_ = new ExperimentResult(run_experiment(*cfg_, *data_, 1));
  }
  static void TearDownTestSuite() {
    fs::remove_all(*dir_);
    delete first_;
    delete data_;
    delete cfg_;
    delete dir_;
  }
  static fs::path* dir_;
  static ExperimentConfig* cfg_;
  static ExperimentData* data_;
  static ExperimentResult* first_;
};
fs::path* RunFixture::dir_ = nullptr;
ExperimentConfig* RunFixture::cfg_ = nullptr;
ExperimentData* RunFixture::data_ = nullptr;
ExperimentResult* RunFixture::first_ = nullptr;

TEST_F(RunFixture, LayoutAndCells) {
  EXPECT_TRUE(first_->failed_methods().empty());
  ASSERT_EQ(first_->runs.size(), 4u);
  for (const char* run : {"vanilla-seed0", "vanilla-seed1", "miranda-seed0", "miranda-seed1"}) {
    for (const char* f : {"config.json", "metrics.csv", "checkpoint.json", "result.json"}) {
      EXPECT_TRUE(fs::exists(*dir_ / "runs" / run / f)) << run << "/" << f;
    }
  }
  EXPECT_TRUE(fs::exists(*dir_ / "cells.csv"));
  EXPECT_TRUE(fs::exists(*dir_ / "report.txt"));
  const auto cells = aggregate_by_cell(first_->rows);
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_EQ(std::get<2>(cells[0]).seeds, 2u);
  EXPECT_EQ(std::get<2>(cells[1]).seeds, 2u);
  const std::string metrics = slurp(*dir_ / "runs" / "miranda-seed1" / "metrics.csv");
  EXPECT_EQ(metrics.rfind("epoch,train_mse,train_rank,val_rmse\n", 0), 0u);
}

TEST_F(RunFixture, RerunIsIdenticalForAnyJobCount) {
  ExperimentConfig again = *cfg_;
  again.out = scratch("run2").string();
  const ExperimentResult second = run_experiment(again, *data_, 3);
  EXPECT_EQ(second.report, first_->report);
  EXPECT_EQ(slurp(fs::path(again.out) / "cells.csv"), slurp(*dir_ / "cells.csv"));
  EXPECT_EQ(slurp(fs::path(again.out) / "runs" / "miranda-seed0" / "metrics.csv"),
            slurp(*dir_ / "runs" / "miranda-seed0" / "metrics.csv"));
  EXPECT_EQ(slurp(fs::path(again.out) / "runs" / "vanilla-seed1" / "checkpoint.json"),
            slurp(*dir_ / "runs" / "vanilla-seed1" / "checkpoint.json"));
  fs::remove_all(again.out);
}

TEST_F(RunFixture, ReportRecomputesFromCellsFile) {
  const auto rows = read_cells_csv((*dir_ / "cells.csv").string());
  EXPECT_EQ(rows, first_->rows);
  EXPECT_EQ(format_report(rows), slurp(*dir_ / "report.txt"));
  const Summary a = aggregate(rows);
  double mean = 0.0;
  for (const auto& r : rows) mean += r.m.r2 / static_cast<double>(rows.size());
  EXPECT_NEAR(a.r2, mean, 1e-12);
}

TEST_F(RunFixture, EvalReproducesRecordedTestMetrics) {
  const PhenoFormer model = load_checkpoint((*dir_ / "runs" / "miranda-seed1" / "checkpoint.json").string());
  const SplitEvaluation ev = evaluate_split(model, *data_, "test");
  const RunOutcome& run = first_->runs[3];
  ASSERT_EQ(run.method, Method::kMiranda);
  ASSERT_EQ(ev.rows.size(), run.rows.size());
  for (std::size_t i = 0; i < ev.rows.size(); ++i) {
    EXPECT_EQ(ev.rows[i].m.r2, run.rows[i].m.r2);
    EXPECT_EQ(ev.rows[i].m.rmse, run.rows[i].m.rmse);
  }
  const auto points = scatter_points(data_->test.y, ev.pred, data_->data.species);
  std::size_t labeled = 0;
  for (double y : data_->test.y.data()) labeled += !std::isnan(y);
  EXPECT_EQ(points.size(), labeled);
  EXPECT_THROW(evaluate_split(model, *data_, "holdout"), Error);
}

TEST_F(RunFixture, EvalRejectsSpeciesMismatch) {
  ExperimentConfig other = *cfg_;
  other.species.resize(3);
  const ExperimentData data = prepare_experiment(other);
  const PhenoFormer model = load_checkpoint((*dir_ / "runs" / "vanilla-seed0" / "checkpoint.json").string());
  try {
    evaluate_split(model, data, "test");
    FAIL() << "expected a mismatch error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("(C, T, S)"), std::string::npos);
  }
}

TEST(Run, FailuresAreRecordedPerCell) {
  ExperimentConfig c = tiny(scratch("fail"));
  c.methods = {Method::kVanilla};
  c.seeds = {0};
  c.train.lr = 1e300;  // diverges to non-finite losses
  c.train.max_epochs = 3;
  const ExperimentData data = prepare_experiment(c);
  const ExperimentResult r = run_experiment(c, data, 1);
  ASSERT_EQ(r.runs.size(), 1u);
  ASSERT_TRUE(r.runs[0].error.has_value());
  EXPECT_EQ(r.failed_methods(), std::vector<Method>{Method::kVanilla});
  const json result = json::parse(slurp(fs::path(c.out) / "runs" / "vanilla-seed0" / "result.json"));
  EXPECT_TRUE(result.contains("error"));
  fs::remove_all(c.out);
}

TEST(Run, ThermalTimeCell) {
  ExperimentConfig c = tiny(scratch("thermal"));
  c.methods = {Method::kThermalTime};
  c.seeds = {0};
  const ExperimentData data = prepare_experiment(c);
  const RunOutcome r = run_one(c, data, Method::kThermalTime, 0, fs::path(c.out) / "t");
  ASSERT_FALSE(r.error) << *r.error;
  EXPECT_EQ(r.rows.size(), 5u);
  const json result = json::parse(slurp(fs::path(c.out) / "t" / "result.json"));
  EXPECT_TRUE(result["params"].contains("hazel"));
  fs::remove_all(c.out);
}

}  // namespace
}  // namespace miranda

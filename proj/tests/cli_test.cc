#include <cstdlib>
#include <sys/wait.h>
#include <unistd.h>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "etdid/etdid.hpp"
#include "gtest/gtest.h"
#include "json.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

int run_cli(const std::string& args) {
  const std::string cmd = std::string(ETDID_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count_data_rows(const std::string& csv) {
  int rows = 0;
  std::istringstream in(csv);
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    ++rows;
  }
  return rows;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("etdid_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
    etdid::SimConfig cfg;
    cfg.n_units = 500;
    cfg.n_periods = 4;
    cfg.seed = 2025;
    etdid::RngStream rng(cfg.seed, 0);
    const auto draw = etdid::generate_dgp(cfg, rng);
    etdid::PanelSchema schema{"unit", "period", "outcome", {"treatment"}, {"x"}};
    panel_csv_ = (dir_ / "panel.csv").string();
    etdid::save_panel_csv(draw.panel, panel_csv_, schema);
  }

  std::string base_args(const std::string& out_dir) const {
    return "--input " + panel_csv_ + " --covariates x --seed 7 --out-dir " +
           (dir_ / out_dir).string();
  }

  fs::path dir_;
  std::string panel_csv_;
};

TEST_F(CliTest, OnceDesignProducesThreeRows) {
  ASSERT_EQ(run_cli("estimate " + base_args("once") + " --spec once"), 0);
  const auto csv = slurp(dir_ / "once/estimates.csv");
  EXPECT_EQ(count_data_rows(csv), 3);
  EXPECT_EQ(csv.rfind("# manifest: {", 0), 0u);  // manifest on the first line

  const auto doc = json::parse(slurp(dir_ / "once/estimates.json"));
  EXPECT_EQ(doc["manifest"]["subcommand"], "estimate");
  EXPECT_EQ(doc["manifest"]["version"], std::string(etdid::kVersion));
  EXPECT_EQ(doc["estimates"].size(), 3u);
  EXPECT_TRUE(doc["estimates"][0]["bootstrap_se"].is_number());
  EXPECT_GT(doc["critical_value"].get<double>(), 0.0);
}

TEST_F(CliTest, PretrendsAddsFourEventCells) {
  ASSERT_EQ(run_cli("estimate " + base_args("pre") + " --spec event --pretrends"), 0);
  const auto doc = json::parse(slurp(dir_ / "pre/estimates.json"));
  int post = 0, pre = 0;
  for (const auto& row : doc["estimates"])
    row["pretrend"].get<bool>() ? ++pre : ++post;
  EXPECT_EQ(post, 6);
  EXPECT_EQ(pre, 4);
  EXPECT_TRUE(doc.contains("pretrends"));
  EXPECT_TRUE(doc["pretrends"]["consistent"].is_boolean());
}

TEST_F(CliTest, PretrendsSubcommandWritesVerdict) {
  ASSERT_EQ(run_cli("pretrends " + base_args("verdict") + " --spec event"), 0);
  const auto doc = json::parse(slurp(dir_ / "verdict/pretrends.json"));
  EXPECT_TRUE(doc.contains("pretrends"));
  EXPECT_EQ(count_data_rows(slurp(dir_ / "verdict/pretrends.csv")), 10);
}

TEST_F(CliTest, PlotIsPurePresentation) {
  ASSERT_EQ(run_cli("estimate " + base_args("noplot") + " --spec once"), 0);
  ASSERT_EQ(run_cli("estimate " + base_args("plot") + " --spec once --plot"), 0);
  EXPECT_EQ(slurp(dir_ / "noplot/estimates.csv"), slurp(dir_ / "plot/estimates.csv"));
  EXPECT_EQ(slurp(dir_ / "noplot/estimates.json"), slurp(dir_ / "plot/estimates.json"));
  const auto svg = slurp(dir_ / "plot/plot.svg");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("<circle"), std::string::npos);
}

TEST_F(CliTest, SeedReproducesBytesAndThreadsDoNotMatter) {
  ASSERT_EQ(run_cli("estimate " + base_args("t1") + " --spec event --threads 1"), 0);
  ASSERT_EQ(run_cli("estimate " + base_args("t4") + " --spec event --threads 4"), 0);
  EXPECT_EQ(slurp(dir_ / "t1/estimates.csv"), slurp(dir_ / "t4/estimates.csv"));
  EXPECT_EQ(slurp(dir_ / "t1/estimates.json"), slurp(dir_ / "t4/estimates.json"));
}

TEST_F(CliTest, AggregateEmitsComponentsAndAggregateRow) {
  ASSERT_EQ(run_cli("aggregate " + base_args("agg")), 0);
  const auto csv = slurp(dir_ / "agg/aggregate.csv");
  EXPECT_EQ(count_data_rows(csv), 4);  // 3 components + 1 aggregate
  const auto doc = json::parse(slurp(dir_ / "agg/aggregate.json"));
  EXPECT_EQ(doc["components"].size(), 3u);
  EXPECT_TRUE(doc["weights_treated_as_fixed"].get<bool>());
  const double point = doc["point"].get<double>();
  double manual = 0;
  for (const auto& c : doc["components"]) manual += c["point"].get<double>() / 3.0;
  EXPECT_NEAR(point, manual, 1e-12);
  ASSERT_EQ(run_cli("aggregate " + base_args("aggu") + " --uniform-with-components"), 0);
  const auto doc_u = json::parse(slurp(dir_ / "aggu/aggregate.json"));
  EXPECT_EQ(doc_u["point"].get<double>(), point);
}

TEST_F(CliTest, ExitCodesFollowErrorClasses) {
  // Input problems: missing file, missing column.
  EXPECT_EQ(run_cli("estimate --input " + (dir_ / "nope.csv").string() + " --out-dir " +
                    (dir_ / "x").string()),
            2);
  EXPECT_EQ(run_cli("estimate --input " + panel_csv_ + " --covariates nope --out-dir " +
                    (dir_ / "x").string()),
            2);
  // Estimation problem: a panel where everyone is treated from period 2 on
  // leaves the once design without stayers.
  {
    std::ofstream f(dir_ / "alltreated.csv");
    f << "unit,period,outcome,treatment\n";
    for (int i = 0; i < 10; ++i)
      for (int t = 1; t <= 3; ++t)
        f << "u" << i << "," << t << "," << (t + 0.5) << "," << (t > 1 ? 1 : 0) << "\n";
  }
  EXPECT_EQ(run_cli("estimate --input " + (dir_ / "alltreated.csv").string() + " --out-dir " +
                    (dir_ / "x").string()),
            3);
  // Inference problem: B too small for the requested quantile.
  EXPECT_EQ(run_cli("estimate " + base_args("binf") + " --bootstrap 5"), 4);
}

TEST_F(CliTest, SimulateWritesMetricTable) {
  const auto out = (dir_ / "sim.csv").string();
  ASSERT_EQ(run_cli("simulate --n 200 --t 4 --reps 10 --spec once --seed 3 --bootstrap 99 "
                    "--threads 2 --out " +
                    out),
            0);
  const auto csv = slurp(out);
  EXPECT_EQ(count_data_rows(csv), 3);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);  // manifest
  std::getline(in, line);  // header
  EXPECT_EQ(line, "n,t_periods,t,s,e,r,pretrend,bias,rmse,pw_cp,u_cp,ci_length");
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(row, field, ',')) fields.push_back(field);
    ASSERT_EQ(fields.size(), 12u);
    const double bias = std::stod(fields[7]);
    const double rmse = std::stod(fields[8]);
    EXPECT_GE(rmse, std::abs(bias));
  }
}

TEST_F(CliTest, UnknownSpecIsInputError) {
  EXPECT_EQ(run_cli("estimate " + base_args("bad") + " --spec sometimes"), 2);
}

}  // namespace

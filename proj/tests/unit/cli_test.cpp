#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "iif/commands.hpp"

namespace {

namespace fs = std::filesystem;

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("iif_cli_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

iif::DatasetSpec small_spec() {
  iif::DatasetSpec s;
  s.num_classes = 4;
  s.dim = 3;
  s.imbalance_factor = 10.0;
  s.max_count = 60;
  s.test_per_class = 10;
  return s;
}

iif::TrainPlan quick_plan() {
  iif::TrainPlan p;
  p.epochs = 5;
  p.batch_size = 16;
  return p;
}

TEST(Generate, IsDeterministic) {
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  iif::cmd::generate({small_spec(), a});
  iif::cmd::generate({small_spec(), b});
  for (const char* f : {"train.csv", "test.csv", "freq.json"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST(Generate, UnitImbalanceIsBalancedAndNestedDirsAreCreated) {
  auto spec = small_spec();
  spec.imbalance_factor = 1.0;
  const auto dir = scratch("gen_flat") / "nested" / "deeper";
  iif::cmd::generate({spec, dir});
  const auto freq = iif::frequency_table_from_json(iif::read_json_file(dir / "freq.json"));
  for (auto n : freq.image_freq()) EXPECT_EQ(n, 60u);
}

TEST(Eval, NoneSchemeOnCeCheckpointMatchesTheLastLoggedEpoch) {
  const auto data = scratch("eval_data"), run = scratch("eval_run");
  iif::cmd::generate({small_spec(), data});
  const auto t = iif::cmd::train({data, quick_plan(), run});
  const auto [paths, report] = iif::cmd::eval({run / "checkpoint.json", data / "test.csv", "none", run});
  EXPECT_EQ(report.balanced_top1(), t.result.log.epoch_balanced_accuracy.back());
  const auto log = iif::train_log_from_json(iif::read_json_file(run / "train_log.json"));
  EXPECT_EQ(log.epoch_loss.size(), 5u);
  EXPECT_TRUE(fs::exists(run / "plan.json"));
}

TEST(Compare, OneSchemeGivesOneRow) {
  const auto data = scratch("cmp_data"), run = scratch("cmp_run");
  iif::cmd::generate({small_spec(), data});
  iif::cmd::train({data, quick_plan(), run});
  const auto [paths, table] = iif::cmd::compare({run / "checkpoint.json", data / "test.csv", {"iif:raw"}, run});
  EXPECT_EQ(table.rows.size(), 1u);
  std::ifstream in(run / "compare.csv");
  EXPECT_EQ(iif::cmd::read_comparison(in, 0).size(), 1u);
}

TEST(Report, AggregatesFiveSeeds) {
  const auto dir = scratch("report");
  fs::create_directories(dir);
  std::vector<fs::path> inputs;
  const double overall[] = {0.5, 0.6, 0.7, 0.8, 0.9};
  for (int i = 0; i < 5; ++i) {
    inputs.push_back(dir / ("compare_" + std::to_string(i) + ".csv"));
    std::ofstream out(inputs.back());
    out << "scheme,overall,balanced\nnone," << overall[i] << ",0.5\n";
  }
  const auto [paths, summaries] = iif::cmd::report({std::nullopt, inputs, dir / "out"});
  ASSERT_EQ(summaries.size(), 1u);
  EXPECT_EQ(summaries[0].n, 5u);
  const auto [mean, sd] = summaries[0].mean_std.at("overall");
  EXPECT_NEAR(mean, 0.7, 1e-12);
  EXPECT_NEAR(sd, std::sqrt(0.025), 1e-12);
  EXPECT_EQ(summaries[0].mean_std.at("balanced").second, 0.0);
  EXPECT_TRUE(fs::exists(dir / "out" / "report.csv"));
}

TEST(Detproxy, WritesReportAndRejectsBadThreshold) {
  const auto dir = scratch("det");
  iif::cmd::DetproxyOptions o;
  o.out_dir = dir;
  const auto [paths, rows] = iif::cmd::detproxy(o);
  EXPECT_EQ(rows.size(), 2u);
  EXPECT_TRUE(fs::exists(dir / "fp_report.csv"));
  o.threshold = 1.5;
  EXPECT_THROW(iif::cmd::detproxy(o), iif::DomainError);
}

#ifdef IIF_CLI_PATH
int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + IIF_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return status == -1 ? -1 : WEXITSTATUS(status);
}

TEST(Binary, ExitCodes) {
  const auto dir = scratch("bin");
  EXPECT_EQ(run_cli("generate --classes 3 --dim 2 --beta 10 --max-count 30 --test-per-class 5 --out " + (dir / "data").string()), 0);
  EXPECT_EQ(run_cli("train --epochs 2 --data " + (dir / "data").string() + " --out " + (dir / "run").string()), 0);
  EXPECT_EQ(run_cli("eval --scheme iif:raw --data " + (dir / "data").string() + " --out " + (dir / "run").string()), 0);
  EXPECT_NE(run_cli("detproxy --threshold 1.5 --out " + (dir / "det").string()), 0);
  EXPECT_NE(run_cli("train --data " + (dir / "missing").string()), 0);
  EXPECT_NE(run_cli("eval --scheme bogus --data " + (dir / "data").string() + " --out " + (dir / "run").string()), 0);
  EXPECT_NE(run_cli(""), 0);
}
#endif

}  // namespace

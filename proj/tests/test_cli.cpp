#include "klgame/config.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace klgame {
namespace {

namespace fs = std::filesystem;

std::string cli_path() {
  const char* env = std::getenv("KLGAME_CLI");
  return env ? env : "";
}

struct CommandResult {
  int exit_code = -1;
  std::string output;
};

CommandResult run_command(const std::string& cmd) {
  CommandResult result;
  FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
  if (!pipe) return result;
  std::array<char, 512> buf;
  while (fgets(buf.data(), buf.size(), pipe)) result.output += buf.data();
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    if (cli_path().empty()) GTEST_SKIP() << "KLGAME_CLI not set";
    dir_ = fs::temp_directory_path() /
           ("klgame_cli_" + std::to_string(::getpid()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override {
    std::error_code ec;
    fs::remove_all(dir_, ec);
  }

  std::string write_config(const std::string& name, const std::string& text) {
    const fs::path p = dir_ / name;
    std::ofstream out(p);
    out << text;
    return p.string();
  }

  std::string default_config_text(int sim_length, int horizon,
                                  const std::string& method = "klgame") {
    RunConfig cfg;
    cfg.scenario = default_tollbooth_spec();
    cfg.scenario.sim_length = sim_length;
    cfg.scenario.planning_horizon = horizon;
    cfg.scenario.lql.max_iterations = 20;
    cfg.method = method;
    cfg.out_dir = (dir_ / "out").string();
    return serialize_config(cfg);
  }

  fs::path dir_;
};

TEST_F(CliTest, ValidateAcceptsDefaultConfig) {
  const std::string path = write_config("ok.json", default_config_text(10, 10));
  const CommandResult r = run_command(cli_path() + " validate-config --config " + path);
  EXPECT_EQ(r.exit_code, 0) << r.output;
}

TEST_F(CliTest, MissingLambdaNamesField) {
  // Strip "lambda" from player 0.
  std::string text = default_config_text(10, 10);
  const size_t pos = text.find("\"lambda\"");
  ASSERT_NE(pos, std::string::npos);
  const size_t comma = text.find(',', pos);
  text.erase(pos, comma - pos + 1);

  const std::string path = write_config("nolambda.json", text);
  const CommandResult r = run_command(cli_path() + " validate-config --config " + path);
  EXPECT_EQ(r.exit_code, 2);
  EXPECT_NE(r.output.find("lambda"), std::string::npos) << r.output;
}

TEST_F(CliTest, ZeroControlCostRejected) {
  // R^ii must be positive definite; zero control weights violate it.
  RunConfig cfg;
  cfg.scenario = default_tollbooth_spec();
  cfg.scenario.costs[0].control_weight_accel = 0.0;
  cfg.scenario.costs[0].control_weight_yaw = 0.0;
  cfg.out_dir = (dir_ / "out").string();
  const std::string path = write_config("zeroR.json", serialize_config(cfg));
  const CommandResult r = run_command(cli_path() + " validate-config --config " + path);
  EXPECT_EQ(r.exit_code, 2) << r.output;
}

TEST_F(CliTest, SolveEmitsTrajectoryWithHorizonPlusOneRows) {
  // T = 45 planning steps: 46 state rows after the header.
  const std::string path = write_config("solve.json", default_config_text(45, 45));
  const CommandResult r = run_command(cli_path() + " solve --config " + path);
  ASSERT_EQ(r.exit_code, 0) << r.output;

  std::ifstream csv(dir_ / "out" / "trajectory.csv");
  ASSERT_TRUE(csv.good());
  std::string line;
  int rows = -1;  // header excluded
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  EXPECT_EQ(rows, 46);

  EXPECT_TRUE(fs::exists(dir_ / "out" / "policies.json"));
  EXPECT_TRUE(fs::exists(dir_ / "out" / "convergence.json"));
}

TEST_F(CliTest, BatchRejectsZeroTrials) {
  const std::string path = write_config("batch.json", default_config_text(10, 10));
  const CommandResult r =
      run_command(cli_path() + " batch --config " + path + " --trials 0");
  EXPECT_EQ(r.exit_code, 2);
}

TEST_F(CliTest, BatchSameSeedIdenticalOutputs) {
  const std::string path = write_config("batch.json", default_config_text(8, 8));
  const std::string out1 = (dir_ / "o1").string();
  const std::string out2 = (dir_ / "o2").string();
  const std::string base = cli_path() + " batch --config " + path +
                           " --trials 2 --seed 9 --method klgame --out ";
  ASSERT_EQ(run_command(base + out1).exit_code, 0);
  ASSERT_EQ(run_command(base + out2).exit_code, 0);

  auto slurp = [](const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  EXPECT_EQ(slurp(fs::path(out1) / "comparison.json"),
            slurp(fs::path(out2) / "comparison.json"));
  EXPECT_FALSE(slurp(fs::path(out1) / "comparison.md").empty());
}

TEST_F(CliTest, BatchEmitsThreeMethodTable) {
  const std::string path = write_config("batch3.json", default_config_text(6, 6));
  const std::string out = (dir_ / "o3").string();
  const CommandResult r = run_command(cli_path() + " batch --config " + path +
                                      " --trials 1 --seed 1 --out " + out);
  ASSERT_EQ(r.exit_code, 0) << r.output;
  std::ifstream in(fs::path(out) / "comparison.json");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string table = ss.str();
  EXPECT_NE(table.find("ilqgames"), std::string::npos);
  EXPECT_NE(table.find("maxent"), std::string::npos);
  EXPECT_NE(table.find("klgame"), std::string::npos);
  for (const char* col : {"CR", "SR", "Prog", "Cost"})
    EXPECT_NE(table.find(col), std::string::npos);
}

TEST(ConfigRoundTrip, SemanticEquality) {
  RunConfig cfg;
  cfg.scenario = default_tollbooth_spec();
  cfg.method = "mm-klgame";
  cfg.scenario.refs[0].type = "gmm_lanes";
  cfg.scenario.refs[0].modes = {LaneGuidanceConfig{}, LaneGuidanceConfig{}};
  cfg.scenario.refs[0].modes[1].target_lane = 0;
  cfg.scenario.refs[0].mode_weights = {0.6, 0.4};

  const std::string text = serialize_config(cfg);
  const RunConfig parsed = parse_config_string(text);
  EXPECT_TRUE(config_equivalent(cfg, parsed));

  // Numeric round trip is lossless.
  const RunConfig reparsed = parse_config_string(serialize_config(parsed));
  EXPECT_EQ(serialize_config(parsed), serialize_config(reparsed));
}

TEST(ConfigParse, UnknownMethodRejected) {
  RunConfig cfg;
  cfg.scenario = default_tollbooth_spec();
  std::string text = serialize_config(cfg);
  const size_t pos = text.find("\"klgame\"");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 8, "\"banana\"");
  EXPECT_THROW(parse_config_string(text), ConfigError);
}

}  // namespace
}  // namespace klgame

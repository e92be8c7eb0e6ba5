#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(BCISIM_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("bcisim_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream(dir_ / "small.conf") << "synth.feature_count = 12\n"
                                          "synth.sessions = 2\n"
                                          "synth.blocks_per_session = 6\n"
                                          "synth.ticks_per_block = 250\n"
                                          "sweep.gain_count = 6\n"
                                          "sweep.alpha_values = 0.9\n"
                                          "repeats = 3\n"
                                          "kalman.prior_sessions = 0\n"
                                          "rnn.prior_sessions = 0\n";
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string conf() const { return "--config " + (dir_ / "small.conf").string(); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, SynthTwiceIsIdentical) {
  ASSERT_EQ(run_cli("synth " + conf() + " --seed 3 --out " + (dir_ / "a").string()), 0);
  ASSERT_EQ(run_cli("synth " + conf() + " --seed 3 --out " + (dir_ / "b").string()), 0);
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir_ / "a")) {
    if (e.path().filename() == "run_metadata.txt") continue;
    EXPECT_EQ(slurp(e.path()), slurp(dir_ / "b" / e.path().filename())) << e.path();
    ++files;
  }
  EXPECT_EQ(files, 3);  // two sessions and the manifest
}

TEST_F(Cli, SimulateOracleHasPositiveBitrate) {
  ASSERT_EQ(run_cli("simulate --decoder oracle --preset high-speed --gain 2 --repeats 2 --seed 1 --out " +
                    (dir_ / "sim").string()),
            0);
  std::ifstream in(dir_ / "sim" / "simulate.csv");
  std::string header, line;
  std::getline(in, header);
  EXPECT_EQ(header.rfind("repeat,decoder,task,n,bitrate", 0), 0u);
  int rows = 0;
  while (std::getline(in, line)) {
    std::stringstream s(line);
    std::string cell;
    for (int i = 0; i < 5; ++i) std::getline(s, cell, ',');
    EXPECT_GT(std::stod(cell), 0.0);
    ++rows;
  }
  EXPECT_EQ(rows, 2);
  EXPECT_TRUE(fs::exists(dir_ / "sim" / "run_metadata.txt"));
}

TEST_F(Cli, MetadataReproducesRun) {
  ASSERT_EQ(run_cli("simulate --decoder oracle --gain 1.5 --repeats 2 --seed 9 --out " + (dir_ / "x").string()), 0);
  ASSERT_EQ(run_cli("simulate --config " + (dir_ / "x" / "run_metadata.txt").string() + " --out " +
                    (dir_ / "y").string()),
            0);
  EXPECT_EQ(slurp(dir_ / "x" / "simulate.csv"), slurp(dir_ / "y" / "simulate.csv"));
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("synth --no-such-flag --seed 1"), 2);
  EXPECT_EQ(run_cli("synth --set nope=1 --seed 1 --out " + (dir_ / "u").string()), 2);
  EXPECT_EQ(run_cli("synth --out " + (dir_ / "u").string()), 2);  // no seed
  EXPECT_EQ(run_cli("optimize --seed 1 --dataset " + (dir_ / "missing.csv").string()), 2);
}

TEST_F(Cli, RuntimeErrorsExitOne) {
  std::ofstream(dir_ / "broken.csv") << "block_id,tick_ms,label_dx,label_dy,f0\n1,0,0,0,zz\n";
  std::ofstream(dir_ / "manifest.csv") << "session_index,calendar_day,path\n0,0,broken.csv\n";
  EXPECT_EQ(run_cli("optimize --seed 1 --dataset " + (dir_ / "manifest.csv").string() + " --out " +
                    (dir_ / "r").string()),
            1);
}

TEST_F(Cli, CompareMarksExcludedSessions) {
  ASSERT_EQ(run_cli("synth " + conf() + " --seed 4 --out " + (dir_ / "data").string()), 0);
  ASSERT_EQ(run_cli("compare " + conf() + " --seed 4 --workers 1 --decoders oracle,null --dataset " +
                    (dir_ / "data" / "manifest.csv").string() + " --out " + (dir_ / "cmp").string()),
            0);
  std::ifstream in(dir_ / "cmp" / "head_to_head.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "session,task,decoder,median_bitrate,excluded,cause");
  int rows = 0;
  while (std::getline(in, line)) {
    EXPECT_NE(line.find(",1,null-failed"), std::string::npos) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 2 * 2 * 2);
}

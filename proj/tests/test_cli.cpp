#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>
#include <unistd.h>

namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("noisyor_cli_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  /// Runs the tool with stdout to out_name and stderr to err; returns the exit status.
  int run(const std::string& args, const std::string& out_name = "stdout.txt") {
    const std::string cmd = std::string("\"") + DIAGNOSE_PATH + "\" " + args + " > \"" + path(out_name) + "\" 2> \"" +
                            path("stderr.txt") + "\"";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string read(const std::string& name) const {
    std::ifstream in(dir_ / name, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  static std::string data(const std::string& name) { return std::string(DATA_DIR) + "/" + name; }

  std::string vase_args() const { return "--network " + data("vase.json") + " --evidence " + data("vase_evidence.json"); }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, SampleIsDeterministic) {
  const std::string args = "sample " + vase_args() + " --strategy swap-spouses-cover --sweeps 2000 --out ";
  ASSERT_EQ(run(args + path("a.json") + " --seed 9"), 0);
  ASSERT_EQ(run(args + path("b.json") + " --seed 9"), 0);
  EXPECT_EQ(read("a.json"), read("b.json"));
  const auto j = nlohmann::json::parse(read("a.json"));
  EXPECT_EQ(j["strategy"], "swap-spouses-cover");
  EXPECT_EQ(j["sweeps"], 2000);
  EXPECT_NEAR(j["marginals"]["e"].get<double>(), 0.3491, 0.05);
  EXPECT_EQ(j["marginals"]["v"].get<double>(), 1.0);
  ASSERT_EQ(run(args + path("c.json") + " --seed 10"), 0);
  EXPECT_NE(read("a.json"), read("c.json"));
}

TEST_F(Cli, SampleChainsToStdout) {
  const std::string args = "sample " + vase_args() + " --sweeps 500 --chains 3 --burn-in 20 --out -";
  ASSERT_EQ(run(args, "a.txt"), 0);
  ASSERT_EQ(run(args, "b.txt"), 0);
  EXPECT_EQ(read("a.txt"), read("b.txt"));
  EXPECT_EQ(nlohmann::json::parse(read("a.txt"))["chains"], 3);
}

TEST_F(Cli, ExactMatchesEnumeratedValues) {
  ASSERT_EQ(run("exact " + vase_args() + " --out -"), 0);
  const auto j = nlohmann::json::parse(read("stdout.txt"));
  EXPECT_EQ(j["method"], "enumeration");
  EXPECT_NEAR(j["marginals"]["e"].get<double>(), 0.349074, 1e-6);
  EXPECT_NEAR(j["marginals"]["b"].get<double>(), 0.620954, 1e-6);
  const std::string first = read("stdout.txt");
  ASSERT_EQ(run("exact " + vase_args() + " --out -"), 0);
  EXPECT_EQ(read("stdout.txt"), first);
}

TEST_F(Cli, ExactRefusesAboveCap) {
  ASSERT_EQ(run("gen --models 30 --sensors 10 --links 60 --seed 2 --layers 2 --out " + path("net.json")), 0);
  std::ofstream(path("ev.json")) << "{}";
  EXPECT_EQ(run("exact --network " + path("net.json") + " --evidence " + path("ev.json") + " --out -"), 1);
  EXPECT_NE(read("stderr.txt").find("error:"), std::string::npos);
  EXPECT_EQ(run("exact --network " + path("net.json") + " --evidence " + path("ev.json") + " --out - --method auto"), 1);
}

TEST_F(Cli, AnalyzeReportsClampAndFlow) {
  ASSERT_EQ(run("analyze " + vase_args()), 0);
  const auto j = nlohmann::json::parse(read("stdout.txt"));
  EXPECT_TRUE(j["clamped"].empty());
  EXPECT_EQ(j["unclamped"], nlohmann::json({"e", "b"}));
  EXPECT_EQ(j["nodes"]["e"]["status"], "diagnostic");
  EXPECT_EQ(j["nodes"]["v"]["status"], "observed");
  const std::string first = read("stdout.txt");
  ASSERT_EQ(run("analyze " + vase_args()), 0);
  EXPECT_EQ(read("stdout.txt"), first);
}

TEST_F(Cli, GenIsRepeatable) {
  const std::string args = "gen --models 25 --sensors 12 --links 60 --seed 4 --out ";
  ASSERT_EQ(run(args + path("a.json")), 0);
  ASSERT_EQ(run(args + path("b.json")), 0);
  EXPECT_EQ(read("a.json"), read("b.json"));
  const auto j = nlohmann::json::parse(read("a.json"));
  EXPECT_EQ(j["nodes"].size(), 37u);
  EXPECT_EQ(j["edges"].size(), 60u);
  EXPECT_EQ(run("gen --models 2 --sensors 5 --links 11 --seed 4 --out -"), 1);
}

TEST_F(Cli, BenchIsRepeatable) {
  const std::string args = "bench --config " + data("bench_vase.json") + " --cells --out ";
  ASSERT_EQ(run(args + path("a.json") + " --table " + path("t.txt")), 0);
  ASSERT_EQ(run(args + path("b.json")), 0);
  EXPECT_EQ(read("a.json"), read("b.json"));
  const auto j = nlohmann::json::parse(read("a.json"));
  EXPECT_EQ(j["rows"].size(), 4u);
  EXPECT_FALSE(j["rows"][0].contains("wall_ratio"));
  EXPECT_NE(read("t.txt").find("500 Runs"), std::string::npos);
}

TEST_F(Cli, Errors) {
  EXPECT_EQ(run("sample " + vase_args() + " --strategy nope --out -"), 1);
  EXPECT_NE(read("stderr.txt").find("unknown strategy: nope"), std::string::npos);
  EXPECT_EQ(run("sample --network " + path("missing.json") + " --evidence " + data("vase_evidence.json") + " --out -"),
            1);
  std::ofstream(path("bad.json")) << R"({"x": true})";
  EXPECT_EQ(run("exact --network " + data("vase.json") + " --evidence " + path("bad.json") + " --out -"), 1);
  EXPECT_NE(read("stderr.txt").find("evidence node unknown: x"), std::string::npos);
  EXPECT_NE(run("frobnicate"), 0);
}

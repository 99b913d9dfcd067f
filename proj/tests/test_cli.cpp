#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "cast/cli.hpp"

using namespace cast;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "cast");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("cast_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& rel) const { return (dir_ / rel).string(); }
  fs::path dir_;
};

std::vector<std::string> small_sim(const std::string& out) {
  return {"simulate-queues", "--section", "nonhomogeneous", "--systems", "20", "--arrivals", "80",
          "--replications", "30", "--seed", "4", "--out", out};
}

}  // namespace

TEST_F(CliTest, UsageErrorsExitOne) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"no-such-command"}).code, 1);
  EXPECT_EQ(run({"simulate-queues", "--section", "bogus"}).code, 1);
  const auto r = run({"evaluate", "--test", path("missing.jsonl"), "--out", path("o")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("missing.jsonl"), std::string::npos);
}

TEST_F(CliTest, TheoryCheckPassesAndWritesReport) {
  const auto r = run({"theory-check", "--scale", "100", "--out", path("t"), "--json"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(path("t/theory_check.json")));
  const auto j = Json::parse(r.out);
  EXPECT_TRUE(j.at("passed").get<bool>());
}

TEST_F(CliTest, SimulateIsDeterministic) {
  ASSERT_EQ(run(small_sim(path("a"))).code, 0);
  ASSERT_EQ(run(small_sim(path("b"))).code, 0);
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl", "manifest.json"}) {
    const auto x = read_file(path(std::string("a/nonhomogeneous/") + f));
    EXPECT_FALSE(x.empty());
    EXPECT_EQ(x, read_file(path(std::string("b/nonhomogeneous/") + f))) << f;
  }
  const auto m = Json::parse(read_file(path("a/nonhomogeneous/manifest.json")));
  EXPECT_EQ(m.at("split_counts").at("train"), 14);
  EXPECT_EQ(m.at("split_counts").at("val"), 2);
  EXPECT_EQ(m.at("split_counts").at("test"), 4);
}

TEST_F(CliTest, EvaluateRolloutReportPipeline) {
  ASSERT_EQ(run(small_sim(path("d"))).code, 0);
  const std::string tr = path("d/nonhomogeneous/train.jsonl"), te = path("d/nonhomogeneous/test.jsonl");
  ASSERT_EQ(run({"evaluate", "--train", tr, "--test", te, "--methods", "persistence,compositional_ets", "--out",
                 path("r/eval")})
                .code,
            0);
  ASSERT_EQ(run({"rollout", "--train", tr, "--test", te, "--methods", "persistence,compositional_ets", "--context",
                 "16", "--horizon", "8", "--out", path("r/roll")})
                .code,
            0);
  const auto rep = run({"report", "--in", path("r"), "--out", path("rep"), "--metric", "kl"});
  ASSERT_EQ(rep.code, 0) << rep.err;
  const auto csv = read_file(path("rep/report.csv"));
  EXPECT_EQ(csv.rfind("method,section,metric,value,rank", 0), 0u);
  EXPECT_NE(csv.find("persistence"), std::string::npos);
  EXPECT_NE(csv.find("compositional_ets"), std::string::npos);
}

TEST_F(CliTest, ConfigFileRejectsUnknownKeys) {
  write_file_atomic(path("bad.json"), R"({"seed": 1, "colour": "blue"})");
  EXPECT_EQ(run({"theory-check", "--config", path("bad.json"), "--out", path("x")}).code, 1);
  write_file_atomic(path("good.json"), R"({"seed": 1, "theory_scale": 50})");
  EXPECT_EQ(run({"theory-check", "--config", path("good.json"), "--out", path("x")}).code, 0);
}

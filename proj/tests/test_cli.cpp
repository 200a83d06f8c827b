#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "bplab/cli.hpp"
#include "bplab/io.hpp"
#include "bplab/network.hpp"

namespace bplab {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliRun r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("bplab_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

json read_json(const std::string& path) { return json::parse(io::read_file(path)); }

TEST_F(CliTest, Toy1dPrintsWorkedExample) {
  const CliRun r = run({"toy1d", "--filter", "tri3"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("maxpool [0,1,0,1]\n"), std::string::npos);
  EXPECT_NE(r.out.find("maxpool_shifted [1,1,1,1]\n"), std::string::npos);
  EXPECT_NE(r.out.find("maxblurpool [0.5,1,0.5,1]\n"), std::string::npos);
  EXPECT_NE(r.out.find("maxblurpool_shifted [0.75,0.75,0.75,0.75]\n"), std::string::npos);
}

TEST_F(CliTest, Toy1dWithDeltaMatchesMaxPool) {
  const CliRun r = run({"toy1d", "--filter", "delta1"});
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("maxblurpool [0,1,0,1]\n"), std::string::npos);
  EXPECT_NE(r.out.find("maxblurpool_shifted [1,1,1,1]\n"), std::string::npos);
}

TEST_F(CliTest, KernelsCsvCoversEveryForm) {
  const CliRun r = run({"kernels"});
  ASSERT_EQ(r.code, 0);
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "kernel,form,row,col,value");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 28u + 28u + 140u);  // taps, normalized taps and m*m 2-D entries for m = 1..7
  EXPECT_NE(r.out.find("bin5,taps,0,2,6\n"), std::string::npos);
  EXPECT_NE(r.out.find("tri3,2d,1,1,0.25\n"), std::string::npos);
}

TEST_F(CliTest, ManifestHashesMatchFiles) {
  const CliRun r = run({"heatmap", "--spec", "toy-vgg-baseline.json", "--seed", "0", "--layer", "3", "--out", path("maps")});
  ASSERT_EQ(r.code, 0) << r.err;
  const json manifest = read_json(path("maps/manifest.json"));
  EXPECT_EQ(manifest["command"], "heatmap");
  EXPECT_EQ(manifest["flags"]["layer"], 3);
  EXPECT_EQ(manifest["seeds"]["init"], 0);
  EXPECT_TRUE(manifest.contains("git_describe"));
  for (const char* name : {"heatmap_layer3.csv", "heatmap_layer3.pgm", "heatmap_layer3.json"}) {
    ASSERT_TRUE(manifest["outputs"].contains(name)) << name;
    EXPECT_EQ(manifest["outputs"][name], io::sha256_hex(io::read_file(path(std::string("maps/") + name))));
  }
  const std::string pgm = io::read_file(path("maps/heatmap_layer3.pgm"));
  EXPECT_EQ(pgm.rfind("P5\n32 32\n255\n", 0), 0u);
  EXPECT_EQ(pgm.size(), 13u + 1024u);
}

TEST_F(CliTest, ReportHashExcludesTimestamp) {
  setenv("SOURCE_DATE_EPOCH", "100", 1);
  ASSERT_EQ(run({"psnr", "--filter", "tri3", "--out", path("a")}).code, 0);
  setenv("SOURCE_DATE_EPOCH", "200", 1);
  ASSERT_EQ(run({"psnr", "--filter", "tri3", "--out", path("b")}).code, 0);
  unsetenv("SOURCE_DATE_EPOCH");
  json a = read_json(path("a/psnr.json"));
  json b = read_json(path("b/psnr.json"));
  EXPECT_EQ(a["timestamp"], "1970-01-01T00:01:40Z");
  EXPECT_NE(a["timestamp"], b["timestamp"]);
  a.erase("timestamp");
  b.erase("timestamp");
  EXPECT_EQ(a, b);
  json ma = read_json(path("a/manifest.json"));
  json mb = read_json(path("b/manifest.json"));
  EXPECT_EQ(ma["outputs"], mb["outputs"]);
}

TEST_F(CliTest, TrainTwiceGivesIdenticalCheckpoints) {
  for (const char* d : {"t1", "t2"}) {
    const CliRun r = run({"train", "--spec", "toy-vgg-aa-tri3.json", "--seed", "0", "--epochs", "1", "--out", path(d)});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(io::read_file(path("t1/model.bin")), io::read_file(path("t2/model.bin")));
  EXPECT_EQ(io::read_file(path("t1/model.bin.json")), io::read_file(path("t2/model.bin.json")));
  EXPECT_EQ(io::read_file(path("t1/train_log.csv")), io::read_file(path("t2/train_log.csv")));
  const Network net = load_checkpoint(path("t1/model.bin"));
  EXPECT_EQ(net.spec().name, "toy-vgg-aa-tri3");
}

TEST_F(CliTest, ShiftMetricsFromCheckpoint) {
  ASSERT_EQ(run({"train", "--spec", "toy-vgg-baseline.json", "--epochs", "1", "--out", path("t")}).code, 0);
  const std::string ckpt = path("t/model.bin");
  CliRun r = run({"consistency", "--spec", "toy-vgg-baseline.json", "--checkpoint", ckpt, "--out", path("c")});
  ASSERT_EQ(r.code, 0) << r.err;
  const double c = read_json(path("c/consistency.json"))["payload"]["consistency"];
  EXPECT_GT(c, 0.0);
  EXPECT_LE(c, 1.0);

  r = run({"adversarial", "--spec", "toy-vgg-baseline.json", "--checkpoint", ckpt, "--max-shift", "16", "--out",
           path("a")});
  ASSERT_EQ(r.code, 0) << r.err;
  const json curve = read_json(path("a/adversarial.json"))["payload"]["curve"];
  ASSERT_EQ(curve.size(), 17u);
  EXPECT_EQ(curve[16]["positions_per_sample"], 1024);
  EXPECT_EQ(curve[1]["positions_per_sample"], 9);
  for (std::size_t m = 1; m < curve.size(); ++m) EXPECT_LE(curve[m]["accuracy"], curve[m - 1]["accuracy"]);
}

TEST_F(CliTest, CheckpointForOtherNetworkIsRejected) {
  ASSERT_EQ(run({"train", "--spec", "toy-vgg-baseline.json", "--epochs", "1", "--out", path("t")}).code, 0);
  const CliRun r = run({"consistency", "--spec", "toy-vgg-aa-bin5.json", "--checkpoint", path("t/model.bin"), "--out",
                     path("c")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--checkpoint"), std::string::npos);
}

TEST_F(CliTest, PadOverrideKeepsCheckpointUsable) {
  ASSERT_EQ(run({"train", "--spec", "toy-vgg-baseline.json", "--epochs", "1", "--out", path("t")}).code, 0);
  const CliRun r = run({"heatmap", "--spec", "toy-vgg-baseline.json", "--pad", "zero", "--layer", "0", "--checkpoint",
                     path("t/model.bin"), "--out", path("h")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_json(path("h/manifest.json"))["flags"]["pad"], "zero");
}

TEST_F(CliTest, ReportAggregatesMetricJson) {
  ASSERT_EQ(run({"psnr", "--filter", "delta1", "--out", path("p")}).code, 0);
  const CliRun r = run({"report", path("p/psnr.json"), "--out", path("r")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, io::read_file(path("r/report.csv")));
  EXPECT_NE(r.out.find("p/psnr.json,psnr,"), std::string::npos);
  EXPECT_NE(r.out.find(",psnr_stability,"), std::string::npos);
  EXPECT_NE(r.out.find(",image_tv,"), std::string::npos);
}

TEST_F(CliTest, ReportRejectsNonReports) {
  io::write_file_atomic(path("x.json"), "{\"hello\": 1}");
  const CliRun r = run({"report", path("x.json")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("not a metric report"), std::string::npos);
}

TEST_F(CliTest, UsageErrorsNameTheFlag) {
  struct Case {
    std::vector<std::string> args;
    std::string needle;
  };
  const std::vector<Case> cases{
      {{"toy1d", "--bogus"}, "--bogus"},
      {{"toy1d", "--filter", "gauss"}, "--filter"},
      {{"heatmap", "--spec", "missing.json", "--out", path("x")}, "--spec"},
      {{"heatmap", "--spec", "toy-vgg-baseline.json", "--layer", "10", "--out", path("x")}, "--layer"},
      {{"heatmap", "--spec", "toy-vgg-baseline.json"}, "--out"},
      {{"train", "--spec", "toy-vgg-baseline.json", "--augment", "maybe", "--out", path("x")}, "--augment"},
      {{"adversarial", "--spec", "toy-vgg-baseline.json", "--max-shift", "17", "--out", path("x")}, "--max-shift"},
      {{"heatmap", "--pad", "mirror"}, "--pad"},
  };
  for (const auto& c : cases) {
    const CliRun r = run(c.args);
    EXPECT_EQ(r.code, 2) << c.needle;
    const json line = json::parse(r.err);
    EXPECT_EQ(line["error"], "usage");
    EXPECT_NE(line["message"].get<std::string>().find(c.needle), std::string::npos) << line.dump();
  }
}

TEST_F(CliTest, NoSubcommandIsAnError) {
  const CliRun r = run({});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(json::parse(r.err)["error"], "usage");
}

TEST_F(CliTest, BinaryExitCodes) {
  const std::string cli = BPLAB_CLI_PATH;
  const std::string err = path("err.txt");
  EXPECT_EQ(std::system((cli + " toy1d > /dev/null").c_str()), 0);
  const int status = std::system((cli + " toy1d --nope > /dev/null 2> " + err).c_str());
  EXPECT_NE(status, 0);
  const json line = json::parse(io::read_file(err));
  EXPECT_EQ(line["error"], "usage");
}

}  // namespace
}  // namespace bplab

// Copyright 2026 The ShortV Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

// Drives the command-line tool end to end through a shell.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <string>

#include "shortv/shortv.hpp"

namespace {

namespace fs = std::filesystem;
using shortv::io::json;

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(SHORTV_CLI_PATH) + " " + args;
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  if (p == nullptr) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "shortv_cli_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    const std::string spec = std::string(SHORTV_SAMPLES_DIR) + "/toy_spec.json";
    ASSERT_EQ(run("gen-toy --spec " + spec + " --out " + path("w.bin")).code, 0);
    ASSERT_EQ(run("gen-calib --spec " + spec + " --n 6 --seed 3 --out " + path("calib.jsonl")).code, 0);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }
  static std::string path(const std::string& name) { return (dir_ / name).string(); }
  static json load(const std::string& name) {
    return json::parse(shortv::io::read_text(path(name)));
  }
  static fs::path dir_;
};

fs::path Cli::dir_;

TEST_F(Cli, FlopsPrintsTableOneRatio) {
  const auto r = run("flops --L 32 --N 19 --t 64 --v 576 --h 4096 --m 11008");
  ASSERT_EQ(r.code, 0);
  const double ratio = json::parse(r.out)["ratio"];
  EXPECT_NEAR(ratio, 0.55, 0.005);
}

TEST_F(Cli, ProfileSelectRunPipeline) {
  ASSERT_EQ(run("profile --weights " + path("w.bin") + " --calib " + path("calib.jsonl") +
                " --classes visual,text --out " + path("lc.json") + " --csv " + path("lc.csv"))
                .code,
            0);
  const auto lc = load("lc.json");
  EXPECT_EQ(lc["metric"], "lc");
  EXPECT_EQ(lc["layers"][11]["scores"]["visual"], 0.0);
  EXPECT_EQ(lc["n_samples"], 6);

  ASSERT_EQ(run("select --report " + path("lc.json") + " --class visual --n 5 --out " + path("plan.json")).code, 0);
  const auto plan = load("plan.json");
  EXPECT_EQ(plan["num_frozen"], 5);
  EXPECT_EQ(plan["ranking"][0], 11);

  ASSERT_EQ(run("select --report " + path("lc.json") + " --n 0 --out " + path("plan0.json")).code, 0);
  EXPECT_EQ(load("plan0.json")["num_frozen"], 0);

  ASSERT_EQ(run("run --weights " + path("w.bin") + " --plan " + path("plan.json") + " --input " +
                path("calib.jsonl") + " --fastv 2,0.5 --out " + path("run.json"))
                .code,
            0);
  const auto rep = load("run.json");
  ASSERT_EQ(rep["runs"].size(), 6u);
  for (const auto& r : rep["runs"]) {
    EXPECT_EQ(r["crosscheck"]["analytical"], r["crosscheck"]["instrumented"]);
    EXPECT_EQ(r["prune_events"][0]["after_layer"], 2);
    EXPECT_LT(r["ratio"].get<double>(), 1.0);
  }
}

TEST_F(Cli, DensePlanRunMatchesVanillaDigest) {
  ASSERT_EQ(run("profile --weights " + path("w.bin") + " --calib " + path("calib.jsonl") +
                " --classes visual --out " + path("lc1.json"))
                .code,
            0);
  ASSERT_EQ(run("select --report " + path("lc1.json") + " --n 0 --out " + path("p0.json")).code, 0);
  shortv::io::write_text(path("dense.json"), shortv::io::to_json(shortv::LayerPlan::all_dense(12)).dump());
  ASSERT_EQ(run("run --weights " + path("w.bin") + " --plan " + path("p0.json") + " --input " +
                path("calib.jsonl") + " --out " + path("a.json"))
                .code,
            0);
  ASSERT_EQ(run("run --weights " + path("w.bin") + " --plan " + path("dense.json") + " --input " +
                path("calib.jsonl") + " --out " + path("b.json"))
                .code,
            0);
  const auto a = load("a.json"), b = load("b.json");
  for (std::size_t i = 0; i < a["runs"].size(); ++i)
    EXPECT_EQ(a["runs"][i]["logits_digest"], b["runs"][i]["logits_digest"]);
}

TEST_F(Cli, CosineProfileAndSchedule) {
  ASSERT_EQ(run("profile --metric cosine --classes visual --weights " + path("w.bin") + " --calib " +
                path("calib.jsonl") + " --out " + path("cos.json"))
                .code,
            0);
  EXPECT_EQ(load("cos.json")["metric"], "cosine");
  ASSERT_EQ(run("select --report " + path("cos.json") + " --n 3 --out " + path("cplan.json")).code, 0);
  const auto r = run("flops --schedule " + path("cplan.json") + " --t 2 --v 3 --h 4 --m 8 --vtw 5");
  ASSERT_EQ(r.code, 0);
  const auto j = json::parse(r.out);
  EXPECT_EQ(j["layers"][6]["v"], 0);
  EXPECT_EQ(j["prune"]["strategy"], "vtw");
}

TEST_F(Cli, GenCalibIsDeterministic) {
  const std::string spec = std::string(SHORTV_SAMPLES_DIR) + "/toy_spec.json";
  ASSERT_EQ(run("gen-calib --spec " + spec + " --n 6 --seed 3 --out " + path("again.jsonl")).code, 0);
  EXPECT_EQ(shortv::io::read_text(path("again.jsonl")), shortv::io::read_text(path("calib.jsonl")));
}

TEST_F(Cli, AblateAndBench) {
  const auto r = run("ablate --weights " + path("w.bin") + " --calib " + path("calib.jsonl") +
                     " --n 7 --trials 3 --seed 1");
  ASSERT_EQ(r.code, 0);
  const auto j = json::parse(r.out);
  EXPECT_EQ(j["selection"]["random"]["per_trial"].size(), 3u);
  shortv::io::write_text(path("half.json"),
                         shortv::io::to_json(shortv::LayerPlan::single_frozen(12, 3, shortv::FrozenSelector::visual())).dump());
  const auto b = run("bench --weights " + path("w.bin") + " --plan " + path("half.json") + " --calib " +
                     path("calib.jsonl") + " --repeat 2");
  ASSERT_EQ(b.code, 0);
  EXPECT_GT(json::parse(b.out)["speedup"].get<double>(), 0.0);
}

TEST_F(Cli, ErrorsUseDocumentedExitCodes) {
  EXPECT_EQ(run("--bogus 2>/dev/null").code, 2);
  EXPECT_EQ(run("flops --L x 2>/dev/null").code, 2);
  EXPECT_EQ(run("2>/dev/null").code, 2);
  EXPECT_EQ(run("gen-toy --spec /nonexistent.json --out x 2>/dev/null").code, 3);
  shortv::io::write_text(path("garbage.jsonl"), "{not json\n");
  shortv::io::write_text(path("dense.json"), shortv::io::to_json(shortv::LayerPlan::all_dense(12)).dump());
  EXPECT_EQ(run("run --weights " + path("w.bin") + " --plan " + path("dense.json") + " --input " +
                path("garbage.jsonl") + " 2>/dev/null")
                .code,
            3);
  EXPECT_EQ(run("flops --L 4 --N 9 --t 1 --v 1 --h 1 --m 1 2>/dev/null").code, 3);
  // Machine-readable error object on stderr.
  const auto r = run("gen-toy --spec /nonexistent.json --out x 2>&1 >/dev/null");
  const auto err = json::parse(r.out);
  EXPECT_EQ(err["error"], "io_error");
  EXPECT_EQ(err["exit_code"], 3);
}

TEST_F(Cli, ScheduleViolationIsDataError) {
  // VTW on a 12-layer plan at K = 12 is out of range.
  shortv::io::write_text(path("d12.json"), shortv::io::to_json(shortv::LayerPlan::all_dense(12)).dump());
  EXPECT_EQ(run("run --weights " + path("w.bin") + " --plan " + path("d12.json") + " --input " +
                path("calib.jsonl") + " --vtw 12 2>/dev/null")
                .code,
            3);
}

}  // namespace

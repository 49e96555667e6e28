// Copyright 2026 The narsp Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "narsp/cli.hpp"

using namespace narsp;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run(std::vector<std::string> args) {
  args.insert(args.begin(), "narsp");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("narsp_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    std::filesystem::remove_all(dir_);
    std::filesystem::create_directories(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  /// Writes train/val TSVs and a small run config next to them.
  std::string write_run(std::size_t epochs) {
    EXPECT_EQ(run({"gentoy", "--seed", "1", "--n", "24", "--out", path("train.tsv")}).code, 0);
    EXPECT_EQ(run({"gentoy", "--seed", "2", "--n", "6", "--out", path("val.tsv")}).code, 0);
    json cfg{{"model", {{"preset", "reduced"}, {"model_dim", 16}}},
             {"train", {{"max_epochs", epochs}, {"seed", 5}}},
             {"data", {{"train", "train.tsv"}, {"val", "val.tsv"}}}};
    write_file(path("run.json"), cfg.dump(2));
    return path("run.json");
  }

  std::filesystem::path dir_;
};

}  // namespace

TEST_F(CliTest, GentoyIsDeterministic) {
  const auto a = run({"gentoy", "--seed", "7", "--n", "20"});
  const auto b = run({"gentoy", "--seed", "7", "--n", "20"});
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(parse_tsv(a.out).size(), 20u);
  EXPECT_NE(run({"gentoy", "--n", "20"}).code, 0);
}

TEST_F(CliTest, GentoyReadsGrammarConfig) {
  write_file(path("toy.json"), to_json(ToyGrammarSpec::defaults()).dump());
  EXPECT_EQ(run({"gentoy", "--seed", "3", "--n", "10", "--config", path("toy.json")}).out,
            run({"gentoy", "--seed", "3", "--n", "10"}).out);
  write_file(path("bad.json"), R"({"bogus": 1})");
  EXPECT_EQ(run({"gentoy", "--seed", "3", "--config", path("bad.json")}).code, 2);
}

TEST_F(CliTest, ValidateReportsBadRows) {
  ASSERT_EQ(run({"gentoy", "--seed", "1", "--n", "30", "--out", path("ok.tsv")}).code, 0);
  const auto ok = run({"validate", "--data", path("ok.tsv")});
  EXPECT_EQ(ok.code, 0);
  EXPECT_EQ(ok.out, "30 rows, 0 bad rows\n");

  write_file(path("bad.tsv"), "call me\t[IN:X [SL:A me ] ]\ncall me\t[IN:X [SL:A you ] ]\nonly\n");
  const auto bad = run({"validate", "--data", path("bad.tsv")});
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.out.find("line 2 (DecoupledViolation)"), std::string::npos) << bad.out;
  EXPECT_NE(bad.out.find("line 3 (ColumnCount)"), std::string::npos) << bad.out;
  EXPECT_NE(bad.out.find("3 rows, 2 bad rows"), std::string::npos);
  EXPECT_EQ(run({"validate", "--data", path("missing.tsv")}).code, 2);
}

TEST_F(CliTest, TrainEvalPredictBench) {
  const std::string cfg = write_run(2);
  const auto tr = run({"train", "--config", cfg, "--out", path("run")});
  ASSERT_EQ(tr.code, 0) << tr.err;
  EXPECT_NE(tr.out.find("best epoch"), std::string::npos);
  const std::string ckpt = path("run/best.ckpt");
  ASSERT_TRUE(std::filesystem::exists(ckpt));
  const std::string history = read_file(path("run/history.jsonl"));
  EXPECT_EQ(std::count(history.begin(), history.end(), '\n'), 2);

  const auto ev = run({"eval", "--snapshot", ckpt, "--data", path("val.tsv"), "--k", "3"});
  ASSERT_EQ(ev.code, 0) << ev.err;
  const json m = json::parse(ev.out);
  for (const char* key : {"em", "em_at_k", "length_top_k_acc", "em_by_length_bucket", "em_with_gold_length"}) {
    EXPECT_TRUE(m.contains(key)) << key;
  }
  EXPECT_EQ(m["n"], 6);

  const auto pr = run({"predict", "--snapshot", ckpt, "--data", path("val.tsv"), "--k", "2"});
  ASSERT_EQ(pr.code, 0) << pr.err;
  std::istringstream lines(pr.out);
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    const json p = json::parse(line);
    EXPECT_EQ(p["forward_passes"], 2);
    EXPECT_EQ(p["candidates"].size(), 2u);
    ++n;
  }
  EXPECT_EQ(n, 6u);

  const auto be = run({"bench", "--snapshot", ckpt, "--data", path("val.tsv"), "--reps", "1", "--warmup", "0",
                       "--edges", "10,20", "--out", path("bench.json")});
  ASSERT_EQ(be.code, 0) << be.err;
  const BenchReport r = bench_report_from_json(json::parse(read_file(path("bench.json"))));
  EXPECT_EQ(r.mode, "nar");
  EXPECT_EQ(r.forward_counts.size(), 6u);
  EXPECT_EQ(run({"bench", "--snapshot", ckpt, "--data", path("val.tsv"), "--mode", "ar"}).code, 2);
}

TEST_F(CliTest, TrainTwiceIsByteIdentical) {
  const std::string cfg = write_run(2);
  ASSERT_EQ(run({"train", "--config", cfg, "--out", path("a")}).code, 0);
  ASSERT_EQ(run({"train", "--config", cfg, "--out", path("b")}).code, 0);
  EXPECT_EQ(read_file(path("a/history.jsonl")), read_file(path("b/history.jsonl")));
  EXPECT_EQ(read_file(path("a/best.ckpt")), read_file(path("b/best.ckpt")));
  ASSERT_EQ(run({"train", "--config", cfg, "--out", path("c"), "--seed", "6"}).code, 0);
  EXPECT_NE(read_file(path("a/best.ckpt")), read_file(path("c/best.ckpt")));
}

TEST_F(CliTest, TrainModeOverrideAndConfigErrors) {
  const std::string cfg = write_run(1);
  ASSERT_EQ(run({"train", "--config", cfg, "--out", path("ar"), "--mode", "ar"}).code, 0);
  EXPECT_EQ(load_checkpoint<float>(path("ar/best.ckpt")).model.config().variant, Variant::AR);
  write_file(path("typo.json"), R"({"trian": {}})");
  const auto bad = run({"train", "--config", path("typo.json"), "--out", path("x")});
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("trian"), std::string::npos) << bad.err;
  EXPECT_NE(run({"frobnicate"}).code, 0);
}

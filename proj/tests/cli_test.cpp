// Copyright 2026 The vljoint Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "vljoint/serialization.hpp"

namespace vlj {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("vljoint_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // Runs the CLI with `args`, discarding its output, and returns the exit code.
  int run(const std::string& args) const {
    const std::string command =
        std::string(VLJOINT_CLI_PATH) + " " + args + " > " + (dir_ / "log.txt").string() + " 2>&1";
    const int status = std::system(command.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string write_config(const json& doc, const std::string& name = "config.json") const {
    std::ofstream(path(name)) << doc.dump();
    return path(name);
  }

  static std::string slurp(const std::string& file) {
    std::ifstream in(file, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  // A run small enough for unit tests.
  json tiny_config() const {
    return {{"train", {{"epochs", 1}, {"n_train", 24}, {"n_val", 8}}}};
  }

  fs::path dir_;
};

TEST_F(CliTest, GenDataWritesRequestedScenesWithProvenance) {
  ASSERT_EQ(run("gen-data --seed 5 --count 100 --out " + path("a.jsonl")), 0);
  EXPECT_EQ(read_dataset(path("a.jsonl")).size(), 100u);
  const json meta = read_json(path("a.jsonl") + ".meta.json");
  EXPECT_EQ(meta["command"], "gen-data");
  EXPECT_EQ(meta["seed"], 5);
  EXPECT_EQ(meta["count"], 100);
  EXPECT_TRUE(meta["config"].is_object());
}

TEST_F(CliTest, GenDataIsDeterministicAndAcceptsZeroCount) {
  ASSERT_EQ(run("gen-data --seed 5 --count 10 --out " + path("a.jsonl")), 0);
  ASSERT_EQ(run("gen-data --seed 5 --count 10 --out " + path("b.jsonl")), 0);
  EXPECT_EQ(slurp(path("a.jsonl")), slurp(path("b.jsonl")));
  ASSERT_EQ(run("gen-data --seed 5 --count 0 --out " + path("c.jsonl")), 0);
  EXPECT_TRUE(read_dataset(path("c.jsonl")).empty());
}

TEST_F(CliTest, TrainWritesIdenticalMetricsForSameSeed) {
  const std::string cfg = write_config(tiny_config());
  ASSERT_EQ(run("train --generate --config " + cfg + " --seed 2 --out-dir " + path("a")), 0);
  ASSERT_EQ(run("train --generate --config " + cfg + " --seed 2 --out-dir " + path("b")), 0);
  EXPECT_EQ(slurp(path("a/metrics.json")), slurp(path("b/metrics.json")));
  const json metrics = read_json(path("a/metrics.json"));
  EXPECT_EQ(metrics["mode"], "joint");
  EXPECT_EQ(metrics["seed"], 2);
  EXPECT_EQ(metrics["epochs"].size(), 1u);
  EXPECT_TRUE(fs::exists(path("a/checkpoint.json")));
}

TEST_F(CliTest, TrainZeroEpochsAndBaselineMode) {
  const std::string cfg = write_config(tiny_config());
  ASSERT_EQ(run("train --generate --config " + cfg + " --epochs 0 --out-dir " + path("z")), 0);
  EXPECT_TRUE(read_json(path("z/metrics.json"))["epochs"].empty());
  ASSERT_EQ(run("train --generate --baseline --config " + cfg + " --out-dir " + path("b")), 0);
  const json metrics = read_json(path("b/metrics.json"));
  EXPECT_EQ(metrics["mode"], "ce-baseline");
  EXPECT_EQ(metrics["config"]["train"]["lambda_cont"], 0.0);
  EXPECT_EQ(metrics["config"]["train"]["alpha"], 1.0);
}

TEST_F(CliTest, TrainFromFilesMatchesGeneratedRun) {
  // The generated run draws its training scenes with the train seed and ids from 0.
  const std::string cfg = write_config(tiny_config());
  ASSERT_EQ(run("gen-data --seed 4 --count 24 --out " + path("train.jsonl")), 0);
  ASSERT_EQ(run("train --config " + cfg + " --seed 4 --data " + path("train.jsonl") +
                " --out-dir " + path("files")),
            0);
  ASSERT_EQ(run("train --config " + cfg + " --seed 4 --generate --out-dir " + path("gen")), 0);
  const json a = read_json(path("files/metrics.json"));
  const json b = read_json(path("gen/metrics.json"));
  EXPECT_EQ(a["epochs"][0]["l_total"], b["epochs"][0]["l_total"]);
}

TEST_F(CliTest, EvalAndInferAgree) {
  const std::string cfg = write_config(tiny_config());
  ASSERT_EQ(run("train --generate --config " + cfg + " --out-dir " + path("run")), 0);
  ASSERT_EQ(run("gen-data --seed 99 --count 16 --out " + path("val.jsonl")), 0);
  const std::string ck = path("run/checkpoint.json");

  ASSERT_EQ(run("eval --checkpoint " + ck + " --data " + path("val.jsonl") +
                " --alpha 1 --out " + path("eval.json")),
            0);
  const json eval = read_json(path("eval.json"));
  EXPECT_EQ(eval["alpha"], 1.0);
  EXPECT_EQ(eval["n_images"], 16);
  EXPECT_GE(eval["map50"].get<double>(), eval["map5095"].get<double>());

  ASSERT_EQ(run("infer --checkpoint " + ck + " --data " + path("val.jsonl") + " --alpha 1 --out " +
                path("d1.jsonl")),
            0);
  ASSERT_EQ(run("infer --checkpoint " + ck + " --data " + path("val.jsonl") + " --alpha 1 --out " +
                path("d2.jsonl")),
            0);
  EXPECT_EQ(slurp(path("d1.jsonl")), slurp(path("d2.jsonl")));
  EXPECT_EQ(read_json(path("d1.jsonl") + ".meta.json")["command"], "infer");

  ASSERT_EQ(run("eval --detections " + path("d1.jsonl") + " --data " + path("val.jsonl") +
                " --out " + path("eval_d.json")),
            0);
  const json from_file = read_json(path("eval_d.json"));
  EXPECT_NEAR(from_file["map50"].get<double>(), eval["map50"].get<double>(), 1e-12);
  EXPECT_NEAR(from_file["map5095"].get<double>(), eval["map5095"].get<double>(), 1e-12);
}

TEST_F(CliTest, InferAboveUnitThresholdWritesEmptyDetections) {
  const std::string cfg = write_config(tiny_config());
  ASSERT_EQ(run("train --generate --config " + cfg + " --epochs 0 --out-dir " + path("run")), 0);
  ASSERT_EQ(run("gen-data --seed 1 --count 3 --out " + path("val.jsonl")), 0);
  ASSERT_EQ(run("infer --checkpoint " + path("run/checkpoint.json") + " --data " +
                path("val.jsonl") + " --obj-threshold 1.5 --out " + path("d.jsonl")),
            0);
  std::ifstream in(path("d.jsonl"));
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    EXPECT_TRUE(json::parse(line)["detections"].empty());
    ++lines;
  }
  EXPECT_EQ(lines, 3);
}

TEST_F(CliTest, GradcheckPassesAndListsGroups) {
  ASSERT_EQ(run("gradcheck --seed 0 --seeds 1"), 0);
  const std::string log = slurp(path("log.txt"));
  for (const auto& group : kParameterGroups) EXPECT_NE(log.find(group), std::string::npos) << group;
  EXPECT_NE(log.find("PASS"), std::string::npos);
}

TEST_F(CliTest, InvalidInputsExitWithOne) {
  EXPECT_EQ(run("train --generate --config " + write_config({{"train", {{"epoch", 1}}}}) +
                " --out-dir " + path("x")),
            1);
  EXPECT_EQ(run("train --generate --config " + write_config({{"train", {{"alpha", 2.0}}}}) +
                " --out-dir " + path("x")),
            1);
  EXPECT_EQ(run("train --out-dir " + path("x")), 1);
  EXPECT_EQ(run("eval --data " + path("missing.jsonl") + " --checkpoint " + path("none.json") +
                " --out " + path("e.json")),
            1);
  EXPECT_EQ(run("gen-data --count 3 --out " + path("a.jsonl")), 1);
  EXPECT_EQ(run("no-such-command"), 1);
  std::ofstream(path("bad.jsonl")) << "{\"scene_id\": 1}\n";
  EXPECT_EQ(run("eval --detections " + path("bad.jsonl") + " --data " + path("bad.jsonl") +
                " --out " + path("e.json")),
            1);
}

TEST_F(CliTest, DivergenceExitsWithTwo) {
  json cfg = tiny_config();
  cfg["train"]["lr"] = 1e6;
  cfg["train"]["epochs"] = 5;
  EXPECT_EQ(run("train --generate --config " + write_config(cfg) + " --out-dir " + path("d")), 2);
}

}  // namespace
}  // namespace vlj

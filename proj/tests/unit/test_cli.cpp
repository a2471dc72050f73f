// Copyright 2026 The DLD Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>

#include "dld/synthtext/dataset_io.hpp"
#include "dld/trainer/io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
  int code = -1;
  std::string output;  // stdout and stderr interleaved
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(DLD_CLI_PATH) + " " + args + " 2>&1";
  CliResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) { return dld::train::read_text(p); }

void spit(const fs::path& p, const std::string& text) { dld::train::write_text(p, text); }

std::string line_with(const std::string& text, const std::string& prefix) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(prefix, 0) == 0) return line;
  return {};
}

class Cli : public ::testing::Test {
 protected:
  static fs::path root;

  static void SetUpTestSuite() {
    root = fs::temp_directory_path() / "dld_cli_test";
    fs::remove_all(root);
    fs::create_directories(root);
    json g = json::parse(slurp(fs::path(DLD_DOCS_DIR) / "gen_config.json"));
    g["num_samples"] = 6;
    g["num_eval_samples"] = 4;
    g["seed"] = 5;
    spit(root / "gen.json", g.dump());
    json t = json::parse(slurp(fs::path(DLD_DOCS_DIR) / "train_config.json"));
    t["model"] = "downsized";
    t["epochs"] = 2;
    t["lr_drops"] = json::array({1});
    t["log_eval_samples"] = 2;
    spit(root / "train.json", t.dump());
    ASSERT_EQ(run_cli("gen-data --config " + (root / "gen.json").string() + " --out " + (root / "data").string()).code, 0);
    ASSERT_EQ(run_cli("train-teacher --config " + (root / "train.json").string() + " --data " + (root / "data").string() +
                  " --out " + (root / "teacher").string())
                  .code,
              0);
  }

  static void TearDownTestSuite() { fs::remove_all(root); }

  static std::string data() { return (root / "data").string(); }
  static std::string train_cfg() { return (root / "train.json").string(); }
  static std::string teacher() { return (root / "teacher" / "teacher.ckpt").string(); }

  static CliResult train(const std::string& regime, const std::string& out, const std::string& extra = "") {
    return run_cli("train --regime " + regime + " --config " + train_cfg() + " --data " + data() + " --teacher " +
               teacher() + " --out " + (root / out).string() + " " + extra);
  }
};

fs::path Cli::root;

}  // namespace

TEST_F(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run_cli("--help").code, 0);
  EXPECT_EQ(run_cli("").code, 2);
  EXPECT_EQ(run_cli("frobnicate").code, 2);
  EXPECT_EQ(run_cli("eval --data x").code, 2);
  auto r = run_cli("gradcheck --seeds 0");
  EXPECT_EQ(r.code, 2);
}

TEST_F(Cli, GenDataLayoutAndDeterminism) {
  for (const char* split : {"train", "eval"}) {
    auto ds = dld::synth::read_dataset(root / "data" / split);
    EXPECT_EQ(ds.samples.size(), std::string(split) == "train" ? 6u : 4u);
    for (const auto& s : ds.samples) EXPECT_EQ(s.images_lo.size(), 6u);
  }
  auto first = run_cli("gen-data --config " + (root / "gen.json").string() + " --out " + (root / "again").string());
  ASSERT_EQ(first.code, 0) << first.output;
  auto a = run_cli("gen-data --config " + (root / "gen.json").string() + " --out " + (root / "again2").string());
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(line_with(first.output, "train manifest"), line_with(a.output, "train manifest"));
  EXPECT_EQ(line_with(first.output, "eval manifest"), line_with(a.output, "eval manifest"));
  EXPECT_FALSE(line_with(first.output, "train manifest").empty());
  auto other = run_cli("gen-data --config " + (root / "gen.json").string() + " --seed 6 --out " + (root / "again3").string());
  ASSERT_EQ(other.code, 0);
  EXPECT_NE(line_with(first.output, "train manifest"), line_with(other.output, "train manifest"));
}

TEST_F(Cli, GenDataMissingKeyNamesIt) {
  json g = json::parse(slurp(root / "gen.json"));
  g.erase("noise_amplitude");
  spit(root / "gen_missing.json", g.dump());
  auto r = run_cli("gen-data --config " + (root / "gen_missing.json").string() + " --out " + (root / "nope").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("noise_amplitude"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(root / "nope"));
  spit(root / "gen_bad.json", "{ not json");
  EXPECT_EQ(run_cli("gen-data --config " + (root / "gen_bad.json").string() + " --out " + (root / "nope").string()).code, 2);
  EXPECT_EQ(run_cli("gen-data --config " + (root / "absent.json").string() + " --out " + (root / "nope").string()).code, 3);
}

TEST_F(Cli, ExistingOutputNeedsForce) {
  const std::string out = (root / "forced").string();
  const std::string cmd = "gen-data --config " + (root / "gen.json").string() + " --out " + out;
  ASSERT_EQ(run_cli(cmd).code, 0);
  auto r = run_cli(cmd);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("--force"), std::string::npos);
  EXPECT_EQ(run_cli(cmd + " --force").code, 0);
  EXPECT_TRUE(fs::exists(fs::path(out) / "train" / "manifest.json"));
}

TEST_F(Cli, TeacherRunArtifacts) {
  for (const char* f : {"teacher.ckpt", "log.csv", "resolved_config.json", "metrics.json", "tokens.json"})
    EXPECT_TRUE(fs::exists(root / "teacher" / f)) << f;
  json rc = json::parse(slurp(root / "teacher" / "resolved_config.json"));
  EXPECT_EQ(rc["command"], "train-teacher");
  EXPECT_EQ(rc["config"]["regime"], "teacher");
  EXPECT_EQ(rc["config"]["epochs"], 2);
}

TEST_F(Cli, TrainDldRunContract) {
  auto r = train("dld", "dld_run", "--gamma 0.1");
  ASSERT_EQ(r.code, 0) << r.output;
  const fs::path run = root / "dld_run";
  for (const char* f : {"student.ckpt", "selector.ckpt", "flops_table.json", "log.csv", "resolved_config.json",
                        "metrics.json", "selections.csv"})
    EXPECT_TRUE(fs::exists(run / f)) << f;
  EXPECT_NE(slurp(run / "log.csv").substr(0, slurp(run / "log.csv").find('\n')).find("mean_selected_scale"),
            std::string::npos);
  json m = json::parse(slurp(run / "metrics.json"));
  for (const char* key : {"accuracy", "accuracy_sub_legible", "mean_flops", "histogram"}) EXPECT_TRUE(m.contains(key)) << key;
  double total = 0.0;
  int count = 0;
  for (const auto& e : m["histogram"]) {
    total += e["proportion"].get<double>();
    count += e["count"].get<int>();
  }
  EXPECT_NEAR(total, 1.0, 1e-9);
  EXPECT_EQ(count, 4);
  EXPECT_EQ(json::parse(slurp(run / "resolved_config.json"))["config"]["gamma"], 0.1);
}

TEST_F(Cli, TrainReproducibleFromResolvedConfig) {
  ASSERT_EQ(train("skd_only", "skd_a", "--fixed-scale 0.5").code, 0);
  const std::string resolved = (root / "skd_a" / "resolved_config.json").string();
  auto r = run_cli("train --regime skd_only --config " + resolved + " --data " + data() + " --teacher " + teacher() +
               " --out " + (root / "skd_b").string());
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_EQ(dld::train::file_hash(root / "skd_a" / "student.ckpt"), dld::train::file_hash(root / "skd_b" / "student.ckpt"));
  EXPECT_EQ(slurp(root / "skd_a" / "log.csv"), slurp(root / "skd_b" / "log.csv"));
  json m = json::parse(slurp(root / "skd_a" / "metrics.json"));
  EXPECT_EQ(m["policy"], "fixed:0.5");
}

TEST_F(Cli, TrainValidation) {
  auto r = run_cli("train --regime dld --config " + train_cfg() + " --data " + data() + " --out " + (root / "x").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("--teacher"), std::string::npos);
  EXPECT_EQ(run_cli("train --regime sideways --config " + train_cfg() + " --data " + data() + " --out " + (root / "x").string()).code,
            2);
  EXPECT_EQ(train("dld", "x", "--gamma -1").code, 2);
  EXPECT_EQ(run_cli("train --regime vanilla_multiscale --config " + train_cfg() + " --data " + data() + " --out " +
                (root / "vanilla").string())
                .code,
            0);
  spit(root / "bogus.ckpt", "not a checkpoint");
  EXPECT_EQ(run_cli("train --regime dld --config " + train_cfg() + " --data " + data() + " --teacher " +
                (root / "bogus.ckpt").string() + " --out " + (root / "x").string())
                .code,
            3);
  EXPECT_FALSE(fs::exists(root / "x"));
}

TEST_F(Cli, NumericFailureExitsFour) {
  json t = json::parse(slurp(root / "train.json"));
  t["lr"] = 1e30;
  t["batch_size"] = 1;
  spit(root / "explode.json", t.dump());
  auto r = run_cli("train-teacher --config " + (root / "explode.json").string() + " --data " + data() + " --out " +
               (root / "explode").string());
  EXPECT_EQ(r.code, 4) << r.output;
  EXPECT_NE(r.output.find("l_rec"), std::string::npos) << r.output;
  EXPECT_FALSE(fs::exists(root / "explode"));
}

TEST_F(Cli, EvalPolicies) {
  auto fixed = run_cli("eval --checkpoint " + teacher() + " --data " + data() + " --policy fixed:0.5 --out " +
                   (root / "eval_fixed").string());
  ASSERT_EQ(fixed.code, 0) << fixed.output;
  json m = json::parse(slurp(root / "eval_fixed" / "metrics.json"));
  EXPECT_FALSE(m.contains("histogram"));
  EXPECT_FALSE(fs::exists(root / "eval_fixed" / "selections.csv"));
  EXPECT_EQ(m["num_samples"], 4);

  ASSERT_EQ(train("drs_only", "drs_run").code, 0);
  auto dyn = run_cli("eval --checkpoint " + (root / "drs_run" / "student.ckpt").string() + " --selector " +
                 (root / "drs_run" / "selector.ckpt").string() + " --data " + data() + " --policy dynamic --out " +
                 (root / "eval_dyn").string());
  ASSERT_EQ(dyn.code, 0) << dyn.output;
  json d = json::parse(slurp(root / "eval_dyn" / "metrics.json"));
  ASSERT_TRUE(d.contains("histogram"));
  double total = 0.0;
  for (const auto& e : d["histogram"]) total += e["proportion"].get<double>();
  EXPECT_NEAR(total, 1.0, 1e-9);
  std::istringstream sel(slurp(root / "eval_dyn" / "selections.csv"));
  std::string line;
  int rows = 0;
  while (std::getline(sel, line)) ++rows;
  EXPECT_EQ(rows, 5);

  EXPECT_EQ(run_cli("eval --checkpoint " + teacher() + " --data " + data() + " --policy dynamic --out " +
                (root / "e1").string())
                .code,
            2);
  EXPECT_EQ(run_cli("eval --checkpoint " + teacher() + " --selector " + teacher() + " --data " + data() +
                " --policy dynamic --out " + (root / "e2").string())
                .code,
            3);
  EXPECT_EQ(run_cli("eval --checkpoint " + (root / "bogus_eval.ckpt").string() + " --data " + data() +
                " --policy fixed:1 --out " + (root / "e3").string())
                .code,
            3);
  EXPECT_EQ(run_cli("eval --checkpoint " + teacher() + " --data " + data() + " --policy fixed:2 --out " +
                (root / "e4").string())
                .code,
            2);
}

TEST_F(Cli, ReportSchemaAndOrdering) {
  ASSERT_EQ(train("dld", "rep_g3", "--gamma 0.3").code, 0);
  ASSERT_EQ(train("dld", "rep_g1", "--gamma 0.1").code, 0);
  ASSERT_EQ(train("skd_only", "rep_skd").code, 0);
  auto single = run_cli("report " + (root / "rep_g3").string() + " --out " + (root / "report1").string());
  ASSERT_EQ(single.code, 0) << single.output;
  std::istringstream one(slurp(root / "report1" / "summary.csv"));
  std::string header, line;
  std::getline(one, header);
  EXPECT_EQ(header, "regime,gamma,accuracy,accuracy_sub_legible,mean_flops,mean_scale");
  int rows = 0;
  while (std::getline(one, line)) ++rows;
  EXPECT_EQ(rows, 1);

  auto r = run_cli("report " + (root / "rep_skd").string() + " " + (root / "rep_g3").string() + " " +
               (root / "rep_g1").string() + " --out " + (root / "report3").string());
  ASSERT_EQ(r.code, 0) << r.output;
  std::istringstream all(slurp(root / "report3" / "summary.csv"));
  std::getline(all, header);
  std::vector<std::string> keys;
  while (std::getline(all, line)) keys.push_back(line.substr(0, line.find(',', line.find(',') + 1)));
  EXPECT_EQ(keys, (std::vector<std::string>{"dld,0.1", "dld,0.3", "skd_only,"}));
  const std::string curve = slurp(root / "report3" / "accuracy_vs_flops.dat");
  std::istringstream cin(curve);
  std::getline(cin, line);
  EXPECT_EQ(line[0], '#');
  int points = 0;
  double prev = -1.0;
  while (std::getline(cin, line)) {
    double flops = 0, acc = 0;
    ASSERT_EQ(std::sscanf(line.c_str(), "%lf %lf", &flops, &acc), 2) << line;
    EXPECT_GE(flops, prev);
    prev = flops;
    ++points;
  }
  EXPECT_EQ(points, 3);

  EXPECT_EQ(run_cli("report " + (root / "missing_run").string() + " --out " + (root / "report_x").string()).code, 3);
}

TEST_F(Cli, GradcheckSubcommand) {
  auto r = run_cli("gradcheck --seeds 1");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("all passed"), std::string::npos);
}

TEST_F(Cli, FeatureDistanceSubcommand) {
  auto r = run_cli("feature-distance --teacher " + teacher() + " --student " + teacher() + " --data " + data() +
               " --scale 1.0");
  ASSERT_EQ(r.code, 0) << r.output;
  json j = json::parse(r.output);
  EXPECT_EQ(j["d_roi"], 0.0);
  EXPECT_EQ(j["d_con"], 0.0);
}

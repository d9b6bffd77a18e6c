// Copyright 2026 The mtprop Authors
// SPDX-License-Identifier: Apache-2.0

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "mtprop/commands.hpp"
#include "mtprop/error.hpp"
#include "mtprop/io.hpp"
#include "schema_check.hpp"

namespace mtprop {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class Workspace : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    root_ = fs::temp_directory_path() /
            ("mtprop_" + std::to_string(::getpid()) + "_" + info->test_suite_name() + "_" + info->name());
    fs::remove_all(root_);
    fs::create_directories(root_);
    config_ = root_ / "config.json";
    std::ofstream(config_) << tiny_config().dump(2);
  }
  void TearDown() override { fs::remove_all(root_); }

  static json tiny_config() {
    exp::ExperimentConfig c;
    c.dataset.num_videos = 24;
    c.dataset.T = 40;
    c.dataset.D = 6;
    c.dataset.min_length = 6;
    c.dataset.max_length = 14;
    c.num_test = 6;
    c.train.steps = 6;
    c.train.tem_hidden = 8;
    c.train.pem_hidden = 8;
    c.train.labeled_per_batch = 2;
    c.train.unlabeled_per_batch = 2;
    c.label_fractions = {0.5};
    c.seeds = {0, 1};
    c.eval.an_max = 20;
    return exp::to_json(c);
  }

  int run(const std::string& args) const {
    const std::string cmd = std::string(MTPROP_CLI_PATH) + " " + args + " >" + (root_ / "log.txt").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  std::string p(const std::string& name) const { return (root_ / name).string(); }
  std::string cfg() const { return "--config " + config_.string(); }

  fs::path root_;
  fs::path config_;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST_F(Workspace, DatasetRoundTripAndByteIdentity) {
  ASSERT_EQ(run("gen-data " + cfg() + " --seed 5 --out " + p("a")), 0);
  ASSERT_EQ(run("gen-data " + cfg() + " --seed 5 --out " + p("b")), 0);
  for (const auto& entry : fs::directory_iterator(p("a")))
    EXPECT_EQ(slurp(entry.path()), slurp(fs::path(p("b")) / entry.path().filename())) << entry.path();

  const auto cfg_json = tiny_config();
  const Dataset mem = generate_dataset(io::dataset_config_from_json(cfg_json["dataset"]), 5);
  const Dataset disk = io::load_dataset(p("a"));
  EXPECT_EQ(disk.videos, mem.videos);
  EXPECT_EQ(disk.seed, 5u);
  const json manifest = io::read_json(fs::path(p("a")) / "manifest.json");
  EXPECT_EQ(manifest["config_hash"], io::hash_json(cfg_json));
  EXPECT_EQ(manifest["seed"], 5);
  EXPECT_EQ(manifest["dataset_hash"], io::dataset_hash(mem));
  const json meta = io::read_json(fs::path(p("a")) / "meta.json");
  EXPECT_EQ(meta["seed"], 5);
  EXPECT_TRUE(meta.contains("config_hash"));
}

TEST_F(Workspace, CorruptDatasetIsRejected) {
  ASSERT_EQ(run("gen-data " + cfg() + " --out " + p("d")), 0);
  const fs::path bin = fs::path(p("d")) / (video_id_for(0) + ".bin");
  std::string bytes = slurp(bin);
  bytes[10] ^= 0x40;
  std::ofstream(bin, std::ios::binary) << bytes;
  EXPECT_THROW(io::load_dataset(p("d")), ValidationError);
}

TEST_F(Workspace, ExitCodes) {
  EXPECT_EQ(run("--version"), 0);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("train --out " + p("t")), 2);
  EXPECT_EQ(run("train " + cfg() + " --dataset " + p("missing") + " --out " + p("t")), 2);
  std::ofstream(p("bad.json")) << R"({"dataset": {"T": 10, "nonsense": 1}})";
  EXPECT_EQ(run("gen-data --config " + p("bad.json") + " --out " + p("x")), 2);
  ASSERT_EQ(run("gen-data " + cfg() + " --out " + p("d")), 0);
  EXPECT_EQ(run("gen-data " + cfg() + " --out " + p("d")), 2);
  EXPECT_EQ(run("gen-data " + cfg() + " --out " + p("d") + " --force"), 0);
}

TEST_F(Workspace, TrainEvalReplayAndResume) {
  ASSERT_EQ(run("gen-data " + cfg() + " --out " + p("d")), 0);
  ASSERT_EQ(run("train " + cfg() + " --dataset " + p("d") + " --mode semi --steps 3 --out " + p("t3")), 0);
  ASSERT_EQ(run("train " + cfg() + " --dataset " + p("d") + " --mode semi --out " + p("t6")), 0);
  ASSERT_EQ(run("train " + cfg() + " --dataset " + p("d") + " --mode semi --resume " + p("t3/checkpoint") +
                " --out " + p("r6")),
            0);
  // A resumed run continues the step counter and lands on the same weights.
  EXPECT_EQ(slurp(p("t6/checkpoint/checkpoint.bin")), slurp(p("r6/checkpoint/checkpoint.bin")));
  const std::string hist = slurp(p("r6/history.csv"));
  EXPECT_EQ(hist.find("\n1,"), std::string::npos);
  EXPECT_NE(hist.find("\n4,"), std::string::npos);
  EXPECT_EQ(io::load_checkpoint(p("r6/checkpoint")).step, 6);

  ASSERT_EQ(run("eval " + cfg() + " --checkpoint " + p("t6/checkpoint") + " --dataset " + p("d") + " --out " + p("e1")), 0);
  ASSERT_EQ(run("eval " + cfg() + " --checkpoint " + p("t6/checkpoint") + " --dataset " + p("d") + " --out " + p("e2")), 0);
  for (const char* f : {"report.json", "proposals.jsonl", "ar_an.csv", "manifest.json"})
    EXPECT_EQ(slurp(fs::path(p("e1")) / f), slurp(fs::path(p("e2")) / f)) << f;

  const json report = io::read_json(p("e1/report.json"));
  const json schema = io::read_json(std::string(MTPROP_DOCS_DIR) + "/report.schema.json");
  const auto errors = schema::validate(report, schema);
  EXPECT_TRUE(errors.empty()) << errors.front();
  EXPECT_EQ(report["num_videos"], 6);
  EXPECT_EQ(report["ar_at_an"].size(), 20u);

  std::istringstream csv(slurp(p("e1/ar_an.csv")));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "an,ar");
  double prev = -1;
  int rows = 0;
  while (std::getline(csv, line)) {
    const double ar = std::stod(line.substr(line.find(',') + 1));
    EXPECT_GE(ar, prev);
    prev = ar;
    ++rows;
  }
  EXPECT_EQ(rows, 20);

  std::istringstream props(slurp(p("e1/proposals.jsonl")));
  while (std::getline(props, line)) {
    const json rec = json::parse(line);
    for (const char* k : {"video_id", "t_start", "t_end", "start_prob", "end_prob", "confidence", "final_score"})
      ASSERT_TRUE(rec.contains(k)) << k;
  }

  for (const char* dir : {"d", "t6", "e1"}) {
    EXPECT_EQ(run("replay " + p(std::string(dir) + "/manifest.json") + " --out " + p(std::string("re_") + dir)), 0)
        << dir << ": " << slurp(p("log.txt"));
  }
  // A manifest also works as --config.
  ASSERT_EQ(run("gen-data --config " + p("d/manifest.json") + " --out " + p("d2")), 0);
  EXPECT_EQ(slurp(p("d/meta.json")), slurp(p("d2/meta.json")));
}

TEST_F(Workspace, SupervisedTrainingReadsOnlyLabeledVideos) {
  ASSERT_EQ(run("gen-data " + cfg() + " --out " + p("d")), 0);
  ASSERT_EQ(run("train " + cfg() + " --dataset " + p("d") + " --mode supervised --fraction 0.25 --out " + p("t")), 0);
  const json split = io::read_json(p("t/split.json"));
  const json accessed = io::read_json(p("t/accessed.json"));
  const auto labeled = split["labeled"].get<std::vector<std::size_t>>();
  for (auto i : accessed.get<std::vector<std::size_t>>())
    EXPECT_NE(std::find(labeled.begin(), labeled.end(), i), labeled.end()) << i;
  const json m = io::read_json(p("t/manifest.json"));
  EXPECT_EQ(m["args"]["mode"], "supervised");
  EXPECT_EQ(m["config"]["train"]["alpha"], tiny_config()["train"]["alpha"]);
}

TEST_F(Workspace, TraceRecordsSharedGrid) {
  ASSERT_EQ(run("gen-data " + cfg() + " --out " + p("d")), 0);
  ASSERT_EQ(run("train " + cfg() + " --dataset " + p("d") + " --mode semi --trace --out " + p("t")), 0);
  std::istringstream in(slurp(p("t/trace.jsonl")));
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const json t = json::parse(line);
    EXPECT_EQ(t["features_grid_id"], t["grid_id"]);
    EXPECT_EQ(t["teacher_grid_id"], t["grid_id"]);
    if (!t["targets_grid_id"].is_null()) EXPECT_EQ(t["targets_grid_id"], t["grid_id"]);
    ++n;
  }
  EXPECT_EQ(n, 6 * 4);
}

TEST_F(Workspace, EvalRejectsFeatureDimMismatch) {
  ASSERT_EQ(run("gen-data " + cfg() + " --out " + p("d")), 0);
  ASSERT_EQ(run("train " + cfg() + " --dataset " + p("d") + " --out " + p("t")), 0);
  json other = tiny_config();
  other["dataset"]["D"] = 5;
  std::ofstream(p("other.json")) << other.dump();
  ASSERT_EQ(run("gen-data --config " + p("other.json") + " --out " + p("d5")), 0);
  EXPECT_EQ(run("eval " + cfg() + " --checkpoint " + p("t/checkpoint") + " --dataset " + p("d5") + " --out " + p("e")), 3);
}

TEST_F(Workspace, SweepWritesOneRowPerValueAndMode) {
  ASSERT_EQ(run("sweep " + cfg() + " --out " + p("s")), 0) << slurp(p("log.txt"));
  std::istringstream csv(slurp(p("s/sweep_summary.csv")));
  std::string line;
  std::getline(csv, line);
  int rows = 0;
  while (std::getline(csv, line)) {
    EXPECT_NE(line.find(",2,"), std::string::npos) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 2);
  const json detail = io::read_json(p("s/sweep_detail.json"));
  EXPECT_EQ(detail["cells"].size(), 4u);
  EXPECT_EQ(run("replay " + p("s/manifest.json") + " --out " + p("s2")), 0) << slurp(p("log.txt"));
}

TEST(Checkpoint, RoundTripIsExact) {
  const fs::path dir = fs::temp_directory_path() / ("mtprop_ckpt_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  mt::TrainConfig cfg;
  cfg.tem_hidden = 8;
  cfg.pem_hidden = 4;
  mt::TrainerState st = mt::init_trainer(5, cfg, 9);
  st.step = 17;
  st.tem_opt.step = 17;
  st.tem_opt.m[0].values[0] = 0.125;
  st.teacher.tem.conv1.bias.values[0] = -3.5;
  fs::create_directories(dir);
  io::save_checkpoint(st, dir);
  const auto back = io::load_checkpoint(dir);
  EXPECT_EQ(back.student, st.student);
  EXPECT_EQ(back.teacher, st.teacher);
  EXPECT_EQ(back.tem_opt.m, st.tem_opt.m);
  EXPECT_EQ(back.tem_opt.v, st.tem_opt.v);
  EXPECT_EQ(back.pem_opt.m, st.pem_opt.m);
  EXPECT_EQ(back.step, 17);
  EXPECT_EQ(back.seed, 9u);
  const json meta = io::read_json(dir / "checkpoint.json");
  EXPECT_EQ(meta["config_hash"], io::hash_json(io::to_json(cfg)));
  fs::remove_all(dir);
}

TEST(Config, DefaultsFillAndUnknownKeysFail) {
  const auto c = exp::experiment_config_from_json(json::object());
  EXPECT_EQ(c.train.alpha, exp::default_experiment().train.alpha);
  EXPECT_THROW(exp::experiment_config_from_json(json{{"trian", {}}}), ConfigError);
  EXPECT_THROW(exp::experiment_config_from_json(json{{"label_fractions", {0.0}}}), ConfigError);
  EXPECT_THROW(exp::experiment_config_from_json(json{{"seeds", json::array()}}), ConfigError);
  const auto round = exp::experiment_config_from_json(exp::to_json(exp::default_experiment()));
  EXPECT_EQ(exp::to_json(round), exp::to_json(exp::default_experiment()));
}

}  // namespace
}  // namespace mtprop

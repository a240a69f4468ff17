#include "commands.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <unistd.h>

#include "vift/checkpoint.hpp"
#include "vift/data.hpp"
#include "vift/evaluation.hpp"

namespace vift::cli {
namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code;
  std::string out, err;
};

CliRun run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) ++n;
  return n;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("vift_cli_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string p(const std::string& name) const { return (dir_ / name).string(); }

  // A small 4+4 latent sequence and a matching toy model config.
  void make_toy_data(const std::string& name = "seq", std::size_t length = 120) {
    const CliRun r = run({"synth", "--out", p(name), "--seed", "3", "--length", std::to_string(length), "--visual-dim",
                       "4", "--inertial-dim", "4"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  void write_toy_config(const std::string& name, std::size_t epochs) {
    std::ofstream f(dir_ / name);
    f << R"({"visual_dim": 4, "inertial_dim": 4, "d_model": 8, "d_ff": 8, "n_layers": 1, "n_heads": 2,
             "window": 5, "head_hidden": 16, "batch": 8, "lr": 0.003, "restart_period": 2, "stride": 2,
             "epochs": )"
      << epochs << "}";
  }

  fs::path dir_;
};

TEST_F(CliTest, HelpListsDefaults) {
  const CliRun r = run({"train", "--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* s : {"--lr", "0.0001", "--alpha", "40", "--tau", "0.25", "--lambda", "0.01", "--window", "11",
                        "--epochs", "200", "--batch", "128", "--beta2", "0.999", "--restart-period", "25",
                        "--d-model", "768", "rpmg-euler", "l1"})
    EXPECT_NE(r.out.find(s), std::string::npos) << s;
  EXPECT_EQ(run({"--help"}).code, 0);
  for (const char* cmd : {"synth", "infer", "eval", "plot"}) {
    const CliRun h = run({cmd, "--help"});
    EXPECT_EQ(h.code, 0) << cmd;
    EXPECT_NE(h.out.find("--out"), std::string::npos) << cmd;
  }
}

TEST_F(CliTest, UsageErrorsExitOne) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"bogus"}).code, 1);
  EXPECT_EQ(run({"synth"}).code, 1);
  EXPECT_EQ(run({"synth", "--out", p("x"), "--mixing", "cubic"}).code, 1);
  EXPECT_EQ(run({"synth", "--out", p("x"), "--length", "abc"}).code, 1);
  make_toy_data();
  EXPECT_EQ(run({"train", "--data", p("seq"), "--out", p("t"), "--head-mode", "quaternion"}).code, 1);
  EXPECT_EQ(run({"train", "--data", p("missing"), "--out", p("t")}).code, 1);
  EXPECT_EQ(run({"train", "--data", p("seq")}).code, 1);
  std::ofstream(dir_ / "bad.json") << R"({"learning_rate": 1})";
  const CliRun r = run({"train", "--config", p("bad.json"), "--data", p("seq"), "--out", p("t")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("learning_rate"), std::string::npos) << r.err;
}

TEST_F(CliTest, SynthIsDeterministicAndLoadable) {
  make_toy_data("a", 500);
  make_toy_data("b", 500);
  for (const char* f : {"meta.json", "latents.bin", "poses.txt"})
    EXPECT_EQ(bytes(dir_ / "a" / f), bytes(dir_ / "b" / f)) << f;
  const SequenceDataset s = load_sequence(dir_ / "a");
  EXPECT_EQ(s.length(), 500u);
  EXPECT_EQ(s.latents.cols(), 8);
}

TEST_F(CliTest, NoiseFreeSynthIsAffinelyRecoverable) {
  const CliRun r = run({"synth", "--out", p("clean"), "--noise", "0", "--length", "300"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("T=300"), std::string::npos);
  // The stored latents are float32, so the fit is exact up to that rounding.
  EXPECT_LT(affine_fit_residual(load_sequence(dir_ / "clean")), 1e-6);
}

TEST_F(CliTest, TrainInferEvalPipeline) {
  make_toy_data();
  write_toy_config("toy.json", 5);
  const auto t0 = std::chrono::steady_clock::now();
  const CliRun tr = run({"train", "--config", p("toy.json"), "--data", p("seq"), "--out", p("run")});
  ASSERT_EQ(tr.code, 0) << tr.err;
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 60.0);
  for (const char* f : {"weights.vifw", "state.vifs", "train_log.csv", "resolved_config.json", "weights_epoch4.vifw"})
    EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
  EXPECT_EQ(line_count(dir_ / "run" / "train_log.csv"), 7u);

  const CliRun inf = run({"infer", "--weights", p("run/weights.vifw"), "--data", p("seq"), "--out", p("est")});
  ASSERT_EQ(inf.code, 0) << inf.err;
  EXPECT_EQ(line_count(dir_ / "est" / "poses.txt"), 121u);
  EXPECT_EQ(line_count(dir_ / "est" / "relative_poses.txt"), 120u);
  EXPECT_TRUE(fs::exists(dir_ / "est" / "trajectory.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "est" / "trajectory.svg"));

  // Streaming inference equals recomputing every trailing window offline.
  const ViftWeights w = load_weights(dir_ / "run" / "weights.vifw");
  const SequenceDataset seq = load_sequence(dir_ / "seq");
  const auto rel = read_kitti_file(dir_ / "est" / "relative_poses.txt");
  for (Eigen::Index t : {0, 3, 4, 50, 119}) {
    const Eigen::Index begin = std::max<Eigen::Index>(0, t - 4);
    const RowMatrix out = forward_window(w, seq.latents.middleRows(begin, t - begin + 1));
    const SE3Pose expect = to_se3(decode_pose(out, t - begin, w.config), w.config);
    EXPECT_LT((expect.translation - rel[t].translation).norm(), 1e-12) << t;
  }

  const fs::path gt = dir_ / "seq" / "poses.txt";
  const CliRun self = run({"eval", "--gt", gt.string(), "--est", gt.string(), "--out", p("self.json"),
                        "--lengths", "5,10"});
  ASSERT_EQ(self.code, 0) << self.err;
  const auto report = nlohmann::json::parse(bytes(dir_ / "self.json"));
  EXPECT_EQ(report["t_rel_percent"].get<double>(), 0.0);
  EXPECT_EQ(report["r_rel_deg_per_100m"].get<double>(), 0.0);
  EXPECT_GT(report["count"].get<std::size_t>(), 0u);

  const CliRun vs = run({"eval", "--gt", gt.string(), "--est", p("est/poses.txt"), "--out", p("est.json")});
  EXPECT_EQ(vs.code, 0) << vs.err;

  const CliRun plot = run({"plot", "--poses", p("est/poses.txt"), "--reference", gt.string(), "--out", p("plot")});
  EXPECT_EQ(plot.code, 0) << plot.err;
  EXPECT_TRUE(fs::exists(dir_ / "plot.svg"));
}

TEST_F(CliTest, ResolvedConfigReplaysIdentically) {
  make_toy_data();
  write_toy_config("toy.json", 3);
  ASSERT_EQ(run({"train", "--config", p("toy.json"), "--data", p("seq"), "--out", p("a"), "--seed", "9"}).code, 0);
  ASSERT_EQ(run({"train", "--config", p("a/resolved_config.json"), "--out", p("b")}).code, 0);
  EXPECT_EQ(bytes(dir_ / "a" / "weights.vifw"), bytes(dir_ / "b" / "weights.vifw"));
  const auto ra = nlohmann::json::parse(bytes(dir_ / "a" / "resolved_config.json"));
  EXPECT_EQ(ra["seed"].get<int>(), 9);
  EXPECT_EQ(ra["epochs"].get<int>(), 3);
  EXPECT_EQ(ra["alpha"].get<double>(), 40.0);
}

TEST_F(CliTest, ResumeContinuesEpochNumbering) {
  make_toy_data();
  write_toy_config("toy.json", 2);
  ASSERT_EQ(run({"train", "--config", p("toy.json"), "--data", p("seq"), "--out", p("r")}).code, 0);
  const CliRun r = run({"train", "--config", p("toy.json"), "--data", p("seq"), "--out", p("r"), "--epochs", "4",
                     "--resume"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("resuming after epoch 2"), std::string::npos) << r.out;
  std::ifstream log(dir_ / "r" / "train_log.csv");
  std::vector<std::string> epochs;
  for (std::string line; std::getline(log, line);) epochs.push_back(line.substr(0, line.find(',')));
  EXPECT_EQ(epochs, (std::vector<std::string>{"epoch", "0", "1", "2", "3", "4"}));
  EXPECT_EQ(load_training_state(dir_ / "r" / "state.vifs").epoch, 4u);
}

TEST_F(CliTest, RuntimeErrorsExitTwo) {
  make_toy_data();
  write_toy_config("toy.json", 1);
  ASSERT_EQ(run({"train", "--config", p("toy.json"), "--data", p("seq"), "--out", p("run")}).code, 0);
  make_toy_data("wide");
  // Regenerate with a different latent width.
  ASSERT_EQ(run({"synth", "--out", p("wide"), "--length", "50", "--visual-dim", "6", "--inertial-dim", "4"}).code, 0);
  const CliRun inf = run({"infer", "--weights", p("run/weights.vifw"), "--data", p("wide"), "--out", p("e")});
  EXPECT_EQ(inf.code, 2);
  EXPECT_NE(inf.err.find("latent width"), std::string::npos) << inf.err;

  std::ofstream(dir_ / "short.txt") << "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 1 0 1 0 0 0 0 1 0\n";
  const fs::path gt = dir_ / "seq" / "poses.txt";
  EXPECT_EQ(run({"eval", "--gt", gt.string(), "--est", p("short.txt")}).code, 2);
  std::ofstream(dir_ / "junk.txt") << "1 2 3\n";
  EXPECT_EQ(run({"eval", "--gt", gt.string(), "--est", p("junk.txt")}).code, 2);
}

}  // namespace
}  // namespace vift::cli

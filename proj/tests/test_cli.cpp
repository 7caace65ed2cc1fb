#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "rmrouter/online_router.hpp"
#include "rmrouter/offline_router.hpp"
#include "rmrouter/serialization.hpp"
#include "rmrouter/sim_harness.hpp"
#include "support/temp_dir.hpp"

namespace rmrouter {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

Result run(const std::string& args, const testgen::TempDir& dir) {
  const fs::path out = dir / "stdout.txt";
  const fs::path err = dir / "stderr.txt";
  const std::string cmd = std::string(RMROUTER_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = io::read_file(out);
  r.err = io::read_file(err);
  return r;
}

std::string p(const fs::path& path) { return "'" + path.string() + "'"; }

std::size_t count_lines(const fs::path& path) {
  std::ifstream in(path);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

class Cli : public ::testing::Test {
 protected:
  // Scenario files, behavior records and a trained model for the 2-cluster preset.
  void make_pipeline() {
    ASSERT_EQ(run("make-scenario --preset two_cluster --seed 0 --out-dir " + p(dir_ / "data"), dir_).code, 0);
    ASSERT_EQ(run("collect-behavior --dataset " + p(dir_ / "data/dataset.jsonl") + " --annotations " +
                      p(dir_ / "data/annotations.jsonl") + " --out " + p(dir_ / "behavior.jsonl"),
                  dir_)
                  .code,
              0);
    const auto r = run("train-offline --dataset " + p(dir_ / "data/dataset.jsonl") + " --behavior " +
                           p(dir_ / "behavior.jsonl") + " --embeddings " + p(dir_ / "data/embeddings.jsonl") +
                           " --embed-dim 8 --out " + p(dir_ / "model.json") + " --loss-csv " + p(dir_ / "loss.csv"),
                       dir_);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("held-out routing accuracy"), std::string::npos);
  }

  testgen::TempDir dir_;
};

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("", dir_).code, 2);
  EXPECT_EQ(run("no-such-command", dir_).code, 2);
  EXPECT_EQ(run("run-sim --preset two_cluster --out-dir " + p(dir_ / "x") + " --router bogus", dir_).code, 2);
  EXPECT_EQ(run("run-sim --preset nope --out-dir " + p(dir_ / "x"), dir_).code, 2);
  EXPECT_EQ(run("inspect " + p(dir_ / "missing.json"), dir_).code, 2);
}

TEST_F(Cli, InvalidRouterListsValidNames) {
  const auto r = run("run-sim --preset two_cluster --out-dir " + p(dir_ / "x") + " --router bogus", dir_);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("thompson"), std::string::npos);
  EXPECT_NE(r.err.find("majority"), std::string::npos);
}

TEST_F(Cli, InjectedPriorNeedsPriorFile) {
  const auto r = run("run-sim --preset two_cluster --steps 2 --seeds 1 --router thompson --prior injected --out-dir " +
                         p(dir_ / "x"),
                     dir_);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--prior-file"), std::string::npos);
}

TEST_F(Cli, InspectFreshZeroState) {
  ASSERT_EQ(run("init-router --arms 3 --dim 4 --prior zero --prior-variance 1 --out " + p(dir_ / "s.json"), dir_).code, 0);
  const auto r = run("inspect " + p(dir_ / "s.json"), dir_);
  ASSERT_EQ(r.code, 0) << r.err;
  const std::regex arm_line(R"(arm (\d+): \|mean\| (\S+)  trace\(cov\) (\S+))");
  int arms = 0;
  for (std::sregex_iterator it(r.out.begin(), r.out.end(), arm_line), end; it != end; ++it) {
    ++arms;
    EXPECT_EQ(std::stod((*it)[2]), 0.0);
    EXPECT_DOUBLE_EQ(std::stod((*it)[3]), 4.0);
  }
  EXPECT_EQ(arms, 3);
}

TEST_F(Cli, InjectedStateMatchesPrior) {
  make_pipeline();
  ASSERT_EQ(run("export-prior --model " + p(dir_ / "model.json") + " --out " + p(dir_ / "prior.json"), dir_).code, 0);
  ASSERT_EQ(run("init-router --prior injected --prior-file " + p(dir_ / "prior.json") + " --out " + p(dir_ / "s.json"), dir_)
                .code,
            0);
  const auto prior = prior_from_json(io::parse_document(io::read_file(dir_ / "prior.json")));
  const auto state = online_state_from_json(io::parse_document(io::read_file(dir_ / "s.json")));
  ASSERT_EQ(state.n_arms(), static_cast<std::size_t>(prior.rows()));
  for (std::size_t n = 0; n < state.n_arms(); ++n) {
    EXPECT_LT((state.arms[n].mean() - prior.row(static_cast<Eigen::Index>(n)).transpose()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(state.arms[n].covariance().trace(), 0.02 * static_cast<double>(prior.cols()), 1e-12);
  }
  const auto r = run("inspect " + p(dir_ / "s.json"), dir_);
  EXPECT_EQ(r.code, 0);
}

TEST_F(Cli, VersionMismatchNamesSupportedVersion) {
  ASSERT_EQ(run("init-router --arms 2 --dim 2 --out " + p(dir_ / "s.json"), dir_).code, 0);
  auto doc = io::parse_document(io::read_file(dir_ / "s.json"));
  doc["version"] = 7;
  io::write_file(dir_ / "bad.json", doc.dump());
  const auto r = run("inspect " + p(dir_ / "bad.json"), dir_);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("supported versions: 1"), std::string::npos) << r.err;
}

TEST_F(Cli, TrainingRerunIsByteIdentical) {
  make_pipeline();
  const auto first = io::read_file(dir_ / "model.json");
  const auto first_loss = io::read_file(dir_ / "loss.csv");
  ASSERT_EQ(run("train-offline --dataset " + p(dir_ / "data/dataset.jsonl") + " --behavior " + p(dir_ / "behavior.jsonl") +
                    " --embeddings " + p(dir_ / "data/embeddings.jsonl") + " --embed-dim 8 --out " + p(dir_ / "model2.json") +
                    " --loss-csv " + p(dir_ / "loss2.csv"),
                dir_)
                .code,
            0);
  EXPECT_EQ(io::read_file(dir_ / "model2.json"), first);
  EXPECT_EQ(io::read_file(dir_ / "loss2.csv"), first_loss);
  const auto model = offline_model_from_json(io::parse_document(first));
  EXPECT_EQ(model.lambda, 0.2);
}

TEST_F(Cli, LambdaZeroDisablesClsHead) {
  make_pipeline();
  ASSERT_EQ(run("train-offline --dataset " + p(dir_ / "data/dataset.jsonl") + " --behavior " + p(dir_ / "behavior.jsonl") +
                    " --embeddings " + p(dir_ / "data/embeddings.jsonl") + " --embed-dim 8 --lambda 0 --out " +
                    p(dir_ / "m0.json"),
                dir_)
                .code,
            0);
  const auto m0 = offline_model_from_json(io::parse_document(io::read_file(dir_ / "m0.json")));
  const auto m = offline_model_from_json(io::parse_document(io::read_file(dir_ / "model.json")));
  EXPECT_EQ(m0.lambda, 0.0);
  EXPECT_EQ(m0.meta.cls_grad_max_abs, 0.0);
  EXPECT_GT(m.meta.cls_grad_max_abs, 0.0);
}

TEST_F(Cli, RunSimAllWritesOneRowPerRouterAndSeed) {
  const auto r = run("run-sim --preset two_cluster --steps 5 --seeds 3 --router all --out-dir " + p(dir_ / "sim"), dir_);
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t rows = 0;
  std::ifstream in(dir_ / "sim/summary.csv");
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#' && !line.starts_with("method,")) ++rows;
  }
  const std::size_t routers = sim::default_suite(2).size();
  EXPECT_EQ(routers, 12u + 2u);
  EXPECT_EQ(rows, routers * 3u);
  EXPECT_EQ(count_lines(dir_ / "sim/metrics.jsonl"), 1 + routers * 3u * 5u);
}

TEST_F(Cli, RunSimRerunIsByteIdentical) {
  const std::string args = "run-sim --preset cold_start --steps 8 --seeds 2 --router thompson,hybrid,majority --log --out-dir ";
  ASSERT_EQ(run(args + p(dir_ / "a") + " --jobs 1", dir_).code, 0);
  ASSERT_EQ(run(args + p(dir_ / "b") + " --jobs 2", dir_).code, 0);
  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dir_ / "a")) {
    if (!entry.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(entry.path(), dir_ / "a");
    EXPECT_EQ(io::read_file(entry.path()), io::read_file(dir_ / "b" / rel)) << rel;
  }
  EXPECT_GT(files, 10u);
  EXPECT_TRUE(fs::exists(dir_ / "a/logs/hybrid-seed1.state.json"));
}

TEST_F(Cli, CompareReadsSummaries) {
  ASSERT_EQ(run("run-sim --preset two_cluster --steps 5 --seeds 3 --router random,thompson --out-dir " + p(dir_ / "sim"), dir_)
                .code,
            0);
  const auto r = run("compare --input " + p(dir_ / "sim/summary.csv") + " --baseline random --out " + p(dir_ / "cmp.csv"), dir_);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("thompson"), std::string::npos);
  std::size_t rows = 0;
  std::ifstream in(dir_ / "cmp.csv");
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') ++rows;
  }
  EXPECT_EQ(rows, 2u * 3u + 1u);
  EXPECT_EQ(run("compare --input " + p(dir_ / "sim/summary.csv") + " --baseline nobody", dir_).code, 2);
}

TEST_F(Cli, OutputsCarryProvenance) {
  make_pipeline();
  const auto doc = io::parse_document(io::read_file(dir_ / "model.json"));
  EXPECT_TRUE(doc.contains("provenance"));
  const auto behavior = io::read_file(dir_ / "behavior.jsonl");
  EXPECT_NE(behavior.substr(0, behavior.find('\n')).find("_provenance"), std::string::npos);
  EXPECT_EQ(io::read_file(dir_ / "loss.csv").rfind("# provenance", 0), 0u);
}

}  // namespace
}  // namespace rmrouter

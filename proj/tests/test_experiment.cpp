#include "mapprop/experiment.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <sys/wait.h>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace mapprop;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("mapprop_test_" + name);
  fs::remove_all(dir);
  return dir;
}

ExperimentConfig quick(const std::string& text) { return experiment_from_kv(KeyValueConfig::parse(text)); }

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MAPPROP_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, ParsesKeysCommentsAndRanges) {
  const auto kv = KeyValueConfig::parse("# comment\n env = cartpole \nactor.widths = 64, 32  # trailing\n");
  EXPECT_EQ(kv.get_string("env", ""), "cartpole");
  EXPECT_EQ(kv.get_ints("actor.widths"), (std::vector<std::int64_t>{64, 32}));
  EXPECT_EQ(KeyValueConfig::parse_range_list("0..3,7"), (std::vector<std::uint64_t>{0, 1, 2, 3, 7}));
}

TEST(Config, Errors) {
  EXPECT_THROW(KeyValueConfig::parse("novalue\n"), ConfigError);
  EXPECT_THROW(KeyValueConfig::parse("= 3\n"), ConfigError);
  EXPECT_THROW(KeyValueConfig::load("/nonexistent/file.cfg"), ConfigError);
  EXPECT_THROW(quick("algo = mapprop_ac\n"), ConfigError);
  EXPECT_THROW(quick("env = cartpole\n"), ConfigError);
  EXPECT_THROW(quick("env = pong\nalgo = mapprop_ac\n"), ConfigError);
  EXPECT_THROW(quick("env = cartpole\nalgo = sarsa\n"), ConfigError);
  EXPECT_THROW(quick("env = cartpole\nalgo = mapprop_ac\nactor.alpah1 = 3\n"), ConfigError);
  EXPECT_THROW(quick("env = cartpole\nalgo = mapprop_ac\nepisodes = ten\n"), ConfigError);
  EXPECT_THROW(quick("env = cartpole\nalgo = mapprop_ac\nepisodes = 0\n"), ConfigError);
  EXPECT_THROW(quick("env = cartpole\nalgo = mapprop_ac\nseeds = 5..2\n"), ConfigError);
  EXPECT_THROW(quick("env = cartpole\nalgo = mapprop_sl\n"), ConfigError);
  EXPECT_THROW(quick("env = multiplexer\nalgo = mapprop_ac\n"), ConfigError);
  EXPECT_THROW(quick("env = cartpole\nalgo = mapprop_ac\nactor.anneal = cosine\n"), ConfigError);
  EXPECT_THROW(quick("env = cartpole\nalgo = mapprop_ac\nactor.settle_sequential = maybe\n"), ConfigError);
}

TEST(Config, OverridesApplyOnTopOfDefaults) {
  const auto c = quick(
      "env = acrobot\nalgo = mapprop_ac\nactor.alpha2 = 0.5\ncritic.sigma_sq3 = 0.7\nactor.n_steps = 3\n"
      "seeds = 4,5\nworkers = 2\n");
  EXPECT_DOUBLE_EQ(c.actor.learner.alphas[0], 1e-2);
  EXPECT_DOUBLE_EQ(c.actor.learner.alphas[1], 0.5);
  EXPECT_DOUBLE_EQ(c.critic.sigma_sq[2], 0.7);
  EXPECT_EQ(c.actor.learner.settle.n_steps, 3);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{4, 5}));
  EXPECT_EQ(c.workers, 2);
}

TEST(Defaults, MultiplexerTable) {
  const auto c = default_experiment("multiplexer", Algo::MapPropMc);
  EXPECT_EQ(c.actor.learner.batch_size, 128);
  EXPECT_EQ(c.actor.learner.settle.n_steps, 20);
  EXPECT_EQ(c.actor.learner.alphas, (std::vector<double>{4e-2, 4e-5, 4e-6}));
  EXPECT_DOUBLE_EQ(c.actor.sigma_sq[0], 0.3);
  EXPECT_DOUBLE_EQ(c.actor.sigma_sq[1], 1.0);
  EXPECT_DOUBLE_EQ(c.actor.temperature, 1.0);
  EXPECT_EQ(c.env.k, 5);
}

TEST(Defaults, RegressionTable) {
  const auto c = default_experiment("regression", Algo::MapPropSl);
  EXPECT_EQ(c.actor.learner.batch_size, 128);
  EXPECT_EQ(c.actor.learner.alphas, (std::vector<double>{6e-2, 6e-5, 6e-6}));
  EXPECT_EQ(c.actor.sigma_sq, (std::vector<double>{0.0075, 0.025, 0.025}));
  EXPECT_EQ(c.env.input_dim, 8);
}

TEST(Defaults, CartPoleTable) {
  const auto c = default_experiment("cartpole", Algo::MapPropAc);
  EXPECT_EQ(c.actor.learner.alphas, (std::vector<double>{1e-2, 1e-5, 1e-6}));
  EXPECT_EQ(c.critic.learner.alphas, (std::vector<double>{2e-2, 2e-5, 2e-6}));
  EXPECT_DOUBLE_EQ(c.actor.sigma_sq[0], 0.03);
  EXPECT_DOUBLE_EQ(c.actor.sigma_sq[1], 0.1);
  EXPECT_EQ(c.critic.sigma_sq, (std::vector<double>{0.03, 0.1, 0.1}));
  EXPECT_DOUBLE_EQ(c.actor.temperature, 2.0);
  EXPECT_DOUBLE_EQ(c.actor.learner.lambda, 0.95);
  EXPECT_DOUBLE_EQ(c.actor.learner.gamma, 0.98);
  EXPECT_EQ(c.actor.learner.anneal.end_step, 50000);
  EXPECT_DOUBLE_EQ(c.actor.learner.anneal.final_fraction, 0.1);
  EXPECT_DOUBLE_EQ(c.actor.learner.settle.alpha_h_factor, 0.5);
  EXPECT_EQ(c.episodes, 1000);
}

TEST(Defaults, AcrobotTable) {
  const auto c = default_experiment("acrobot", Algo::MapPropAc);
  EXPECT_EQ(c.critic.learner.alphas, (std::vector<double>{2e-2, 2e-5, 2e-6}));
  EXPECT_EQ(c.critic.sigma_sq, (std::vector<double>{0.06, 0.2, 0.2}));
  EXPECT_DOUBLE_EQ(c.critic.learner.lambda, 0.97);
  EXPECT_DOUBLE_EQ(c.actor.temperature, 4.0);
  EXPECT_EQ(c.actor.learner.anneal.end_step, 100000);
}

TEST(Defaults, MountainCarTable) {
  const auto c = default_experiment("mountaincar", Algo::MapPropAc);
  EXPECT_EQ(c.actor.learner.alphas, (std::vector<double>{4e-3, 4e-6, 4e-7}));
  EXPECT_EQ(c.actor.sigma_sq, (std::vector<double>{0.03, 0.1, 0.5}));
  EXPECT_EQ(c.critic.sigma_sq, (std::vector<double>{0.003, 0.01, 0.05}));
  EXPECT_FALSE(c.actor.learner.anneal.linear);
  EXPECT_EQ(c.env.reward_clip, 5.0);
  EXPECT_EQ(c.episodes, 300);
}

TEST(Defaults, BaselineVariants) {
  EXPECT_EQ(default_experiment("cartpole", Algo::Reinforce).actor.learner.settle.n_steps, 0);
  const auto t = default_experiment("cartpole", Algo::ReinforceThomas);
  EXPECT_EQ(t.actor.learner.settle.n_steps, 0);
  EXPECT_DOUBLE_EQ(t.actor.learner.explore_mask_prob, 0.5);
}

TEST(Stats, RunningAverageAndPopulationStd) {
  const auto r = running_average({1, 2, 3, 4, 5}, 2);
  EXPECT_EQ(r, (std::vector<double>{1, 1.5, 2.5, 3.5, 4.5}));
  EXPECT_DOUBLE_EQ(mean_of({2, 4}), 3.0);
  EXPECT_DOUBLE_EQ(std_of({2, 4}), 1.0);
  EXPECT_DOUBLE_EQ(std_of({7}), 0.0);
}

TEST(Stats, SummaryIsMeanOfPerSeedAverages) {
  RunRecord a, b, c;
  a.returns = {1, 3};
  b.returns = {10, 10, 10, 10};
  c.failed = true;
  const auto s = summarize({a, b, c});
  EXPECT_DOUBLE_EQ(s.mean, 6.0);
  EXPECT_DOUBLE_EQ(s.std, 4.0);
  EXPECT_EQ(s.completed, 2);
  EXPECT_EQ(s.failures, 1);
}

TEST(Csv, FormatsAndHeaders) {
  RunRecord r;
  r.returns = {0.1, 2.0};
  r.steps = {3, 4};
  const auto csv = episode_csv(r, 10);
  EXPECT_EQ(csv, "episode,return,steps,running_average\n1,0.10000000000000001,3,0.10000000000000001\n"
                 "2,2,4,1.05\n");
  EXPECT_EQ(std::stod(format_double(1.0 / 3.0)), 1.0 / 3.0);
}

TEST(PlotData, SingleSeedHasZeroStd) {
  const auto csv = emit_plot_data(std::vector<std::vector<double>>{{1, 2, 3}}, 2);
  EXPECT_EQ(csv, "episode,mean_running_return,std_running_return\n1,1,0\n2,1.5,0\n3,2.5,0\n");
}

TEST(PlotData, AcrossSeeds) {
  const auto csv = emit_plot_data(std::vector<std::vector<double>>{{0, 0}, {2, 4}}, 1);
  EXPECT_EQ(csv, "episode,mean_running_return,std_running_return\n1,1,1\n2,2,2\n");
}

TEST(Runs, ByteIdenticalAcrossInvocations) {
  auto c = quick("env = cartpole\nalgo = mapprop_ac\nepisodes = 5\nseeds = 0..1\n");
  const auto first = scratch("repro_a"), second = scratch("repro_b");
  c.output_dir = first.string();
  run_experiment(c);
  c.output_dir = second.string();
  c.workers = 2;
  run_experiment(c);
  for (const char* f : {"seed_0.csv", "seed_1.csv", "summary.csv"}) {
    const auto a = slurp(first / f);
    const auto b = slurp(second / f);
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, b) << f;
  }
}

TEST(Runs, WritesOneCsvPerSeedAndSummary) {
  auto c = quick("env = multiplexer\nalgo = reinforce\nepisodes = 3\nseeds = 0..2\nactor.batch_size = 4\n");
  c.output_dir = scratch("fanout").string();
  const auto records = run_experiment(c);
  EXPECT_EQ(records.size(), 3u);
  for (int s = 0; s < 3; ++s) EXPECT_TRUE(fs::exists(fs::path(c.output_dir) / ("seed_" + std::to_string(s) + ".csv")));
  const auto summary = slurp(fs::path(c.output_dir) / "summary.csv");
  EXPECT_EQ(summary.rfind("env,algo,seeds,completed,failures,mean,std\nmultiplexer,reinforce,3,3,0,", 0), 0u);
  const auto back = read_seed_returns(c.output_dir);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(back[i], records[i].returns);
}

TEST(Runs, EveryAlgorithmRunsBriefly) {
  const std::vector<std::string> cases{
      "env = multiplexer\nalgo = mapprop_mc\n",     "env = multiplexer\nalgo = reinforce_thomas\n",
      "env = multiplexer\nalgo = backprop_mc\n",    "env = regression\nalgo = mapprop_sl\n",
      "env = regression\nalgo = mapprop_mc\n",      "env = regression\nalgo = backprop_sl\n",
      "env = cartpole\nalgo = backprop_ac\n",       "env = acrobot\nalgo = reinforce\n",
      "env = mountaincar\nalgo = mapprop_ac\n",     "env = cartpole\nalgo = mapprop_mc\n"};
  for (const auto& text : cases) {
    auto c = quick(text + "episodes = 2\nactor.batch_size = 2\n");
    const auto rec = run_seed(c, 3);
    EXPECT_FALSE(rec.failed) << text << rec.error;
    EXPECT_EQ(rec.returns.size(), 2u) << text;
    for (double r : rec.returns) EXPECT_TRUE(std::isfinite(r)) << text;
  }
}

TEST(Runs, MountainCarTrajectoryLogging) {
  auto c = quick("env = mountaincar\nalgo = mapprop_ac\nepisodes = 2\ntrajectories = 2\n");
  const auto rec = run_seed(c, 0);
  ASSERT_FALSE(rec.trajectory.empty());
  for (const auto& row : rec.trajectory) EXPECT_EQ(row.episode, 2);
  EXPECT_EQ(static_cast<int>(rec.trajectory.size()), rec.steps[1] + 1);
  EXPECT_EQ(trajectory_csv(rec).rfind("episode,step,position,velocity,action\n2,0,", 0), 0u);
  if (rec.goal_reached) {
    bool found = false;
    for (const auto& row : rec.trajectory) found = found || row.position >= 0.45;
    EXPECT_TRUE(found);
  }
}

TEST(Runs, NoTrajectoryFileWithoutRequest) {
  auto c = quick("env = cartpole\nalgo = reinforce\nepisodes = 2\n");
  c.output_dir = scratch("notraj").string();
  run_experiment(c);
  EXPECT_FALSE(fs::exists(fs::path(c.output_dir) / "trajectories_0.csv"));
}

TEST(Runs, DivergenceIsRecordedAsFailure) {
  auto c = quick("env = cartpole\nalgo = mapprop_ac\nepisodes = 3\ncritic.alpha_h_factor = 200\ncritic.alpha3 = 5\n");
  const auto rec = run_seed(c, 0);
  EXPECT_TRUE(rec.failed);
  EXPECT_NE(rec.error.find("diverged"), std::string::npos);
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("cli");
  fs::create_directories(dir);
  const auto good = dir / "good.cfg";
  std::ofstream(good) << "env = cartpole\nalgo = reinforce\nepisodes = 2\n";
  const auto bad = dir / "bad.cfg";
  std::ofstream(bad) << "env = cartpole\nalgo = reinforce\nbogus = 1\n";
  const auto diverge = dir / "diverge.cfg";
  std::ofstream(diverge) << "env = cartpole\nalgo = mapprop_ac\nepisodes = 3\ncritic.alpha_h_factor = 200\n"
                            "critic.alpha3 = 5\n";
  EXPECT_EQ(run_cli("train --config " + good.string() + " --out " + (dir / "out").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "seed_0.csv"));
  EXPECT_EQ(run_cli("train --config " + bad.string()), 1);
  EXPECT_EQ(run_cli("train --config " + (dir / "missing.cfg").string()), 1);
  EXPECT_EQ(run_cli("train --config " + diverge.string() + " --out " + (dir / "div").string()), 2);
  EXPECT_EQ(run_cli("verify --check nonsense"), 1);
  EXPECT_EQ(run_cli("verify --check theorem3 --seed 1"), 0);
  EXPECT_EQ(run_cli("plot-data --in " + (dir / "out").string() + " --window 10"), 0);
  EXPECT_EQ(run_cli("plot-data --in " + (dir / "nothing").string()), 1);
}

TEST(Cli, SeedFromEnvironment) {
  const auto dir = scratch("cli_env");
  fs::create_directories(dir);
  const auto cfg = dir / "c.cfg";
  std::ofstream(cfg) << "env = cartpole\nalgo = reinforce\nepisodes = 2\nseeds = 0\n";
  EXPECT_EQ(run_cli("train --config " + cfg.string() + " --out " + (dir / "out").string() + " && MAPPROP_SEED=5 " +
                    MAPPROP_CLI + " train --config " + cfg.string() + " --out " + (dir / "env").string()),
            0);
  EXPECT_TRUE(fs::exists(dir / "env" / "seed_5.csv"));
  EXPECT_FALSE(fs::exists(dir / "env" / "seed_0.csv"));
  const std::string bad_env = "MAPPROP_SEED=abc " + std::string(MAPPROP_CLI) + " verify --check theorem3";
  const int status = std::system((bad_env + " > /dev/null 2>&1").c_str());
  EXPECT_EQ(WEXITSTATUS(status), 1);
}

#pragma once

// Wires learners to environments: seeded runs, per-episode CSV logs, summary
// statistics and running-average curve data.

#include "mapprop/agents.hpp"
#include "mapprop/config.hpp"
#include "mapprop/environments.hpp"
#include "mapprop/learners.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace mapprop {

enum class Algo { MapPropMc, MapPropAc, Reinforce, ReinforceThomas, BackpropAc, MapPropSl, BackpropSl, BackpropMc };

inline Algo parse_algo(const std::string& s) {
  if (s == "mapprop_mc") return Algo::MapPropMc;
  if (s == "mapprop_ac") return Algo::MapPropAc;
  if (s == "reinforce") return Algo::Reinforce;
  if (s == "reinforce_thomas") return Algo::ReinforceThomas;
  if (s == "backprop_ac") return Algo::BackpropAc;
  if (s == "mapprop_sl") return Algo::MapPropSl;
  if (s == "backprop_sl") return Algo::BackpropSl;
  if (s == "backprop_mc") return Algo::BackpropMc;
  throw ConfigError("unknown algo '" + s + "'");
}

inline std::string algo_name(Algo a) {
  switch (a) {
    case Algo::MapPropMc: return "mapprop_mc";
    case Algo::MapPropAc: return "mapprop_ac";
    case Algo::Reinforce: return "reinforce";
    case Algo::ReinforceThomas: return "reinforce_thomas";
    case Algo::BackpropAc: return "backprop_ac";
    case Algo::MapPropSl: return "mapprop_sl";
    case Algo::BackpropSl: return "backprop_sl";
    case Algo::BackpropMc: return "backprop_mc";
  }
  return "?";
}

struct EnvConfig {
  std::string name = "cartpole";
  int k = 5;                             // multiplexer
  int input_dim = 8;                     // regression
  std::uint64_t teacher_seed = 20210;    // regression
  std::optional<double> reward_clip;     // mountaincar
};

/// Network shape plus learning hyperparameters for one actor or critic.
struct AgentConfig {
  std::vector<int> widths{64, 32};
  std::vector<double> sigma_sq;  // per layer; the last entry is the output variance
  double temperature = 1.0;
  double entropy_coef = 0.0;
  LearnerConfig learner;
};

struct ExperimentConfig {
  EnvConfig env;
  Algo algo = Algo::MapPropAc;
  AgentConfig actor;
  AgentConfig critic;
  int episodes = 1000;  // batches for the single-step tasks
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "runs";
  int workers = 1;
  std::vector<int> trajectory_episodes;  // 1-based episode numbers

  bool batch_task() const { return env.name == "multiplexer" || env.name == "regression"; }
  int window() const { return batch_task() ? 10 : 100; }
};

inline std::unique_ptr<Environment> make_environment(const EnvConfig& e) {
  if (e.name == "multiplexer") return multiplexer_env(e.k);
  if (e.name == "regression") return scalar_regression_env(e.input_dim, e.teacher_seed);
  if (e.name == "cartpole") return cartpole_env();
  if (e.name == "acrobot") return acrobot_env();
  if (e.name == "mountaincar") return mountaincar_continuous_env(e.reward_clip);
  throw ConfigError("unknown env '" + e.name + "'");
}

namespace detail {

inline AgentConfig agent(std::vector<double> alphas, std::vector<double> sigma_sq, double temperature, double lambda) {
  AgentConfig a;
  a.sigma_sq = std::move(sigma_sq);
  a.temperature = temperature;
  a.learner.alphas = std::move(alphas);
  a.learner.lambda = lambda;
  a.learner.gamma = 0.98;
  a.learner.settle = {20, 0.5, false};
  return a;
}

}  // namespace detail

/// Hyperparameters of the published runs for each task. Baselines reuse the
/// same values; the output variance entry is unused for softmax heads.
inline ExperimentConfig default_experiment(const std::string& env, Algo algo) {
  ExperimentConfig c;
  c.env.name = env;
  c.algo = algo;
  if (env == "multiplexer") {
    c.actor = detail::agent({4e-2, 4e-5, 4e-6}, {0.3, 1.0, 1.0}, 1.0, 0.0);
    c.actor.learner.batch_size = 128;
    c.episodes = 500;
  } else if (env == "regression") {
    c.actor = detail::agent({6e-2, 6e-5, 6e-6}, {0.0075, 0.025, 0.025}, 1.0, 0.0);
    c.actor.learner.batch_size = 128;
    c.episodes = 500;
  } else if (env == "cartpole") {
    c.actor = detail::agent({1e-2, 1e-5, 1e-6}, {0.03, 0.1, 0.1}, 2.0, 0.95);
    c.critic = detail::agent({2e-2, 2e-5, 2e-6}, {0.03, 0.1, 0.1}, 1.0, 0.95);
    for (auto* a : {&c.actor, &c.critic}) a->learner.anneal = {true, 50000, 0.1};
    c.episodes = 1000;
  } else if (env == "acrobot") {
    c.actor = detail::agent({1e-2, 1e-5, 1e-6}, {0.03, 0.1, 0.1}, 4.0, 0.97);
    c.critic = detail::agent({2e-2, 2e-5, 2e-6}, {0.06, 0.2, 0.2}, 1.0, 0.97);
    for (auto* a : {&c.actor, &c.critic}) a->learner.anneal = {true, 100000, 0.1};
    c.episodes = 1000;
  } else if (env == "mountaincar") {
    c.actor = detail::agent({4e-3, 4e-6, 4e-7}, {0.03, 0.1, 0.5}, 1.0, 0.97);
    c.critic = detail::agent({1e-2, 1e-5, 1e-6}, {0.003, 0.01, 0.05}, 1.0, 0.97);
    c.env.reward_clip = 5.0;
    c.episodes = 300;
  } else {
    throw ConfigError("unknown env '" + env + "'");
  }
  if (algo == Algo::Reinforce || algo == Algo::ReinforceThomas) c.actor.learner.settle.n_steps = 0;
  if (algo == Algo::ReinforceThomas) c.actor.learner.explore_mask_prob = 0.5;
  return c;
}

namespace detail {

inline void read_agent(const KeyValueConfig& kv, const std::string& prefix, AgentConfig& a) {
  if (kv.has(prefix + ".widths")) {
    a.widths.clear();
    for (auto w : kv.get_ints(prefix + ".widths")) a.widths.push_back(static_cast<int>(w));
  }
  const std::size_t depth = a.widths.size() + 1;
  a.learner.alphas.resize(depth, a.learner.alphas.empty() ? 1e-3 : a.learner.alphas.back());
  a.sigma_sq.resize(depth, a.sigma_sq.empty() ? 1.0 : a.sigma_sq.back());
  for (std::size_t l = 0; l < depth; ++l) {
    const auto n = std::to_string(l + 1);
    a.learner.alphas[l] = kv.get_double(prefix + ".alpha" + n, a.learner.alphas[l]);
    a.sigma_sq[l] = kv.get_double(prefix + ".sigma_sq" + n, a.sigma_sq[l]);
  }
  auto& L = a.learner;
  a.temperature = kv.get_double(prefix + ".temperature", a.temperature);
  a.entropy_coef = kv.get_double(prefix + ".entropy_coef", a.entropy_coef);
  L.lambda = kv.get_double(prefix + ".lambda", L.lambda);
  L.gamma = kv.get_double(prefix + ".gamma", L.gamma);
  L.adam.beta1 = kv.get_double(prefix + ".adam_beta1", L.adam.beta1);
  L.adam.beta2 = kv.get_double(prefix + ".adam_beta2", L.adam.beta2);
  L.adam.eps = kv.get_double(prefix + ".adam_eps", L.adam.eps);
  L.settle.n_steps = static_cast<int>(kv.get_int(prefix + ".n_steps", L.settle.n_steps));
  L.settle.alpha_h_factor = kv.get_double(prefix + ".alpha_h_factor", L.settle.alpha_h_factor);
  L.settle.sequential = kv.get_bool(prefix + ".settle_sequential", L.settle.sequential);
  L.batch_size = static_cast<int>(kv.get_int(prefix + ".batch_size", L.batch_size));
  L.explore_mask_prob = kv.get_double(prefix + ".explore_mask_prob", L.explore_mask_prob);
  L.ratio_guard = kv.get_double(prefix + ".ratio_guard", L.ratio_guard);
  if (kv.has(prefix + ".anneal_end")) {
    L.anneal.linear = true;
    L.anneal.end_step = kv.get_int(prefix + ".anneal_end", 0);
  }
  L.anneal.final_fraction = kv.get_double(prefix + ".anneal_fraction", L.anneal.final_fraction);
  if (kv.has(prefix + ".anneal")) {
    const auto mode = kv.get_string(prefix + ".anneal", "");
    if (mode == "none") L.anneal.linear = false;
    else if (mode == "linear") L.anneal.linear = true;
    else throw ConfigError(prefix + ".anneal must be none or linear");
  }
  if (kv.has(prefix + ".reward_clip")) L.reward_clip = kv.get_double(prefix + ".reward_clip", 0);
}

}  // namespace detail

/// Defaults for (env, algo), then every other key overrides them.
inline ExperimentConfig experiment_from_kv(const KeyValueConfig& kv) {
  const std::string env = kv.get_string("env", "");
  if (env.empty()) throw ConfigError("config must set env");
  const std::string algo = kv.get_string("algo", "");
  if (algo.empty()) throw ConfigError("config must set algo");
  ExperimentConfig c = default_experiment(env, parse_algo(algo));
  c.env.k = static_cast<int>(kv.get_int("env.k", c.env.k));
  c.env.input_dim = static_cast<int>(kv.get_int("env.input_dim", c.env.input_dim));
  c.env.teacher_seed = static_cast<std::uint64_t>(kv.get_int("env.teacher_seed", static_cast<std::int64_t>(c.env.teacher_seed)));
  if (kv.has("env.reward_clip")) {
    const double clip = kv.get_double("env.reward_clip", 0);
    c.env.reward_clip = clip > 0 ? std::optional<double>(clip) : std::nullopt;
  }
  c.episodes = static_cast<int>(kv.get_int("episodes", c.episodes));
  if (kv.has("seeds")) c.seeds = KeyValueConfig::parse_range_list(kv.get_string("seeds", ""));
  c.output_dir = kv.get_string("output_dir", c.output_dir);
  c.workers = static_cast<int>(kv.get_int("workers", c.workers));
  if (kv.has("trajectories"))
    for (auto e : kv.get_ints("trajectories")) c.trajectory_episodes.push_back(static_cast<int>(e));
  detail::read_agent(kv, "actor", c.actor);
  detail::read_agent(kv, "critic", c.critic);
  if (const auto unused = kv.unused_keys(); !unused.empty()) throw ConfigError("unknown config key " + unused.front());
  if (c.episodes < 1) throw ConfigError("episodes must be positive");
  if (c.seeds.empty()) throw ConfigError("no seeds");
  if (c.workers < 1) throw ConfigError("workers must be positive");
  const bool needs_target = c.algo == Algo::MapPropSl || c.algo == Algo::BackpropSl;
  if (needs_target && c.env.name != "regression") throw ConfigError(algo + " needs the regression env");
  const bool batch_only = c.algo == Algo::MapPropMc || c.algo == Algo::BackpropMc || needs_target;
  if (batch_only && !c.batch_task() && c.algo != Algo::MapPropMc)
    throw ConfigError(algo + " runs on single-step tasks only");
  if (c.algo == Algo::MapPropAc || c.algo == Algo::BackpropAc) {
    if (c.batch_task()) throw ConfigError(algo + " needs a multi-step task");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Records and CSV

struct TrajectoryRow {
  int episode = 0;
  int step = 0;
  double position = 0.0;  // first observation coordinate
  double velocity = 0.0;  // second observation coordinate
  double action = 0.0;    // continuous value, or the category index
};

struct RunRecord {
  std::uint64_t seed = 0;
  std::vector<double> returns;  // raw (unclipped) return per episode or batch mean
  std::vector<int> steps;
  std::vector<TrajectoryRow> trajectory;
  bool goal_reached = false;  // MountainCar only
  bool failed = false;
  std::string error;
};

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::vector<double> running_average(const std::vector<double>& xs, int window) {
  std::vector<double> out(xs.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sum += xs[i];
    if (i >= static_cast<std::size_t>(window)) sum -= xs[i - window];
    out[i] = sum / static_cast<double>(std::min<std::size_t>(i + 1, window));
  }
  return out;
}

inline double mean_of(const std::vector<double>& xs) {
  return xs.empty() ? 0.0 : std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

/// Population standard deviation.
inline double std_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  const double m = mean_of(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size()));
}

inline std::string episode_csv(const RunRecord& r, int window) {
  std::ostringstream out;
  out << "episode,return,steps,running_average\n";
  const auto avg = running_average(r.returns, window);
  for (std::size_t i = 0; i < r.returns.size(); ++i)
    out << (i + 1) << ',' << format_double(r.returns[i]) << ',' << r.steps[i] << ',' << format_double(avg[i]) << '\n';
  return out.str();
}

inline std::string trajectory_csv(const RunRecord& r) {
  std::ostringstream out;
  out << "episode,step,position,velocity,action\n";
  for (const auto& t : r.trajectory)
    out << t.episode << ',' << t.step << ',' << format_double(t.position) << ',' << format_double(t.velocity) << ','
        << format_double(t.action) << '\n';
  return out.str();
}

struct Summary {
  double mean = 0.0;  // mean over seeds of the average return over all episodes
  double std = 0.0;
  int completed = 0;
  int failures = 0;
};

inline Summary summarize(const std::vector<RunRecord>& records) {
  Summary s;
  std::vector<double> per_seed;
  for (const auto& r : records) {
    if (r.failed) {
      ++s.failures;
      continue;
    }
    per_seed.push_back(mean_of(r.returns));
  }
  s.completed = static_cast<int>(per_seed.size());
  s.mean = mean_of(per_seed);
  s.std = std_of(per_seed);
  return s;
}

/// Columns: episode, mean and std across seeds of the running-average return.
inline std::string emit_plot_data(const std::vector<std::vector<double>>& returns_per_seed, int window) {
  std::ostringstream out;
  out << "episode,mean_running_return,std_running_return\n";
  if (returns_per_seed.empty()) return out.str();
  std::vector<std::vector<double>> curves;
  std::size_t n = returns_per_seed.front().size();
  for (const auto& r : returns_per_seed) {
    curves.push_back(running_average(r, window));
    n = std::min(n, r.size());
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> col;
    for (const auto& c : curves) col.push_back(c[i]);
    out << (i + 1) << ',' << format_double(mean_of(col)) << ',' << format_double(std_of(col)) << '\n';
  }
  return out.str();
}

inline std::string emit_plot_data(const std::vector<RunRecord>& records, int window) {
  std::vector<std::vector<double>> rs;
  for (const auto& r : records)
    if (!r.failed) rs.push_back(r.returns);
  return emit_plot_data(rs, window);
}

// ---------------------------------------------------------------------------
// Runs

namespace detail {

inline OutputSpec output_for(const EnvSpec& spec, const AgentConfig& a) {
  if (const auto* d = std::get_if<DiscreteActions>(&spec.action_kind))
    return {LayerKind::SoftmaxOutput, d->n, 1.0, a.temperature};
  return {LayerKind::LinearGaussianOutput, std::get<ContinuousActions>(spec.action_kind).dim, a.sigma_sq.back(), 1.0};
}

inline NetworkParams build_team(int in_dim, const AgentConfig& a, const OutputSpec& out, Rng& rng) {
  std::vector<double> hidden_var(a.sigma_sq.begin(), a.sigma_sq.begin() + static_cast<long>(a.widths.size()));
  return make_network(in_dim, a.widths, hidden_var, out, rng);
}

inline AnnConfig ann_config(const AgentConfig& a, const OutputSpec& out) {
  AnnConfig c;
  c.widths = a.widths;
  c.alphas = a.learner.alphas;
  c.lambda = a.learner.lambda;
  c.gamma = a.learner.gamma;
  c.adam = a.learner.adam;
  c.anneal = a.learner.anneal;
  c.reward_clip = a.learner.reward_clip;
  c.entropy_coef = a.entropy_coef;
  c.head = {out.kind, out.sigma_sq, out.temperature};
  return c;
}

inline double action_scalar(const Vector& action, const EnvSpec& spec) {
  if (std::holds_alternative<DiscreteActions>(spec.action_kind)) return static_cast<double>(categorical_index(action));
  return action(0);
}

inline bool wants_trajectory(const ExperimentConfig& cfg, int episode) {
  return std::find(cfg.trajectory_episodes.begin(), cfg.trajectory_episodes.end(), episode) !=
         cfg.trajectory_episodes.end();
}

/// Online actor-critic loop over whole episodes.
inline void run_online(const ExperimentConfig& cfg, Environment& env, Actor& actor, Critic& critic, Rng& rng,
                       RunRecord& rec) {
  const auto spec = env.spec();
  for (int ep = 1; ep <= cfg.episodes; ++ep) {
    Vector obs = env.reset(mix_seed(rec.seed, static_cast<std::uint64_t>(ep)));
    actor.begin_episode();
    critic.begin_episode();
    const bool record = wants_trajectory(cfg, ep);
    double ret = 0.0;
    double reward = 0.0;
    bool first = true;
    int t = 0;
    while (true) {
      const CriticStep c = critic.observe(obs, reward, first, false, rng);
      const Vector action = actor.act(obs, c.has_delta ? std::optional<double>(c.delta) : std::nullopt, rng);
      if (record) rec.trajectory.push_back({ep, t, obs(0), obs.size() > 1 ? obs(1) : 0.0, action_scalar(action, spec)});
      const Transition tr = env.step(action);
      ret += tr.raw_reward;
      reward = tr.reward;
      obs = tr.next_obs;
      first = false;
      ++t;
      if (env.name() == "mountaincar" && obs(0) >= MountainCarContinuousEnv::kGoalPosition) rec.goal_reached = true;
      if (tr.terminal || tr.truncated) {
        // Truncation keeps the bootstrap term, termination drops it.
        const CriticStep last = critic.observe(obs, reward, false, tr.terminal, rng);
        actor.finish(last.delta);
        if (record) rec.trajectory.push_back({ep, t, obs(0), obs.size() > 1 ? obs(1) : 0.0, 0.0});
        break;
      }
    }
    rec.returns.push_back(ret);
    rec.steps.push_back(t);
  }
}

/// Batched Monte-Carlo loop (Algorithm-1 style) for the team and ANN
/// policies, plus the supervised variants on the regression task.
inline void run_batched(const ExperimentConfig& cfg, Environment& env, Rng& rng, RunRecord& rec) {
  const auto spec = env.spec();
  const OutputSpec out = output_for(spec, cfg.actor);
  const int batch = cfg.actor.learner.batch_size;
  std::uint64_t episode_counter = 0;
  auto next_seed = [&] { return mix_seed(rec.seed, ++episode_counter); };

  const bool ann = cfg.algo == Algo::BackpropMc || cfg.algo == Algo::BackpropSl;
  NetworkParams team;
  DenseNet net;
  if (ann) net = DenseNet(spec.obs_dim, cfg.actor.widths, out.dim, rng);
  else team = build_team(spec.obs_dim, cfg.actor, out, rng);
  TraceState opt = ann ? make_trace_state(net) : TraceState(team);
  const LearnerConfig& L = cfg.actor.learner;
  if (!ann) L.validate(team);
  const AnnConfig annc = ann_config(cfg.actor, out);

  for (int b = 1; b <= cfg.episodes; ++b) {
    double batch_return = 0.0;
    int batch_steps = 0;
    if (cfg.algo == Algo::MapPropSl) {
      std::vector<HiddenState> samples;
      std::vector<double> targets;
      for (int i = 0; i < batch; ++i) {
        const Vector obs = env.reset(next_seed());
        samples.push_back(sample_forward(team, obs, rng));
        targets.push_back(*env.target());
        const Transition tr = env.step(samples.back().action);
        batch_return += tr.raw_reward;
        ++batch_steps;
      }
      sl_batch_update(team, opt, samples, targets, L);
    } else if (ann) {
      std::vector<Matrix> mean;
      for (const auto& w : net.weights()) mean.push_back(Matrix::Zero(w.rows(), w.cols()));
      for (int i = 0; i < batch; ++i) {
        const Vector obs = env.reset(next_seed());
        DenseNet::Cache cache;
        const Vector y = net.forward(obs, &cache);
        Vector grad_out;
        Vector action;
        if (cfg.algo == Algo::BackpropSl) {
          action = y;  // deterministic prediction; gradient of -(y - A*)^2
          grad_out = Vector::Constant(1, 2.0 * (*env.target() - y(0)));
        } else {
          action = sample_head(annc.head, y, rng);
        }
        const Transition tr = env.step(action);
        if (cfg.algo == Algo::BackpropMc) grad_out = clip_reward(tr.reward, L) * head_score(annc.head, y, action);
        const auto g = net.backward(cache, grad_out);
        for (std::size_t l = 0; l < g.size(); ++l) mean[l] += g[l] / static_cast<double>(batch);
        batch_return += tr.raw_reward;
        ++batch_steps;
      }
      apply_update(net.weights(), opt, mean, annealed(L.alphas, opt.step_count, L.anneal), OptimizerKind::Adam, L.adam);
    } else {
      std::vector<EpisodeLog> episodes(static_cast<std::size_t>(batch));
      for (auto& ep : episodes) {
        Vector obs = env.reset(next_seed());
        while (true) {
          EpisodeStep step = sample_step(team, obs, L.explore_mask_prob, rng);
          const Transition tr = env.step(step.values.action);
          step.reward = tr.reward;
          batch_return += tr.raw_reward;
          ++batch_steps;
          ep.steps.push_back(std::move(step));
          obs = tr.next_obs;
          if (tr.terminal || tr.truncated) break;
        }
      }
      if (cfg.algo == Algo::MapPropMc) mc_batch_update(team, opt, episodes, L);
      else reinforce_episode_update(team, opt, episodes, L);
    }
    rec.returns.push_back(batch_return / static_cast<double>(batch));
    rec.steps.push_back(batch_steps);
  }
}

}  // namespace detail

/// One seed of an experiment. Settling divergence marks the record failed.
inline RunRecord run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  RunRecord rec;
  rec.seed = seed;
  Rng rng(mix_seed(seed, 0xA11CEull));
  try {
    auto env = make_environment(cfg.env);
    if (cfg.batch_task() || cfg.algo == Algo::MapPropMc) {
      detail::run_batched(cfg, *env, rng, rec);
      return rec;
    }
    const auto spec = env->spec();
    const OutputSpec aout = detail::output_for(spec, cfg.actor);
    const OutputSpec cout{LayerKind::LinearGaussianOutput, 1, cfg.critic.sigma_sq.back(), 1.0};
    std::unique_ptr<Actor> actor;
    std::unique_ptr<Critic> critic;
    if (cfg.algo == Algo::BackpropAc) {
      actor = std::make_unique<AnnActor>(spec.obs_dim, aout.dim, detail::ann_config(cfg.actor, aout), rng);
    } else {
      actor = std::make_unique<TeamActor>(detail::build_team(spec.obs_dim, cfg.actor, aout, rng), cfg.actor.learner);
    }
    if (cfg.algo == Algo::MapPropAc) {
      critic = std::make_unique<TeamCritic>(detail::build_team(spec.obs_dim, cfg.critic, cout, rng), cfg.critic.learner);
    } else {
      critic = std::make_unique<AnnCritic>(spec.obs_dim, detail::ann_config(cfg.critic, cout), rng);
    }
    detail::run_online(cfg, *env, *actor, *critic, rng, rec);
  } catch (const SettleDivergence& e) {
    rec.failed = true;
    rec.error = e.what();
  }
  return rec;
}

/// Runs every seed (in `workers` threads) and returns records in seed order.
inline std::vector<RunRecord> run_experiment_records(const ExperimentConfig& cfg) {
  std::vector<RunRecord> records(cfg.seeds.size());
  std::size_t next = 0;
  std::mutex m;
  auto worker = [&] {
    while (true) {
      std::size_t i;
      {
        std::lock_guard lock(m);
        if (next >= cfg.seeds.size()) return;
        i = next++;
      }
      records[i] = run_seed(cfg, cfg.seeds[i]);
    }
  };
  const int n = std::min<int>(cfg.workers, static_cast<int>(cfg.seeds.size()));
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
  }
  return records;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

/// Writes seed_<n>.csv (and trajectories_<n>.csv when requested) plus
/// summary.csv into cfg.output_dir.
inline std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg) {
  auto records = run_experiment_records(cfg);
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  for (const auto& r : records) {
    write_file(fs::path(cfg.output_dir) / ("seed_" + std::to_string(r.seed) + ".csv"), episode_csv(r, cfg.window()));
    if (!cfg.trajectory_episodes.empty())
      write_file(fs::path(cfg.output_dir) / ("trajectories_" + std::to_string(r.seed) + ".csv"), trajectory_csv(r));
  }
  const Summary s = summarize(records);
  std::ostringstream out;
  out << "env,algo,seeds,completed,failures,mean,std\n";
  out << cfg.env.name << ',' << algo_name(cfg.algo) << ',' << records.size() << ',' << s.completed << ','
      << s.failures << ',' << format_double(s.mean) << ',' << format_double(s.std) << '\n';
  for (const auto& r : records)
    if (r.failed) out << "# seed " << r.seed << " failed: " << r.error << '\n';
  write_file(fs::path(cfg.output_dir) / "summary.csv", out.str());
  return records;
}

/// Reads the return column of every seed_*.csv in `dir`, in seed order.
inline std::vector<std::vector<double>> read_seed_returns(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<std::pair<std::uint64_t, fs::path>> files;
  if (!fs::is_directory(dir)) throw ConfigError("not a directory: " + dir);
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("seed_", 0) == 0 && e.path().extension() == ".csv")
      files.emplace_back(std::stoull(name.substr(5, name.size() - 9)), e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<std::vector<double>> out;
  for (const auto& [seed, path] : files) {
    std::ifstream f(path);
    std::string line;
    std::getline(f, line);
    std::vector<double> rs;
    while (std::getline(f, line)) {
      const auto a = line.find(',');
      const auto b = line.find(',', a + 1);
      rs.push_back(std::stod(line.substr(a + 1, b - a - 1)));
    }
    out.push_back(std::move(rs));
  }
  return out;
}

}  // namespace mapprop

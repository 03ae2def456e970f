#pragma once

// Online actors and critics sharing one calling convention, so the harness
// can pair a team actor with either a team critic or an ANN critic.
//
// Per time step the harness calls critic.observe(S_t, R_t) first, then hands
// the resulting TD error to actor.act(S_t, delta). When the episode ends the
// critic sees the final transition and the actor gets actor.finish(delta).

#include "mapprop/backprop_net.hpp"
#include "mapprop/learners.hpp"

#include <cstdint>
#include <optional>

namespace mapprop {

class Actor {
 public:
  virtual ~Actor() = default;
  virtual void begin_episode() = 0;
  /// `delta` is the critic's TD error for the previous transition; empty on
  /// the first step of an episode.
  virtual Vector act(const Vector& obs, std::optional<double> delta, Rng& rng) = 0;
  virtual void finish(double delta) = 0;
  virtual const HiddenState* last_settled() const { return nullptr; }
};

class Critic {
 public:
  virtual ~Critic() = default;
  virtual void begin_episode() = 0;
  /// `reward` is the reward of the transition into `obs` (ignored when
  /// is_first). When `terminal`, obs is not evaluated.
  virtual CriticStep observe(const Vector& obs, double reward, bool is_first, bool terminal, Rng& rng) = 0;
};

/// Team of stochastic units trained by MAP propagation. With
/// settle.n_steps == 0 this is per-unit REINFORCE with traces, and
/// explore_mask_prob > 0 adds random exploration disabling.
class TeamActor final : public Actor {
 public:
  TeamActor(NetworkParams params, LearnerConfig cfg) : params_(std::move(params)), cfg_(std::move(cfg)), tr_(params_) {
    cfg_.validate(params_);
  }

  void begin_episode() override { tr_.reset_traces(); }

  Vector act(const Vector& obs, std::optional<double> delta, Rng& rng) override {
    auto step = actor_online_step(params_, tr_, obs, delta, cfg_, steps_, rng);
    ++steps_;
    settled_ = std::move(step.settled);
    return step.action;
  }

  void finish(double delta) override { apply_trace_update(params_, tr_, delta, cfg_, steps_); }

  const HiddenState* last_settled() const override { return &settled_; }
  const NetworkParams& params() const { return params_; }
  const TraceState& traces() const { return tr_; }

 private:
  NetworkParams params_;
  LearnerConfig cfg_;
  TraceState tr_;
  HiddenState settled_;
  std::int64_t steps_ = 0;
};

/// Team critic with the (A - mu)^-1 scaled traces.
class TeamCritic final : public Critic {
 public:
  TeamCritic(NetworkParams params, LearnerConfig cfg) : params_(std::move(params)), cfg_(std::move(cfg)), tr_(params_) {
    cfg_.validate(params_);
  }

  void begin_episode() override {
    tr_.reset_traces();
    prev_mu_ = 0.0;
  }

  CriticStep observe(const Vector& obs, double reward, bool is_first, bool terminal, Rng& rng) override {
    const auto out = critic_online_step(params_, tr_, obs, clip_reward(reward, cfg_), prev_mu_, is_first, terminal,
                                        cfg_, steps_, rng);
    if (!terminal) ++steps_;
    prev_mu_ = out.mu;
    return out;
  }

  const NetworkParams& params() const { return params_; }

 private:
  NetworkParams params_;
  LearnerConfig cfg_;
  TraceState tr_;
  double prev_mu_ = 0.0;
  std::int64_t steps_ = 0;
};

// ---------------------------------------------------------------------------
// Backprop baselines

struct AnnConfig {
  std::vector<int> widths{64, 32};
  std::vector<double> alphas;  // one per layer (widths.size() + 1)
  double lambda = 0.9;
  double gamma = 0.98;
  AdamConfig adam;
  AnnealSchedule anneal;
  std::optional<double> reward_clip;
  double entropy_coef = 0.0;
  PolicyHead head;
};

/// TD(lambda) value network: delta = R + gamma v(S') - v(S); the trace
/// accumulates grad v after the weight update, as in the team critic.
class AnnCritic final : public Critic {
 public:
  AnnCritic(int obs_dim, AnnConfig cfg, Rng& init_rng)
      : cfg_(std::move(cfg)), net_(obs_dim, cfg_.widths, 1, init_rng), tr_(make_trace_state(net_)) {
    if (cfg_.alphas.size() != net_.weights().size()) throw ConfigError("ANN critic needs one alpha per layer");
  }

  void begin_episode() override {
    tr_.reset_traces();
    prev_v_ = 0.0;
  }

  CriticStep observe(const Vector& obs, double reward, bool is_first, bool terminal, Rng&) override {
    CriticStep out;
    reward = cfg_.reward_clip ? std::clamp(reward, -*cfg_.reward_clip, *cfg_.reward_clip) : reward;
    DenseNet::Cache cache;
    if (!terminal) out.mu = net_.forward(obs, &cache)(0);
    if (!is_first) {
      out.delta = reward + (terminal ? 0.0 : cfg_.gamma * out.mu) - prev_v_;
      out.has_delta = true;
      update(out.delta);
    }
    if (!terminal) {
      const auto grads = net_.backward(cache, Vector::Ones(1));
      const double decay = cfg_.gamma * cfg_.lambda;
      for (std::size_t l = 0; l < grads.size(); ++l) tr_.traces[l] = decay * tr_.traces[l] + grads[l];
      ++steps_;
    }
    prev_v_ = out.mu;
    return out;
  }

  double value(const Vector& obs) const { return net_.forward(obs)(0); }
  const DenseNet& net() const { return net_; }

 private:
  void update(double delta) {
    if (delta == 0.0) return;
    std::vector<Matrix> g;
    for (const auto& z : tr_.traces) g.push_back(delta * z);
    const auto alphas = annealed(cfg_.alphas, steps_, cfg_.anneal);
    apply_update(net_.weights(), tr_, g, alphas, OptimizerKind::Adam, cfg_.adam);
  }

  AnnConfig cfg_;
  DenseNet net_;
  TraceState tr_;
  double prev_v_ = 0.0;
  std::int64_t steps_ = 0;
};

/// Deterministic ANN policy trained by backprop with eligibility traces.
class AnnActor final : public Actor {
 public:
  AnnActor(int obs_dim, int action_dim, AnnConfig cfg, Rng& init_rng)
      : cfg_(std::move(cfg)), net_(obs_dim, cfg_.widths, action_dim, init_rng), tr_(make_trace_state(net_)) {
    if (cfg_.alphas.size() != net_.weights().size()) throw ConfigError("ANN actor needs one alpha per layer");
  }

  void begin_episode() override { tr_.reset_traces(); }

  Vector act(const Vector& obs, std::optional<double> delta, Rng& rng) override {
    if (delta) update(*delta);
    DenseNet::Cache cache;
    const Vector out = net_.forward(obs, &cache);
    const Vector action = sample_head(cfg_.head, out, rng);
    const auto grads = net_.backward(cache, head_score(cfg_.head, out, action));
    const double decay = cfg_.gamma * cfg_.lambda;
    for (std::size_t l = 0; l < grads.size(); ++l) tr_.traces[l] = decay * tr_.traces[l] + grads[l];
    if (cfg_.entropy_coef > 0) entropy_grad_ = net_.backward(cache, head_entropy_gradient(cfg_.head, out));
    ++steps_;
    return action;
  }

  void finish(double delta) override { update(delta); }

  const DenseNet& net() const { return net_; }
  DenseNet& net() { return net_; }

 private:
  void update(double delta) {
    std::vector<Matrix> g;
    for (std::size_t l = 0; l < tr_.traces.size(); ++l) {
      g.push_back(delta * tr_.traces[l]);
      if (cfg_.entropy_coef > 0 && !entropy_grad_.empty()) g.back() += cfg_.entropy_coef * entropy_grad_[l];
    }
    const auto alphas = annealed(cfg_.alphas, steps_, cfg_.anneal);
    apply_update(net_.weights(), tr_, g, alphas, OptimizerKind::Adam, cfg_.adam);
  }

  AnnConfig cfg_;
  DenseNet net_;
  TraceState tr_;
  std::vector<Matrix> entropy_grad_;
  std::int64_t steps_ = 0;
};

struct BaselineStep {
  Vector action;
  CriticStep critic;
};

/// One time step of the backprop actor-critic: critic first, then actor.
inline BaselineStep backprop_ac_baseline_step(AnnActor& actor, AnnCritic& critic, const Vector& obs, double reward,
                                              bool is_first, Rng& rng) {
  BaselineStep out;
  out.critic = critic.observe(obs, reward, is_first, false, rng);
  out.action = actor.act(obs, out.critic.has_delta ? std::optional<double>(out.critic.delta) : std::nullopt, rng);
  return out;
}

}  // namespace mapprop

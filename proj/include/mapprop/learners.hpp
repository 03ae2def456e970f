#pragma once

// Learning rules for networks of stochastic units. Every unit applies
// REINFORCE with a shared reinforcement signal; MAP propagation first
// settles the hidden layers toward the energy minimum given (S, A).

#include "mapprop/network.hpp"
#include "mapprop/optimizer.hpp"
#include "mapprop/settle.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace mapprop {

struct LearnerConfig {
  std::vector<double> alphas;  // one step size per layer
  double lambda = 0.9;
  double gamma = 0.98;
  AdamConfig adam;
  OptimizerKind optimizer = OptimizerKind::Adam;
  SettleConfig settle;
  AnnealSchedule anneal;
  std::optional<double> reward_clip;
  int batch_size = 1;
  double explore_mask_prob = 0.0;  // > 0 disables exploration of random hidden units
  double ratio_guard = 1e-3;       // skip (A - mu)^-1 when |A - mu| < ratio_guard * sigma_L

  void validate(const NetworkParams& p) const {
    if (alphas.size() != p.depth()) throw ConfigError("need one alpha per layer");
    for (double a : alphas)
      if (!(a > 0)) throw ConfigError("alphas must be positive");
    if (lambda < 0 || lambda > 1) throw ConfigError("lambda must lie in [0,1]");
    if (gamma < 0 || gamma > 1) throw ConfigError("gamma must lie in [0,1]");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (explore_mask_prob < 0 || explore_mask_prob > 1) throw ConfigError("explore_mask_prob must lie in [0,1]");
    if (reward_clip && !(*reward_clip > 0)) throw ConfigError("reward_clip must be positive");
    settle.validate();
  }
};

inline double clip_reward(double r, const LearnerConfig& cfg) {
  return cfg.reward_clip ? std::clamp(r, -*cfg.reward_clip, *cfg.reward_clip) : r;
}

struct EpisodeStep {
  HiddenState values;  // as sampled when acting
  double reward = 0.0;  // R_{t+1}
  ExploreMask mask;     // empty when every unit explores
  double delta = 0.0;
  double energy = 0.0;
};

struct EpisodeLog {
  std::vector<EpisodeStep> steps;
};

inline std::vector<Matrix> zeros_like(const NetworkParams& p) {
  std::vector<Matrix> out;
  for (const auto& w : p.weights) out.push_back(Matrix::Zero(w.rows(), w.cols()));
  return out;
}

namespace detail {

inline void zero_masked_rows(std::vector<Matrix>& grads, const ExploreMask& mask) {
  for (std::size_t l = 0; l < mask.size() && l < grads.size(); ++l)
    for (Eigen::Index j = 0; j < mask[l].size(); ++j)
      if (mask[l](j) == 0.0) grads[l].row(j).setZero();
}

inline void axpy(std::vector<Matrix>& acc, double a, const std::vector<Matrix>& x) {
  for (std::size_t l = 0; l < acc.size(); ++l) acc[l] += a * x[l];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Monte-Carlo control

/// Sum over the episode of G_t * grad log pi_l at the settled values.
inline std::vector<Matrix> mc_episode_gradient(const NetworkParams& p, const EpisodeLog& episode,
                                               const LearnerConfig& cfg) {
  auto total = zeros_like(p);
  const std::size_t T = episode.steps.size();
  std::vector<double> returns(T);
  double g = 0.0;
  for (std::size_t t = T; t-- > 0;) {
    g = clip_reward(episode.steps[t].reward, cfg) + cfg.gamma * g;
    returns[t] = g;
  }
  for (std::size_t t = 0; t < T; ++t) {
    if (returns[t] == 0.0) continue;
    const HiddenState settled = settle(episode.steps[t].values, p, cfg.settle);
    auto grads = grad_logpi_all(p, settled);
    detail::zero_masked_rows(grads, episode.steps[t].mask);
    detail::axpy(total, returns[t], grads);
  }
  return total;
}

/// Averages the per-episode updates of a batch and applies them once.
inline void mc_batch_update(NetworkParams& p, TraceState& opt, std::span<const EpisodeLog> batch,
                            const LearnerConfig& cfg) {
  auto mean = zeros_like(p);
  for (const auto& ep : batch) detail::axpy(mean, 1.0 / static_cast<double>(batch.size()), mc_episode_gradient(p, ep, cfg));
  const auto alphas = annealed(cfg.alphas, opt.step_count, cfg.anneal);
  apply_update(p.weights, opt, mean, alphas, cfg.optimizer, cfg.adam);
}

inline void mc_episode_update(NetworkParams& p, TraceState& opt, const EpisodeLog& episode,
                              const LearnerConfig& cfg) {
  mc_batch_update(p, opt, std::span<const EpisodeLog>(&episode, 1), cfg);
}

/// Plain per-unit REINFORCE: Monte-Carlo control without settling. Units
/// masked while acting contribute nothing for that step.
inline void reinforce_episode_update(NetworkParams& p, TraceState& opt, std::span<const EpisodeLog> batch,
                                     const LearnerConfig& cfg) {
  LearnerConfig plain = cfg;
  plain.settle.n_steps = 0;
  mc_batch_update(p, opt, batch, plain);
}

/// Samples one step, recording the exploration mask when enabled.
inline EpisodeStep sample_step(const NetworkParams& p, const Vector& state, double explore_mask_prob, Rng& rng) {
  EpisodeStep step;
  if (explore_mask_prob > 0) {
    step.mask = draw_explore_mask(p, explore_mask_prob, rng);
    step.values = sample_forward(p, state, rng, &step.mask);
  } else {
    step.values = sample_forward(p, state, rng);
  }
  return step;
}

// ---------------------------------------------------------------------------
// Regression toward a known target: G replaced by (A* - mu)/(A - mu)

/// Returns nullopt when |A - mu| is inside the guard band.
inline std::optional<double> guarded_ratio(double numerator, double a_minus_mu, const LayerSpec& out,
                                           double guard) {
  if (std::abs(a_minus_mu) < guard * std::sqrt(out.sigma_sq)) return std::nullopt;
  return numerator / a_minus_mu;
}

inline double output_mean(const NetworkParams& p, const HiddenState& h) {
  return (p.weights.back() * h.layer_input(p.depth() - 1))(0);
}

/// Settles a sampled step and returns ratio * grad log pi_l, or zeros when
/// the ratio is guarded out.
inline std::vector<Matrix> sl_target_gradient(const NetworkParams& p, const HiddenState& sampled, double target,
                                              const LearnerConfig& cfg) {
  if (p.output().kind != LayerKind::LinearGaussianOutput || p.output().out_dim != 1)
    throw ConfigError("target learning needs a scalar linear Gaussian output");
  const HiddenState settled = settle(sampled, p, cfg.settle);
  const double mu = output_mean(p, settled);
  const double a = settled.action(0);
  const auto ratio = guarded_ratio(target - mu, a - mu, p.output(), cfg.ratio_guard);
  auto grads = grad_logpi_all(p, settled);
  if (!ratio) return zeros_like(p);
  for (auto& g : grads) g *= *ratio;
  return grads;
}

inline void sl_batch_update(NetworkParams& p, TraceState& opt, std::span<const HiddenState> samples,
                            std::span<const double> targets, const LearnerConfig& cfg) {
  auto mean = zeros_like(p);
  for (std::size_t i = 0; i < samples.size(); ++i)
    detail::axpy(mean, 1.0 / static_cast<double>(samples.size()), sl_target_gradient(p, samples[i], targets[i], cfg));
  const auto alphas = annealed(cfg.alphas, opt.step_count, cfg.anneal);
  apply_update(p.weights, opt, mean, alphas, cfg.optimizer, cfg.adam);
}

/// One sample, settle, and update. Returns the sampled output.
inline double sl_target_update(NetworkParams& p, TraceState& opt, const Vector& state, double target,
                               const LearnerConfig& cfg, Rng& rng) {
  const HiddenState sampled = sample_forward(p, state, rng);
  sl_batch_update(p, opt, std::span<const HiddenState>(&sampled, 1), std::span<const double>(&target, 1), cfg);
  return sampled.action(0);
}

// ---------------------------------------------------------------------------
// Online actor and critic with eligibility traces

/// W += step along delta * z, with annealed per-layer step sizes.
inline void apply_trace_update(NetworkParams& p, TraceState& tr, double delta, const LearnerConfig& cfg,
                               std::int64_t anneal_step) {
  if (delta == 0.0) return;
  std::vector<Matrix> g;
  g.reserve(tr.traces.size());
  for (const auto& z : tr.traces) g.push_back(delta * z);
  const auto alphas = annealed(cfg.alphas, anneal_step, cfg.anneal);
  apply_update(p.weights, tr, g, alphas, cfg.optimizer, cfg.adam);
}

struct ActorStep {
  Vector action;        // sampled before settling
  HiddenState settled;
};

/// Feedforward, apply delta * z (skipped on an episode's first step),
/// settle, then z <- gamma*lambda*z + grad log pi at the settled values.
inline ActorStep actor_online_step(NetworkParams& p, TraceState& tr, const Vector& obs,
                                   std::optional<double> delta, const LearnerConfig& cfg,
                                   std::int64_t anneal_step, Rng& rng) {
  EpisodeStep step = sample_step(p, obs, cfg.explore_mask_prob, rng);
  if (delta) apply_trace_update(p, tr, *delta, cfg, anneal_step);
  ActorStep out{step.values.action, settle(std::move(step.values), p, cfg.settle)};
  auto grads = grad_logpi_all(p, out.settled);
  detail::zero_masked_rows(grads, step.mask);
  const double decay = cfg.gamma * cfg.lambda;
  for (std::size_t l = 0; l < grads.size(); ++l) tr.traces[l] = decay * tr.traces[l] + grads[l];
  return out;
}

struct CriticStep {
  double mu = 0.0;     // value estimate of the current state (0 when terminal)
  double delta = 0.0;  // TD error of the transition into the current state
  bool has_delta = false;
};

/// Critic with scalar Gaussian output. `reward` and `prev_mu` describe the
/// transition into `obs`; both are ignored on the first step. When
/// `is_terminal` is set, obs is not evaluated and the bootstrap term drops.
inline CriticStep critic_online_step(NetworkParams& p, TraceState& tr, const Vector& obs, double reward,
                                     double prev_mu, bool is_first, bool is_terminal, const LearnerConfig& cfg,
                                     std::int64_t anneal_step, Rng& rng) {
  if (p.output().kind != LayerKind::LinearGaussianOutput || p.output().out_dim != 1)
    throw ConfigError("critic needs a scalar linear Gaussian output");
  CriticStep out;
  if (is_terminal) {
    if (!is_first) {
      out.delta = reward - prev_mu;
      out.has_delta = true;
      apply_trace_update(p, tr, out.delta, cfg, anneal_step);
    }
    return out;
  }
  HiddenState values = sample_forward(p, obs, rng);
  out.mu = output_mean(p, values);
  if (!is_first) {
    out.delta = reward + cfg.gamma * out.mu - prev_mu;
    out.has_delta = true;
    apply_trace_update(p, tr, out.delta, cfg, anneal_step);
  }
  const HiddenState settled = settle(std::move(values), p, cfg.settle);
  const double decay = cfg.gamma * cfg.lambda;
  // A minus the feedforward mean, as in delta.
  const auto inv = guarded_ratio(1.0, settled.action(0) - out.mu, p.output(), cfg.ratio_guard);
  if (!inv) {
    for (auto& z : tr.traces) z *= decay;
    return out;
  }
  const auto grads = grad_logpi_all(p, settled);
  for (std::size_t l = 0; l < grads.size(); ++l) tr.traces[l] = decay * tr.traces[l] + *inv * grads[l];
  return out;
}

// ---------------------------------------------------------------------------
// Backprop through the reparameterized network h^l = f(W^l h^{l-1}) + sigma_l z^l

/// Hidden values produced by fixed noise.
inline std::vector<Vector> reparam_forward(const NetworkParams& p, const Vector& state,
                                           const std::vector<Vector>& noise) {
  std::vector<Vector> hidden;
  const Vector* prev = &state;
  for (std::size_t i = 0; i + 1 < p.depth(); ++i) {
    hidden.push_back(softplus(p.weights[i] * *prev) + std::sqrt(p.layers[i].sigma_sq) * noise[i]);
    prev = &hidden.back();
  }
  return hidden;
}

/// Chain rule from an upstream gradient on h^{L-1} down to every hidden
/// layer's weights; the last layer's weight gradient is given directly.
inline std::vector<Matrix> reparam_backward(const NetworkParams& p, const Vector& state,
                                            const std::vector<Vector>& hidden, Vector upstream,
                                            Matrix last_layer_grad) {
  std::vector<Matrix> grads(p.depth());
  grads.back() = std::move(last_layer_grad);
  for (std::size_t i = p.depth() - 1; i-- > 0;) {
    const Vector& h_prev = i == 0 ? state : hidden[i - 1];
    const Vector s = (upstream.array() * softplus_derivative(p.weights[i] * h_prev).array()).matrix();
    grads[i] = s * h_prev.transpose();
    if (i > 0) upstream = p.weights[i].transpose() * s;
  }
  return grads;
}

/// grad_W log pi_L(h^{L-1}(noise; W, s), a).
inline std::vector<Matrix> reparam_gradient(const NetworkParams& p, const Vector& state,
                                            const std::vector<Vector>& noise, const Vector& action) {
  for (std::size_t i = 0; i + 1 < p.depth(); ++i)
    if (p.layers[i].kind != LayerKind::NormalSoftplus) throw ConfigError("hidden layers must be Gaussian");
  const auto hidden = reparam_forward(p, state, noise);
  const Vector& last = hidden.empty() ? state : hidden.back();
  const std::size_t L = p.depth() - 1;
  return reparam_backward(p, state, hidden, grad_logpi_input(p, L, last, action),
                          grad_logpi_params(p, L, last, action));
}

/// grad_W of the scalar output mean W^L h^{L-1}(noise; W, s).
inline std::vector<Matrix> reparam_output_mean_gradient(const NetworkParams& p, const Vector& state,
                                                        const std::vector<Vector>& noise) {
  const auto hidden = reparam_forward(p, state, noise);
  const Vector& last = hidden.empty() ? state : hidden.back();
  return reparam_backward(p, state, hidden, p.weights.back().row(0).transpose(), last.transpose());
}

inline void reparam_backprop_update(NetworkParams& p, TraceState& opt, const Vector& state, const Vector& action,
                                    double G, const std::vector<Vector>& noise, const LearnerConfig& cfg) {
  if (G == 0.0) return;
  auto grads = reparam_gradient(p, state, noise, action);
  for (auto& g : grads) g *= G;
  const auto alphas = annealed(cfg.alphas, opt.step_count, cfg.anneal);
  apply_update(p.weights, opt, grads, alphas, cfg.optimizer, cfg.adam);
}

}  // namespace mapprop

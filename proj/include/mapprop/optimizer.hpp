#pragma once

#include "mapprop/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace mapprop {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

enum class OptimizerKind { Adam, Sgd };

/// Eligibility traces plus optimizer moments, one matrix per layer.
struct TraceState {
  std::vector<Matrix> traces;
  std::vector<Matrix> adam_m;
  std::vector<Matrix> adam_v;
  std::int64_t step_count = 0;

  TraceState() = default;
  explicit TraceState(const NetworkParams& p) {
    for (const auto& w : p.weights) {
      traces.push_back(Matrix::Zero(w.rows(), w.cols()));
      adam_m.push_back(Matrix::Zero(w.rows(), w.cols()));
      adam_v.push_back(Matrix::Zero(w.rows(), w.cols()));
    }
  }

  void reset_traces() {
    for (auto& z : traces) z.setZero();
  }
};

/// Bias-corrected Adam deltas for an ascent step along `grads`.
inline std::vector<Matrix> adam_apply(TraceState& acc, std::span<const Matrix> grads,
                                      std::span<const double> alphas, const AdamConfig& cfg) {
  ++acc.step_count;
  const double t = static_cast<double>(acc.step_count);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  std::vector<Matrix> deltas;
  deltas.reserve(grads.size());
  for (std::size_t l = 0; l < grads.size(); ++l) {
    acc.adam_m[l] = cfg.beta1 * acc.adam_m[l] + (1.0 - cfg.beta1) * grads[l];
    acc.adam_v[l] = cfg.beta2 * acc.adam_v[l] + (1.0 - cfg.beta2) * grads[l].cwiseProduct(grads[l]);
    deltas.push_back(alphas[l] * (acc.adam_m[l] / c1).array() /
                     ((acc.adam_v[l] / c2).array().sqrt() + cfg.eps));
  }
  return deltas;
}

/// Applies one ascent step to `weights` with the chosen optimizer.
inline void apply_update(std::vector<Matrix>& weights, TraceState& acc, std::span<const Matrix> grads,
                         std::span<const double> alphas, OptimizerKind kind, const AdamConfig& cfg) {
  if (kind == OptimizerKind::Sgd) {
    ++acc.step_count;
    for (std::size_t l = 0; l < grads.size(); ++l) weights[l] += alphas[l] * grads[l];
    return;
  }
  const auto deltas = adam_apply(acc, grads, alphas, cfg);
  for (std::size_t l = 0; l < deltas.size(); ++l) weights[l] += deltas[l];
}

struct AnnealSchedule {
  bool linear = false;
  std::int64_t end_step = 0;
  double final_fraction = 1.0;
};

/// Linear ramp from `base` to final_fraction * base at end_step, flat after.
inline double anneal_alpha(double base, std::int64_t step, const AnnealSchedule& s) {
  if (!s.linear || s.end_step <= 0) return base;
  const double frac = std::min(1.0, static_cast<double>(std::max<std::int64_t>(step, 0)) /
                                        static_cast<double>(s.end_step));
  return base * (1.0 - frac * (1.0 - s.final_fraction));
}

inline std::vector<double> annealed(std::span<const double> base, std::int64_t step, const AnnealSchedule& s) {
  std::vector<double> out(base.begin(), base.end());
  for (auto& a : out) a = anneal_alpha(a, step, s);
  return out;
}

}  // namespace mapprop

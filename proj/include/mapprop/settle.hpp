#pragma once

// Energy minimization over the hidden layers with state and action clamped.

#include "mapprop/network.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mapprop {

struct SettleConfig {
  int n_steps = 20;
  double alpha_h_factor = 0.5;  // step size of layer l is alpha_h_factor * sigma_l^2
  bool sequential = false;      // Gauss-Seidel sweep instead of synchronous updates

  void validate() const {
    if (n_steps < 0) throw ConfigError("settle n_steps must be >= 0");
    if (!(alpha_h_factor > 0)) throw ConfigError("settle alpha_h_factor must be > 0");
  }
};

class SettleDivergence : public std::runtime_error {
 public:
  explicit SettleDivergence(int step)
      : std::runtime_error("energy settling diverged at step " + std::to_string(step)), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

namespace detail {

inline constexpr double kDivergenceBound = 1e8;

inline void check_finite(const std::vector<Vector>& hidden, int step) {
  for (const auto& h : hidden)
    if (!h.allFinite() || (h.size() > 0 && h.cwiseAbs().maxCoeff() > kDivergenceBound))
      throw SettleDivergence(step);
}

inline void settle_step(HiddenState& h, const NetworkParams& p, const SettleConfig& cfg, int step) {
  if (cfg.sequential) {
    for (std::size_t k = 0; k < h.hidden.size(); ++k) {
      const Vector g = grad_energy_layer(h, p, k);
      if (!g.allFinite()) throw SettleDivergence(step);
      h.hidden[k] -= cfg.alpha_h_factor * p.layers[k].sigma_sq * g;
    }
  } else {
    const auto grads = grad_energy_hidden(h, p);
    for (std::size_t k = 0; k < h.hidden.size(); ++k) {
      if (!grads[k].allFinite()) throw SettleDivergence(step);
      h.hidden[k] -= cfg.alpha_h_factor * p.layers[k].sigma_sq * grads[k];
    }
  }
  check_finite(h.hidden, step);
}

}  // namespace detail

/// N steps of gradient descent on the energy. Only `hidden` changes.
inline HiddenState settle(HiddenState h, const NetworkParams& p, const SettleConfig& cfg) {
  for (int n = 1; n <= cfg.n_steps; ++n) detail::settle_step(h, p, cfg, n);
  return h;
}

struct SettleTrace {
  HiddenState hidden;
  std::vector<double> energies;  // energy after each step
};

inline SettleTrace settle_trace(HiddenState h, const NetworkParams& p, const SettleConfig& cfg) {
  SettleTrace out;
  out.energies.reserve(static_cast<std::size_t>(cfg.n_steps));
  for (int n = 1; n <= cfg.n_steps; ++n) {
    detail::settle_step(h, p, cfg, n);
    out.energies.push_back(energy(h, p));
  }
  out.hidden = std::move(h);
  return out;
}

struct SettleResult {
  HiddenState hidden;
  bool converged = false;
  std::int64_t steps = 0;
  double grad_max = 0.0;
};

/// Iterates until the largest energy-gradient entry drops below `tol`.
/// Used by the oracle checks, not by training.
inline SettleResult settle_to_tolerance(HiddenState h, const NetworkParams& p, double alpha_h_factor,
                                        double tol, std::int64_t max_steps) {
  SettleResult r;
  for (r.steps = 0; r.steps < max_steps; ++r.steps) {
    const auto grads = grad_energy_hidden(h, p);
    r.grad_max = max_abs(grads);
    if (!std::isfinite(r.grad_max)) break;
    if (r.grad_max < tol) {
      r.converged = true;
      break;
    }
    for (std::size_t k = 0; k < h.hidden.size(); ++k) h.hidden[k] -= alpha_h_factor * p.layers[k].sigma_sq * grads[k];
  }
  r.hidden = std::move(h);
  return r;
}

}  // namespace mapprop

#pragma once

// Numeric checks of the unbiasedness, settled-equivalence, critic-ratio,
// energy-gradient and variance claims. Every check is deterministic given
// its seed and reports its measured errors as JSON.

#include "mapprop/learners.hpp"
#include "mapprop/settle.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace mapprop {

struct CheckReport {
  std::string name;
  bool passed = false;
  bool inconclusive = false;
  nlohmann::json details;

  nlohmann::json to_json() const {
    nlohmann::json j = details;
    j["check"] = name;
    j["passed"] = passed;
    j["inconclusive"] = inconclusive;
    return j;
  }
};

// ---------------------------------------------------------------------------
// Quadrature

struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;  // for the weight function exp(-x^2)
};

/// Golub-Welsch: nodes are eigenvalues of the Jacobi matrix of the
/// physicists' Hermite recurrence.
inline GaussHermite gauss_hermite(int n) {
  Matrix J = Matrix::Zero(n, n);
  for (int i = 1; i < n; ++i) J(i, i - 1) = J(i - 1, i) = std::sqrt(i / 2.0);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(J);
  GaussHermite gh;
  for (int i = 0; i < n; ++i) {
    gh.nodes.push_back(eig.eigenvalues()(i));
    const double v0 = eig.eigenvectors()(0, i);
    gh.weights.push_back(std::sqrt(std::numbers::pi) * v0 * v0);
  }
  return gh;
}

/// Nodes and probability weights of a tensor-product rule for the standard
/// normal in `dim` dimensions.
struct NormalGrid {
  std::vector<Vector> points;
  std::vector<double> weights;
};

inline NormalGrid normal_grid(int dim, int nodes_per_dim) {
  const auto gh = gauss_hermite(nodes_per_dim);
  NormalGrid g;
  std::vector<int> idx(static_cast<std::size_t>(dim), 0);
  while (true) {
    Vector z(dim);
    double w = 1.0;
    for (int d = 0; d < dim; ++d) {
      z(d) = std::sqrt(2.0) * gh.nodes[static_cast<std::size_t>(idx[static_cast<std::size_t>(d)])];
      w *= gh.weights[static_cast<std::size_t>(idx[static_cast<std::size_t>(d)])] / std::sqrt(std::numbers::pi);
    }
    g.points.push_back(std::move(z));
    g.weights.push_back(w);
    int d = 0;
    while (d < dim && ++idx[static_cast<std::size_t>(d)] == nodes_per_dim) idx[static_cast<std::size_t>(d++)] = 0;
    if (d == dim) break;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Helpers

namespace detail {

/// ||a - b||_inf / max(||a||_inf, ||b||_inf); zero when both vanish.
inline double rel_error(const Matrix& a, const Matrix& b) {
  const double scale = std::max(a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff());
  if (scale == 0.0) return 0.0;
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

inline double max_rel_error(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  double m = 0.0;
  for (std::size_t l = 0; l < a.size(); ++l) m = std::max(m, rel_error(a[l], b[l]));
  return m;
}

inline Vector random_normal(int n, Rng& rng) {
  std::normal_distribution<double> normal;
  Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = normal(rng);
  return v;
}

/// Random net with Gaussian hidden layers. Sizes are drawn up to the
/// given bounds; `output` picks the output kind.
inline NetworkParams random_gaussian_net(Rng& rng, int max_in, const std::vector<int>& max_widths, int max_out,
                                         LayerKind output) {
  std::uniform_int_distribution<int> in_d(1, max_in);
  std::uniform_real_distribution<double> var(0.2, 1.5);
  std::vector<int> widths;
  std::vector<double> vars;
  for (int w : max_widths) {
    widths.push_back(std::uniform_int_distribution<int>(1, w)(rng));
    vars.push_back(var(rng));
  }
  const int out_dim =
      output == LayerKind::SoftmaxOutput ? std::uniform_int_distribution<int>(2, std::max(2, max_out))(rng)
                                         : std::uniform_int_distribution<int>(1, max_out)(rng);
  const OutputSpec out{output, out_dim, var(rng), std::uniform_real_distribution<double>(0.5, 2.0)(rng)};
  return make_network(in_d(rng), widths, vars, out, rng);
}

/// Standardized hidden noise that reproduces `h` through h^l = f(W^l h^{l-1}) + sigma_l z^l.
inline std::vector<Vector> recover_noise(const NetworkParams& p, const HiddenState& h) {
  std::vector<Vector> z;
  for (std::size_t i = 0; i < h.hidden.size(); ++i)
    z.push_back((h.hidden[i] - softplus(p.weights[i] * h.layer_input(i))) / std::sqrt(p.layers[i].sigma_sq));
  return z;
}

/// Welford-free mean/standard-error accumulator over flattened gradients.
struct MeanAccumulator {
  Eigen::ArrayXd sum;
  Eigen::ArrayXd sum_sq;
  std::int64_t n = 0;

  void add(const Eigen::ArrayXd& x) {
    if (n == 0) {
      sum = Eigen::ArrayXd::Zero(x.size());
      sum_sq = Eigen::ArrayXd::Zero(x.size());
    }
    sum += x;
    sum_sq += x.square();
    ++n;
  }
  Eigen::ArrayXd mean() const { return sum / static_cast<double>(n); }
  Eigen::ArrayXd std_error() const {
    const double m = static_cast<double>(n);
    const Eigen::ArrayXd var = ((sum_sq - sum.square() / m) / (m - 1.0)).max(0.0);
    return (var / m).sqrt();
  }
};

inline Eigen::ArrayXd flatten(const std::vector<Matrix>& ms) {
  Eigen::Index n = 0;
  for (const auto& m : ms) n += m.size();
  Eigen::ArrayXd out(n);
  Eigen::Index k = 0;
  for (const auto& m : ms)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) out(k++) = m(i, j);
  return out;
}

inline double max_z(const Eigen::ArrayXd& a, const Eigen::ArrayXd& se_a, const Eigen::ArrayXd& b,
                    const Eigen::ArrayXd& se_b) {
  double z = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double se = std::sqrt(se_a(i) * se_a(i) + se_b(i) * se_b(i));
    const double diff = std::abs(a(i) - b(i));
    z = std::max(z, se > 0 ? diff / se : (diff > 0 ? INFINITY : 0.0));
  }
  return z;
}

inline nlohmann::json to_json(const Eigen::ArrayXd& a) { return std::vector<double>(a.data(), a.data() + a.size()); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Tiny net with exact marginal action probabilities

/// Input 2, one Gaussian hidden layer of 2 units, softmax over 2 actions.
/// Pr(A | S) is computed by tensor Gauss-Hermite quadrature over the hidden
/// noise, which is smooth enough to be exact to near machine precision.
struct TinyNet {
  NetworkParams params;
  NormalGrid grid;

  TinyNet(Rng& rng, double hidden_sigma_sq, int nodes_per_dim = 32) {
    params = make_network(2, {2}, {hidden_sigma_sq}, {LayerKind::SoftmaxOutput, 2, 1.0, 1.0}, rng);
    // Larger weights than the default init make the gradients easy to resolve.
    for (auto& w : params.weights) w *= 3.0;
    grid = normal_grid(2, nodes_per_dim);
  }

  /// Pr(a | s) under arbitrary weights of the same shape.
  static double action_probability(const NetworkParams& p, const NormalGrid& grid, const Vector& s,
                                   Eigen::Index a) {
    const Vector mu = softplus(p.weights[0] * s);
    const double sd = std::sqrt(p.layers[0].sigma_sq);
    const double T = p.layers[1].temperature;
    double total = 0.0;
    for (std::size_t i = 0; i < grid.points.size(); ++i) {
      const Vector h = mu + sd * grid.points[i];
      total += grid.weights[i] * softmax(T * (p.weights[1] * h))(a);
    }
    return total;
  }

  /// grad_W log Pr(a | s) by central differences of the quadrature value.
  std::vector<Matrix> grad_log_action_probability(const Vector& s, Eigen::Index a, double step = 1e-5) const {
    std::vector<Matrix> out;
    NetworkParams q = params;
    for (std::size_t l = 0; l < q.weights.size(); ++l) {
      Matrix g(q.weights[l].rows(), q.weights[l].cols());
      for (Eigen::Index i = 0; i < g.rows(); ++i)
        for (Eigen::Index j = 0; j < g.cols(); ++j) {
          const double w0 = q.weights[l](i, j);
          q.weights[l](i, j) = w0 + step;
          const double up = std::log(action_probability(q, grid, s, a));
          q.weights[l](i, j) = w0 - step;
          const double down = std::log(action_probability(q, grid, s, a));
          q.weights[l](i, j) = w0;
          g(i, j) = (up - down) / (2 * step);
        }
      out.push_back(std::move(g));
    }
    return out;
  }

  /// E[grad_{W^1} log pi_1 | s, a] by quadrature over the posterior.
  Matrix posterior_hidden_score(const Vector& s, Eigen::Index a) const {
    const Vector pre = params.weights[0] * s;
    const Vector mu = softplus(pre);
    const double sd = std::sqrt(params.layers[0].sigma_sq);
    const double T = params.layers[1].temperature;
    Matrix num = Matrix::Zero(params.weights[0].rows(), params.weights[0].cols());
    double den = 0.0;
    for (std::size_t i = 0; i < grid.points.size(); ++i) {
      const Vector h = mu + sd * grid.points[i];
      const double w = grid.weights[i] * softmax(T * (params.weights[1] * h))(a);
      num += w * grad_logpi_params(params, 0, s, h);
      den += w;
    }
    return num / den;
  }
};

// ---------------------------------------------------------------------------
// Checks

struct Theorem1Options {
  std::int64_t samples = 100000;
  double z_threshold = 5.0;
  double hidden_sigma_sq = 1.0;
  bool zero_reward = false;
};

/// E[G grad log Pr(A|S)] against E[G grad log pi_l] with G = r(a), at a
/// fixed state; then E[grad log pi_1 | s, a] from posterior resampling
/// against indicator-weighted forward samples. A decoupled estimator
/// (hidden values drawn independently of the action) is the negative control.
inline CheckReport check_theorem1(std::uint64_t seed, const Theorem1Options& opt = {}) {
  Rng rng(seed);
  TinyNet net(rng, opt.hidden_sigma_sq);
  const Vector s = detail::random_normal(2, rng);
  const Vector reward = opt.zero_reward ? Vector::Zero(2) : Vector{{1.0, -0.5}};
  const auto& p = net.params;
  std::vector<std::vector<Matrix>> exact;
  for (Eigen::Index a = 0; a < 2; ++a) exact.push_back(net.grad_log_action_probability(s, a));

  Rng stream_a(mix_seed(seed, 1)), stream_b(mix_seed(seed, 2)), stream_c(mix_seed(seed, 3));
  detail::MeanAccumulator marginal, per_layer, decoupled;
  for (std::int64_t i = 0; i < opt.samples; ++i) {
    const auto a = categorical_index(sample_forward(p, s, stream_a).action);
    auto g = exact[static_cast<std::size_t>(a)];
    for (auto& m : g) m *= reward(a);
    marginal.add(detail::flatten(g));

    const HiddenState h = sample_forward(p, s, stream_b);
    auto gl = grad_logpi_all(p, h);
    const double G = reward(categorical_index(h.action));
    for (auto& m : gl) m *= G;
    per_layer.add(detail::flatten(gl));

    HiddenState mixed = sample_forward(p, s, stream_c);
    const HiddenState other = sample_forward(p, s, stream_c);
    mixed.hidden = other.hidden;
    auto gd = grad_logpi_all(p, mixed);
    for (auto& m : gd) m *= reward(categorical_index(mixed.action));
    decoupled.add(detail::flatten(gd));
  }
  const double z = detail::max_z(marginal.mean(), marginal.std_error(), per_layer.mean(), per_layer.std_error());
  const double z_neg = detail::max_z(marginal.mean(), marginal.std_error(), decoupled.mean(), decoupled.std_error());

  // Conditional expectation of the hidden score given (s, a = 0): exact
  // posterior draws by rejection against pi_L(a | h) <= 1, against a ratio
  // estimator over unconditional forward samples.
  const Eigen::Index a0 = 0;
  Rng stream_d(mix_seed(seed, 4)), stream_e(mix_seed(seed, 5));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  detail::MeanAccumulator posterior;
  while (posterior.n < opt.samples) {
    const HiddenState h = sample_forward(p, s, stream_d);
    const double accept = softmax(p.layers[1].temperature * (p.weights[1] * h.hidden[0]))(a0);
    if (unif(stream_d) < accept) posterior.add(detail::flatten({grad_logpi_params(p, 0, s, h.hidden[0])}));
  }
  detail::MeanAccumulator hits;  // over all draws: indicator * score and indicator
  Eigen::Index width = 0;
  for (std::int64_t i = 0; i < opt.samples; ++i) {
    const HiddenState h = sample_forward(p, s, stream_e);
    const bool hit = categorical_index(h.action) == a0;
    const Eigen::ArrayXd g = detail::flatten({grad_logpi_params(p, 0, s, h.hidden[0])});
    width = g.size();
    Eigen::ArrayXd row(g.size() + 1);
    row << (hit ? g : Eigen::ArrayXd::Zero(g.size())), (hit ? 1.0 : 0.0);
    hits.add(row);
  }
  // Ratio estimator x/y with a delta-method standard error.
  const Eigen::ArrayXd m = hits.mean();
  const double ybar = m(width);
  const Eigen::ArrayXd ratio = m.head(width) / ybar;
  Eigen::ArrayXd ratio_se(width);
  {
    // Residuals x_i - ratio * y_i have mean zero; their spread gives the SE.
    detail::MeanAccumulator resid;
    Rng replay(mix_seed(seed, 5));
    for (std::int64_t i = 0; i < opt.samples; ++i) {
      const HiddenState h = sample_forward(p, s, replay);
      const bool hit = categorical_index(h.action) == a0;
      const Eigen::ArrayXd g = detail::flatten({grad_logpi_params(p, 0, s, h.hidden[0])});
      resid.add(hit ? Eigen::ArrayXd(g - ratio) : Eigen::ArrayXd::Zero(width));
    }
    const double n = static_cast<double>(opt.samples);
    const Eigen::ArrayXd var = (resid.sum_sq / n - (resid.sum / n).square()) * n / (n - 1.0);
    ratio_se = (var / n).sqrt() / ybar;
  }
  const double z_cond = detail::max_z(posterior.mean(), posterior.std_error(), ratio, ratio_se);
  const Eigen::ArrayXd quad = detail::flatten({net.posterior_hidden_score(s, a0)});

  CheckReport r;
  r.name = "theorem1";
  r.passed = z < opt.z_threshold && z_cond < opt.z_threshold && (opt.zero_reward || z_neg >= opt.z_threshold);
  r.details = {{"samples", opt.samples},
               {"max_z_score", z},
               {"conditional_max_z_score", z_cond},
               {"negative_control_max_z_score", z_neg},
               {"marginal_estimate", detail::to_json(marginal.mean())},
               {"per_layer_estimate", detail::to_json(per_layer.mean())},
               {"posterior_resample_estimate", detail::to_json(posterior.mean())},
               {"indicator_weighted_estimate", detail::to_json(ratio)},
               {"posterior_quadrature", detail::to_json(quad)},
               {"threshold", opt.z_threshold}};
  return r;
}

struct SettledInstance {
  NetworkParams params;
  HiddenState sampled;
  SettleResult settled;
};

namespace detail {

inline constexpr double kSettleTolerance = 1e-8;
inline constexpr double kSettleTarget = 1e-13;

inline Vector stack(const std::vector<Vector>& vs) {
  Eigen::Index n = 0;
  for (const auto& v : vs) n += v.size();
  Vector out(n);
  Eigen::Index k = 0;
  for (const auto& v : vs) {
    out.segment(k, v.size()) = v;
    k += v.size();
  }
  return out;
}

inline void add_stacked(HiddenState& h, const Vector& step, double scale) {
  Eigen::Index k = 0;
  for (auto& v : h.hidden) {
    v += scale * step.segment(k, v.size());
    k += v.size();
  }
}

}  // namespace detail

/// Energy minimization for the oracle checks: damped Newton steps with a
/// Hessian taken by central differences of the analytic gradient. Negative
/// or tiny curvature is flipped or floored so every step descends. Iterates
/// toward `target_tol` and reports convergence when the best state found
/// has gradient entries below `accept_tol`.
inline SettleResult settle_newton(HiddenState h, const NetworkParams& p, double accept_tol, double target_tol,
                                  int max_iter = 200) {
  constexpr double kStep = 1e-6;
  SettleResult best;
  best.grad_max = INFINITY;
  for (int it = 0; it <= max_iter; ++it) {
    const Vector g = detail::stack(grad_energy_hidden(h, p));
    const double gmax = g.cwiseAbs().maxCoeff();
    if (!std::isfinite(gmax)) break;
    if (gmax < best.grad_max) {
      best.grad_max = gmax;
      best.hidden = h;
      best.steps = it;
    }
    if (gmax < target_tol || it == max_iter) break;
    const Eigen::Index n = g.size();
    Matrix H(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      Vector e = Vector::Zero(n);
      e(j) = kStep;
      HiddenState up = h, down = h;
      detail::add_stacked(up, e, 1.0);
      detail::add_stacked(down, e, -1.0);
      H.col(j) = (detail::stack(grad_energy_hidden(up, p)) - detail::stack(grad_energy_hidden(down, p))) / (2 * kStep);
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (H + H.transpose()));
    const Vector lam = eig.eigenvalues().cwiseAbs().cwiseMax(1e-8);
    const Vector dir = -(eig.eigenvectors() * ((eig.eigenvectors().transpose() * g).array() / lam.array()).matrix());
    const double e0 = energy(h, p);
    double t = 1.0;
    HiddenState trial = h;
    bool accepted = false;
    for (int ls = 0; ls < 60 && !accepted; ++ls, t *= 0.5) {
      trial = h;
      detail::add_stacked(trial, dir, t);
      accepted = energy(trial, p) <= e0 + 1e-4 * t * g.dot(dir);
    }
    if (!accepted) {
      // Near the optimum energy differences drown in rounding; take the
      // full step while it still shrinks the gradient.
      trial = h;
      detail::add_stacked(trial, dir, 1.0);
      if (detail::stack(grad_energy_hidden(trial, p)).cwiseAbs().maxCoeff() >= gmax) break;
    }
    h = std::move(trial);
  }
  if (!std::isfinite(best.grad_max)) best.hidden = h;
  best.converged = best.grad_max < accept_tol;
  return best;
}

namespace detail {

inline SettledInstance settled_instance(NetworkParams p, Rng& rng) {
  SettledInstance inst;
  inst.sampled = sample_forward(p, random_normal(p.layers.front().in_dim, rng), rng);
  inst.settled = settle_newton(inst.sampled, p, kSettleTolerance, kSettleTarget);
  inst.params = std::move(p);
  return inst;
}

}  // namespace detail

/// Per-layer REINFORCE gradient at a state against reparameterized backprop
/// with the noise that reproduces that state.
inline double reinforce_vs_reparam_error(const NetworkParams& p, const HiddenState& h) {
  const auto noise = detail::recover_noise(p, h);
  return detail::max_rel_error(grad_logpi_all(p, h), reparam_gradient(p, h.state, noise, h.action));
}

struct Theorem2Options {
  int instances = 10;
  double tolerance = 1e-6;
  double negative_min = 1e-3;
  int max_in = 8;
  std::vector<int> max_widths{6, 4};
};

inline CheckReport check_theorem2(std::uint64_t seed, const Theorem2Options& opt = {}) {
  Rng rng(seed);
  double worst = 0.0;
  double weakest_negative = INFINITY;
  int inconclusive = 0;
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < opt.instances; ++i) {
    const auto kind = i % 2 == 0 ? LayerKind::SoftmaxOutput : LayerKind::LinearGaussianOutput;
    auto inst = detail::settled_instance(detail::random_gaussian_net(rng, opt.max_in, opt.max_widths, 4, kind), rng);
    const double neg = reinforce_vs_reparam_error(inst.params, inst.sampled);
    nlohmann::json row = {{"instance", i},
                          {"settle_steps", inst.settled.steps},
                          {"grad_max", inst.settled.grad_max},
                          {"negative_control_rel_error", neg}};
    if (!inst.settled.converged) {
      ++inconclusive;
      row["inconclusive"] = true;
    } else {
      const double err = reinforce_vs_reparam_error(inst.params, inst.settled.hidden);
      row["rel_error"] = err;
      worst = std::max(worst, err);
      weakest_negative = std::min(weakest_negative, neg);
    }
    rows.push_back(row);
  }
  CheckReport r;
  r.name = "theorem2";
  r.inconclusive = inconclusive > 0;
  r.passed = !r.inconclusive && worst < opt.tolerance && weakest_negative > opt.negative_min;
  r.details = {{"max_rel_error", worst},
               {"min_negative_control_error", weakest_negative},
               {"tolerance", opt.tolerance},
               {"inconclusive_instances", inconclusive},
               {"instances", rows}};
  return r;
}

struct Theorem3Result {
  double ratio = 0.0;      // <rhs, lhs> / <lhs, lhs>
  double expected = 0.0;   // 2 sigma_L^2
  double residual = 0.0;   // max rel. error of rhs against expected * lhs
};

/// lhs = (A* - mu)/(a - mu) grad log pi_l at a settled state,
/// rhs = -grad (A* - mu~)^2 through the reparameterized net.
inline Theorem3Result theorem3_ratio(const NetworkParams& p, const HiddenState& settled, double target) {
  const double mu = output_mean(p, settled);
  const double a = settled.action(0);
  auto lhs = grad_logpi_all(p, settled);
  for (auto& g : lhs) g *= (target - mu) / (a - mu);
  auto rhs = reparam_output_mean_gradient(p, settled.state, detail::recover_noise(p, settled));
  for (auto& g : rhs) g *= 2.0 * (target - mu);
  const Eigen::ArrayXd L = detail::flatten(lhs), R = detail::flatten(rhs);
  Theorem3Result out;
  out.expected = 2.0 * p.output().sigma_sq;
  const double ll = (L * L).sum();
  out.ratio = ll > 0 ? (R * L).sum() / ll : 0.0;
  std::vector<Matrix> scaled = lhs;
  for (auto& g : scaled) g *= out.expected;
  out.residual = detail::max_rel_error(rhs, scaled);
  return out;
}

struct Theorem3Options {
  int instances = 10;
  double tolerance = 1e-6;
  double guard = 1e-3;
};

inline CheckReport check_theorem3(std::uint64_t seed, const Theorem3Options& opt = {}) {
  Rng rng(seed);
  double worst = 0.0;
  int inconclusive = 0;
  int resampled = 0;
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < opt.instances; ++i) {
    SettledInstance inst;
    while (true) {
      inst = detail::settled_instance(
          detail::random_gaussian_net(rng, 8, {6, 4}, 1, LayerKind::LinearGaussianOutput), rng);
      const double gap = std::abs(inst.settled.hidden.action(0) - output_mean(inst.params, inst.settled.hidden));
      if (gap >= opt.guard * std::sqrt(inst.params.output().sigma_sq)) break;
      ++resampled;
    }
    const double target = std::normal_distribution<double>(0.0, 2.0)(rng);
    nlohmann::json row = {{"instance", i}, {"settle_steps", inst.settled.steps}};
    if (!inst.settled.converged) {
      ++inconclusive;
      row["inconclusive"] = true;
      rows.push_back(row);
      continue;
    }
    const auto res = theorem3_ratio(inst.params, inst.settled.hidden, target);
    const double err = std::max(std::abs(res.ratio / res.expected - 1.0), res.residual);
    worst = std::max(worst, err);
    row["ratio"] = res.ratio;
    row["expected_ratio"] = res.expected;
    row["rel_error"] = err;
    rows.push_back(row);
  }
  CheckReport r;
  r.name = "theorem3";
  r.inconclusive = inconclusive > 0;
  r.passed = !r.inconclusive && worst < opt.tolerance;
  r.details = {{"max_rel_error", worst},
               {"tolerance", opt.tolerance},
               {"resampled_for_guard", resampled},
               {"inconclusive_instances", inconclusive},
               {"instances", rows}};
  return r;
}

/// Central differences of the joint log-density sum_l log pi_l w.r.t. every
/// hidden value.
inline std::vector<Vector> numeric_grad_log_joint(const NetworkParams& p, HiddenState h, double step = 1e-5) {
  std::vector<Vector> out;
  for (std::size_t k = 0; k < h.hidden.size(); ++k) {
    Vector g(h.hidden[k].size());
    for (Eigen::Index j = 0; j < g.size(); ++j) {
      const double x0 = h.hidden[k](j);
      h.hidden[k](j) = x0 + step;
      const double up = -energy(h, p);
      h.hidden[k](j) = x0 - step;
      const double down = -energy(h, p);
      h.hidden[k](j) = x0;
      g(j) = (up - down) / (2 * step);
    }
    out.push_back(std::move(g));
  }
  return out;
}

/// The two-term decomposition: the layer's own density plus the density of
/// the layer above. `drop_upper` omits the second term.
inline std::vector<Vector> decomposed_grad_log_joint(const NetworkParams& p, const HiddenState& h,
                                                     bool drop_upper = false) {
  std::vector<Vector> out;
  for (std::size_t k = 0; k < h.hidden.size(); ++k) {
    Vector g = grad_logpi_output(p.layers[k], p.weights[k], h.layer_input(k), h.hidden[k]);
    if (!drop_upper) g += grad_logpi_input(p, k + 1, h.hidden[k], h.layer_output(k + 1));
    out.push_back(std::move(g));
  }
  return out;
}

struct GradDecompositionOptions {
  int instances = 50;
  double tolerance = 1e-6;
  double negative_min = 1e-3;
};

inline CheckReport check_grad_decomposition(std::uint64_t seed, const GradDecompositionOptions& opt = {}) {
  Rng rng(seed);
  double worst = 0.0;
  double weakest_negative = INFINITY;
  auto vec_rel = [](const std::vector<Vector>& a, const std::vector<Vector>& b) {
    double m = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) m = std::max(m, detail::rel_error(a[k], b[k]));
    return m;
  };
  for (int i = 0; i < opt.instances; ++i) {
    const auto kind = i % 2 == 0 ? LayerKind::SoftmaxOutput : LayerKind::LinearGaussianOutput;
    const auto p = detail::random_gaussian_net(rng, 6, {5, 4}, 3, kind);
    const HiddenState h = sample_forward(p, detail::random_normal(p.layers.front().in_dim, rng), rng);
    const auto numeric = numeric_grad_log_joint(p, h);
    worst = std::max(worst, vec_rel(numeric, decomposed_grad_log_joint(p, h)));
    weakest_negative = std::min(weakest_negative, vec_rel(numeric, decomposed_grad_log_joint(p, h, true)));
  }
  CheckReport r;
  r.name = "graddecomp";
  r.passed = worst < opt.tolerance && weakest_negative > opt.negative_min;
  r.details = {{"instances", opt.instances},
               {"max_rel_error", worst},
               {"min_negative_control_error", weakest_negative},
               {"tolerance", opt.tolerance}};
  return r;
}

struct VarianceOptions {
  std::int64_t samples = 100000;
  double se_multiple = 3.0;
  double hidden_sigma_sq = 1.0;
  bool zero_reward = false;
};

/// Per component of the hidden-layer gradient: variance of
/// G * E[grad log pi_1 | S, A] (exact, by quadrature) against variance of
/// G * grad log pi_1, from the same samples. States are drawn from a small
/// fixed set. The negative control adds independent noise to the
/// conditional estimator and must fail the inequality.
inline CheckReport check_variance_reduction(std::uint64_t seed, const VarianceOptions& opt = {}) {
  Rng rng(seed);
  TinyNet net(rng, opt.hidden_sigma_sq);
  const auto& p = net.params;
  constexpr int kStates = 4;
  std::vector<Vector> states;
  Matrix reward(kStates, 2);
  std::vector<std::array<Matrix, 2>> cond;
  std::normal_distribution<double> normal;
  for (int i = 0; i < kStates; ++i) {
    states.push_back(detail::random_normal(2, rng));
    for (int a = 0; a < 2; ++a) reward(i, a) = opt.zero_reward ? 0.0 : normal(rng);
    cond.push_back({net.posterior_hidden_score(states.back(), 0), net.posterior_hidden_score(states.back(), 1)});
  }
  std::uniform_int_distribution<int> pick(0, kStates - 1);
  const Eigen::Index n_comp = p.weights[0].size();
  std::vector<Eigen::ArrayXd> plain, conditional;
  plain.reserve(static_cast<std::size_t>(opt.samples));
  conditional.reserve(static_cast<std::size_t>(opt.samples));
  for (std::int64_t i = 0; i < opt.samples; ++i) {
    const int si = pick(rng);
    const HiddenState h = sample_forward(p, states[static_cast<std::size_t>(si)], rng);
    const auto a = categorical_index(h.action);
    const double G = reward(si, a);
    plain.push_back(detail::flatten({G * grad_logpi_params(p, 0, h.state, h.hidden[0])}));
    conditional.push_back(detail::flatten({G * cond[static_cast<std::size_t>(si)][static_cast<std::size_t>(a)]}));
  }

  struct Comparison {
    Eigen::ArrayXd var_plain, var_cond, se;
  };
  auto compare = [&](const std::vector<Eigen::ArrayXd>& xs, const std::vector<Eigen::ArrayXd>& ys) {
    const double n = static_cast<double>(xs.size());
    Eigen::ArrayXd mx = Eigen::ArrayXd::Zero(n_comp), my = Eigen::ArrayXd::Zero(n_comp);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      mx += xs[i];
      my += ys[i];
    }
    mx /= n;
    my /= n;
    // d_i = (x_i - mx)^2 - (y_i - my)^2 estimates var(x) - var(y); its
    // spread gives the standard error of the paired variance difference.
    Eigen::ArrayXd sx = Eigen::ArrayXd::Zero(n_comp), sy = sx, sd = sx, sd2 = sx;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const Eigen::ArrayXd dx = (xs[i] - mx).square(), dy = (ys[i] - my).square();
      sx += dx;
      sy += dy;
      sd += dx - dy;
      sd2 += (dx - dy).square();
    }
    Comparison c;
    c.var_plain = sx / (n - 1);
    c.var_cond = sy / (n - 1);
    const Eigen::ArrayXd var_d = ((sd2 - sd.square() / n) / (n - 1)).max(0.0);
    c.se = (var_d / n).sqrt();
    return c;
  };

  const auto c = compare(plain, conditional);
  const bool ok = (c.var_cond <= c.var_plain + opt.se_multiple * c.se).all();
  const bool strict = (c.var_cond + opt.se_multiple * c.se < c.var_plain).all();

  Rng noise_rng(mix_seed(seed, 7));
  std::vector<Eigen::ArrayXd> inflated = conditional;
  const Eigen::ArrayXd noise_sd = 2.0 * c.var_plain.sqrt();
  for (auto& y : inflated)
    for (Eigen::Index j = 0; j < y.size(); ++j) y(j) += noise_sd(j) * normal(noise_rng);
  const auto cn = compare(plain, inflated);
  const bool negative_fails = opt.zero_reward || !(cn.var_cond <= cn.var_plain + opt.se_multiple * cn.se).all();

  const double total_plain = c.var_plain.sum(), total_cond = c.var_cond.sum();
  CheckReport r;
  r.name = "variance";
  r.passed = ok && negative_fails;
  r.details = {{"samples", opt.samples},
               {"variance_plain", detail::to_json(c.var_plain)},
               {"variance_conditional", detail::to_json(c.var_cond)},
               {"difference_standard_error", detail::to_json(c.se)},
               {"reduction_factor", total_cond > 0 ? total_plain / total_cond : (total_plain > 0 ? INFINITY : 1.0)},
               {"strict_reduction", strict},
               {"negative_control_fails", negative_fails}};
  return r;
}

/// Runs one named check, or all of them for "all".
inline std::vector<CheckReport> run_checks(const std::string& which, std::uint64_t seed) {
  std::vector<CheckReport> out;
  const bool all = which == "all";
  if (all || which == "theorem1") out.push_back(check_theorem1(seed));
  if (all || which == "theorem2") out.push_back(check_theorem2(seed));
  if (all || which == "theorem3") out.push_back(check_theorem3(seed));
  if (all || which == "graddecomp") out.push_back(check_grad_decomposition(seed));
  if (all || which == "variance") out.push_back(check_variance_reduction(seed));
  if (out.empty()) throw ConfigError("unknown check '" + which + "'");
  return out;
}

}  // namespace mapprop

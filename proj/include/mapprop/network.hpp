#pragma once

// Multi-layer networks of stochastic units. Layer i (0-based) maps H^i to
// H^{i+1}; H^0 is the observed state and the last layer emits the action.
// Hidden layers are Gaussian around softplus(W h); the output layer is
// either a tempered softmax over categories or a linear Gaussian.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mapprop {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Rng = std::mt19937_64;

/// Inconsistent dimensions or invalid hyperparameters.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A density was requested for a layer with zero variance.
class DensityError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

enum class LayerKind { NormalSoftplus, SoftmaxOutput, LinearGaussianOutput };

struct LayerSpec {
  LayerKind kind = LayerKind::NormalSoftplus;
  int in_dim = 1;
  int out_dim = 1;
  double sigma_sq = 1.0;     // unused by SoftmaxOutput
  double temperature = 1.0;  // SoftmaxOutput only

  bool gaussian() const { return kind != LayerKind::SoftmaxOutput; }
};

struct NetworkParams {
  std::vector<LayerSpec> layers;
  std::vector<Matrix> weights;  // weights[i] is out_dim x in_dim of layers[i]

  std::size_t depth() const { return layers.size(); }
  std::size_t hidden_count() const { return layers.empty() ? 0 : layers.size() - 1; }
  const LayerSpec& output() const { return layers.back(); }

  void validate() const {
    if (layers.empty()) throw ConfigError("network has no layers");
    if (weights.size() != layers.size()) throw ConfigError("weights/layers count mismatch");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& spec = layers[i];
      if (spec.in_dim <= 0 || spec.out_dim <= 0) throw ConfigError("layer dims must be positive");
      if (i > 0 && layers[i - 1].out_dim != spec.in_dim)
        throw ConfigError("layer " + std::to_string(i) + " input does not match previous output");
      if (i + 1 < layers.size() && spec.kind != LayerKind::NormalSoftplus)
        throw ConfigError("only the last layer may be an output kind");
      if (weights[i].rows() != spec.out_dim || weights[i].cols() != spec.in_dim)
        throw ConfigError("weight shape mismatch at layer " + std::to_string(i));
      if (!weights[i].allFinite()) throw ConfigError("non-finite weights");
      if (spec.gaussian() && spec.sigma_sq < 0) throw ConfigError("negative variance");
      if (!spec.gaussian() && spec.temperature <= 0) throw ConfigError("temperature must be positive");
    }
  }
};

/// Values of every layer for one time step. For a SoftmaxOutput network the
/// action is stored one-hot so that every layer value is a real vector.
struct HiddenState {
  Vector state;
  std::vector<Vector> hidden;  // H^1 .. H^{L-1}
  Vector action;

  const Vector& layer_input(std::size_t i) const { return i == 0 ? state : hidden[i - 1]; }
  const Vector& layer_output(std::size_t i) const {
    return i == hidden.size() ? action : hidden[i];
  }
};

inline Vector one_hot(Eigen::Index index, Eigen::Index n) {
  Vector v = Vector::Zero(n);
  v(index) = 1.0;
  return v;
}

inline Eigen::Index categorical_index(const Vector& action) {
  Eigen::Index idx = 0;
  action.maxCoeff(&idx);
  return idx;
}

// ---------------------------------------------------------------------------
// Elementwise helpers

inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Vector softplus(const Vector& x) { return x.unaryExpr([](double v) { return softplus(v); }); }
inline Vector softplus_derivative(const Vector& x) {
  return x.unaryExpr([](double v) { return sigmoid(v); });
}

inline double log_sum_exp(const Vector& x) {
  const double m = x.maxCoeff();
  return m + std::log((x.array() - m).exp().sum());
}

inline Vector log_softmax(const Vector& x) { return x.array() - log_sum_exp(x); }
inline Vector softmax(const Vector& x) { return log_softmax(x).array().exp(); }

// ---------------------------------------------------------------------------
// Construction

/// Uniform(+-sqrt(6/(fan_in+fan_out))) entries.
inline Matrix glorot_uniform(int rows, int cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / (rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = dist(rng);
  return m;
}

struct OutputSpec {
  LayerKind kind = LayerKind::SoftmaxOutput;
  int dim = 2;
  double sigma_sq = 1.0;
  double temperature = 1.0;
};

/// Softplus-Gaussian hidden layers of the given widths followed by `out`.
inline NetworkParams make_network(int in_dim, const std::vector<int>& widths,
                                  const std::vector<double>& hidden_sigma_sq, const OutputSpec& out,
                                  Rng& rng) {
  if (widths.size() != hidden_sigma_sq.size())
    throw ConfigError("need one variance per hidden layer");
  if (out.kind == LayerKind::NormalSoftplus) throw ConfigError("output kind must be an output layer");
  NetworkParams net;
  int prev = in_dim;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    net.layers.push_back({LayerKind::NormalSoftplus, prev, widths[i], hidden_sigma_sq[i], 1.0});
    prev = widths[i];
  }
  net.layers.push_back({out.kind, prev, out.dim, out.sigma_sq, out.temperature});
  for (const auto& spec : net.layers) net.weights.push_back(glorot_uniform(spec.out_dim, spec.in_dim, rng));
  net.validate();
  return net;
}

// ---------------------------------------------------------------------------
// Per-layer densities and scores

/// Conditional mean of a Gaussian layer, or category probabilities of a
/// softmax layer.
inline Vector layer_mean(const LayerSpec& spec, const Matrix& w, const Vector& h_prev) {
  const Vector pre = w * h_prev;
  switch (spec.kind) {
    case LayerKind::NormalSoftplus: return softplus(pre);
    case LayerKind::LinearGaussianOutput: return pre;
    case LayerKind::SoftmaxOutput: return softmax(spec.temperature * pre);
  }
  return pre;
}

namespace detail {

inline void check_dims(const LayerSpec& spec, const Matrix& w, const Vector& h_prev, const Vector& out) {
  if (h_prev.size() != spec.in_dim || out.size() != spec.out_dim || w.rows() != spec.out_dim ||
      w.cols() != spec.in_dim)
    throw ConfigError("dimension mismatch in layer evaluation");
}

inline void require_density(const LayerSpec& spec) {
  if (spec.gaussian() && !(spec.sigma_sq > 0))
    throw DensityError("layer variance is zero; density undefined");
}

}  // namespace detail

inline double log_pi_layer(const LayerSpec& spec, const Matrix& w, const Vector& h_prev, const Vector& out) {
  detail::check_dims(spec, w, h_prev, out);
  detail::require_density(spec);
  const Vector pre = w * h_prev;
  if (spec.kind == LayerKind::SoftmaxOutput) return out.dot(log_softmax(spec.temperature * pre));
  const Vector mu = spec.kind == LayerKind::NormalSoftplus ? softplus(pre) : pre;
  const double n = static_cast<double>(spec.out_dim);
  return -(out - mu).squaredNorm() / (2.0 * spec.sigma_sq) -
         0.5 * n * std::log(2.0 * std::numbers::pi * spec.sigma_sq);
}

/// d log pi / d(W h_prev): the per-unit signal that both parameter and
/// input gradients are built from.
inline Vector layer_score(const LayerSpec& spec, const Matrix& w, const Vector& h_prev, const Vector& out) {
  detail::check_dims(spec, w, h_prev, out);
  detail::require_density(spec);
  const Vector pre = w * h_prev;
  switch (spec.kind) {
    case LayerKind::NormalSoftplus:
      return ((out - softplus(pre)).array() * softplus_derivative(pre).array()).matrix() / spec.sigma_sq;
    case LayerKind::LinearGaussianOutput: return (out - pre) / spec.sigma_sq;
    case LayerKind::SoftmaxOutput: return spec.temperature * (out - softmax(spec.temperature * pre));
  }
  return Vector();
}

inline Matrix grad_logpi_params(const LayerSpec& spec, const Matrix& w, const Vector& h_prev,
                                const Vector& out) {
  return layer_score(spec, w, h_prev, out) * h_prev.transpose();
}

inline Vector grad_logpi_input(const LayerSpec& spec, const Matrix& w, const Vector& h_prev,
                               const Vector& out) {
  return w.transpose() * layer_score(spec, w, h_prev, out);
}

/// Gradient w.r.t. the layer's own value; Gaussian layers only.
inline Vector grad_logpi_output(const LayerSpec& spec, const Matrix& w, const Vector& h_prev,
                                const Vector& out) {
  detail::check_dims(spec, w, h_prev, out);
  detail::require_density(spec);
  if (!spec.gaussian()) throw DensityError("categorical layer has no output gradient");
  return -(out - layer_mean(spec, w, h_prev)) / spec.sigma_sq;
}

inline double log_pi_layer(const NetworkParams& p, std::size_t i, const Vector& h_prev, const Vector& out) {
  return log_pi_layer(p.layers[i], p.weights[i], h_prev, out);
}
inline Matrix grad_logpi_params(const NetworkParams& p, std::size_t i, const Vector& h_prev,
                                const Vector& out) {
  return grad_logpi_params(p.layers[i], p.weights[i], h_prev, out);
}
inline Vector grad_logpi_input(const NetworkParams& p, std::size_t i, const Vector& h_prev,
                               const Vector& out) {
  return grad_logpi_input(p.layers[i], p.weights[i], h_prev, out);
}

/// Per-layer REINFORCE gradients at the given layer values.
inline std::vector<Matrix> grad_logpi_all(const NetworkParams& p, const HiddenState& h) {
  std::vector<Matrix> grads;
  grads.reserve(p.depth());
  for (std::size_t i = 0; i < p.depth(); ++i)
    grads.push_back(grad_logpi_params(p, i, h.layer_input(i), h.layer_output(i)));
  return grads;
}

/// SplitMix64 finalizer, for deriving independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Sampling

/// Per hidden layer, 1 where the unit explores and 0 where it emits its mean.
using ExploreMask = std::vector<Eigen::ArrayXd>;

struct ForwardSample {
  HiddenState values;
  std::vector<Vector> noise;  // standard-normal draws of each hidden layer
};

inline ForwardSample sample_forward_recorded(const NetworkParams& p, const Vector& state, Rng& rng,
                                             const ExploreMask* mask = nullptr) {
  if (p.layers.empty() || state.size() != p.layers.front().in_dim)
    throw ConfigError("state dimension does not match the first layer");
  std::normal_distribution<double> normal;
  ForwardSample out;
  out.values.state = state;
  const Vector* prev = &out.values.state;
  for (std::size_t i = 0; i + 1 < p.depth(); ++i) {
    const auto& spec = p.layers[i];
    Vector zeta(spec.out_dim);
    for (Eigen::Index j = 0; j < zeta.size(); ++j) zeta(j) = normal(rng);
    if (mask != nullptr) zeta.array() *= (*mask)[i];
    out.values.hidden.push_back(layer_mean(spec, p.weights[i], *prev) + std::sqrt(spec.sigma_sq) * zeta);
    out.noise.push_back(std::move(zeta));
    prev = &out.values.hidden.back();
  }
  const auto& spec = p.output();
  const Vector mean = layer_mean(spec, p.weights.back(), *prev);
  if (spec.kind == LayerKind::SoftmaxOutput) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = unif(rng);
    double acc = 0.0;
    Eigen::Index pick = mean.size() - 1;
    for (Eigen::Index a = 0; a < mean.size(); ++a) {
      acc += mean(a);
      if (u < acc) {
        pick = a;
        break;
      }
    }
    out.values.action = one_hot(pick, mean.size());
  } else {
    Vector zeta(spec.out_dim);
    for (Eigen::Index j = 0; j < zeta.size(); ++j) zeta(j) = normal(rng);
    out.values.action = mean + std::sqrt(spec.sigma_sq) * zeta;
  }
  return out;
}

inline HiddenState sample_forward(const NetworkParams& p, const Vector& state, Rng& rng,
                                  const ExploreMask* mask = nullptr) {
  return sample_forward_recorded(p, state, rng, mask).values;
}

/// Each hidden unit independently stops exploring with probability `p_disable`.
inline ExploreMask draw_explore_mask(const NetworkParams& p, double p_disable, Rng& rng) {
  std::bernoulli_distribution off(p_disable);
  ExploreMask mask;
  for (std::size_t i = 0; i + 1 < p.depth(); ++i) {
    Eigen::ArrayXd m(p.layers[i].out_dim);
    for (Eigen::Index j = 0; j < m.size(); ++j) m(j) = off(rng) ? 0.0 : 1.0;
    mask.push_back(std::move(m));
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Energy

/// -sum_l log pi_l, i.e. -log Pr(H, A | S). This differs from
/// -log Pr(H | S, A) by log Pr(A | S), which does not depend on H, so
/// gradients w.r.t. hidden values and energy differences are exact.
inline double energy(const HiddenState& h, const NetworkParams& p) {
  double total = 0.0;
  for (std::size_t i = 0; i < p.depth(); ++i) total -= log_pi_layer(p, i, h.layer_input(i), h.layer_output(i));
  return total;
}

/// Energy gradient for hidden layer `k` (0-based index into h.hidden).
inline Vector grad_energy_layer(const HiddenState& h, const NetworkParams& p, std::size_t k) {
  const auto& own = p.layers[k];
  const Vector from_below = grad_logpi_output(own, p.weights[k], h.layer_input(k), h.hidden[k]);
  const Vector from_above = grad_logpi_input(p, k + 1, h.hidden[k], h.layer_output(k + 1));
  return -(from_below + from_above);
}

/// All hidden-layer energy gradients, each read from the same snapshot.
inline std::vector<Vector> grad_energy_hidden(const HiddenState& h, const NetworkParams& p) {
  const std::size_t hidden = h.hidden.size();
  std::vector<Vector> grads(hidden);
  if (hidden == 0) return grads;
  // Pre-activation of every layer once; scores of layers 1..L-1 feed back.
  std::vector<Vector> scores(p.depth());
  for (std::size_t i = 0; i < p.depth(); ++i) {
    const auto& spec = p.layers[i];
    detail::require_density(spec);
    const Vector pre = p.weights[i] * h.layer_input(i);
    const Vector& out = h.layer_output(i);
    switch (spec.kind) {
      case LayerKind::NormalSoftplus: {
        const Vector e = out - softplus(pre);
        if (i < hidden) grads[i] = e / spec.sigma_sq;
        scores[i] = (e.array() * softplus_derivative(pre).array()).matrix() / spec.sigma_sq;
        break;
      }
      case LayerKind::LinearGaussianOutput: scores[i] = (out - pre) / spec.sigma_sq; break;
      case LayerKind::SoftmaxOutput:
        scores[i] = spec.temperature * (out - softmax(spec.temperature * pre));
        break;
    }
  }
  for (std::size_t k = 0; k < hidden; ++k) grads[k].noalias() -= p.weights[k + 1].transpose() * scores[k + 1];
  return grads;
}

inline double max_abs(const std::vector<Vector>& vs) {
  double m = 0.0;
  for (const auto& v : vs)
    if (v.size() > 0) m = std::max(m, v.cwiseAbs().maxCoeff());
  return m;
}

}  // namespace mapprop

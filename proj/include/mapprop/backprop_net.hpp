#pragma once

// Deterministic softplus MLP trained by backprop. Used for the baseline
// agents and for the ANN critic paired with REINFORCE-trained teams.

#include "mapprop/network.hpp"
#include "mapprop/optimizer.hpp"

#include <cmath>
#include <optional>
#include <vector>

namespace mapprop {

class DenseNet {
 public:
  struct Cache {
    std::vector<Vector> inputs;  // input of each layer
    std::vector<Vector> pre;     // pre-activation of each layer
  };

  DenseNet() = default;
  DenseNet(int in_dim, const std::vector<int>& widths, int out_dim, Rng& rng) {
    int prev = in_dim;
    for (int w : widths) {
      weights_.push_back(glorot_uniform(w, prev, rng));
      prev = w;
    }
    weights_.push_back(glorot_uniform(out_dim, prev, rng));
  }

  /// Linear output of the last layer; hidden layers use softplus.
  Vector forward(const Vector& x, Cache* cache = nullptr) const {
    if (x.size() != weights_.front().cols()) throw ConfigError("DenseNet input dimension mismatch");
    Vector h = x;
    if (cache) {
      cache->inputs.clear();
      cache->pre.clear();
    }
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      Vector pre = weights_[i] * h;
      if (cache) {
        cache->inputs.push_back(h);
        cache->pre.push_back(pre);
      }
      h = i + 1 < weights_.size() ? softplus(pre) : pre;
    }
    return h;
  }

  /// Weight gradients given d(objective)/d(output).
  std::vector<Matrix> backward(const Cache& cache, const Vector& grad_out) const {
    std::vector<Matrix> grads(weights_.size());
    Vector s = grad_out;
    for (std::size_t i = weights_.size(); i-- > 0;) {
      grads[i] = s * cache.inputs[i].transpose();
      if (i > 0) s = ((weights_[i].transpose() * s).array() * softplus_derivative(cache.pre[i - 1]).array()).matrix();
    }
    return grads;
  }

  std::vector<Matrix>& weights() { return weights_; }
  const std::vector<Matrix>& weights() const { return weights_; }

 private:
  std::vector<Matrix> weights_;
};

inline TraceState make_trace_state(const DenseNet& net) {
  NetworkParams shape;
  shape.weights = net.weights();
  return TraceState(shape);
}

/// Output head of an ANN policy.
struct PolicyHead {
  LayerKind kind = LayerKind::SoftmaxOutput;  // or LinearGaussianOutput
  double sigma_sq = 1.0;
  double temperature = 1.0;
};

inline Vector head_probabilities(const PolicyHead& head, const Vector& out) {
  return softmax(head.temperature * out);
}

inline Vector sample_head(const PolicyHead& head, const Vector& out, Rng& rng) {
  if (head.kind == LayerKind::SoftmaxOutput) {
    const Vector p = head_probabilities(head, out);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = unif(rng);
    double acc = 0.0;
    for (Eigen::Index a = 0; a < p.size(); ++a) {
      acc += p(a);
      if (u < acc) return one_hot(a, p.size());
    }
    return one_hot(p.size() - 1, p.size());
  }
  std::normal_distribution<double> normal;
  Vector a(out.size());
  for (Eigen::Index j = 0; j < a.size(); ++j) a(j) = out(j) + std::sqrt(head.sigma_sq) * normal(rng);
  return a;
}

inline double head_log_prob(const PolicyHead& head, const Vector& out, const Vector& action) {
  if (head.kind == LayerKind::SoftmaxOutput) return action.dot(log_softmax(head.temperature * out));
  return -(action - out).squaredNorm() / (2 * head.sigma_sq) -
         0.5 * static_cast<double>(out.size()) * std::log(2 * std::numbers::pi * head.sigma_sq);
}

/// d log pi(action) / d out.
inline Vector head_score(const PolicyHead& head, const Vector& out, const Vector& action) {
  if (head.kind == LayerKind::SoftmaxOutput)
    return head.temperature * (action - head_probabilities(head, out));
  return (action - out) / head.sigma_sq;
}

/// d entropy / d out; zero for a fixed-variance Gaussian.
inline Vector head_entropy_gradient(const PolicyHead& head, const Vector& out) {
  if (head.kind != LayerKind::SoftmaxOutput) return Vector::Zero(out.size());
  const Vector logp = log_softmax(head.temperature * out);
  const Vector p = logp.array().exp();
  const double entropy = -p.dot(logp);
  return -head.temperature * (p.array() * (logp.array() + entropy)).matrix();
}

inline double head_entropy(const PolicyHead& head, const Vector& out) {
  if (head.kind != LayerKind::SoftmaxOutput)
    return 0.5 * static_cast<double>(out.size()) * (1.0 + std::log(2 * std::numbers::pi * head.sigma_sq));
  const Vector logp = log_softmax(head.temperature * out);
  return -logp.array().exp().matrix().dot(logp);
}

}  // namespace mapprop

#pragma once

// Central finite differences against every analytic gradient in the
// library, on random instances. Shared by the unit tests and the
// acceptance runner.

#include "mapprop/agents.hpp"
#include "mapprop/backprop_net.hpp"
#include "mapprop/learners.hpp"
#include "mapprop/network.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace mapprop::testing {

inline constexpr double kFdStep = 1e-5;
inline constexpr double kMinResolvable = 1e-3;

inline Matrix fd_matrix(const std::function<double(const Matrix&)>& f, Matrix x, double h = kFdStep) {
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x(i);
    x(i) = keep + h;
    const double up = f(x);
    x(i) = keep - h;
    const double down = f(x);
    x(i) = keep;
    g(i) = (up - down) / (2 * h);
  }
  return g;
}

inline double rel_err(const Matrix& a, const Matrix& b) {
  const double scale = std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), 1e-12});
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

inline Vector randn(int n, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Vector v(n);
  for (int i = 0; i < n; ++i) v(i) = normal(rng);
  return v;
}

inline Matrix randm(int rows, int cols, Rng& rng) {
  std::normal_distribution<double> normal;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = normal(rng);
  return m;
}

inline LayerKind kind_for(int i) {
  switch (i % 3) {
    case 0: return LayerKind::NormalSoftplus;
    case 1: return LayerKind::LinearGaussianOutput;
    default: return LayerKind::SoftmaxOutput;
  }
}

inline Vector random_output(const LayerSpec& spec, Rng& rng) {
  if (spec.kind == LayerKind::SoftmaxOutput)
    return one_hot(std::uniform_int_distribution<int>(0, spec.out_dim - 1)(rng), spec.out_dim);
  return randn(spec.out_dim, rng);
}

inline LayerSpec random_layer(LayerKind kind, Rng& rng) {
  std::uniform_int_distribution<int> dim(1, 6);
  std::uniform_real_distribution<double> var(0.1, 2.0);
  LayerSpec s{kind, dim(rng), dim(rng), var(rng), var(rng)};
  if (kind == LayerKind::SoftmaxOutput) s.out_dim = std::max(2, s.out_dim);
  return s;
}

/// Net with Gaussian hidden layers and a random output kind.
inline NetworkParams random_net(Rng& rng, LayerKind output) {
  std::uniform_int_distribution<int> dim(1, 5);
  std::uniform_real_distribution<double> var(0.2, 1.5);
  std::vector<int> widths;
  std::vector<double> vars;
  const int depth = std::uniform_int_distribution<int>(1, 3)(rng);
  for (int i = 0; i < depth; ++i) {
    widths.push_back(dim(rng));
    vars.push_back(var(rng));
  }
  OutputSpec out{output, output == LayerKind::SoftmaxOutput ? dim(rng) + 1 : dim(rng), var(rng), var(rng)};
  auto p = make_network(dim(rng), widths, vars, out, rng);
  for (auto& w : p.weights) w *= 1.5;
  return p;
}

/// Max relative error per gradient family over `instances` draws each.
inline std::map<std::string, double> gradient_suite(std::uint64_t seed, int instances = 50) {
  Rng rng(seed);
  std::map<std::string, double> worst;
  auto note = [&](const std::string& k, double e) { worst[k] = std::max(worst[k], e); };

  for (int i = 0; i < instances; ++i) {
    const LayerSpec spec = random_layer(kind_for(i), rng);
    const Matrix w = randm(spec.out_dim, spec.in_dim, rng);
    const Vector x = randn(spec.in_dim, rng);
    const Vector y = random_output(spec, rng);
    const Matrix gw = grad_logpi_params(spec, w, x, y);
    note("grad_logpi_params",
         rel_err(gw, fd_matrix([&](const Matrix& m) { return log_pi_layer(spec, m, x, y); }, w)));
    const Vector gx = grad_logpi_input(spec, w, x, y);
    note("grad_logpi_input",
         rel_err(gx, fd_matrix([&](const Matrix& v) { return log_pi_layer(spec, w, Vector(v), y); }, x)));
  }

  for (int i = 0; i < instances; ++i) {
    const auto p = random_net(rng, i % 2 == 0 ? LayerKind::SoftmaxOutput : LayerKind::LinearGaussianOutput);
    HiddenState h = sample_forward(p, randn(p.layers[0].in_dim, rng), rng);
    for (auto& v : h.hidden) v += randn(static_cast<int>(v.size()), rng, 0.3);
    const auto grads = grad_energy_hidden(h, p);
    for (std::size_t k = 0; k < h.hidden.size(); ++k) {
      const auto fd = fd_matrix(
          [&](const Matrix& v) {
            HiddenState moved = h;
            moved.hidden[k] = v;
            return energy(moved, p);
          },
          h.hidden[k]);
      note("grad_energy_hidden", rel_err(grads[k], fd));
    }
  }

  for (int i = 0; i < instances; ++i) {
    const auto p = random_net(rng, i % 2 == 0 ? LayerKind::SoftmaxOutput : LayerKind::LinearGaussianOutput);
    const Vector s = randn(p.layers[0].in_dim, rng);
    std::vector<Vector> noise;
    for (std::size_t l = 0; l + 1 < p.depth(); ++l) noise.push_back(randn(p.layers[l].out_dim, rng));
    const Vector a = random_output(p.output(), rng);
    const auto grads = reparam_gradient(p, s, noise, a);
    // Saturated draws have gradients below what central differences resolve.
    double smallest = INFINITY;
    for (const auto& g : grads) smallest = std::min(smallest, g.cwiseAbs().maxCoeff());
    if (smallest < kMinResolvable) {
      --i;
      continue;
    }
    for (std::size_t l = 0; l < p.depth(); ++l) {
      const auto fd = fd_matrix(
          [&](const Matrix& m) {
            NetworkParams q = p;
            q.weights[l] = m;
            const auto hidden = reparam_forward(q, s, noise);
            return log_pi_layer(q, q.depth() - 1, hidden.empty() ? s : hidden.back(), a);
          },
          p.weights[l]);
      note("reparam_backprop", rel_err(grads[l], fd));
    }
  }

  for (int i = 0; i < instances; ++i) {
    std::uniform_int_distribution<int> dim(1, 6);
    const int in = dim(rng), out = dim(rng);
    DenseNet net(in, {dim(rng), dim(rng)}, out, rng);
    const Vector x = randn(in, rng);
    const Vector c = randn(out, rng);
    DenseNet::Cache cache;
    net.forward(x, &cache);
    const auto grads = net.backward(cache, c);
    for (std::size_t l = 0; l < grads.size(); ++l) {
      const auto fd = fd_matrix(
          [&](const Matrix& m) {
            DenseNet moved = net;
            moved.weights()[l] = m;
            return c.dot(moved.forward(x));
          },
          net.weights()[l]);
      note("backprop_baseline", rel_err(grads[l], fd));
    }
  }
  return worst;
}

}  // namespace mapprop::testing

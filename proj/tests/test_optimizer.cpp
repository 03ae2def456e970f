#include "mapprop/optimizer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

using namespace mapprop;

namespace {

/// Scalar textbook Adam, elementwise, kept separate from the library code.
struct ReferenceAdam {
  double m = 0, v = 0;
  int t = 0;
  double step(double g, double alpha, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    return alpha * mhat / (std::sqrt(vhat) + eps);
  }
};

NetworkParams shape(int rows, int cols) {
  NetworkParams p;
  p.weights.push_back(Matrix::Zero(rows, cols));
  p.weights.push_back(Matrix::Zero(1, rows));
  return p;
}

}  // namespace

TEST(Adam, MatchesReferenceOverRandomTrace) {
  const auto p = shape(3, 2);
  TraceState acc(p);
  std::vector<std::vector<ReferenceAdam>> ref(2);
  for (std::size_t l = 0; l < 2; ++l) ref[l].resize(static_cast<std::size_t>(p.weights[l].size()));
  std::mt19937_64 rng(42);
  std::normal_distribution<double> normal;
  const std::vector<double> alphas{1e-2, 3e-4};
  for (int step = 0; step < 10; ++step) {
    std::vector<Matrix> grads;
    for (const auto& w : p.weights) {
      Matrix g(w.rows(), w.cols());
      for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = normal(rng);
      grads.push_back(g);
    }
    const auto deltas = adam_apply(acc, grads, alphas, {});
    for (std::size_t l = 0; l < 2; ++l)
      for (Eigen::Index i = 0; i < grads[l].size(); ++i)
        EXPECT_NEAR(deltas[l](i), ref[l][static_cast<std::size_t>(i)].step(grads[l](i), alphas[l]), 1e-12);
  }
  EXPECT_EQ(acc.step_count, 10);
}

TEST(Adam, FirstStepHasMagnitudeAlpha) {
  const auto p = shape(2, 2);
  TraceState acc(p);
  std::vector<Matrix> grads{Matrix::Constant(2, 2, -7.0), Matrix::Constant(1, 2, 0.003)};
  const std::vector<double> alphas{0.1, 0.2};
  const auto d = adam_apply(acc, grads, alphas, {});
  EXPECT_NEAR(d[0](0, 0), -0.1, 1e-8);
  EXPECT_NEAR(d[1](0, 1), 0.2, 1e-4);
}

TEST(Adam, ZeroGradientWithFreshMomentsLeavesWeightsUnchanged) {
  auto p = shape(2, 3);
  p.weights[0].setConstant(0.5);
  TraceState acc(p);
  const auto before = p.weights;
  std::vector<Matrix> zero{Matrix::Zero(2, 3), Matrix::Zero(1, 2)};
  apply_update(p.weights, acc, zero, std::vector<double>{0.1, 0.1}, OptimizerKind::Adam, {});
  EXPECT_EQ(p.weights[0], before[0]);
  EXPECT_EQ(p.weights[1], before[1]);
}

TEST(Adam, ZeroGradientAfterHistoryOnlyDecaysMoments) {
  auto p = shape(1, 1);
  TraceState acc(p);
  std::vector<Matrix> g{Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 1.0)};
  const std::vector<double> alphas{0.1, 0.1};
  apply_update(p.weights, acc, g, alphas, OptimizerKind::Adam, {});
  const double m = acc.adam_m[0](0), v = acc.adam_v[0](0);
  std::vector<Matrix> zero{Matrix::Zero(1, 1), Matrix::Zero(1, 1)};
  apply_update(p.weights, acc, zero, alphas, OptimizerKind::Adam, {});
  EXPECT_DOUBLE_EQ(acc.adam_m[0](0), 0.9 * m);
  EXPECT_DOUBLE_EQ(acc.adam_v[0](0), 0.999 * v);
}

TEST(Sgd, PlainScaledStep) {
  auto p = shape(2, 2);
  TraceState acc(p);
  std::vector<Matrix> g{Matrix::Constant(2, 2, 2.0), Matrix::Constant(1, 2, -1.0)};
  apply_update(p.weights, acc, g, std::vector<double>{0.5, 0.25}, OptimizerKind::Sgd, {});
  EXPECT_DOUBLE_EQ(p.weights[0](1, 1), 1.0);
  EXPECT_DOUBLE_EQ(p.weights[1](0, 0), -0.25);
}

TEST(Anneal, LinearToOneTenthThenFlat) {
  const AnnealSchedule s{true, 50000, 0.1};
  EXPECT_DOUBLE_EQ(anneal_alpha(1e-2, 0, s), 1e-2);
  EXPECT_NEAR(anneal_alpha(1e-2, 25000, s), 0.55e-2, 1e-15);
  EXPECT_NEAR(anneal_alpha(1e-2, 50000, s), 1e-3, 1e-15);
  EXPECT_NEAR(anneal_alpha(1e-2, 80000, s), 1e-3, 1e-15);
}

TEST(Anneal, NoneKeepsBase) {
  EXPECT_DOUBLE_EQ(anneal_alpha(0.3, 123456, {}), 0.3);
  const std::vector<double> base{1.0, 2.0};
  const auto out = annealed(base, 100, AnnealSchedule{true, 100, 0.5});
  EXPECT_DOUBLE_EQ(out[0], 0.5);
  EXPECT_DOUBLE_EQ(out[1], 1.0);
}

TEST(TraceState, ResetClearsTracesOnly) {
  const auto p = shape(2, 2);
  TraceState acc(p);
  acc.traces[0].setOnes();
  acc.adam_m[0].setOnes();
  acc.reset_traces();
  EXPECT_EQ(acc.traces[0].squaredNorm(), 0.0);
  EXPECT_EQ(acc.adam_m[0].sum(), 4.0);
}

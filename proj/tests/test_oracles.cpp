#include "mapprop/oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace mapprop;

TEST(Quadrature, HermiteMomentsAreExact) {
  // int x^{2k} exp(-x^2) dx = Gamma(k + 1/2)
  const auto gh = gauss_hermite(10);
  for (int k = 0; k < 10; ++k) {
    double sum = 0.0;
    for (std::size_t i = 0; i < gh.nodes.size(); ++i) sum += gh.weights[i] * std::pow(gh.nodes[i], 2 * k);
    EXPECT_NEAR(sum / std::tgamma(k + 0.5), 1.0, 1e-10) << "k=" << k;
  }
}

TEST(Quadrature, NormalGridMoments) {
  const auto g = normal_grid(2, 8);
  ASSERT_EQ(g.points.size(), 64u);
  double w = 0, x2 = 0, x4 = 0, xy2 = 0;
  for (std::size_t i = 0; i < g.points.size(); ++i) {
    const auto& z = g.points[i];
    w += g.weights[i];
    x2 += g.weights[i] * z(0) * z(0);
    x4 += g.weights[i] * std::pow(z(1), 4);
    xy2 += g.weights[i] * z(0) * z(0) * z(1) * z(1);
  }
  EXPECT_NEAR(w, 1.0, 1e-12);
  EXPECT_NEAR(x2, 1.0, 1e-12);
  EXPECT_NEAR(x4, 3.0, 1e-10);
  EXPECT_NEAR(xy2, 1.0, 1e-12);
}

TEST(Oracles, NoiseRecoveryInvertsSampling) {
  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    const auto p = detail::random_gaussian_net(rng, 5, {4, 3}, 2, LayerKind::SoftmaxOutput);
    const auto fs = sample_forward_recorded(p, detail::random_normal(p.layers[0].in_dim, rng), rng);
    const auto z = detail::recover_noise(p, fs.values);
    for (std::size_t k = 0; k < z.size(); ++k) EXPECT_LT((z[k] - fs.noise[k]).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Oracles, NoHiddenLayerNeedsNoSettling) {
  Rng rng(4);
  NetworkParams p;
  p.layers.push_back({LayerKind::SoftmaxOutput, 3, 4, 1.0, 1.3});
  p.weights.push_back(detail::random_normal(12, rng).reshaped(4, 3));
  const auto h = sample_forward(p, detail::random_normal(3, rng), rng);
  EXPECT_LT(reinforce_vs_reparam_error(p, h), 1e-12);
}

TEST(Oracles, UnsettledStatesBreakTheEquivalence) {
  Rng rng(5);
  int large = 0;
  for (int i = 0; i < 10; ++i) {
    const auto p = detail::random_gaussian_net(rng, 6, {5, 4}, 3, LayerKind::LinearGaussianOutput);
    const auto h = sample_forward(p, detail::random_normal(p.layers[0].in_dim, rng), rng);
    large += reinforce_vs_reparam_error(p, h) > 1e-3;
  }
  EXPECT_EQ(large, 10);
}

TEST(Oracles, SettledStatesSatisfyTheEquivalence) {
  Rng rng(6);
  for (int i = 0; i < 5; ++i) {
    const auto inst = detail::settled_instance(
        detail::random_gaussian_net(rng, 6, {5, 4}, 3, LayerKind::SoftmaxOutput), rng);
    ASSERT_TRUE(inst.settled.converged);
    EXPECT_LT(max_abs(grad_energy_hidden(inst.settled.hidden, inst.params)), 1e-8);
    EXPECT_LT(reinforce_vs_reparam_error(inst.params, inst.settled.hidden), 1e-6);
  }
}

TEST(Oracles, TargetRatioIsTwiceOutputVariance) {
  Rng rng(7);
  const auto inst =
      detail::settled_instance(detail::random_gaussian_net(rng, 6, {5, 4}, 1, LayerKind::LinearGaussianOutput), rng);
  ASSERT_TRUE(inst.settled.converged);
  const auto r = theorem3_ratio(inst.params, inst.settled.hidden, 1.3);
  EXPECT_DOUBLE_EQ(r.expected, 2.0 * inst.params.output().sigma_sq);
  EXPECT_NEAR(r.ratio, r.expected, 1e-6 * r.expected);
}

TEST(Checks, Theorem2Passes) {
  const auto r = check_theorem2(11);
  EXPECT_TRUE(r.passed) << r.to_json().dump();
  EXPECT_FALSE(r.inconclusive);
  EXPECT_GT(r.details["min_negative_control_error"].get<double>(), 1e-3);
}

TEST(Checks, Theorem3Passes) {
  const auto r = check_theorem3(12);
  EXPECT_TRUE(r.passed) << r.to_json().dump();
  EXPECT_LT(r.details["max_rel_error"].get<double>(), 1e-6);
}

TEST(Checks, GradDecompositionPassesAndDropControlFails) {
  const auto r = check_grad_decomposition(13);
  EXPECT_TRUE(r.passed) << r.to_json().dump();
  EXPECT_GT(r.details["min_negative_control_error"].get<double>(), 1e-3);
}

TEST(Checks, Theorem1Passes) {
  const auto r = check_theorem1(14);
  EXPECT_TRUE(r.passed) << r.to_json().dump();
  EXPECT_LT(r.details["max_z_score"].get<double>(), 5.0);
  EXPECT_GE(r.details["negative_control_max_z_score"].get<double>(), 5.0);
}

TEST(Checks, VarianceReductionHolds) {
  const auto r = check_variance_reduction(15);
  EXPECT_TRUE(r.passed) << r.to_json().dump();
  EXPECT_GE(r.details["reduction_factor"].get<double>(), 1.0);
  EXPECT_TRUE(r.details["negative_control_fails"].get<bool>());
}

TEST(Checks, ZeroRewardIsDegenerateButPasses) {
  VarianceOptions opt;
  opt.samples = 2000;
  opt.zero_reward = true;
  const auto r = check_variance_reduction(16, opt);
  EXPECT_TRUE(r.passed);
  EXPECT_DOUBLE_EQ(r.details["reduction_factor"].get<double>(), 1.0);
}

TEST(Checks, RunChecksSelection) {
  EXPECT_EQ(run_checks("theorem3", 1).size(), 1u);
  EXPECT_THROW(run_checks("theorem9", 1), ConfigError);
  const auto j = run_checks("graddecomp", 2).front().to_json();
  EXPECT_EQ(j["check"], "graddecomp");
  EXPECT_TRUE(j.contains("passed"));
  EXPECT_TRUE(j.contains("inconclusive"));
}

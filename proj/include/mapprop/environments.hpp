#pragma once

// Episodic tasks behind one interface. Discrete actions are passed one-hot,
// continuous actions as real vectors.

#include "mapprop/network.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>

namespace mapprop {

/// Stepping a finished episode, or a malformed action.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct DiscreteActions {
  int n = 2;
};
struct ContinuousActions {
  int dim = 1;
  double low = -1.0;
  double high = 1.0;
};

struct EnvSpec {
  int obs_dim = 1;
  std::variant<DiscreteActions, ContinuousActions> action_kind;
  int max_steps = 1;
  std::optional<double> reward_clip;
};

struct Transition {
  Vector next_obs;
  double reward = 0.0;      // clipped when the spec sets reward_clip
  double raw_reward = 0.0;  // what the task pays; used for reporting
  bool terminal = false;
  bool truncated = false;
};

class Environment {
 public:
  virtual ~Environment() = default;

  Vector reset(std::uint64_t seed) {
    rng_.seed(seed);
    steps_ = 0;
    done_ = false;
    return do_reset();
  }

  Transition step(const Vector& action) {
    if (done_) throw UsageError("step() called on a finished episode; call reset()");
    const auto s = spec();
    if (const auto* d = std::get_if<DiscreteActions>(&s.action_kind)) {
      if (action.size() != d->n) throw UsageError("discrete action must be one-hot of the action count");
    } else if (action.size() != std::get<ContinuousActions>(s.action_kind).dim) {
      throw UsageError("continuous action has the wrong dimension");
    }
    Transition tr = do_step(action);
    ++steps_;
    tr.raw_reward = tr.reward;
    if (s.reward_clip) tr.reward = std::clamp(tr.reward, -*s.reward_clip, *s.reward_clip);
    if (!tr.terminal && steps_ >= s.max_steps) tr.truncated = true;
    done_ = tr.terminal || tr.truncated;
    return tr;
  }

  virtual EnvSpec spec() const = 0;
  virtual std::string name() const = 0;
  /// Supervised target for the current observation, when the task has one.
  virtual std::optional<double> target() const { return std::nullopt; }

  int steps() const { return steps_; }

 protected:
  virtual Vector do_reset() = 0;
  virtual Transition do_step(const Vector& action) = 0;
  Rng& rng() { return rng_; }

 private:
  Rng rng_;
  int steps_ = 0;
  bool done_ = false;
};

// ---------------------------------------------------------------------------

/// Address bits (most significant first) select one of 2^k data bits; the
/// desired action is 2*bit - 1, with action index 0 meaning -1.
class MultiplexerEnv final : public Environment {
 public:
  explicit MultiplexerEnv(int k) : k_(k) {
    if (k < 1 || k > 16) throw ConfigError("multiplexer k must lie in [1,16]");
  }

  EnvSpec spec() const override { return {k_ + (1 << k_), DiscreteActions{2}, 1, std::nullopt}; }
  std::string name() const override { return "multiplexer"; }

  static int desired_bit(const Vector& obs, int k) {
    int address = 0;
    for (int i = 0; i < k; ++i) address = 2 * address + (obs(i) > 0.5 ? 1 : 0);
    return obs(k + address) > 0.5 ? 1 : 0;
  }
  int desired_action() const { return 2 * desired_bit(obs_, k_) - 1; }

 protected:
  Vector do_reset() override {
    std::bernoulli_distribution bit(0.5);
    obs_.resize(spec().obs_dim);
    for (Eigen::Index i = 0; i < obs_.size(); ++i) obs_(i) = bit(rng()) ? 1.0 : 0.0;
    return obs_;
  }

  Transition do_step(const Vector& action) override {
    const int chosen = categorical_index(action) == 1 ? 1 : -1;
    return {obs_, chosen == desired_action() ? 1.0 : -1.0, 0.0, true, false};
  }

 private:
  int k_;
  Vector obs_;
};

/// Fixed random one-hidden-layer tanh network (no biases).
struct TeacherNet {
  Matrix hidden;  // 16 x input_dim
  Vector head;    // 16

  TeacherNet(int input_dim, std::uint64_t seed, int width = 16) {
    Rng rng(seed);
    std::normal_distribution<double> normal;
    hidden.resize(width, input_dim);
    for (Eigen::Index c = 0; c < hidden.cols(); ++c)
      for (Eigen::Index r = 0; r < hidden.rows(); ++r) hidden(r, c) = normal(rng) / std::sqrt(double(input_dim));
    head.resize(width);
    for (Eigen::Index i = 0; i < head.size(); ++i) head(i) = normal(rng) / std::sqrt(double(width));
  }

  double operator()(const Vector& x) const { return head.dot((hidden * x).array().tanh().matrix()); }
};

/// Single-step regression; reward is the negative squared error.
class ScalarRegressionEnv final : public Environment {
 public:
  ScalarRegressionEnv(int input_dim, std::uint64_t teacher_seed) : teacher_(input_dim, teacher_seed), dim_(input_dim) {
    if (input_dim < 1) throw ConfigError("regression input_dim must be >= 1");
  }

  EnvSpec spec() const override { return {dim_, ContinuousActions{1, -1e300, 1e300}, 1, std::nullopt}; }
  std::string name() const override { return "regression"; }
  std::optional<double> target() const override { return teacher_(obs_); }
  const TeacherNet& teacher() const { return teacher_; }

 protected:
  Vector do_reset() override {
    std::normal_distribution<double> normal;
    obs_.resize(dim_);
    for (Eigen::Index i = 0; i < obs_.size(); ++i) obs_(i) = normal(rng());
    return obs_;
  }

  Transition do_step(const Vector& action) override {
    const double err = action(0) - teacher_(obs_);
    return {obs_, -err * err, 0.0, true, false};
  }

 private:
  TeacherNet teacher_;
  int dim_;
  Vector obs_;
};

// ---------------------------------------------------------------------------
// Classic control, constants as in Gym's CartPole-v1, Acrobot-v1 and
// MountainCarContinuous-v0.

class CartPoleEnv final : public Environment {
 public:
  static constexpr double kGravity = 9.8;
  static constexpr double kMassCart = 1.0;
  static constexpr double kMassPole = 0.1;
  static constexpr double kTotalMass = kMassCart + kMassPole;
  static constexpr double kLength = 0.5;  // half the pole length
  static constexpr double kPoleMassLength = kMassPole * kLength;
  static constexpr double kForceMag = 10.0;
  static constexpr double kTau = 0.02;
  static constexpr double kThetaThreshold = 12.0 * 2.0 * std::numbers::pi / 360.0;
  static constexpr double kXThreshold = 2.4;

  EnvSpec spec() const override { return {4, DiscreteActions{2}, 500, std::nullopt}; }
  std::string name() const override { return "cartpole"; }

  void set_state(const std::array<double, 4>& s) { s_ = s; }
  const std::array<double, 4>& state() const { return s_; }

 protected:
  Vector do_reset() override {
    std::uniform_real_distribution<double> u(-0.05, 0.05);
    for (auto& v : s_) v = u(rng());
    return observe();
  }

  Transition do_step(const Vector& action) override {
    auto [x, x_dot, theta, theta_dot] = s_;
    const double force = categorical_index(action) == 1 ? kForceMag : -kForceMag;
    const double costheta = std::cos(theta);
    const double sintheta = std::sin(theta);
    const double temp = (force + kPoleMassLength * theta_dot * theta_dot * sintheta) / kTotalMass;
    const double thetaacc = (kGravity * sintheta - costheta * temp) /
                            (kLength * (4.0 / 3.0 - kMassPole * costheta * costheta / kTotalMass));
    const double xacc = temp - kPoleMassLength * thetaacc * costheta / kTotalMass;
    x += kTau * x_dot;
    x_dot += kTau * xacc;
    theta += kTau * theta_dot;
    theta_dot += kTau * thetaacc;
    s_ = {x, x_dot, theta, theta_dot};
    const bool terminal = x < -kXThreshold || x > kXThreshold || theta < -kThetaThreshold || theta > kThetaThreshold;
    return {observe(), 1.0, 0.0, terminal, false};
  }

 private:
  Vector observe() const { return Eigen::Map<const Vector>(s_.data(), 4); }
  std::array<double, 4> s_{};
};

class AcrobotEnv final : public Environment {
 public:
  static constexpr double kDt = 0.2;
  static constexpr double kLinkLength1 = 1.0;
  static constexpr double kLinkMass1 = 1.0;
  static constexpr double kLinkMass2 = 1.0;
  static constexpr double kLinkCom1 = 0.5;
  static constexpr double kLinkCom2 = 0.5;
  static constexpr double kLinkMoi = 1.0;
  static constexpr double kMaxVel1 = 4 * std::numbers::pi;
  static constexpr double kMaxVel2 = 9 * std::numbers::pi;
  static constexpr double kGravity = 9.8;

  using State = std::array<double, 4>;  // theta1, theta2, dtheta1, dtheta2

  EnvSpec spec() const override { return {6, DiscreteActions{3}, 500, std::nullopt}; }
  std::string name() const override { return "acrobot"; }

  void set_state(const State& s) { s_ = s; }
  const State& state() const { return s_; }

  /// Time derivative of (theta1, theta2, dtheta1, dtheta2) under `torque`.
  static State dynamics(const State& s, double torque) {
    const double m1 = kLinkMass1, m2 = kLinkMass2, l1 = kLinkLength1;
    const double lc1 = kLinkCom1, lc2 = kLinkCom2, i1 = kLinkMoi, i2 = kLinkMoi, g = kGravity;
    const auto [theta1, theta2, dtheta1, dtheta2] = s;
    const double pi = std::numbers::pi;
    const double d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2 * l1 * lc2 * std::cos(theta2)) + i1 + i2;
    const double d2 = m2 * (lc2 * lc2 + l1 * lc2 * std::cos(theta2)) + i2;
    const double phi2 = m2 * lc2 * g * std::cos(theta1 + theta2 - pi / 2.0);
    const double phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * std::sin(theta2) -
                        2 * m2 * l1 * lc2 * dtheta2 * dtheta1 * std::sin(theta2) +
                        (m1 * lc1 + m2 * l1) * g * std::cos(theta1 - pi / 2) + phi2;
    const double ddtheta2 = (torque + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 * dtheta1 * std::sin(theta2) - phi2) /
                            (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
    const double ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
    return {dtheta1, dtheta2, ddtheta1, ddtheta2};
  }

  static double wrap(double x, double lo, double hi) {
    const double diff = hi - lo;
    while (x > hi) x -= diff;
    while (x < lo) x += diff;
    return x;
  }

 protected:
  Vector do_reset() override {
    std::uniform_real_distribution<double> u(-0.1, 0.1);
    for (auto& v : s_) v = u(rng());
    return observe();
  }

  Transition do_step(const Vector& action) override {
    const double torque = static_cast<double>(categorical_index(action)) - 1.0;
    // One classical RK4 step over [0, dt].
    auto add = [](const State& a, const State& b, double h) {
      return State{a[0] + h * b[0], a[1] + h * b[1], a[2] + h * b[2], a[3] + h * b[3]};
    };
    const State k1 = dynamics(s_, torque);
    const State k2 = dynamics(add(s_, k1, kDt / 2), torque);
    const State k3 = dynamics(add(s_, k2, kDt / 2), torque);
    const State k4 = dynamics(add(s_, k3, kDt), torque);
    State ns;
    for (int i = 0; i < 4; ++i) ns[i] = s_[i] + kDt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
    ns[0] = wrap(ns[0], -std::numbers::pi, std::numbers::pi);
    ns[1] = wrap(ns[1], -std::numbers::pi, std::numbers::pi);
    ns[2] = std::clamp(ns[2], -kMaxVel1, kMaxVel1);
    ns[3] = std::clamp(ns[3], -kMaxVel2, kMaxVel2);
    s_ = ns;
    const bool terminal = -std::cos(s_[0]) - std::cos(s_[1] + s_[0]) > 1.0;
    return {observe(), terminal ? 0.0 : -1.0, 0.0, terminal, false};
  }

 private:
  Vector observe() const {
    Vector o(6);
    o << std::cos(s_[0]), std::sin(s_[0]), std::cos(s_[1]), std::sin(s_[1]), s_[2], s_[3];
    return o;
  }
  State s_{};
};

class MountainCarContinuousEnv final : public Environment {
 public:
  static constexpr double kMinAction = -1.0;
  static constexpr double kMaxAction = 1.0;
  static constexpr double kMinPosition = -1.2;
  static constexpr double kMaxPosition = 0.6;
  static constexpr double kMaxSpeed = 0.07;
  static constexpr double kGoalPosition = 0.45;
  static constexpr double kGoalVelocity = 0.0;
  static constexpr double kPower = 0.0015;

  explicit MountainCarContinuousEnv(std::optional<double> reward_clip = std::nullopt) : clip_(reward_clip) {}

  EnvSpec spec() const override { return {2, ContinuousActions{1, kMinAction, kMaxAction}, 999, clip_}; }
  std::string name() const override { return "mountaincar"; }

  double position() const { return position_; }
  double velocity() const { return velocity_; }
  void set_state(double position, double velocity) {
    position_ = position;
    velocity_ = velocity;
  }

 protected:
  Vector do_reset() override {
    std::uniform_real_distribution<double> u(-0.6, -0.4);
    position_ = u(rng());
    velocity_ = 0.0;
    return observe();
  }

  Transition do_step(const Vector& action) override {
    const double force = std::clamp(action(0), kMinAction, kMaxAction);
    velocity_ += force * kPower - 0.0025 * std::cos(3 * position_);
    velocity_ = std::clamp(velocity_, -kMaxSpeed, kMaxSpeed);
    position_ += velocity_;
    position_ = std::clamp(position_, kMinPosition, kMaxPosition);
    if (position_ == kMinPosition && velocity_ < 0) velocity_ = 0;
    const bool terminal = position_ >= kGoalPosition && velocity_ >= kGoalVelocity;
    double reward = terminal ? 100.0 : 0.0;
    reward -= force * force * 0.1;
    return {observe(), reward, 0.0, terminal, false};
  }

 private:
  Vector observe() const {
    Vector o(2);
    o << position_, velocity_;
    return o;
  }
  std::optional<double> clip_;
  double position_ = 0.0;
  double velocity_ = 0.0;
};

inline std::unique_ptr<Environment> multiplexer_env(int k) { return std::make_unique<MultiplexerEnv>(k); }
inline std::unique_ptr<Environment> scalar_regression_env(int input_dim, std::uint64_t teacher_seed) {
  return std::make_unique<ScalarRegressionEnv>(input_dim, teacher_seed);
}
inline std::unique_ptr<Environment> cartpole_env() { return std::make_unique<CartPoleEnv>(); }
inline std::unique_ptr<Environment> acrobot_env() { return std::make_unique<AcrobotEnv>(); }
inline std::unique_ptr<Environment> mountaincar_continuous_env(std::optional<double> reward_clip = std::nullopt) {
  return std::make_unique<MountainCarContinuousEnv>(reward_clip);
}

}  // namespace mapprop

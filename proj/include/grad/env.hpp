#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "grad/common.hpp"

namespace grad {

enum class ActionKind { ContinuousBox, DiscreteFinite };

// Static description of an environment. For discrete action spaces `action_dim`
// is the number of choices and an action is a length-1 vector holding the index.
struct EnvSpec {
  std::size_t state_dim = 1;
  std::size_t action_dim = 1;
  ActionKind action_kind = ActionKind::ContinuousBox;
  std::size_t horizon = 1;
  double discount = 1.0;
  Vec action_lo;
  Vec action_hi;

  bool discrete() const { return action_kind == ActionKind::DiscreteFinite; }

  // Length of the action vector handed to step().
  std::size_t action_vector_size() const { return discrete() ? 1 : action_dim; }

  void validate() const {
    if (state_dim == 0 || action_dim == 0) throw ConfigError("EnvSpec: dimensions must be positive");
    if (horizon < 1) throw ConfigError("EnvSpec: horizon must be >= 1");
    if (!(discount > 0.0 && discount <= 1.0)) throw ConfigError("EnvSpec: discount must lie in (0,1]");
    if (!discrete()) {
      if (action_lo.size() != action_dim || action_hi.size() != action_dim)
        throw ConfigError("EnvSpec: action bounds must match action_dim");
      for (std::size_t i = 0; i < action_dim; ++i)
        if (!(action_lo[i] < action_hi[i])) throw ConfigError("EnvSpec: require lo < hi per action dimension");
    }
  }
};

struct StepResult {
  Vec next_state;
  double reward = 0.0;
  bool done = false;
};

class Environment {
 public:
  explicit Environment(EnvSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed), rng_(seed) {
    spec_.validate();
  }
  virtual ~Environment() = default;

  const EnvSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t t() const { return t_; }

  void reseed(std::uint64_t seed) {
    seed_ = seed;
    rng_.seed(seed);
  }

  Vec reset() {
    t_ = 0;
    return do_reset(rng_);
  }

  StepResult step(std::span<const double> action) {
    if (action.size() != spec_.action_vector_size())
      throw ContractViolation("Environment::step: action has wrong dimension");
    StepResult r = do_step(action);
    ++t_;
    if (t_ >= spec_.horizon) r.done = true;
    return r;
  }

  // Number of opponent choices for environments where the adversary acts in the
  // game directly (matrix games). Zero for perturbation-attacked control tasks.
  virtual std::size_t opponent_actions() const { return 0; }
  virtual void set_opponent_action(std::size_t) {
    throw ContractViolation("environment has no opponent action");
  }

  // Overwrites the internal state (test and scripted-start support).
  virtual void set_state(std::span<const double> state) = 0;

  virtual std::unique_ptr<Environment> clone() const = 0;
  virtual std::string name() const = 0;

  Vec clip_action(std::span<const double> a) const {
    Vec out(a.begin(), a.end());
    if (spec_.discrete()) return out;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], spec_.action_lo[i], spec_.action_hi[i]);
    return out;
  }

 protected:
  virtual Vec do_reset(Rng& rng) = 0;
  virtual StepResult do_step(std::span<const double> action) = 0;

  EnvSpec spec_;
  std::uint64_t seed_;
  Rng rng_;
  std::size_t t_ = 0;
};

using EnvPtr = std::unique_ptr<Environment>;

// One-shot zero-sum matrix game: agent picks row i, adversary picks column j,
// agent reward is payoff[i][j].
class MatrixGameEnv final : public Environment {
 public:
  MatrixGameEnv(std::vector<Vec> payoff, std::uint64_t seed = 0)
      : Environment(make_spec(payoff), seed), payoff_(std::move(payoff)) {}

  const std::vector<Vec>& payoff() const { return payoff_; }
  std::size_t size() const { return payoff_.size(); }

  std::size_t opponent_actions() const override { return payoff_.size(); }
  void set_opponent_action(std::size_t j) override {
    if (j >= payoff_.size()) throw ContractViolation("opponent action out of range");
    column_ = j;
  }

  void set_state(std::span<const double>) override {}
  std::unique_ptr<Environment> clone() const override { return std::make_unique<MatrixGameEnv>(*this); }
  std::string name() const override { return "matrix"; }

 private:
  static EnvSpec make_spec(const std::vector<Vec>& payoff) {
    const std::size_t k = payoff.size();
    if (k < 2) throw ConfigError("matrix game needs at least a 2x2 payoff");
    for (const auto& row : payoff) {
      if (row.size() != k) throw ConfigError("matrix game payoff must be square");
      if (!all_finite(row)) throw ConfigError("matrix game payoff must be finite");
    }
    EnvSpec s;
    s.state_dim = 1;
    s.action_dim = k;
    s.action_kind = ActionKind::DiscreteFinite;
    s.horizon = 1;
    s.discount = 1.0;
    return s;
  }

  Vec do_reset(Rng&) override { return Vec{0.0}; }

  StepResult do_step(std::span<const double> action) override {
    const auto i = static_cast<std::size_t>(action[0]);
    if (i >= payoff_.size()) throw ContractViolation("matrix game row out of range");
    return {Vec{0.0}, payoff_[i][column_], true};
  }

  std::vector<Vec> payoff_;
  std::size_t column_ = 0;
};

// 2-D point mass driven by a bounded acceleration toward a fixed goal.
// state = (x, y, vx, vy); action = (ax, ay) in [-1,1]^2.
class PointMassEnv final : public Environment {
 public:
  static constexpr double kDt = 0.05;
  static constexpr double kDamping = 0.95;
  static constexpr double kActionCost = 0.01;
  static constexpr double kWindScale = 0.2;

  PointMassEnv(Vec goal, bool wind_enabled, std::uint64_t seed)
      : Environment(make_spec(), seed), goal_(std::move(goal)), wind_enabled_(wind_enabled) {
    if (goal_.size() != 2 || std::abs(goal_[0]) > 1.0 || std::abs(goal_[1]) > 1.0)
      throw ConfigError("pointmass goal must lie in [-1,1]^2");
  }

  const Vec& goal() const { return goal_; }
  const Vec& state() const { return state_; }

  void set_state(std::span<const double> s) override {
    if (s.size() != 4) throw ContractViolation("pointmass state has 4 entries");
    state_.assign(s.begin(), s.end());
  }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<PointMassEnv>(*this); }
  std::string name() const override { return "pointmass"; }

 private:
  static EnvSpec make_spec() {
    EnvSpec s;
    s.state_dim = 4;
    s.action_dim = 2;
    s.action_kind = ActionKind::ContinuousBox;
    s.horizon = 100;
    s.discount = 0.99;
    s.action_lo = {-1.0, -1.0};
    s.action_hi = {1.0, 1.0};
    return s;
  }

  Vec do_reset(Rng& rng) override {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    state_ = {u(rng), u(rng), 0.0, 0.0};
    wind_ = {0.0, 0.0};
    if (wind_enabled_) wind_ = {kWindScale * u(rng), kWindScale * u(rng)};
    return state_;
  }

  StepResult do_step(std::span<const double> action) override {
    const Vec a = clip_action(action);
    for (int d = 0; d < 2; ++d) {
      state_[d] = state_[d] + kDt * state_[d + 2];
      state_[d + 2] = kDamping * state_[d + 2] + kDt * (a[d] + wind_[d]);
    }
    const double dx = state_[0] - goal_[0];
    const double dy = state_[1] - goal_[1];
    const double reward = -std::sqrt(dx * dx + dy * dy) - kActionCost * (a[0] * a[0] + a[1] * a[1]);
    return {state_, reward, false};
  }

  Vec goal_;
  bool wind_enabled_;
  Vec state_ = Vec(4, 0.0);
  Vec wind_ = Vec(2, 0.0);
};

// Inverted 1-D balance: state = (angle, angular velocity), scalar torque in [-1,1].
class BalanceEnv final : public Environment {
 public:
  static constexpr double kDt = 0.05;
  static constexpr double kInitSpread = 0.05;

  explicit BalanceEnv(std::uint64_t seed) : Environment(make_spec(), seed) {}

  static double reward_at(double theta) { return 1.0 - std::abs(theta) / std::numbers::pi; }

  const Vec& state() const { return state_; }
  void set_state(std::span<const double> s) override {
    if (s.size() != 2) throw ContractViolation("balance state has 2 entries");
    state_.assign(s.begin(), s.end());
  }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<BalanceEnv>(*this); }
  std::string name() const override { return "balance"; }

 private:
  static EnvSpec make_spec() {
    EnvSpec s;
    s.state_dim = 2;
    s.action_dim = 1;
    s.action_kind = ActionKind::ContinuousBox;
    s.horizon = 200;
    s.discount = 0.99;
    s.action_lo = {-1.0};
    s.action_hi = {1.0};
    return s;
  }

  Vec do_reset(Rng& rng) override {
    std::uniform_real_distribution<double> u(-kInitSpread, kInitSpread);
    state_ = {u(rng), 0.0};
    return state_;
  }

  StepResult do_step(std::span<const double> action) override {
    const double a = std::clamp(action[0], -1.0, 1.0);
    state_[1] = state_[1] + kDt * (std::sin(state_[0]) + a);
    state_[0] = state_[0] + kDt * state_[1];
    const bool fell = std::abs(state_[0]) > std::numbers::pi / 2.0;
    return {state_, reward_at(state_[0]), fell};
  }

  Vec state_ = Vec(2, 0.0);
};

inline EnvPtr make_matrix_game_env(std::vector<Vec> payoff, std::uint64_t seed = 0) {
  return std::make_unique<MatrixGameEnv>(std::move(payoff), seed);
}

inline EnvPtr make_pointmass_env(Vec goal, bool wind_enabled, std::uint64_t seed) {
  return std::make_unique<PointMassEnv>(std::move(goal), wind_enabled, seed);
}

inline EnvPtr make_balance_env(std::uint64_t seed) { return std::make_unique<BalanceEnv>(seed); }

}  // namespace grad

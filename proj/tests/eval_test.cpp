#include <gtest/gtest.h>

#include <cmath>

#include "grad/eval.hpp"
#include "grad/io.hpp"

namespace grad {
namespace {

// Saturating PD controller written as a linear Gaussian policy.
Policy pointmass_pd(double kp, double kd, const Vec& goal) {
  Architecture a;
  a.input_dim = 4;
  a.output_dim = 2;
  a.hidden = {};
  Policy p(a);
  Vec w = p.params();
  // W is 2x4 row-major, then b (2), then log-std (2).
  w[0] = -kp, w[2] = -kd;
  w[5] = -kp, w[7] = -kd;
  w[8] = kp * goal[0];
  w[9] = kp * goal[1];
  p.set_params(w);
  return p;
}

Policy balance_pd(double k1, double k2) {
  Architecture a;
  a.input_dim = 2;
  a.output_dim = 1;
  a.hidden = {};
  Policy p(a);
  Vec w = p.params();
  w[0] = -k1, w[1] = -k2;
  p.set_params(w);
  return p;
}

OracleConfig small_attacker() {
  OracleConfig c;
  c.iterations = 15;
  c.steps_per_iteration = 2048;
  c.hidden = {32};
  return c;
}

PerturbationBudget state_budget(double eps, double eps_bar) {
  PerturbationBudget b;
  b.epsilon = eps;
  b.epsilon_bar = eps_bar;
  return b;
}

const Vec kGoal{0.5, 0.5};

TEST(NaturalEval, DeterministicEnvAndMeanModeHasZeroSpread) {
  EnvPtr env = make_pointmass_env(kGoal, false, 0);
  const FrozenAgent agent(pointmass_pd(16, 4, kGoal));
  // Pointmass resets randomly; fix the start to make the environment deterministic.
  class FixedStart final : public Environment {
   public:
    explicit FixedStart(const Environment& e) : Environment(e.spec(), 0), inner_(e.clone()) {}
    std::unique_ptr<Environment> clone() const override { return std::make_unique<FixedStart>(*inner_); }
    std::string name() const override { return "fixed"; }
    void set_state(std::span<const double> s) override { inner_->set_state(s); }

   private:
    Vec do_reset(Rng&) override {
      inner_->reset();
      const Vec s{-0.5, 0.2, 0.0, 0.0};
      inner_->set_state(s);
      return s;
    }
    StepResult do_step(std::span<const double> a) override { return inner_->step(a); }
    std::unique_ptr<Environment> inner_;
  };
  const FixedStart fixed(*env);
  const SampleStats s = natural_eval(agent, fixed, 20, {1, 2, 3});
  EXPECT_EQ(s.n, 60u);
  EXPECT_EQ(s.stddev, 0.0);
}

TEST(NaturalEval, PrefixOfTheSameStreamIsIdentical) {
  EnvPtr env = make_pointmass_env(kGoal, true, 0);
  const FrozenAgent agent(pointmass_pd(8, 2, kGoal));
  EvalProtocol proto;
  proto.agent_mode = ActMode::Sample;
  EXPECT_EQ(natural_eval(agent, *env, 1, {5}, proto).mean, natural_eval(agent, *env, 1, {5}, proto).mean);
  Rng r1 = derive_rng(5, {0x6576616c}), r100 = derive_rng(5, {0x6576616c});
  const auto one = evaluate_returns(agent, nullptr, nullptr, *env, 1, r1, proto);
  const auto many = evaluate_returns(agent, nullptr, nullptr, *env, 100, r100, proto);
  EXPECT_EQ(one[0], many[0]);
  EXPECT_THROW(natural_eval(agent, *env, 0, {5}), ConfigError);
}

TEST(NaturalEval, RandomPolicyIsWorseThanControllerOnBalance) {
  EnvPtr env = make_balance_env(0);
  Rng rng(3);
  const FrozenAgent random(Policy::random(agent_architecture(env->spec(), {64, 64}), rng));
  EvalProtocol proto;
  proto.agent_mode = ActMode::Sample;
  const SampleStats r = natural_eval(random, *env, 100, {1}, proto);
  const SampleStats c = natural_eval(FrozenAgent(balance_pd(3.0, 1.0)), *env, 100, {1}, proto);
  EXPECT_LT(r.mean + 3.0 * std::hypot(r.stderr_, c.stderr_), c.mean);
}

TEST(ModelUncertaintySweep, AlphaZeroEqualsNaturalAndTrendIsDown) {
  EnvPtr env = make_balance_env(0);
  const FrozenAgent agent(balance_pd(3.0, 1.0));
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const EvalReport rep = model_uncertainty_sweep(agent, *env, {0.0, 0.05, 0.1, 0.15, 0.2}, 100, seeds);
  ASSERT_EQ(rep.cells.size(), 15u);
  for (std::size_t k = 0; k < seeds.size(); ++k)
    EXPECT_EQ(rep.cells[k].mean_return, natural_eval(agent, *env, 100, {seeds[k]}).mean);
  const auto summary = rep.summary();
  ASSERT_EQ(summary.size(), 5u);
  for (std::size_t a = 0; a + 1 < 5; ++a) {
    double se = 0.0;
    for (std::size_t k = 0; k < seeds.size(); ++k) se = std::max(se, rep.cells[(a + 1) * 3 + k].stderr_);
    EXPECT_LE(summary[a + 1]["mean"].get<double>(), summary[a]["mean"].get<double>() + se) << "alpha step " << a;
  }
  EXPECT_THROW(model_uncertainty_sweep(agent, *env, {1.5}, 10, seeds), ConfigError);
}

TEST(AttackFromScratch, ZeroBudgetMatchesNatural) {
  EnvPtr env = make_pointmass_env(kGoal, false, 0);
  const FrozenAgent agent(pointmass_pd(16, 4, kGoal));
  OracleConfig cfg = small_attacker();
  cfg.iterations = 2;
  EvalProtocol proto;
  proto.restarts = 1;
  Rng rng(4);
  const AttackResult r = attack_from_scratch(agent, AdversaryKind::PAAD, state_budget(0.0, 0.0), *env, cfg, rng, proto);
  Rng nat_rng(4);
  const auto nat = summarize(evaluate_returns(agent, nullptr, nullptr, *env, proto.episodes, nat_rng, proto));
  EXPECT_LE(std::abs(r.worst_case_return - nat.mean), 3.0 * std::hypot(r.stderr_, nat.stderr_) + 1e-12);
}

TEST(AttackFromScratch, TrainedAttackerHurtsAndAgentStaysFrozen) {
  EnvPtr env = make_pointmass_env(kGoal, false, 0);
  const FrozenAgent agent(pointmass_pd(16, 4, kGoal));
  const std::uint64_t hash = agent.hash();
  EvalProtocol proto;
  proto.restarts = 2;
  Rng rng(5);
  const AttackResult r =
      attack_from_scratch(agent, AdversaryKind::PAAD, state_budget(0.1, 0.2), *env, small_attacker(), rng, proto);
  EXPECT_EQ(agent.hash(), hash);
  ASSERT_EQ(r.restart_returns.size(), 2u);
  EXPECT_EQ(r.worst_case_return, *std::min_element(r.restart_returns.begin(), r.restart_returns.end()));
  const SampleStats nat = natural_eval(agent, *env, 100, {5});
  EXPECT_LE(r.worst_case_return, nat.mean + 3.0 * std::hypot(r.stderr_, nat.stderr_));
  EXPECT_EQ(r.attacker.kind, AdversaryKind::PAAD);
}

TEST(AttackCells, NestedBudgetsAreNonIncreasing) {
  EnvPtr env = make_pointmass_env(kGoal, false, 0);
  const FrozenAgent agent(pointmass_pd(16, 4, kGoal));
  EvalProtocol proto;
  proto.restarts = 1;
  std::vector<PerturbationBudget> grid{state_budget(0.0, 0.0), state_budget(0.05, 0.1), state_budget(0.1, 0.2)};
  const auto cells = attack_cells(agent, AdversaryKind::PAAD, grid, *env, small_attacker(), {7}, proto);
  ASSERT_EQ(cells.size(), 3u);
  for (std::size_t k = 0; k + 1 < cells.size(); ++k) {
    ASSERT_FALSE(cells[k].failed) << cells[k].error;
    EXPECT_LE(cells[k + 1].mean_return, cells[k].mean_return + cells[k].stderr_ + cells[k + 1].stderr_) << k;
  }
}

TEST(EpsilonBarAblation, InactiveCouplingMatchesPlainAttacker) {
  EnvPtr env = make_pointmass_env(kGoal, false, 0);
  const FrozenAgent agent(pointmass_pd(16, 4, kGoal));
  EvalProtocol proto;
  proto.restarts = 1;
  OracleConfig cfg = small_attacker();
  cfg.iterations = 3;
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const EvalReport rep = epsilon_bar_ablation(agent, *env, state_budget(0.1, 0.02), {0.01, 0.02, 0.3}, cfg, seeds,
                                              AdversaryKind::PAAD, proto);
  ASSERT_EQ(rep.cells.size(), 12u);
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    const EvalCell& loose = rep.cells[2 * seeds.size() + k];
    const EvalCell& plain = rep.cells[3 * seeds.size() + k];
    EXPECT_EQ(loose.epsilon_bar, 0.3);
    EXPECT_EQ(plain.kind, "paad-plain");
    EXPECT_LE(std::abs(loose.mean_return - plain.mean_return), 2.0 * std::hypot(loose.stderr_, plain.stderr_) + 1e-12);
  }
  const auto summary = rep.summary();
  ASSERT_EQ(summary.size(), 4u);
  for (const auto& g : summary) EXPECT_EQ(g["seeds"].get<std::size_t>(), 3u);
  EXPECT_THROW(epsilon_bar_ablation(agent, *env, state_budget(0.1, 0.02), {0.01, 0.02}, cfg, seeds), ConfigError);
  EXPECT_THROW(epsilon_bar_ablation(agent, *env, state_budget(0.1, 0.02), {}, cfg, seeds), ConfigError);
}

TEST(EvalReport, CsvRowsAndSummaryMedians) {
  EvalReport rep;
  PerturbationBudget b = state_budget(0.1, 0.02);
  rep.cells.push_back(make_cell("paad", b, 1, {1.0, 3.0}));
  rep.cells.push_back(make_cell("paad", b, 2, {5.0}));
  rep.cells.push_back(make_cell("paad", b, 3, {-4.0, 0.0}));
  EvalCell failed = make_cell("paad", b, 4, {});
  failed.failed = true;
  rep.cells.push_back(failed);
  const std::string csv = rep.to_csv();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_NE(csv.find(",4,"), std::string::npos);
  EXPECT_NE(csv.find("failed"), std::string::npos);
  const auto s = rep.summary();
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0]["seeds"].get<std::size_t>(), 4u);
  EXPECT_EQ(s[0]["failed"].get<std::size_t>(), 1u);
  EXPECT_DOUBLE_EQ(s[0]["median"].get<double>(), 2.0);  // per-seed means {2, 5, -2}
  EXPECT_DOUBLE_EQ(s[0]["mean"].get<double>(), 5.0 / 3.0);
}

TEST(FrozenAgent, MixtureDrawsMembersByMetaStrategy) {
  EnvPtr env = make_matrix_game_env({{1.0, 1.0}, {0.0, 0.0}});
  const FrozenAgent mix({pure_matrix_policy(2, 0), pure_matrix_policy(2, 1)}, MetaStrategy{{0.25, 0.75}});
  Rng rng(6);
  EvalProtocol proto;
  const auto r = evaluate_returns(mix, nullptr, nullptr, *env, 4000, rng, proto);
  const double freq = summarize(r).mean;
  EXPECT_NEAR(freq, 0.25, 4.0 * std::sqrt(0.25 * 0.75 / 4000));
  EXPECT_THROW(FrozenAgent({pure_matrix_policy(2, 0)}, MetaStrategy{{0.5, 0.5}}), ContractViolation);
}

}  // namespace
}  // namespace grad

#include <gtest/gtest.h>

#include "grad/engine.hpp"
#include "grad/meta_game.hpp"
#include "lp_oracle.hpp"
#include "test_util.hpp"

namespace grad {
namespace {

void expect_probs(const MetaStrategy& s, const Vec& want, double tol = 1e-9) {
  ASSERT_EQ(s.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(s.probs[i], want[i], tol) << "entry " << i;
}

TEST(SolveZeroSum, PureSaddle) {
  const auto s = solve_zero_sum({{0, -1}, {1, 0}});
  expect_probs(s.row, {0, 1});
  expect_probs(s.col, {0, 1});
  EXPECT_NEAR(s.value, 0.0, 1e-12);
}

TEST(SolveZeroSum, RockPaperScissorsIsUniform) {
  const auto s = solve_zero_sum(testing::rps());
  expect_probs(s.row, {1.0 / 3, 1.0 / 3, 1.0 / 3});
  expect_probs(s.col, {1.0 / 3, 1.0 / 3, 1.0 / 3});
  EXPECT_NEAR(s.value, 0.0, 1e-12);
}

TEST(SolveZeroSum, OneByOne) {
  const auto s = solve_zero_sum({{2.5}});
  expect_probs(s.row, {1});
  expect_probs(s.col, {1});
  EXPECT_EQ(s.value, 2.5);
}

TEST(SolveZeroSum, NonFiniteIsRejected) {
  EXPECT_THROW(solve_zero_sum({{0, NAN}, {1, 0}}), ConfigError);
  EXPECT_THROW(solve_zero_sum({{0, INFINITY}}), ConfigError);
  EXPECT_THROW(solve_zero_sum({}), ConfigError);
}

TEST(SolveZeroSum, MatchesSupportEnumeration) {
  Rng rng(1);
  for (int k = 0; k < 200; ++k) {
    const std::size_t m = 2 + rng() % 5, n = 2 + rng() % 5;
    const auto u = testing::random_matrix(m, n, rng, -3, 3);
    const auto s = solve_zero_sum(u);
    const auto ref = testing::support_enumeration(u);
    ASSERT_TRUE(ref.has_value());
    EXPECT_NEAR(s.value, ref->value, 1e-8);
    EXPECT_TRUE(solution_sound(u, s, 1e-8 * (1 + max_abs(u))));
  }
}

TEST(SolveZeroSum, SoundOnRectangularAndDuplicatedGames) {
  Rng rng(2);
  for (int k = 0; k < 300; ++k) {
    auto u = testing::random_matrix(1 + rng() % 8, 1 + rng() % 8, rng, -10, 10);
    if (k % 3 == 0) u.push_back(u.front());  // duplicated strategy, as in list populations
    if (k % 5 == 0)
      for (auto& r : u) r.push_back(r.front());
    const auto s = solve_zero_sum(u);
    EXPECT_TRUE(solution_sound(u, s, 1e-8 * (1 + max_abs(u))));
  }
}

TEST(RegretMatching, ReachesRequestedGap) {
  Rng rng(3);
  for (int k = 0; k < 20; ++k) {
    const auto u = testing::random_matrix(4, 4, rng);
    const auto s = solve_regret_matching(u, 1e-4);
    EXPECT_LE(exact_exploitability(u, s.row.probs, s.col.probs), 1e-4);
    EXPECT_TRUE(s.row.valid() && s.col.valid());
  }
}

TEST(Exploitability, Examples) {
  const auto u = testing::rps();
  EXPECT_NEAR(exact_exploitability(u, Vec{1, 0, 0}, Vec{1.0 / 3, 1.0 / 3, 1.0 / 3}), 1.0, 1e-12);
  const auto s = solve_zero_sum(u);
  EXPECT_NEAR(exact_exploitability(u, s.row.probs, s.col.probs), 0.0, 1e-8);
  Rng rng(4);
  for (int k = 0; k < 500; ++k) {
    const auto m = testing::random_matrix(3, 5, rng);
    Vec x = testing::random_vec(3, rng, 0, 1), q = testing::random_vec(5, rng, 0, 1);
    double sx = 0, sq = 0;
    for (double v : x) sx += v;
    for (double v : q) sq += v;
    for (double& v : x) v /= sx;
    for (double& v : q) v /= sq;
    EXPECT_GE(exact_exploitability(m, x, q), -1e-12);
  }
}

TEST(MetaStrategy, ValidityAndSampling) {
  EXPECT_TRUE(MetaStrategy::uniform(3).valid());
  EXPECT_FALSE((MetaStrategy{{0.5, 0.6}}).valid());
  EXPECT_FALSE((MetaStrategy{{-0.1, 1.1}}).valid());
  const MetaStrategy s{{0.2, 0.0, 0.8}};
  EXPECT_EQ(s.support(), (std::vector<std::size_t>{0, 2}));
  Rng rng(5);
  int twos = 0;
  for (int k = 0; k < 10000; ++k) {
    const auto i = s.sample(rng);
    ASSERT_NE(i, 1u);
    twos += i == 2;
  }
  EXPECT_NEAR(twos / 1e4, 0.8, 0.02);
}

TEST(EstimatePayoff, PurePairIsExact) {
  Rng rng(6);
  const auto u = testing::random_matrix(4, 4, rng);
  EnvPtr env = make_matrix_game_env(u);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      AdversaryAttachment adv;
      adv.kind = AdversaryKind::MatrixColumn;
      adv.state_dim = 1;
      adv.director = pure_matrix_policy(4, j);
      const EntryEstimate e = estimate_payoff_entry(pure_matrix_policy(4, i), &adv, *env, 20, rng);
      EXPECT_EQ(e.mean, u[i][j]);
      EXPECT_EQ(e.stderr_, 0.0);
    }
}

TEST(EstimatePayoff, UniformRpsIsNearZero) {
  EnvPtr env = make_matrix_game_env(testing::rps());
  Architecture a;
  a.input_dim = 1;
  a.hidden = {};
  a.output_dim = 3;
  a.head = Head::Categorical;
  AdversaryAttachment adv;
  adv.kind = AdversaryKind::MatrixColumn;
  adv.state_dim = 1;
  adv.director = Policy::zeros(a);
  Rng rng(7), again(7);
  const EntryEstimate e = estimate_payoff_entry(Policy::zeros(a), &adv, *env, 10000, rng);
  EXPECT_LE(std::abs(e.mean), 3 * e.stderr_);
  EXPECT_GT(e.stderr_, 0.0);
  EXPECT_EQ(estimate_payoff_entry(Policy::zeros(a), &adv, *env, 10000, again).mean, e.mean);
}

TEST(DoubleOracle, RockPaperScissorsFromRock) {
  const auto r = double_oracle_matrix_from(testing::rps(), 0, 0);
  EXPECT_LE(r.iterations, 4u);
  expect_probs(r.solution.row, {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1e-9);
  expect_probs(r.solution.col, {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1e-9);
}

TEST(DoubleOracle, RockPaperScissorsFromAnyStart) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto r = double_oracle_matrix(testing::rps(), seed);
    expect_probs(r.solution.row, {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1e-9);
    expect_probs(r.solution.col, {1.0 / 3, 1.0 / 3, 1.0 / 3}, 1e-9);
    EXPECT_NEAR(r.solution.value, 0.0, 1e-9);
  }
}

TEST(DoubleOracle, PureSaddleTerminatesQuickly) {
  const Matrix u{{3, 1, 4}, {2, 0, 1}, {5, 2, 6}};  // saddle at (2, 1), value 2
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto r = double_oracle_matrix(u, seed);
    EXPECT_LE(r.iterations, 2u);
    EXPECT_NEAR(r.solution.value, 2.0, 1e-12);
    expect_probs(r.solution.row, {0, 0, 1});
    expect_probs(r.solution.col, {0, 1, 0});
  }
}

TEST(DoubleOracle, MatchesFullGameOracle) {
  Rng rng(8);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const std::size_t k = 2 + seed % 7;
    const auto u = testing::random_matrix(k, k, rng);
    const auto r = double_oracle_matrix(u, seed);
    const auto ref = testing::support_enumeration(u);
    ASSERT_TRUE(ref);
    EXPECT_NEAR(r.solution.value, ref->value, 1e-6);
    EXPECT_LE(exact_exploitability(u, r.solution.row.probs, r.solution.col.probs), 1e-6);
  }
}

TEST(DoubleOracle, NonTerminalIterationsAddNewStrategies) {
  Rng rng(9);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto u = testing::random_matrix(6, 6, rng);
    const auto r = double_oracle_matrix(u, seed);
    std::vector<std::size_t> rows{r.row_population.front()}, cols{r.col_population.front()};
    for (std::size_t it = 0; it + 1 < r.iterations; ++it) {
      const auto [br, bc] = r.trace[it];
      const bool new_row = std::find(rows.begin(), rows.end(), br) == rows.end();
      const bool new_col = std::find(cols.begin(), cols.end(), bc) == cols.end();
      EXPECT_TRUE(new_row || new_col) << "seed " << seed << " iteration " << it;
      EXPECT_GT(r.exploitability[it], 1e-9);
      rows.push_back(br);
      cols.push_back(bc);
    }
    for (double e : r.exploitability) EXPECT_GE(e, -1e-9);
  }
}

TEST(PayoffMatrix, CsvJsonAndGrowth) {
  PayoffMatrix p;
  p.resize(2, 1);
  p.set(0, 0, 1.5, 0.1, 20);
  p.set(1, 0, -0.25, 0.0, 20);
  EXPECT_TRUE(p.ready(20));
  p.resize(2, 2);
  EXPECT_FALSE(p.ready(20));
  p.set(0, 1, 0.1, 0.2, 25);
  p.set(1, 1, 0.3, 0.2, 19);
  EXPECT_FALSE(p.ready(20));
  EXPECT_EQ(p.adversary_value(0, 0), -1.5);
  EXPECT_THROW(p.resize(1, 2), ContractViolation);
  const std::string csv = p.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "agent\\adversary,v0,v1");
  EXPECT_NE(csv.find("a0,1.5,0.10000000000000001"), std::string::npos) << csv;
  EXPECT_EQ(PayoffMatrix::from_json(json::parse(p.to_json().dump())), p);
}

}  // namespace
}  // namespace grad

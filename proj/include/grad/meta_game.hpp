#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "grad/common.hpp"
#include "grad/rollout.hpp"

namespace grad {

using Matrix = std::vector<Vec>;

// Probability vector over one side's population.
struct MetaStrategy {
  Vec probs;

  static MetaStrategy pure(std::size_t n, std::size_t i) {
    MetaStrategy m{Vec(n, 0.0)};
    m.probs[i] = 1.0;
    return m;
  }
  static MetaStrategy uniform(std::size_t n) { return {Vec(n, 1.0 / static_cast<double>(n))}; }

  std::size_t size() const { return probs.size(); }

  std::vector<std::size_t> support(double tol = 0.0) const {
    std::vector<std::size_t> s;
    for (std::size_t i = 0; i < probs.size(); ++i)
      if (probs[i] > tol) s.push_back(i);
    return s;
  }

  bool valid(double tol = 1e-9) const {
    double sum = 0.0;
    for (double p : probs) {
      if (!(p >= 0.0)) return false;
      sum += p;
    }
    return !probs.empty() && std::abs(sum - 1.0) <= tol;
  }

  std::size_t sample(Rng& rng) const {
    const double u = uniform01(rng);
    double c = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      c += probs[i];
      if (u < c) return i;
    }
    for (std::size_t i = probs.size(); i-- > 0;)
      if (probs[i] > 0.0) return i;
    return 0;
  }

  bool operator==(const MetaStrategy&) const = default;
};

struct RestrictedGameSolution {
  MetaStrategy row;  // maximizer (agent)
  MetaStrategy col;  // minimizer (adversary)
  double value = 0.0;
};

inline void validate_matrix(const Matrix& u) {
  if (u.empty() || u.front().empty()) throw ConfigError("payoff matrix must be at least 1x1");
  const std::size_t n = u.front().size();
  for (const auto& row : u) {
    if (row.size() != n) throw ConfigError("payoff matrix rows have unequal length");
    if (!all_finite(row)) throw ConfigError("payoff matrix has non-finite entries");
  }
}

inline double max_abs(const Matrix& u) {
  double m = 0.0;
  for (const auto& r : u) m = std::max(m, norm_inf(r));
  return m;
}

// (U q)_i for every row.
inline Vec row_payoffs(const Matrix& u, std::span<const double> col) {
  Vec out(u.size(), 0.0);
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = dot(u[i], col);
  return out;
}

// (x^T U)_j for every column.
inline Vec col_payoffs(const Matrix& u, std::span<const double> row) {
  Vec out(u.front().size(), 0.0);
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += row[i] * u[i][j];
  return out;
}

// max_i (U q)_i - min_j (x^T U)_j: sum of both sides' best-response gains.
inline double exact_exploitability(const Matrix& u, std::span<const double> row, std::span<const double> col) {
  const Vec rp = row_payoffs(u, col);
  const Vec cp = col_payoffs(u, row);
  return *std::max_element(rp.begin(), rp.end()) - *std::min_element(cp.begin(), cp.end());
}

inline bool solution_sound(const Matrix& u, const RestrictedGameSolution& s, double tol) {
  const Vec rp = row_payoffs(u, s.col.probs);
  const Vec cp = col_payoffs(u, s.row.probs);
  return *std::min_element(cp.begin(), cp.end()) >= s.value - tol &&
         *std::max_element(rp.begin(), rp.end()) <= s.value + tol && s.row.valid(1e-9) && s.col.valid(1e-9);
}

namespace detail {

inline void clean_simplex(Vec& p) {
  double sum = 0.0;
  for (double& x : p) {
    if (x < 0.0) x = 0.0;
    sum += x;
  }
  for (double& x : p) x /= sum;
}

// Dense tableau simplex with Bland's rule. Solves max 1'z s.t. A z <= 1, z >= 0
// for a strictly positive A; returns false on numerical breakdown.
inline bool simplex_game(const Matrix& a, Vec& z, Vec& y) {
  const std::size_t m = a.size(), n = a.front().size();
  const std::size_t cols = n + m + 1;
  std::vector<Vec> t(m + 1, Vec(cols, 0.0));
  std::vector<std::size_t> basis(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) t[i][j] = a[i][j];
    t[i][n + i] = 1.0;
    t[i][cols - 1] = 1.0;
    basis[i] = n + i;
  }
  for (std::size_t j = 0; j < n; ++j) t[m][j] = -1.0;
  constexpr double kEps = 1e-12;
  const std::size_t max_pivots = 50 * (n + m) + 1000;
  for (std::size_t it = 0;; ++it) {
    if (it > max_pivots) return false;
    std::size_t enter = cols;
    for (std::size_t j = 0; j + 1 < cols; ++j)
      if (t[m][j] < -kEps) {
        enter = j;
        break;
      }
    if (enter == cols) break;
    std::size_t leave = m;
    double best = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (t[i][enter] <= kEps) continue;
      const double ratio = t[i][cols - 1] / t[i][enter];
      if (leave == m || ratio < best - kEps || (std::abs(ratio - best) <= kEps && basis[i] < basis[leave])) {
        leave = i;
        best = ratio;
      }
    }
    if (leave == m) return false;  // unbounded: impossible for positive A
    const double piv = t[leave][enter];
    for (double& v : t[leave]) v /= piv;
    for (std::size_t i = 0; i <= m; ++i) {
      if (i == leave) continue;
      const double f = t[i][enter];
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < cols; ++j) t[i][j] -= f * t[leave][j];
    }
    basis[leave] = enter;
  }
  z.assign(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    if (basis[i] < n) z[basis[i]] = t[i][cols - 1];
  y.assign(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) y[i] = t[m][n + i];
  return true;
}

}  // namespace detail

// Regret matching+ with linearly averaged strategies; stops once the duality gap of
// the averages is <= gap_tol or after max_iters.
inline RestrictedGameSolution solve_regret_matching(const Matrix& u, double gap_tol, std::size_t max_iters = 200000) {
  validate_matrix(u);
  const std::size_t m = u.size(), n = u.front().size();
  Vec rr(m, 0.0), rc(n, 0.0), x(m, 1.0 / m), q(n, 1.0 / n), ax(m, 0.0), aq(n, 0.0);
  double wsum = 0.0;
  auto normalize_regrets = [](const Vec& r, Vec& s) {
    double sum = 0.0;
    for (double v : r) sum += std::max(v, 0.0);
    for (std::size_t i = 0; i < r.size(); ++i)
      s[i] = sum > 0.0 ? std::max(r[i], 0.0) / sum : 1.0 / static_cast<double>(r.size());
  };
  RestrictedGameSolution best;
  double best_gap = std::numeric_limits<double>::infinity();
  for (std::size_t it = 1; it <= max_iters; ++it) {
    const Vec rp = row_payoffs(u, q);
    const double vx = dot(x, rp);
    for (std::size_t i = 0; i < m; ++i) rr[i] = std::max(rr[i] + rp[i] - vx, 0.0);
    normalize_regrets(rr, x);
    const Vec cp = col_payoffs(u, x);
    const double vq = dot(q, cp);
    for (std::size_t j = 0; j < n; ++j) rc[j] = std::max(rc[j] + vq - cp[j], 0.0);
    normalize_regrets(rc, q);
    const double w = static_cast<double>(it);
    wsum += w;
    for (std::size_t i = 0; i < m; ++i) ax[i] += w * x[i];
    for (std::size_t j = 0; j < n; ++j) aq[j] += w * q[j];
    if (it % 64 == 0 || it == max_iters) {
      Vec xs = ax, qs = aq;
      for (double& v : xs) v /= wsum;
      for (double& v : qs) v /= wsum;
      const double gap = exact_exploitability(u, xs, qs);
      if (gap < best_gap) {
        best_gap = gap;
        best.row.probs = xs;
        best.col.probs = qs;
        best.value = dot(xs, row_payoffs(u, qs));
      }
      if (gap <= gap_tol) break;
    }
  }
  return best;
}

// Maximin/minimax solution of the zero-sum game with agent payoff U.
// Exact LP (simplex, Bland's rule for deterministic tie-breaking); falls back to
// regret matching if the LP result fails its soundness check.
inline RestrictedGameSolution solve_zero_sum(const Matrix& u, double tol = 1e-8) {
  validate_matrix(u);
  const std::size_t m = u.size(), n = u.front().size();
  double lo = std::numeric_limits<double>::infinity();
  for (const auto& r : u)
    for (double v : r) lo = std::min(lo, v);
  const double shift = 1.0 - lo;
  Matrix a = u;
  for (auto& r : a)
    for (double& v : r) v += shift;
  Vec z, y;
  const double scaled_tol = tol * (1.0 + max_abs(u));
  if (detail::simplex_game(a, z, y)) {
    double sz = 0.0, sy = 0.0;
    for (double v : z) sz += v;
    for (double v : y) sy += v;
    if (sz > 0.0 && sy > 0.0) {
      RestrictedGameSolution s;
      s.col.probs = z;
      s.row.probs = y;
      detail::clean_simplex(s.col.probs);
      detail::clean_simplex(s.row.probs);
      s.value = 1.0 / sz - shift;
      if (m == 1 && n == 1) s.value = u[0][0];
      if (solution_sound(u, s, scaled_tol)) return s;
    }
  }
  return solve_regret_matching(u, scaled_tol);
}

// Empirical agent-payoff matrix over (agent policy i, adversary policy j).
class PayoffMatrix {
 public:
  std::size_t rows() const { return mean_.size(); }
  std::size_t cols() const { return cols_; }

  void resize(std::size_t r, std::size_t c) {
    if (r < rows() || c < cols_) throw ContractViolation("payoff matrix cannot shrink");
    for (auto* m : {&mean_, &stderr_}) {
      m->resize(r);
      for (auto& row : *m) row.resize(c, 0.0);
    }
    counts_.resize(r);
    for (auto& row : counts_) row.resize(c, 0);
    cols_ = c;
  }

  void set(std::size_t i, std::size_t j, double mean, double se, std::size_t count) {
    mean_.at(i).at(j) = mean;
    stderr_.at(i).at(j) = se;
    counts_.at(i).at(j) = count;
  }

  void invalidate(std::size_t i, std::size_t j) { counts_.at(i).at(j) = 0; }

  double mean(std::size_t i, std::size_t j) const { return mean_.at(i).at(j); }
  // Adversary-side payoff: always the exact negation of the stored agent value.
  double adversary_value(std::size_t i, std::size_t j) const { return -mean_.at(i).at(j); }
  double stderr_at(std::size_t i, std::size_t j) const { return stderr_.at(i).at(j); }
  std::size_t count(std::size_t i, std::size_t j) const { return counts_.at(i).at(j); }

  bool ready(std::size_t min_count) const {
    for (const auto& r : counts_)
      for (auto c : r)
        if (c < min_count) return false;
    return true;
  }

  const Matrix& means() const { return mean_; }
  const std::vector<std::vector<std::size_t>>& counts() const { return counts_; }
  const Matrix& stderrs() const { return stderr_; }

  std::string to_csv() const {
    std::string out = "agent\\adversary";
    for (std::size_t j = 0; j < cols_; ++j) out += ",v" + std::to_string(j);
    out += "\n";
    char buf[64];
    for (std::size_t i = 0; i < rows(); ++i) {
      out += "a" + std::to_string(i);
      for (std::size_t j = 0; j < cols_; ++j) {
        std::snprintf(buf, sizeof(buf), ",%.17g", mean_[i][j]);
        out += buf;
      }
      out += "\n";
    }
    return out;
  }

  nlohmann::json sidecar() const { return {{"rows", rows()}, {"cols", cols_}, {"counts", counts_}, {"stderr", stderr_}}; }

  nlohmann::json to_json() const { return {{"mean", mean_}, {"stderr", stderr_}, {"counts", counts_}, {"cols", cols_}}; }

  static PayoffMatrix from_json(const nlohmann::json& j) {
    PayoffMatrix p;
    p.mean_ = j.at("mean").get<Matrix>();
    p.stderr_ = j.at("stderr").get<Matrix>();
    p.counts_ = j.at("counts").get<std::vector<std::vector<std::size_t>>>();
    p.cols_ = j.at("cols").get<std::size_t>();
    if (p.stderr_.size() != p.mean_.size() || p.counts_.size() != p.mean_.size())
      throw CorruptFile("payoff matrix: inconsistent dimensions");
    return p;
  }

  void write(const std::string& csv_path, const std::string& json_path) const {
    std::ofstream(csv_path) << to_csv();
    std::ofstream(json_path) << sidecar().dump(2) << "\n";
  }

  bool operator==(const PayoffMatrix&) const = default;

 private:
  Matrix mean_;
  Matrix stderr_;
  std::vector<std::vector<std::size_t>> counts_;
  std::size_t cols_ = 0;
};

struct EntryEstimate {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t n = 0;
};

// Mean episodic agent return of `agent` against `adversary` over n independent rollouts.
inline EntryEstimate estimate_payoff_entry(const Policy& agent, const AdversaryAttachment* adversary,
                                           const Environment& env, std::size_t n_episodes, Rng& rng,
                                           const PerturbationBudget* budget = nullptr,
                                           const RolloutOptions& opts = {}) {
  if (n_episodes < 1) throw ConfigError("estimate_payoff_entry: n_episodes must be >= 1");
  auto e = env.clone();
  std::vector<double> returns;
  returns.reserve(n_episodes);
  for (std::size_t k = 0; k < n_episodes; ++k) returns.push_back(rollout(*e, agent, adversary, budget, rng, opts).episode_return);
  const SampleStats s = summarize(returns);
  return {s.mean, s.stderr_, n_episodes};
}

struct DoubleOracleResult {
  RestrictedGameSolution solution;  // strategies over the full game's actions
  std::size_t iterations = 0;
  std::vector<std::size_t> row_population;
  std::vector<std::size_t> col_population;
  std::vector<std::pair<std::size_t, std::size_t>> trace;  // best responses added per iteration
  std::vector<double> exploitability;                      // full-game, per iteration
  std::vector<RestrictedGameSolution> restricted;           // restricted solution per iteration
};

inline Matrix restrict(const Matrix& u, const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cols) {
  Matrix r(rows.size(), Vec(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j) r[i][j] = u[rows[i]][cols[j]];
  return r;
}

// Spreads a meta-strategy over a population of pure actions onto the full action set.
inline Vec lift(const MetaStrategy& s, const std::vector<std::size_t>& population, std::size_t k) {
  Vec out(k, 0.0);
  for (std::size_t i = 0; i < population.size(); ++i) out[population[i]] += s.probs[i];
  return out;
}

inline std::size_t argmax_first(const Vec& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}
inline std::size_t argmin_first(const Vec& v) {
  return static_cast<std::size_t>(std::min_element(v.begin(), v.end()) - v.begin());
}

// The seeded initial pure strategy of each side.
inline std::pair<std::size_t, std::size_t> double_oracle_start(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng = derive_rng(seed, {0x646f});
  const auto r = std::uniform_int_distribution<std::size_t>(0, rows - 1)(rng);
  const auto c = std::uniform_int_distribution<std::size_t>(0, cols - 1)(rng);
  return {r, c};
}

// Exact double oracle. Populations are lists: each iteration appends both sides'
// pure best responses to the current restricted equilibrium, then stops once the
// full-game exploitability of that equilibrium is <= tol.
inline DoubleOracleResult double_oracle_matrix_from(const Matrix& u, std::size_t r0, std::size_t c0,
                                                    double tol = 1e-9, std::size_t max_iterations = 10000) {
  validate_matrix(u);
  if (r0 >= u.size() || c0 >= u.front().size()) throw ContractViolation("double oracle: start outside the game");
  DoubleOracleResult res;
  res.row_population = {r0};
  res.col_population = {c0};
  for (std::size_t it = 0; it < max_iterations; ++it) {
    const RestrictedGameSolution sub = solve_zero_sum(restrict(u, res.row_population, res.col_population));
    const Vec x = lift(sub.row, res.row_population, u.size());
    const Vec q = lift(sub.col, res.col_population, u.front().size());
    const std::size_t br_row = argmax_first(row_payoffs(u, q));
    const std::size_t br_col = argmin_first(col_payoffs(u, x));
    const double expl = exact_exploitability(u, x, q);
    res.row_population.push_back(br_row);
    res.col_population.push_back(br_col);
    res.trace.emplace_back(br_row, br_col);
    res.exploitability.push_back(expl);
    res.restricted.push_back(sub);
    res.iterations = it + 1;
    res.solution = {MetaStrategy{x}, MetaStrategy{q}, sub.value};
    if (expl <= tol) break;
  }
  return res;
}

inline DoubleOracleResult double_oracle_matrix(const Matrix& u, std::uint64_t seed, double tol = 1e-9,
                                               std::size_t max_iterations = 10000) {
  validate_matrix(u);
  const auto [r0, c0] = double_oracle_start(u.size(), u.front().size(), seed);
  return double_oracle_matrix_from(u, r0, c0, tol, max_iterations);
}

}  // namespace grad

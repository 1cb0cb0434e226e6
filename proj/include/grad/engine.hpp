#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "grad/io.hpp"
#include "grad/meta_game.hpp"
#include "grad/oracle.hpp"

namespace grad {

// Linear warmup of (eps, eps_bar) from zero to the targets over the first
// `warmup_fraction` of the epochs, constant afterwards.
struct BudgetSchedule {
  PerturbationBudget target;
  double warmup_fraction = 0.5;
  std::size_t total_epochs = 30;

  double factor(std::size_t epoch) const {
    if (warmup_fraction <= 0.0 || total_epochs == 0) return 1.0;
    const double progress = static_cast<double>(epoch) / static_cast<double>(total_epochs);
    return std::min(1.0, progress / warmup_fraction);
  }

  PerturbationBudget active(std::size_t epoch) const { return target.scaled(factor(epoch)); }
};

// ---------------------------------------------------------------------------
// Best-response oracles

class BestResponseOracle {
 public:
  virtual ~BestResponseOracle() = default;
  virtual Policy initial_agent(const Environment& env, Rng& rng) = 0;
  virtual AdversaryAttachment initial_adversary(const Environment& env, const AdversaryTemplate& tmpl, Rng& rng) = 0;
  virtual Policy agent_response(const std::vector<AdversaryAttachment>& adversaries, const MetaStrategy& sigma_v,
                                const Environment& env, const PerturbationBudget& budget, Rng& rng) = 0;
  virtual AdversaryAttachment adversary_response(const std::vector<Policy>& agents, const MetaStrategy& sigma_a,
                                                 const Environment& env, const AdversaryTemplate& tmpl,
                                                 const PerturbationBudget& budget, Rng& rng) = 0;
};

class PpoOracle final : public BestResponseOracle {
 public:
  explicit PpoOracle(OracleConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const OracleConfig& config() const { return cfg_; }
  const std::vector<std::vector<CurvePoint>>& curves() const { return curves_; }

  Policy initial_agent(const Environment& env, Rng& rng) override {
    Policy p = Policy::random(agent_architecture(env.spec(), cfg_.hidden), rng);
    return p;
  }

  AdversaryAttachment initial_adversary(const Environment& env, const AdversaryTemplate& tmpl, Rng& rng) override {
    return make_adversary(tmpl.kind, env.spec(), tmpl.budget, cfg_.hidden, rng);
  }

  Policy agent_response(const std::vector<AdversaryAttachment>& adversaries, const MetaStrategy& sigma_v,
                        const Environment& env, const PerturbationBudget& budget, Rng& rng) override {
    Opponents opp{nullptr, &adversaries, sigma_v};
    BestResponse br = train_best_response(LearnerSide::Agent, opp, env, &budget, cfg_, rng);
    curves_.push_back(br.curve);
    return br.policy;
  }

  AdversaryAttachment adversary_response(const std::vector<Policy>& agents, const MetaStrategy& sigma_a,
                                         const Environment& env, const AdversaryTemplate& tmpl,
                                         const PerturbationBudget& budget, Rng& rng) override {
    Opponents opp{&agents, nullptr, sigma_a};
    BestResponse br = train_best_response(LearnerSide::Adversary, opp, env, &budget, cfg_, rng, &tmpl);
    curves_.push_back(br.curve);
    return br.attachment;
  }

 private:
  OracleConfig cfg_;
  std::vector<std::vector<CurvePoint>> curves_;
};

// Deterministic categorical policy on a matrix game that always plays `index`.
inline Policy pure_matrix_policy(std::size_t k, std::size_t index) {
  Architecture a;
  a.input_dim = 1;
  a.hidden = {};
  a.output_dim = k;
  a.head = Head::Categorical;
  Policy p = Policy::zeros(a);
  // Logit gap of 1000 makes every other probability underflow to exactly 0.
  p.mutable_params()[k + index] = 1000.0;
  return p;
}

// Mixed strategy over the matrix game's actions induced by a population and meta-strategy.
inline Vec matrix_mixture(const std::vector<Policy>& pop, const MetaStrategy& sigma) {
  Vec out;
  const Vec obs{0.0};
  for (std::size_t i = 0; i < pop.size(); ++i) {
    const Vec p = pop[i].probabilities(obs);
    if (out.empty()) out.assign(p.size(), 0.0);
    for (std::size_t k = 0; k < p.size(); ++k) out[k] += sigma.probs[i] * p[k];
  }
  return out;
}

inline std::vector<Policy> directors(const std::vector<AdversaryAttachment>& pop) {
  std::vector<Policy> out;
  for (const auto& a : pop) out.push_back(a.director);
  return out;
}

// Exact best responses on a matrix game by enumerating pure strategies.
class MatrixEnumerationOracle final : public BestResponseOracle {
 public:
  MatrixEnumerationOracle(Matrix payoff, std::uint64_t seed) : u_(std::move(payoff)), seed_(seed) { validate_matrix(u_); }

  Policy initial_agent(const Environment&, Rng&) override {
    return pure_matrix_policy(u_.size(), double_oracle_start(u_.size(), u_.size(), seed_).first);
  }

  AdversaryAttachment initial_adversary(const Environment& env, const AdversaryTemplate& tmpl, Rng&) override {
    return column_attachment(env, tmpl, double_oracle_start(u_.size(), u_.size(), seed_).second);
  }

  Policy agent_response(const std::vector<AdversaryAttachment>& adversaries, const MetaStrategy& sigma_v,
                        const Environment&, const PerturbationBudget&, Rng&) override {
    const Vec q = matrix_mixture(directors(adversaries), sigma_v);
    return pure_matrix_policy(u_.size(), argmax_first(row_payoffs(u_, q)));
  }

  AdversaryAttachment adversary_response(const std::vector<Policy>& agents, const MetaStrategy& sigma_a,
                                         const Environment& env, const AdversaryTemplate& tmpl,
                                         const PerturbationBudget&, Rng&) override {
    const Vec x = matrix_mixture(agents, sigma_a);
    return column_attachment(env, tmpl, argmin_first(col_payoffs(u_, x)));
  }

 private:
  AdversaryAttachment column_attachment(const Environment& env, const AdversaryTemplate& tmpl, std::size_t j) const {
    AdversaryAttachment a;
    a.kind = AdversaryKind::MatrixColumn;
    a.budget = tmpl.budget;
    a.state_dim = env.spec().state_dim;
    a.director = pure_matrix_policy(u_.size(), j);
    return a;
  }

  Matrix u_;
  std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Engine state and epoch

struct EngineConfig {
  std::size_t epochs = 30;
  std::optional<double> threshold;  // exploitability threshold; auto when absent
  double warmup_fraction = 0.5;
  std::size_t payoff_episodes = 20;
  std::size_t min_payoff_episodes = 20;
  std::size_t workers = 1;
  AdversaryTemplate adversary;
  std::string out_dir;  // empty: no files written

  void validate() const {
    if (epochs == 0) throw ConfigError("engine.epochs must be >= 1");
    if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) throw ConfigError("engine.warmup_fraction must lie in [0,1]");
    if (payoff_episodes < min_payoff_episodes)
      throw ConfigError("engine.payoff_episodes must be >= engine.min_payoff_episodes");
    if (threshold && !(*threshold >= 0.0)) throw ConfigError("engine.threshold must be >= 0");
    adversary.budget.validate();
  }
};

struct GradState {
  std::size_t epoch = 0;
  std::vector<Policy> agents;
  std::vector<AdversaryAttachment> adversaries;
  PayoffMatrix payoff;
  Matrix estimated_at;  // schedule factor at which each cell was estimated
  MetaStrategy sigma_a;
  MetaStrategy sigma_v;
  BudgetSchedule schedule;
  Rng rng;
  std::vector<double> exploitability;
  std::optional<double> threshold;

  void check() const {
    if (payoff.rows() != agents.size() || payoff.cols() != adversaries.size())
      throw ContractViolation("GradState: payoff dimensions do not match populations");
    if (!sigma_a.valid() || sigma_a.size() != agents.size() || !sigma_v.valid() || sigma_v.size() != adversaries.size())
      throw ContractViolation("GradState: meta-strategies are not valid over the populations");
  }
};

namespace detail {

inline void fill_payoffs(GradState& st, const Environment& env, const EngineConfig& cfg, const PerturbationBudget& budget,
                         double factor, std::uint64_t stream) {
  struct Cell {
    std::size_t i, j;
  };
  std::vector<Cell> cells;
  for (std::size_t i = 0; i < st.agents.size(); ++i)
    for (std::size_t j = 0; j < st.adversaries.size(); ++j)
      if (st.payoff.count(i, j) < cfg.min_payoff_episodes) cells.push_back({i, j});
  std::vector<EntryEstimate> est(cells.size());
  auto work = [&](std::size_t from, std::size_t step) {
    for (std::size_t k = from; k < cells.size(); k += step) {
      Rng rng = derive_rng(stream, {cells[k].i, cells[k].j});
      est[k] = estimate_payoff_entry(st.agents[cells[k].i], &st.adversaries[cells[k].j], env, cfg.payoff_episodes, rng,
                                     &budget);
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(cfg.workers, cells.size()));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
    for (auto& t : pool) t.join();
  }
  for (std::size_t k = 0; k < cells.size(); ++k) {
    st.payoff.set(cells[k].i, cells[k].j, est[k].mean, est[k].stderr_, est[k].n);
    st.estimated_at[cells[k].i][cells[k].j] = factor;
  }
}

inline void resize_estimated(Matrix& m, std::size_t r, std::size_t c) {
  m.resize(r);
  for (auto& row : m) row.resize(c, 0.0);
}

}  // namespace detail

inline GradState init_grad_state(const Environment& env, BestResponseOracle& oracle, const EngineConfig& cfg,
                                 std::uint64_t seed) {
  cfg.validate();
  GradState st;
  st.rng = derive_rng(seed, {0x67726164});
  st.schedule = {cfg.adversary.budget, cfg.warmup_fraction, cfg.epochs};
  st.threshold = cfg.threshold;
  st.agents.push_back(oracle.initial_agent(env, st.rng));
  st.adversaries.push_back(oracle.initial_adversary(env, cfg.adversary, st.rng));
  st.payoff.resize(1, 1);
  detail::resize_estimated(st.estimated_at, 1, 1);
  const double f = st.schedule.factor(0);
  detail::fill_payoffs(st, env, cfg, st.schedule.active(0), f, st.rng());
  const RestrictedGameSolution sol = solve_zero_sum(st.payoff.means());
  st.sigma_a = sol.row;
  st.sigma_v = sol.col;
  return st;
}

// One GRAD epoch: both best responses against the epoch-start meta-strategies,
// population growth, payoff completion, meta-Nash re-solve, schedule advance.
// The recorded exploitability is U(br_a, sigma_v) - U(sigma_a, br_v) for the
// epoch-start meta-strategies. On failure the input state is left untouched.
inline GradState grad_epoch(const GradState& in, const Environment& env, BestResponseOracle& oracle,
                            const EngineConfig& cfg) {
  in.check();
  GradState st = in;
  const PerturbationBudget budget = st.schedule.active(st.epoch);
  const double factor = st.schedule.factor(st.epoch);
  const MetaStrategy sigma_a = st.sigma_a, sigma_v = st.sigma_v;

  Policy br_a = oracle.agent_response(st.adversaries, sigma_v, env, budget, st.rng);
  AdversaryAttachment br_v = oracle.adversary_response(st.agents, sigma_a, env, cfg.adversary, budget, st.rng);
  st.agents.push_back(std::move(br_a));
  st.adversaries.push_back(std::move(br_v));
  st.payoff.resize(st.agents.size(), st.adversaries.size());
  detail::resize_estimated(st.estimated_at, st.agents.size(), st.adversaries.size());

  // Cells estimated under a smaller (warming-up) budget are refreshed once the targets are active.
  if (factor >= 1.0)
    for (std::size_t i = 0; i + 1 < st.agents.size(); ++i)
      for (std::size_t j = 0; j + 1 < st.adversaries.size(); ++j)
        if (st.estimated_at[i][j] < 1.0) st.payoff.invalidate(i, j);
  detail::fill_payoffs(st, env, cfg, budget, factor, st.rng());
  if (!st.payoff.ready(cfg.min_payoff_episodes)) throw ContractViolation("grad_epoch: payoff matrix incomplete");

  const std::size_t new_i = st.agents.size() - 1, new_j = st.adversaries.size() - 1;
  double v_agent = 0.0, v_adv = 0.0;
  for (std::size_t j = 0; j < sigma_v.size(); ++j) v_agent += sigma_v.probs[j] * st.payoff.mean(new_i, j);
  for (std::size_t i = 0; i < sigma_a.size(); ++i) v_adv += sigma_a.probs[i] * st.payoff.adversary_value(i, new_j);
  const double e_hat = v_agent + v_adv;

  const RestrictedGameSolution sol = solve_zero_sum(st.payoff.means());
  st.sigma_a = sol.row;
  st.sigma_v = sol.col;
  st.epoch += 1;
  st.exploitability.push_back(e_hat);
  st.check();
  return st;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline nlohmann::json state_to_json(const GradState& st) {
  nlohmann::json agents = nlohmann::json::array(), advs = nlohmann::json::array();
  for (const auto& a : st.agents) agents.push_back(policy_to_json(a));
  for (const auto& a : st.adversaries) advs.push_back(attachment_to_json(a));
  nlohmann::json j = {{"format_version", kFormatVersion},
                      {"epoch", st.epoch},
                      {"agents", agents},
                      {"adversaries", advs},
                      {"payoff", st.payoff.to_json()},
                      {"estimated_at", st.estimated_at},
                      {"sigma_a", st.sigma_a.probs},
                      {"sigma_v", st.sigma_v.probs},
                      {"schedule",
                       {{"target", budget_to_json(st.schedule.target)},
                        {"warmup_fraction", st.schedule.warmup_fraction},
                        {"total_epochs", st.schedule.total_epochs}}},
                      {"rng", rng_state(st.rng)},
                      {"exploitability", st.exploitability}};
  j["threshold"] = st.threshold ? nlohmann::json(*st.threshold) : nlohmann::json(nullptr);
  return j;
}

inline GradState state_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kFormatVersion)
      throw CorruptFile("checkpoint: format version " + std::to_string(j.at("format_version").get<int>()) +
                        " is not supported (expected " + std::to_string(kFormatVersion) + ")");
    GradState st;
    st.epoch = j.at("epoch").get<std::size_t>();
    for (const auto& a : j.at("agents")) st.agents.push_back(policy_from_json(a));
    for (const auto& a : j.at("adversaries")) st.adversaries.push_back(attachment_from_json(a));
    st.payoff = PayoffMatrix::from_json(j.at("payoff"));
    st.estimated_at = j.at("estimated_at").get<Matrix>();
    st.sigma_a.probs = j.at("sigma_a").get<Vec>();
    st.sigma_v.probs = j.at("sigma_v").get<Vec>();
    const auto& js = j.at("schedule");
    st.schedule.target = budget_from_json(js.at("target"));
    st.schedule.warmup_fraction = js.at("warmup_fraction").get<double>();
    st.schedule.total_epochs = js.at("total_epochs").get<std::size_t>();
    st.rng = rng_from_state(j.at("rng").get<std::string>());
    st.exploitability = j.at("exploitability").get<Vec>();
    if (!j.at("threshold").is_null()) st.threshold = j.at("threshold").get<double>();
    st.check();
    return st;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptFile(std::string("checkpoint: ") + e.what());
  } catch (const ContractViolation& e) {
    throw CorruptFile(std::string("checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const GradState& st, const std::string& path) {
  write_text_file(path, state_to_json(st).dump() + "\n");
}

inline GradState load_checkpoint(const std::string& path) { return state_from_json(read_json_file(path)); }

// ---------------------------------------------------------------------------
// Outer loop

struct GradReport {
  bool converged = false;
  std::size_t epochs = 0;
  double threshold = 0.0;
  std::vector<double> exploitability;
};

struct GradResult {
  GradState state;
  GradReport report;
};

namespace detail {

inline double natural_return(const Policy& agent, const Environment& env, std::size_t n, std::uint64_t seed) {
  Rng rng = derive_rng(seed, {0x6e6174});
  return estimate_payoff_entry(agent, nullptr, env, n, rng).mean;
}

inline std::string exploitability_csv(const std::vector<double>& e) {
  std::string out = "epoch,exploitability\n";
  char buf[64];
  for (std::size_t k = 0; k < e.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", k + 1, e[k]);
    out += buf;
  }
  return out;
}

}  // namespace detail

// Runs epochs until the recorded exploitability drops to the threshold or the
// epoch limit is reached. With no explicit threshold it is set after the first
// epoch to 0.05 x |natural return of the first best response - random-policy return|.
inline GradResult run_grad(const Environment& env, BestResponseOracle& oracle, const EngineConfig& cfg,
                           std::uint64_t seed, std::optional<GradState> resume = std::nullopt) {
  cfg.validate();
  GradResult res{resume ? std::move(*resume) : init_grad_state(env, oracle, cfg, seed), {}};
  GradState& st = res.state;
  namespace fs = std::filesystem;
  std::ofstream events;
  if (!cfg.out_dir.empty()) {
    fs::create_directories(cfg.out_dir);
    events.open(fs::path(cfg.out_dir) / "events.jsonl", std::ios::app);
  }
  while (st.epoch < cfg.epochs) {
    st = grad_epoch(st, env, oracle, cfg);
    if (!st.threshold) {
      const double nat_new = detail::natural_return(st.agents[1], env, cfg.payoff_episodes, seed);
      const double nat_rand = detail::natural_return(st.agents[0], env, cfg.payoff_episodes, seed);
      st.threshold = std::max(1e-6, 0.05 * std::abs(nat_new - nat_rand));
    }
    const double e = st.exploitability.back();
    if (!cfg.out_dir.empty()) {
      const fs::path dir(cfg.out_dir);
      save_checkpoint(st, (dir / ("state-epoch-" + std::to_string(st.epoch) + ".ckpt")).string());
      st.payoff.write((dir / "payoff.csv").string(), (dir / "payoff.json").string());
      write_text_file((dir / "exploitability.csv").string(), detail::exploitability_csv(st.exploitability));
      events << nlohmann::json{{"event", "epoch"},
                               {"epoch", st.epoch},
                               {"exploitability", e},
                               {"threshold", *st.threshold},
                               {"agents", st.agents.size()},
                               {"adversaries", st.adversaries.size()}}
                    .dump()
             << "\n";
    }
    if (e <= *st.threshold) {
      res.report.converged = true;
      break;
    }
  }
  res.report.epochs = st.epoch;
  res.report.threshold = st.threshold.value_or(0.0);
  res.report.exploitability = st.exploitability;
  if (events.is_open())
    events << nlohmann::json{{"event", "done"}, {"converged", res.report.converged}, {"epochs", st.epoch}}.dump() << "\n";
  return res;
}

// Approximate exploitability of (sigma_a, sigma_v) via fresh best responses from `oracle`.
inline double approx_exploitability(const MetaStrategy& sigma_a, const MetaStrategy& sigma_v,
                                    const std::vector<Policy>& agents,
                                    const std::vector<AdversaryAttachment>& adversaries, BestResponseOracle& oracle,
                                    const Environment& env, const AdversaryTemplate& tmpl,
                                    const PerturbationBudget& budget, std::size_t episodes, Rng& rng) {
  const Policy br_a = oracle.agent_response(adversaries, sigma_v, env, budget, rng);
  const AdversaryAttachment br_v = oracle.adversary_response(agents, sigma_a, env, tmpl, budget, rng);
  double v_agent = 0.0, v_adv = 0.0;
  for (std::size_t j = 0; j < adversaries.size(); ++j)
    if (sigma_v.probs[j] > 0.0)
      v_agent += sigma_v.probs[j] * estimate_payoff_entry(br_a, &adversaries[j], env, episodes, rng, &budget).mean;
  for (std::size_t i = 0; i < agents.size(); ++i)
    if (sigma_a.probs[i] > 0.0)
      v_adv -= sigma_a.probs[i] * estimate_payoff_entry(agents[i], &br_v, env, episodes, rng, &budget).mean;
  return v_agent + v_adv;
}

}  // namespace grad

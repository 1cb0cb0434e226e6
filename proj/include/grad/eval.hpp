#pragma once

#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "grad/engine.hpp"
#include "grad/io.hpp"
#include "grad/oracle.hpp"

namespace grad {

// An agent under evaluation: a single policy or a meta-strategy mixture of policies
// (one member is drawn per episode).
struct FrozenAgent {
  std::vector<Policy> policies;
  MetaStrategy meta;

  FrozenAgent() = default;
  explicit FrozenAgent(Policy p) : policies{std::move(p)}, meta(MetaStrategy::pure(1, 0)) {}
  FrozenAgent(std::vector<Policy> pop, MetaStrategy m) : policies(std::move(pop)), meta(std::move(m)) {
    if (!meta.valid() || meta.size() != policies.size()) throw ContractViolation("FrozenAgent: invalid meta-strategy");
  }

  std::uint64_t hash() const {
    Vec all;
    for (const auto& p : policies) all.insert(all.end(), p.params().begin(), p.params().end());
    all.insert(all.end(), meta.probs.begin(), meta.probs.end());
    return hash_params(all);
  }
};

struct EvalProtocol {
  std::size_t episodes = 100;
  std::size_t restarts = 3;
  ActMode agent_mode = ActMode::Mean;
  ActMode adversary_mode = ActMode::Mean;
};

// Returns of `episodes` rollouts of the (possibly mixed) agent.
inline std::vector<double> evaluate_returns(const FrozenAgent& agent, const AdversaryAttachment* adversary,
                                            const PerturbationBudget* budget, const Environment& env,
                                            std::size_t episodes, Rng& rng, const EvalProtocol& proto) {
  auto e = env.clone();
  RolloutOptions opts{proto.agent_mode, proto.adversary_mode};
  std::vector<double> out;
  out.reserve(episodes);
  for (std::size_t k = 0; k < episodes; ++k) {
    const Policy& p = agent.policies[agent.policies.size() == 1 ? 0 : agent.meta.sample(rng)];
    out.push_back(rollout(*e, p, adversary, budget, rng, opts).episode_return);
  }
  return out;
}

// Unattacked statistics; one stream per seed, pooled over all seeds.
inline SampleStats natural_eval(const FrozenAgent& agent, const Environment& env, std::size_t n_episodes,
                                const std::vector<std::uint64_t>& seeds, const EvalProtocol& proto = {}) {
  if (n_episodes < 1) throw ConfigError("natural_eval: n_episodes must be >= 1");
  std::vector<double> all;
  for (auto s : seeds) {
    Rng rng = derive_rng(s, {0x6576616c});
    const auto r = evaluate_returns(agent, nullptr, nullptr, env, n_episodes, rng, proto);
    all.insert(all.end(), r.begin(), r.end());
  }
  return summarize(all);
}

struct AttackResult {
  AdversaryAttachment attacker;       // attacker achieving the lowest agent return
  double worst_case_return = 0.0;     // agent mean return under that attacker
  double stderr_ = 0.0;
  std::vector<double> restart_returns;
};

// Trains fresh adversaries of `kind` against the frozen agent and reports the
// agent's mean return under the strongest (lowest-return) of `restarts` attackers.
inline AttackResult attack_from_scratch(const FrozenAgent& agent, AdversaryKind kind, const PerturbationBudget& budget,
                                        const Environment& env, const OracleConfig& cfg, Rng& rng,
                                        const EvalProtocol& proto = {}) {
  const std::uint64_t before = agent.hash();
  AttackResult res;
  res.worst_case_return = std::numeric_limits<double>::infinity();
  const AdversaryTemplate tmpl{kind, budget};
  for (std::size_t r = 0; r < std::max<std::size_t>(1, proto.restarts); ++r) {
    AdversaryAttachment att;
    if (kind == AdversaryKind::RandomBaseline) {
      att = make_adversary(kind, env.spec(), budget, cfg.hidden, rng);
    } else {
      Opponents opp{&agent.policies, nullptr, agent.meta};
      att = train_best_response(LearnerSide::Adversary, opp, env, &budget, cfg, rng, &tmpl).attachment;
    }
    const auto returns = evaluate_returns(agent, &att, &budget, env, proto.episodes, rng, proto);
    const SampleStats s = summarize(returns);
    res.restart_returns.push_back(s.mean);
    if (s.mean < res.worst_case_return) {
      res.worst_case_return = s.mean;
      res.stderr_ = s.stderr_;
      res.attacker = att;
    }
  }
  if (agent.hash() != before) throw ContractViolation("attack_from_scratch: frozen agent parameters changed");
  return res;
}

// One (kind, eps, eps_bar, alpha, seed) evaluation cell.
struct EvalCell {
  std::string kind = "natural";
  double epsilon = 0.0;
  double epsilon_bar = 0.0;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  double mean_return = 0.0;
  double stderr_ = 0.0;
  double stddev = 0.0;
  std::size_t episodes = 0;
  bool failed = false;
  std::string error;
};

struct EvalReport {
  std::vector<EvalCell> cells;

  std::string to_csv() const {
    std::string out = "kind,epsilon,epsilon_bar,alpha,seed,mean_return,stderr,stddev,episodes,status\n";
    char buf[512];
    for (const auto& c : cells) {
      std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%llu,%.17g,%.17g,%.17g,%zu,%s\n", c.kind.c_str(), c.epsilon,
                    c.epsilon_bar, c.alpha, static_cast<unsigned long long>(c.seed), c.mean_return, c.stderr_,
                    c.stddev, c.episodes, c.failed ? "failed" : "ok");
      out += buf;
    }
    return out;
  }

  // Median / mean / std across seeds for every (kind, eps, eps_bar, alpha) group.
  nlohmann::json summary() const {
    std::map<std::string, std::vector<const EvalCell*>> groups;
    std::vector<std::string> order;
    char key[256];
    for (const auto& c : cells) {
      std::snprintf(key, sizeof(key), "%s|eps=%.6g|eps_bar=%.6g|alpha=%.6g", c.kind.c_str(), c.epsilon, c.epsilon_bar,
                    c.alpha);
      if (!groups.count(key)) order.push_back(key);
      groups[key].push_back(&c);
    }
    nlohmann::json out = nlohmann::json::array();
    for (const auto& k : order) {
      std::vector<double> means;
      std::size_t failed = 0;
      for (const auto* c : groups[k]) {
        if (c->failed)
          ++failed;
        else
          means.push_back(c->mean_return);
      }
      const SampleStats s = summarize(means);
      const auto* c0 = groups[k].front();
      out.push_back({{"kind", c0->kind},
                     {"epsilon", c0->epsilon},
                     {"epsilon_bar", c0->epsilon_bar},
                     {"alpha", c0->alpha},
                     {"seeds", groups[k].size()},
                     {"failed", failed},
                     {"median", s.median},
                     {"mean", s.mean},
                     {"std", s.stddev}});
    }
    return out;
  }

  void write(const std::string& csv_path, const std::string& json_path) const {
    write_text_file(csv_path, to_csv());
    write_text_file(json_path, summary().dump(2) + "\n");
  }
};

inline EvalCell make_cell(std::string kind, const PerturbationBudget& b, std::uint64_t seed,
                          const std::vector<double>& returns) {
  const SampleStats s = summarize(returns);
  EvalCell c;
  c.kind = std::move(kind);
  c.epsilon = b.epsilon;
  c.epsilon_bar = b.epsilon_bar;
  c.alpha = b.alpha;
  c.seed = seed;
  c.mean_return = s.mean;
  c.stderr_ = s.stderr_;
  c.stddev = s.stddev;
  c.episodes = s.n;
  return c;
}

inline std::uint64_t double_bits(double x) {
  std::uint64_t b;
  std::memcpy(&b, &x, sizeof(b));
  return b;
}

// Rng stream of an attack cell. Budgets whose coupling is inactive share the
// stream of the plain eps attacker, so those cells are directly comparable.
inline Rng derive_attack_rng(std::uint64_t seed, AdversaryKind kind, const PerturbationBudget& b) {
  const std::uint64_t bar = b.state_ball().coupling_inactive() ? ~0ull : double_bits(b.epsilon_bar);
  return derive_rng(seed, {0x61747461, static_cast<std::uint64_t>(kind), double_bits(b.epsilon), bar,
                           double_bits(b.action_epsilon), double_bits(b.action_epsilon_bar)});
}

// Attack cells for every seed. Each cell's rng derives from (seed, kind, budget).
inline std::vector<EvalCell> attack_cells(const FrozenAgent& agent, AdversaryKind kind,
                                          const std::vector<PerturbationBudget>& budgets, const Environment& env,
                                          const OracleConfig& cfg, const std::vector<std::uint64_t>& seeds,
                                          const EvalProtocol& proto, const std::string& label = "") {
  std::vector<EvalCell> out;
  for (std::size_t b = 0; b < budgets.size(); ++b) {
    for (auto seed : seeds) {
      Rng rng = derive_attack_rng(seed, kind, budgets[b]);
      EvalCell c;
      try {
        const AttackResult r = attack_from_scratch(agent, kind, budgets[b], env, cfg, rng, proto);
        c = make_cell(label.empty() ? to_string(kind) : label, budgets[b], seed, {});
        c.mean_return = r.worst_case_return;
        c.stderr_ = r.stderr_;
        c.stddev = r.stderr_ * std::sqrt(static_cast<double>(proto.episodes));
        c.episodes = proto.episodes;
      } catch (const Error& e) {
        c = make_cell(label.empty() ? to_string(kind) : label, budgets[b], seed, {});
        c.failed = true;
        c.error = e.what();
      }
      out.push_back(c);
    }
  }
  return out;
}

// Temporally-coupled attackers across an eps_bar grid, plus a plain eps attacker
// (coupling disabled) as the reference cell.
inline EvalReport epsilon_bar_ablation(const FrozenAgent& agent, const Environment& env, const PerturbationBudget& base,
                                       const std::vector<double>& eps_bar_grid, const OracleConfig& cfg,
                                       const std::vector<std::uint64_t>& seeds, AdversaryKind kind = AdversaryKind::PAAD,
                                       const EvalProtocol& proto = {}) {
  if (eps_bar_grid.empty()) throw ConfigError("epsilon_bar_ablation: empty grid");
  bool has_inactive = false;
  for (double eb : eps_bar_grid) has_inactive |= eb >= 2.0 * base.epsilon;
  if (!has_inactive) throw ConfigError("epsilon_bar_ablation: grid must include a value >= 2 epsilon");
  std::vector<PerturbationBudget> budgets;
  for (double eb : eps_bar_grid) {
    PerturbationBudget b = base;
    b.epsilon_bar = eb;
    budgets.push_back(b);
  }
  EvalReport rep;
  rep.cells = attack_cells(agent, kind, budgets, env, cfg, seeds, proto, to_string(kind) + "-coupled");
  PerturbationBudget plain = base;
  plain.epsilon_bar = 2.0 * base.epsilon;
  auto plain_cells = attack_cells(agent, kind, {plain}, env, cfg, seeds, proto, to_string(kind) + "-plain");
  rep.cells.insert(rep.cells.end(), plain_cells.begin(), plain_cells.end());
  return rep;
}

// Mean return per alpha under random action replacement.
inline EvalReport model_uncertainty_sweep(const FrozenAgent& agent, const Environment& env,
                                          const std::vector<double>& alpha_grid, std::size_t n_episodes,
                                          const std::vector<std::uint64_t>& seeds, const EvalProtocol& proto = {}) {
  EvalReport rep;
  for (double a : alpha_grid) {
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("model_uncertainty_sweep: alpha outside [0,1]");
    PerturbationBudget b;
    b.domain = AttackDomain::ModelUncertainty;
    b.alpha = a;
    for (auto seed : seeds) {
      Rng rng = derive_rng(seed, {0x6576616c});
      const auto r = evaluate_returns(agent, nullptr, &b, env, n_episodes, rng, proto);
      rep.cells.push_back(make_cell("model_uncertainty", b, seed, r));
    }
  }
  return rep;
}


inline json frozen_agent_to_json(const FrozenAgent& a) {
  json pols = json::array();
  for (const auto& p : a.policies) pols.push_back(policy_to_json(p));
  return {{"format_version", kFormatVersion}, {"policies", pols}, {"meta", a.meta.probs}};
}

// Accepts a frozen-agent file, a single policy file or an engine checkpoint
// (whose agent population is mixed by sigma_a).
inline FrozenAgent frozen_agent_from_json(const json& j) {
  if (j.at("format_version").get<int>() != kFormatVersion) throw CorruptFile("agent: unsupported format version");
  if (j.contains("architecture")) return FrozenAgent(policy_from_json(j));
  const bool ckpt = j.contains("agents");
  std::vector<Policy> pols;
  for (const auto& p : j.at(ckpt ? "agents" : "policies")) pols.push_back(policy_from_json(p));
  MetaStrategy m{j.at(ckpt ? "sigma_a" : "meta").get<Vec>()};
  if (!m.valid() || m.size() != pols.size()) throw CorruptFile("agent: meta-strategy does not match population");
  return FrozenAgent(std::move(pols), std::move(m));
}

inline FrozenAgent load_frozen_agent(const std::string& path) {
  try {
    return frozen_agent_from_json(read_json_file(path));
  } catch (const json::exception& e) {
    throw CorruptFile("'" + path + "': " + e.what());
  }
}

}  // namespace grad

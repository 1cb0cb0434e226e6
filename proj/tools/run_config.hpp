#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "grad/engine.hpp"
#include "grad/eval.hpp"

namespace grad::cli {

using nlohmann::json;

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> c{"train-grad", "attack", "eval", "solve-matrix", "ablate"};
  return c;
}

// Every key a config may carry, with its default. null marks "derived when absent".
inline json default_config() {
  const OracleConfig o;
  const EngineConfig e;
  return {
      {"command", nullptr},
      {"seed", 0},
      {"seeds", {0, 1, 2, 3, 4}},
      {"out", "runs/default"},
      {"env", {{"name", "pointmass"}, {"goal", {0.5, 0.5}}, {"wind", false}, {"matrix", nullptr}}},
      {"budget",
       {{"epsilon", 0.1},
        {"epsilon_bar", nullptr},
        {"norm", "linf"},
        {"domain", "state"},
        {"alpha", 0.0},
        {"action_epsilon", 0.0},
        {"action_epsilon_bar", nullptr}}},
      {"adversary", {{"kind", "paad"}}},
      {"oracle",
       {{"kind", "ppo"},
        {"steps_per_iteration", o.steps_per_iteration},
        {"minibatch", o.minibatch},
        {"epochs", o.epochs},
        {"iterations", o.iterations},
        {"clip", o.clip},
        {"gae_lambda", o.gae_lambda},
        {"gamma", o.gamma},
        {"learning_rate", o.learning_rate},
        {"entropy_coef", nullptr},
        {"value_coef", o.value_coef},
        {"max_grad_norm", o.max_grad_norm},
        {"target_kl", o.target_kl},
        {"hidden", o.hidden},
        {"obs_norm", o.obs_norm},
        {"reward_norm", o.reward_norm},
        {"normalize_advantages", o.normalize_advantages},
        {"divergence_margin", nullptr},
        {"divergence_patience", o.divergence_patience}}},
      {"engine",
       {{"epochs", e.epochs},
        {"threshold", nullptr},
        {"warmup_fraction", e.warmup_fraction},
        {"payoff_episodes", e.payoff_episodes},
        {"min_payoff_episodes", e.min_payoff_episodes},
        {"workers", e.workers}}},
      {"eval",
       {{"agent", nullptr},
        {"episodes", 100},
        {"restarts", 3},
        {"alpha_grid", {0.0, 0.05, 0.1, 0.15, 0.2}},
        {"epsilon_bar_grid", nullptr}}},
  };
}

namespace detail {

inline std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

inline bool compatible(const json& def, const json& v) {
  if (def.is_null() || v.is_null()) return true;
  if (def.is_number()) return v.is_number();
  return def.type() == v.type();
}

inline void merge(json& base, const json& over, const std::string& path) {
  if (!over.is_object()) throw ConfigError((path.empty() ? std::string("config") : path) + ": expected an object");
  for (auto it = over.begin(); it != over.end(); ++it) {
    const std::string p = join(path, it.key());
    if (!base.contains(it.key())) throw ConfigError(p + ": unknown key");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge(slot, it.value(), p);
      continue;
    }
    if (!compatible(slot, it.value()))
      throw ConfigError(p + ": expected " + std::string(slot.type_name()) + ", got " + it.value().type_name());
    slot = it.value();
  }
}

// `path.to.key=value`; the value is read as JSON when it parses, else as a string.
inline json parse_override(const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set '" + kv + "': expected key=value");
  const std::string key = kv.substr(0, eq), text = kv.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json out = json::object();
  json* cur = &out;
  std::size_t start = 0;
  for (std::size_t dot; (dot = key.find('.', start)) != std::string::npos; start = dot + 1)
    cur = &(*cur)[key.substr(start, dot - start)];
  (*cur)[key.substr(start)] = value;
  return out;
}

inline const json& at_path(const json& cfg, const std::string& path) {
  const json* cur = &cfg;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string seg = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    cur = cur->is_array() ? &cur->at(std::stoul(seg)) : &cur->at(seg);
    if (dot == std::string::npos) return *cur;
    start = dot + 1;
  }
}

template <class T>
T get(const json& cfg, const std::string& path) {
  const json& v = at_path(cfg, path);
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path + ": invalid value " + v.dump());
  }
}

inline std::size_t get_count(const json& cfg, const std::string& path) {
  const double v = get<double>(cfg, path);
  if (!(v >= 0.0) || v != std::floor(v)) throw ConfigError(path + ": expected a non-negative integer");
  return static_cast<std::size_t>(v);
}

}  // namespace detail

struct RunConfig {
  json resolved;  // every default materialized; echoed as config.json
  std::vector<std::string> warnings;

  std::string command;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds;
  std::string out;
  PerturbationBudget budget;
  AdversaryKind adversary = AdversaryKind::PAAD;
  OracleConfig oracle;
  bool exact_oracle = false;
  EngineConfig engine;
  EvalProtocol protocol;
  std::optional<std::string> agent_path;
  std::vector<double> alpha_grid;
  std::vector<double> epsilon_bar_grid;

  EnvPtr make_env(std::uint64_t env_seed = 0) const {
    const json& e = resolved.at("env");
    const auto name = e.at("name").get<std::string>();
    if (name == "pointmass") return make_pointmass_env(e.at("goal").get<Vec>(), e.at("wind").get<bool>(), env_seed);
    if (name == "balance") return make_balance_env(env_seed);
    return make_matrix_game_env(matrix(), env_seed);
  }

  Matrix matrix() const { return resolved.at("env").at("matrix").get<Matrix>(); }
};

// Layers: defaults, then the file, then each --set override in order.
inline RunConfig parse_config(const json& file, const std::vector<std::string>& overrides,
                              const std::optional<std::string>& command = std::nullopt) {
  using detail::get;
  using detail::get_count;
  json cfg = default_config();
  if (!file.is_null()) detail::merge(cfg, file, "");
  for (const auto& kv : overrides) detail::merge(cfg, detail::parse_override(kv), "");
  if (command) cfg["command"] = *command;

  RunConfig rc;
  if (cfg["command"].is_null()) throw ConfigError("command: missing");
  rc.command = get<std::string>(cfg, "command");
  if (std::find(commands().begin(), commands().end(), rc.command) == commands().end())
    throw ConfigError("command: unknown command '" + rc.command + "'");
  rc.seed = get_count(cfg, "seed");
  for (std::size_t k = 0; k < cfg["seeds"].size(); ++k) rc.seeds.push_back(get_count(cfg, "seeds." + std::to_string(k)));
  if (rc.seeds.empty()) throw ConfigError("seeds: at least one seed required");
  rc.out = get<std::string>(cfg, "out");

  json& env = cfg["env"];
  const auto env_name = get<std::string>(cfg, "env.name");
  if (env_name != "pointmass" && env_name != "balance" && env_name != "matrix")
    throw ConfigError("env.name: unknown environment '" + env_name + "' (expected pointmass|balance|matrix)");
  if (env_name == "matrix" || rc.command == "solve-matrix") {
    if (env["matrix"].is_null()) throw ConfigError("env.matrix: required for matrix games");
    try {
      validate_matrix(env["matrix"].get<Matrix>());
    } catch (const json::exception&) {
      throw ConfigError("env.matrix: expected an array of numeric rows");
    } catch (const Error& e) {
      throw ConfigError(std::string("env.matrix: ") + e.what());
    }
  }
  if (get<Vec>(cfg, "env.goal").size() != 2) throw ConfigError("env.goal: expected two coordinates");

  json& b = cfg["budget"];
  rc.budget.epsilon = get<double>(cfg, "budget.epsilon");
  if (b["epsilon_bar"].is_null()) b["epsilon_bar"] = rc.budget.epsilon / 5.0;
  rc.budget.epsilon_bar = get<double>(cfg, "budget.epsilon_bar");
  rc.budget.action_epsilon = get<double>(cfg, "budget.action_epsilon");
  if (b["action_epsilon_bar"].is_null()) b["action_epsilon_bar"] = rc.budget.action_epsilon / 5.0;
  rc.budget.action_epsilon_bar = get<double>(cfg, "budget.action_epsilon_bar");
  rc.budget.alpha = get<double>(cfg, "budget.alpha");
  try {
    rc.budget.norm = parse_norm(get<std::string>(cfg, "budget.norm"));
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("budget.norm: ") + e.what());
  }
  try {
    rc.budget.domain = parse_domain(get<std::string>(cfg, "budget.domain"));
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("budget.domain: ") + e.what());
  }
  rc.budget.validate();
  if (rc.budget.epsilon_bar > rc.budget.epsilon)
    rc.warnings.push_back("budget.epsilon_bar exceeds budget.epsilon; allowed, but the coupling is looser than the bound");

  try {
    rc.adversary = parse_adversary_kind(get<std::string>(cfg, "adversary.kind"));
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("adversary.kind: ") + e.what());
  }
  if (env_name == "matrix") rc.adversary = AdversaryKind::MatrixColumn;
  cfg["adversary"]["kind"] = to_string(rc.adversary);
  if (rc.command != "solve-matrix") {
    try {
      validate_attachment_domain(rc.adversary, rc.budget);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("adversary.kind: ") + e.what());
    }
  }

  json& o = cfg["oracle"];
  const auto okind = get<std::string>(cfg, "oracle.kind");
  if (okind != "ppo" && okind != "exact") throw ConfigError("oracle.kind: expected ppo|exact");
  rc.exact_oracle = okind == "exact";
  if (rc.exact_oracle && env_name != "matrix") throw ConfigError("oracle.kind: exact best responses need env.name=matrix");
  rc.oracle.steps_per_iteration = get_count(cfg, "oracle.steps_per_iteration");
  rc.oracle.minibatch = get_count(cfg, "oracle.minibatch");
  rc.oracle.epochs = get_count(cfg, "oracle.epochs");
  rc.oracle.iterations = get_count(cfg, "oracle.iterations");
  rc.oracle.clip = get<double>(cfg, "oracle.clip");
  rc.oracle.gae_lambda = get<double>(cfg, "oracle.gae_lambda");
  rc.oracle.gamma = get<double>(cfg, "oracle.gamma");
  rc.oracle.learning_rate = get<double>(cfg, "oracle.learning_rate");
  if (!o["entropy_coef"].is_null()) rc.oracle.entropy_coef = get<double>(cfg, "oracle.entropy_coef");
  rc.oracle.value_coef = get<double>(cfg, "oracle.value_coef");
  rc.oracle.max_grad_norm = get<double>(cfg, "oracle.max_grad_norm");
  rc.oracle.target_kl = get<double>(cfg, "oracle.target_kl");
  rc.oracle.hidden.clear();
  for (std::size_t k = 0; k < o["hidden"].size(); ++k)
    rc.oracle.hidden.push_back(get_count(cfg, "oracle.hidden." + std::to_string(k)));
  rc.oracle.obs_norm = get<bool>(cfg, "oracle.obs_norm");
  rc.oracle.reward_norm = get<bool>(cfg, "oracle.reward_norm");
  rc.oracle.normalize_advantages = get<bool>(cfg, "oracle.normalize_advantages");
  if (!o["divergence_margin"].is_null()) rc.oracle.divergence_margin = get<double>(cfg, "oracle.divergence_margin");
  rc.oracle.divergence_patience = get_count(cfg, "oracle.divergence_patience");
  rc.oracle.validate();

  rc.engine.epochs = get_count(cfg, "engine.epochs");
  if (!cfg["engine"]["threshold"].is_null()) rc.engine.threshold = get<double>(cfg, "engine.threshold");
  rc.engine.warmup_fraction = get<double>(cfg, "engine.warmup_fraction");
  rc.engine.payoff_episodes = get_count(cfg, "engine.payoff_episodes");
  rc.engine.min_payoff_episodes = get_count(cfg, "engine.min_payoff_episodes");
  rc.engine.workers = get_count(cfg, "engine.workers");
  rc.engine.adversary = {rc.adversary, rc.budget};
  rc.engine.out_dir = rc.out;
  rc.engine.validate();

  json& ev = cfg["eval"];
  if (!ev["agent"].is_null()) rc.agent_path = get<std::string>(cfg, "eval.agent");
  rc.protocol.episodes = get_count(cfg, "eval.episodes");
  rc.protocol.restarts = get_count(cfg, "eval.restarts");
  if (rc.protocol.episodes == 0 || rc.protocol.restarts == 0)
    throw ConfigError("eval: episodes and restarts must be >= 1");
  rc.alpha_grid = get<Vec>(cfg, "eval.alpha_grid");
  for (double a : rc.alpha_grid)
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("eval.alpha_grid: values must lie in [0,1]");
  if (ev["epsilon_bar_grid"].is_null())
    ev["epsilon_bar_grid"] = {rc.budget.epsilon / 10.0, rc.budget.epsilon / 5.0, 2.0 * rc.budget.epsilon};
  rc.epsilon_bar_grid = get<Vec>(cfg, "eval.epsilon_bar_grid");
  if ((rc.command == "attack" || rc.command == "eval" || rc.command == "ablate") && !rc.agent_path)
    throw ConfigError("eval.agent: required for command '" + rc.command + "'");

  rc.resolved = std::move(cfg);
  return rc;
}

}  // namespace grad::cli

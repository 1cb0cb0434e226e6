#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace grad;

namespace {

enum Exit { kOk = 0, kConfigError = 2, kRuntimeError = 3, kNotConverged = 4 };

std::string vec_text(const Vec& v) {
  std::ostringstream os;
  os.precision(10);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? " " : "") << v[i];
  return os.str();
}

int solve_matrix(const cli::RunConfig& rc) {
  const Matrix u = rc.matrix();
  const RestrictedGameSolution sol = solve_zero_sum(u);
  std::cout << "value " << sol.value << "\nrow " << vec_text(sol.row.probs) << "\ncol " << vec_text(sol.col.probs)
            << "\n";
  write_text_file((fs::path(rc.out) / "solution.json").string(),
                  json{{"value", sol.value},
                       {"row", sol.row.probs},
                       {"col", sol.col.probs},
                       {"exploitability", exact_exploitability(u, sol.row.probs, sol.col.probs)}}
                          .dump(2) +
                      "\n");
  return kOk;
}

int train_grad(const cli::RunConfig& rc) {
  EnvPtr env = rc.make_env(rc.seed);
  std::unique_ptr<BestResponseOracle> oracle;
  if (rc.exact_oracle)
    oracle = std::make_unique<MatrixEnumerationOracle>(rc.matrix(), rc.seed);
  else
    oracle = std::make_unique<PpoOracle>(rc.oracle);
  const GradResult r = run_grad(*env, *oracle, rc.engine, rc.seed);
  const FrozenAgent agent(r.state.agents, r.state.sigma_a);
  write_text_file((fs::path(rc.out) / "agent.json").string(), frozen_agent_to_json(agent).dump() + "\n");
  write_text_file((fs::path(rc.out) / "report.json").string(),
                  json{{"converged", r.report.converged},
                       {"epochs", r.report.epochs},
                       {"threshold", r.report.threshold},
                       {"exploitability", r.report.exploitability},
                       {"sigma_a", r.state.sigma_a.probs},
                       {"sigma_v", r.state.sigma_v.probs}}
                          .dump(2) +
                      "\n");
  std::cout << "epochs " << r.report.epochs << " exploitability "
            << (r.report.exploitability.empty() ? 0.0 : r.report.exploitability.back()) << " threshold "
            << r.report.threshold << (r.report.converged ? " converged" : " not converged") << "\n";
  return r.report.converged ? kOk : kNotConverged;
}

int finish_report(const cli::RunConfig& rc, const EvalReport& rep) {
  rep.write((fs::path(rc.out) / "eval.csv").string(), (fs::path(rc.out) / "summary.json").string());
  std::cout << rep.summary().dump(2) << "\n";
  for (const auto& c : rep.cells)
    if (c.failed) {
      std::cerr << "cell " << c.kind << " seed " << c.seed << " failed: " << c.error << "\n";
      return kRuntimeError;
    }
  return kOk;
}

int attack(const cli::RunConfig& rc) {
  EnvPtr env = rc.make_env(rc.seed);
  const FrozenAgent agent = load_frozen_agent(*rc.agent_path);
  EvalReport rep;
  rep.cells = attack_cells(agent, rc.adversary, {rc.budget}, *env, rc.oracle, rc.seeds, rc.protocol);
  return finish_report(rc, rep);
}

int eval(const cli::RunConfig& rc) {
  EnvPtr env = rc.make_env(rc.seed);
  const FrozenAgent agent = load_frozen_agent(*rc.agent_path);
  EvalReport rep;
  for (auto seed : rc.seeds) {
    Rng rng = derive_rng(seed, {0x6576616c});
    rep.cells.push_back(make_cell("natural", PerturbationBudget{}, seed,
                                  evaluate_returns(agent, nullptr, nullptr, *env, rc.protocol.episodes, rng, rc.protocol)));
  }
  const EvalReport mu = model_uncertainty_sweep(agent, *env, rc.alpha_grid, rc.protocol.episodes, rc.seeds, rc.protocol);
  rep.cells.insert(rep.cells.end(), mu.cells.begin(), mu.cells.end());
  const auto attacked = attack_cells(agent, rc.adversary, {rc.budget}, *env, rc.oracle, rc.seeds, rc.protocol);
  rep.cells.insert(rep.cells.end(), attacked.begin(), attacked.end());
  return finish_report(rc, rep);
}

int ablate(const cli::RunConfig& rc) {
  EnvPtr env = rc.make_env(rc.seed);
  const FrozenAgent agent = load_frozen_agent(*rc.agent_path);
  return finish_report(rc, epsilon_bar_ablation(agent, *env, rc.budget, rc.epsilon_bar_grid, rc.oracle, rc.seeds,
                                                rc.adversary, rc.protocol));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Double-oracle robust RL against temporally-coupled adversaries"};
  app.require_subcommand(1);
  std::string config_path, out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  for (const auto& name : cli::commands()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--seed", seed, "master seed");
    sub->add_option("--out", out, "output directory");
    sub->add_option("--set", sets, "override, e.g. engine.epochs=5")->take_all();
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  cli::RunConfig rc;
  try {
    json file = json::object();
    if (!config_path.empty()) file = read_json_file(config_path);
    if (seed) sets.push_back("seed=" + std::to_string(*seed));
    if (!out.empty()) sets.push_back("out=" + json(out).dump());
    rc = cli::parse_config(file, sets, command);
    if (rc.agent_path && !fs::exists(*rc.agent_path))
      throw ConfigError("eval.agent: no such file '" + *rc.agent_path + "'");
    for (const auto& w : rc.warnings) std::cerr << "warning: " << w << "\n";
    fs::create_directories(rc.out);
    write_text_file((fs::path(rc.out) / "config.json").string(), rc.resolved.dump(2) + "\n");
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  }

  try {
    if (command == "solve-matrix") return solve_matrix(rc);
    if (command == "train-grad") return train_grad(rc);
    if (command == "attack") return attack(rc);
    if (command == "eval") return eval(rc);
    return ablate(rc);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const CorruptFile& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return kRuntimeError;
  }
}

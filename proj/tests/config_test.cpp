#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "grad/io.hpp"
#include "run_config.hpp"

namespace grad {
namespace {

namespace fs = std::filesystem;
using cli::parse_config;

const json kRps = json::parse("[[0,-1,1],[1,0,-1],[-1,1,0]]");

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("grad_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CliRun {
  int code;
  std::string out;
};

CliRun run_cli(const std::string& args, const fs::path& dir) {
  const std::string log = (dir / "stdout.txt").string();
  const int status = std::system((std::string(GRAD_CLI_PATH) + " " + args + " > " + log + " 2>&1").c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

fs::path write_config(const fs::path& dir, const json& j) {
  const fs::path p = dir / "in.json";
  write_text_file(p.string(), j.dump());
  return p;
}

TEST(ParseConfig, SolveMatrixFillsEveryDefault) {
  const auto rc = parse_config({{"command", "solve-matrix"}, {"env", {{"matrix", kRps}}}}, {});
  EXPECT_EQ(rc.command, "solve-matrix");
  EXPECT_EQ(rc.matrix().size(), 3u);
  const json& r = rc.resolved;
  EXPECT_DOUBLE_EQ(r["budget"]["epsilon_bar"].get<double>(), 0.1 / 5.0);
  EXPECT_FALSE(r["eval"]["epsilon_bar_grid"].is_null());
  EXPECT_EQ(r["oracle"]["hidden"], json({64, 64}));
  std::function<void(const json&, const std::string&)> no_derived_nulls = [&](const json& j, const std::string& path) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.value().is_object()) no_derived_nulls(it.value(), path + it.key() + ".");
      else if (it.value().is_null())
        EXPECT_TRUE(path + it.key() == "engine.threshold" || path + it.key() == "oracle.entropy_coef" ||
                    path + it.key() == "oracle.divergence_margin" || path + it.key() == "eval.agent")
            << path + it.key();
    }
  };
  no_derived_nulls(r, "");
  // The echoed config parses back to itself.
  EXPECT_EQ(parse_config(r, {}).resolved, r);
}

TEST(ParseConfig, LooseCouplingIsAcceptedWithWarning) {
  const auto rc = parse_config({{"budget", {{"epsilon", 0.1}, {"epsilon_bar", 0.15}}}}, {}, "train-grad");
  EXPECT_DOUBLE_EQ(rc.budget.epsilon_bar, 0.15);
  ASSERT_EQ(rc.warnings.size(), 1u);
  EXPECT_NE(rc.warnings[0].find("epsilon_bar"), std::string::npos);
  EXPECT_TRUE(parse_config({{"budget", {{"epsilon", 0.1}}}}, {}, "train-grad").warnings.empty());
}

void expect_config_error(const json& file, const std::vector<std::string>& sets, const std::string& needle) {
  try {
    parse_config(file, sets, "train-grad");
    ADD_FAILURE() << "accepted; expected error containing '" << needle << "'";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
  }
}

TEST(ParseConfig, RejectionsArePathQualified) {
  expect_config_error({{"budget", {{"epsilon", -0.1}}}}, {}, "budget");
  expect_config_error({{"oracle", {{"minibatch_size", 64}}}}, {}, "oracle.minibatch_size: unknown key");
  expect_config_error({{"colour", 1}}, {}, "colour: unknown key");
  expect_config_error({{"engine", {{"epochs", "many"}}}}, {}, "engine.epochs: expected number");
  expect_config_error({{"engine", {{"epochs", 2.5}}}}, {}, "engine.epochs: expected a non-negative integer");
  expect_config_error({{"engine", 3}}, {}, "engine: expected an object");
  expect_config_error({}, {"engine.warmup=0.1"}, "engine.warmup: unknown key");
  expect_config_error({}, {"noequals"}, "expected key=value");
  expect_config_error({{"env", {{"name", "cartpole"}}}}, {}, "env.name");
  expect_config_error({{"budget", {{"norm", "l1"}}}}, {}, "budget.norm");
  expect_config_error({{"budget", {{"domain", "action"}}}}, {}, "adversary.kind");
  expect_config_error({{"oracle", {{"clip", 2.0}}}}, {}, "oracle.clip");
  expect_config_error({{"oracle", {{"kind", "exact"}}}}, {}, "oracle.kind");
  expect_config_error({{"eval", {{"alpha_grid", {0.0, 1.5}}}}}, {}, "eval.alpha_grid");
  EXPECT_THROW(parse_config({}, {}, std::nullopt), ConfigError);
  EXPECT_THROW(parse_config({}, {}, "train"), ConfigError);
  EXPECT_THROW(parse_config({}, {}, "attack"), ConfigError);  // no agent
}

TEST(ParseConfig, OverridesBeatFileValues) {
  const json file = {{"engine", {{"epochs", 7}}}, {"budget", {{"epsilon", 0.2}}}};
  const auto rc = parse_config(file, {"engine.epochs=3", "oracle.hidden=[16]", "out=somewhere"}, "train-grad");
  EXPECT_EQ(rc.engine.epochs, 3u);
  EXPECT_EQ(rc.oracle.hidden, std::vector<std::size_t>{16});
  EXPECT_EQ(rc.out, "somewhere");
  EXPECT_DOUBLE_EQ(rc.budget.epsilon, 0.2);
  EXPECT_DOUBLE_EQ(rc.budget.epsilon_bar, 0.04);
  EXPECT_EQ(rc.engine.adversary.budget, rc.budget);
}

TEST(Cli, SolveMatrixOnRps) {
  const fs::path dir = scratch("solve");
  const CliRun r = run_cli("solve-matrix --out " + dir.string() + " --set 'env.matrix=" + kRps.dump() + "'", dir);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("value 0\n"), std::string::npos) << r.out;
  const json sol = read_json_file((dir / "solution.json").string());
  EXPECT_NEAR(sol["value"].get<double>(), 0.0, 1e-9);
  for (const char* side : {"row", "col"})
    for (double p : sol[side].get<Vec>()) EXPECT_NEAR(p, 1.0 / 3.0, 1e-9);
  EXPECT_TRUE(fs::exists(dir / "config.json"));
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("codes");
  const std::string matrix_env = " --set env.name=matrix 'env.matrix=" + kRps.dump() + "' oracle.kind=exact";
  EXPECT_EQ(run_cli("train-grad --out " + dir.string() + matrix_env + " engine.epochs=1 engine.threshold=1e-9", dir).code,
            4);
  EXPECT_EQ(run_cli("train-grad --out " + dir.string() + matrix_env + " engine.epochs=10 engine.threshold=1e-9 "
                    "engine.warmup_fraction=0",
                    dir)
                .code,
            0);
  EXPECT_EQ(run_cli("eval --out " + dir.string() + " --set eval.agent=" + (dir / "missing.json").string(), dir).code, 2);
  EXPECT_EQ(run_cli("eval --out " + dir.string() + " --set engine.bogus=1", dir).code, 2);
  EXPECT_EQ(run_cli("solve-matrix --out " + dir.string() + " --set budget.epsilon=-1 'env.matrix=[[1]]'", dir).code, 2);
  EXPECT_EQ(run_cli("no-such-command", dir).code, 2);
  write_text_file((dir / "corrupt.json").string(), "{\"format_version\": 1, \"policies\": [");
  EXPECT_EQ(run_cli("attack --out " + dir.string() + " --set eval.agent=" + (dir / "corrupt.json").string(), dir).code, 2);
  // A balance-sized agent cannot act in the pointmass env: runtime failure of every cell.
  Architecture a;
  a.input_dim = 2;
  a.hidden = {};
  save_policy(Policy(a), (dir / "wrong.json").string());
  EXPECT_EQ(run_cli("attack --out " + dir.string() + " --set eval.agent=" + (dir / "wrong.json").string() +
                        " seeds=[0] eval.restarts=1 eval.episodes=2 oracle.iterations=1 oracle.steps_per_iteration=64",
                    dir)
                .code,
            3);
}

TEST(Cli, IdenticalConfigsGiveByteIdenticalCsv) {
  const fs::path base = scratch("repro");
  Architecture a;
  a.input_dim = 4;
  a.output_dim = 2;
  a.hidden = {8};
  Rng rng(1);
  save_policy(Policy::random(a, rng), (base / "agent.json").string());
  const json cfg = {{"seeds", {0, 1}},
                    {"eval", {{"agent", (base / "agent.json").string()}, {"episodes", 5}, {"restarts", 1},
                              {"alpha_grid", {0.0, 0.1}}}},
                    {"oracle", {{"iterations", 2}, {"steps_per_iteration", 256}, {"minibatch", 64}, {"hidden", {8}}}}};
  const fs::path in = write_config(base, cfg);
  std::vector<std::string> csv;
  for (const char* run : {"a", "b"}) {
    const fs::path out = base / run;
    const CliRun r = run_cli("eval --config " + in.string() + " --seed 3 --out " + out.string(), base);
    ASSERT_EQ(r.code, 0) << r.out;
    csv.push_back(slurp(out / "eval.csv"));
    EXPECT_EQ(json::parse(slurp(out / "config.json"))["seed"], 3);
  }
  EXPECT_EQ(csv[0], csv[1]);
  EXPECT_EQ(std::count(csv[0].begin(), csv[0].end(), '\n'), 1 + 2 + 4 + 2);

  std::vector<std::string> grad;
  for (const char* run : {"c", "d"}) {
    const fs::path out = base / run;
    const CliRun r = run_cli("train-grad --out " + out.string() +
                              " --set env.name=matrix 'env.matrix=[[3,-1,0],[0,2,-2],[-1,0,1]]' oracle.kind=exact "
                              "engine.threshold=1e-9 engine.warmup_fraction=0",
                          base);
    ASSERT_EQ(r.code, 0) << r.out;
    grad.push_back(slurp(out / "payoff.csv") + slurp(out / "exploitability.csv"));
  }
  EXPECT_EQ(grad[0], grad[1]);
}

}  // namespace
}  // namespace grad

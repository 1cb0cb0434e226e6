#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "grad/adversaries.hpp"
#include "grad/perturb.hpp"
#include "grad/policy.hpp"

namespace grad {

inline constexpr int kFormatVersion = 1;

using nlohmann::json;

inline json budget_to_json(const PerturbationBudget& b) {
  json j = {{"epsilon", b.epsilon},
            {"epsilon_bar", b.epsilon_bar},
            {"norm", to_string(b.norm)},
            {"domain", to_string(b.domain)}};
  if (b.domain == AttackDomain::ModelUncertainty) j["alpha"] = b.alpha;
  if (b.domain == AttackDomain::Mixed) {
    j["action_epsilon"] = b.action_epsilon;
    j["action_epsilon_bar"] = b.action_epsilon_bar;
  }
  return j;
}

inline PerturbationBudget budget_from_json(const json& j) {
  PerturbationBudget b;
  b.epsilon = j.at("epsilon").get<double>();
  b.epsilon_bar = j.at("epsilon_bar").get<double>();
  b.norm = parse_norm(j.at("norm").get<std::string>());
  b.domain = parse_domain(j.at("domain").get<std::string>());
  b.alpha = j.value("alpha", 0.0);
  b.action_epsilon = j.value("action_epsilon", 0.0);
  b.action_epsilon_bar = j.value("action_epsilon_bar", 0.0);
  b.validate();
  return b;
}

inline json policy_to_json(const Policy& p) {
  const Architecture& a = p.arch();
  const RunningNorm& n = p.obs_norm();
  return {{"format_version", kFormatVersion},
          {"architecture",
           {{"input_dim", a.input_dim},
            {"hidden", a.hidden},
            {"output_dim", a.output_dim},
            {"head", a.head == Head::Gaussian ? "gaussian" : "categorical"},
            {"activation", "tanh"},
            {"recurrent", a.recurrent}}},
          {"params", p.params()},
          {"obs_norm", {{"enabled", n.enabled}, {"frozen", n.frozen}, {"count", n.count}, {"mean", n.mean}, {"m2", n.m2}}}};
}

inline Policy policy_from_json(const json& j) {
  if (j.at("format_version").get<int>() != kFormatVersion) throw CorruptFile("policy: unsupported format version");
  const json& ja = j.at("architecture");
  Architecture a;
  a.input_dim = ja.at("input_dim").get<std::size_t>();
  a.hidden = ja.at("hidden").get<std::vector<std::size_t>>();
  a.output_dim = ja.at("output_dim").get<std::size_t>();
  const auto head = ja.at("head").get<std::string>();
  if (head != "gaussian" && head != "categorical") throw CorruptFile("policy: unknown head '" + head + "'");
  a.head = head == "gaussian" ? Head::Gaussian : Head::Categorical;
  a.recurrent = ja.value("recurrent", false);
  Policy p(a);
  auto params = j.at("params").get<Vec>();
  if (params.size() != a.param_count()) throw CorruptFile("policy: parameter count does not match architecture");
  p.set_params(std::move(params));
  const json& jn = j.at("obs_norm");
  RunningNorm& n = p.obs_norm();
  n.enabled = jn.at("enabled").get<bool>();
  n.frozen = jn.at("frozen").get<bool>();
  n.count = jn.at("count").get<double>();
  n.mean = jn.at("mean").get<Vec>();
  n.m2 = jn.at("m2").get<Vec>();
  if (n.mean.size() != a.input_dim || n.m2.size() != a.input_dim) throw CorruptFile("policy: bad normalization stats");
  return p;
}

inline json attachment_to_json(const AdversaryAttachment& a) {
  json j = policy_to_json(a.director);
  j["kind"] = to_string(a.kind);
  j["budget"] = budget_to_json(a.budget);
  j["state_dim"] = a.state_dim;
  j["action_dim"] = a.action_dim;
  return j;
}

inline AdversaryAttachment attachment_from_json(const json& j) {
  AdversaryAttachment a;
  a.director = policy_from_json(j);
  a.kind = parse_adversary_kind(j.at("kind").get<std::string>());
  a.budget = budget_from_json(j.at("budget"));
  a.state_dim = j.at("state_dim").get<std::size_t>();
  a.action_dim = j.at("action_dim").get<std::size_t>();
  return a;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::exception& e) {
    throw CorruptFile("'" + path + "' is not valid JSON (truncated or corrupt): " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << text;
}

inline void save_policy(const Policy& p, const std::string& path) { write_text_file(path, policy_to_json(p).dump() + "\n"); }

inline Policy load_policy(const std::string& path) {
  try {
    return policy_from_json(read_json_file(path));
  } catch (const json::exception& e) {
    throw CorruptFile("'" + path + "': " + e.what());
  }
}

inline void save_attachment(const AdversaryAttachment& a, const std::string& path) {
  write_text_file(path, attachment_to_json(a).dump() + "\n");
}

inline AdversaryAttachment load_attachment(const std::string& path) {
  try {
    return attachment_from_json(read_json_file(path));
  } catch (const json::exception& e) {
    throw CorruptFile("'" + path + "': " + e.what());
  }
}

}  // namespace grad

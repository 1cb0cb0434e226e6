#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "grad/meta_game.hpp"
#include "grad/policy.hpp"
#include "grad/rollout.hpp"

namespace grad {

struct OracleConfig {
  std::size_t steps_per_iteration = 2048;
  std::size_t minibatch = 256;
  std::size_t epochs = 10;
  std::size_t iterations = 50;  // outer PPO iterations per best response
  double clip = 0.2;
  double gae_lambda = 0.95;
  double gamma = 0.99;
  double learning_rate = 3e-4;
  double entropy_coef = -1.0;  // < 0: 0.0 for continuous heads, 0.01 for categorical
  double value_coef = 0.5;
  double max_grad_norm = 0.5;
  double target_kl = 0.03;
  std::vector<std::size_t> hidden = {64, 64};
  bool obs_norm = true;
  bool reward_norm = true;
  bool normalize_advantages = true;
  double divergence_margin = std::numeric_limits<double>::infinity();
  std::size_t divergence_patience = 10;

  double entropy_for(Head h) const {
    if (entropy_coef >= 0.0) return entropy_coef;
    return h == Head::Categorical ? 0.01 : 0.0;
  }

  void validate() const {
    if (!(clip > 0.0 && clip < 1.0)) throw ConfigError("oracle.clip must lie in (0,1)");
    if (!(gae_lambda > 0.0 && gae_lambda <= 1.0)) throw ConfigError("oracle.gae_lambda must lie in (0,1]");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("oracle.gamma must lie in (0,1]");
    if (steps_per_iteration == 0 || minibatch == 0 || epochs == 0 || iterations == 0)
      throw ConfigError("oracle: step, minibatch, epoch and iteration counts must be positive");
    if (learning_rate < 0.0) throw ConfigError("oracle.learning_rate must be >= 0");
    if (value_coef < 0.0 || max_grad_norm <= 0.0 || target_kl <= 0.0)
      throw ConfigError("oracle: value_coef >= 0, max_grad_norm > 0, target_kl > 0 required");
  }
};

// Settings for one-step matrix games: a bare logit table, no normalization
// of observations or rewards, 256 x 20 = 5120 environment steps.
inline OracleConfig matrix_game_oracle_preset() {
  OracleConfig c;
  c.hidden = {};
  c.learning_rate = 0.1;
  c.steps_per_iteration = 256;
  c.minibatch = 64;
  c.epochs = 4;
  c.iterations = 20;
  c.entropy_coef = 0.0;
  c.obs_norm = false;
  c.reward_norm = false;
  return c;
}

// Standard GAE with a zero bootstrap after the final step.
inline Vec gae_advantages(std::span<const double> rewards, std::span<const double> values, double gamma,
                          double lambda) {
  if (rewards.empty()) throw ContractViolation("gae_advantages: empty trajectory");
  const std::size_t n = rewards.size();
  Vec adv(n);
  double acc = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double next_v = t + 1 < n ? values[t + 1] : 0.0;
    const double delta = rewards[t] + gamma * next_v - values[t];
    acc = delta + gamma * lambda * acc;
    adv[t] = acc;
  }
  return adv;
}

enum class LearnerSide { Agent, Adversary };

// Learner's view of a trajectory: observations, outputs, log-probs, rewards.
inline Vec learner_rewards(const Trajectory& tr, LearnerSide side) {
  Vec r;
  for (const auto& s : tr.steps) r.push_back(side == LearnerSide::Agent ? s.r : s.adv_reward);
  return r;
}

inline Vec gae_advantages(const Trajectory& tr, const ValueFunction& vf, const RunningNorm& norm, LearnerSide side,
                          double gamma, double lambda) {
  Vec values;
  for (const auto& s : tr.steps) values.push_back(vf.value(norm.apply(side == LearnerSide::Agent ? s.s_tilde : s.adv_obs)));
  return gae_advantages(learner_rewards(tr, side), values, gamma, lambda);
}

struct Sample {
  Vec nobs;
  Vec action;
  double old_logprob = 0.0;
  double advantage = 0.0;
  double ret = 0.0;
};

struct LossStats {
  double loss = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
};

// Full PPO loss on a minibatch and its gradients w.r.t. policy and critic parameters.
// L = -mean(min(rho A, clip(rho) A)) + c_v mean((V - R)^2) - c_e mean(H)
inline LossStats ppo_loss_and_grad(const Policy& policy, const ValueFunction& vf, std::span<const Sample> batch,
                                   double clip, double value_coef, double entropy_coef, Vec* policy_grad,
                                   Vec* value_grad) {
  LossStats st;
  Vec pg(policy.params().size(), 0.0), vg(vf.params().size(), 0.0);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const Sample& s : batch) {
    const HeadOutput h = policy.head(s.nobs);
    const double lp = policy.logprob_from_head(h, s.action);
    const double ratio = std::exp(lp - s.old_logprob);
    const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
    const double surr1 = ratio * s.advantage, surr2 = clipped * s.advantage;
    const bool unclipped_active = surr1 <= surr2;
    st.policy_loss -= std::min(surr1, surr2) * inv_b;
    st.approx_kl += (s.old_logprob - lp) * inv_b;
    if (std::abs(ratio - 1.0) > clip) st.clip_fraction += inv_b;
    const double coeff_lp = unclipped_active ? -s.advantage * ratio * inv_b : 0.0;
    double ent = 0.0;
    policy.accumulate_grad(h, s.action, coeff_lp, -entropy_coef * inv_b, pg, &ent);
    st.entropy += ent * inv_b;
    Mlp::Cache cache;
    const double v = vf.value_cached(s.nobs, cache);
    st.value_loss += (v - s.ret) * (v - s.ret) * inv_b;
    vf.backward(cache, 2.0 * value_coef * (v - s.ret) * inv_b, vg);
  }
  st.loss = st.policy_loss + value_coef * st.value_loss - entropy_coef * st.entropy;
  if (policy_grad) *policy_grad = std::move(pg);
  if (value_grad) *value_grad = std::move(vg);
  return st;
}

struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  Vec m, v;
  std::size_t t = 0;

  void step(Vec& params, const Vec& grad, double lr) {
    if (m.size() != params.size()) {
      m.assign(params.size(), 0.0);
      v.assign(params.size(), 0.0);
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

struct UpdateStats {
  LossStats last;
  double mean_kl = 0.0;
  bool kl_stopped = false;
  std::size_t minibatches = 0;
};

inline double clip_global_norm(Vec& a, Vec& b, double max_norm) {
  double sq = 0.0;
  for (double x : a) sq += x * x;
  for (double x : b) sq += x * x;
  const double n = std::sqrt(sq);
  if (n > max_norm && n > 0.0) {
    const double s = max_norm / n;
    for (double& x : a) x *= s;
    for (double& x : b) x *= s;
  }
  return n;
}

// One epoch of shuffled minibatch steps on the clipped-surrogate loss.
inline UpdateStats clipped_surrogate_update(Policy& policy, ValueFunction& vf, std::vector<Sample>& batch,
                                            const OracleConfig& cfg, Adam& policy_opt, Adam& value_opt, Rng& rng) {
  UpdateStats us;
  std::vector<std::size_t> idx(batch.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  const double ent = cfg.entropy_for(policy.arch().head);
  std::vector<Sample> mb;
  double kl_sum = 0.0;
  for (std::size_t start = 0; start < idx.size(); start += cfg.minibatch) {
    const std::size_t end = std::min(idx.size(), start + cfg.minibatch);
    mb.clear();
    for (std::size_t k = start; k < end; ++k) mb.push_back(batch[idx[k]]);
    Vec pg, vg;
    us.last = ppo_loss_and_grad(policy, vf, mb, cfg.clip, cfg.value_coef, ent, &pg, &vg);
    if (!std::isfinite(us.last.loss)) throw NumericalError("ppo: non-finite loss");
    clip_global_norm(pg, vg, cfg.max_grad_norm);
    policy_opt.step(policy.mutable_params(), pg, cfg.learning_rate);
    value_opt.step(vf.mutable_params(), vg, cfg.learning_rate);
    kl_sum += us.last.approx_kl;
    ++us.minibatches;
  }
  us.mean_kl = kl_sum / static_cast<double>(std::max<std::size_t>(us.minibatches, 1));
  us.kl_stopped = us.mean_kl > 1.5 * cfg.target_kl;
  return us;
}

// Running variance of discounted returns; rewards are divided by its square root.
struct RewardScaler {
  bool enabled = true;
  double count = 0.0, mean = 0.0, m2 = 0.0;

  void observe_episode(std::span<const double> rewards, double gamma) {
    if (!enabled) return;
    double ret = 0.0;
    for (double r : rewards) {
      ret = gamma * ret + r;
      count += 1.0;
      const double d = ret - mean;
      mean += d / count;
      m2 += d * (ret - mean);
    }
  }

  double scale() const {
    if (!enabled || count < 2.0) return 1.0;
    return 1.0 / std::sqrt(m2 / count + 1e-8);
  }
};

struct CurvePoint {
  std::size_t step = 0;
  double mean_return = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double kl = 0.0;
  double entropy = 0.0;
};

inline std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::string out = "step,mean_return,policy_loss,value_loss,kl,entropy\n";
  char buf[256];
  for (const auto& c : curve) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", c.step, c.mean_return, c.policy_loss,
                  c.value_loss, c.kl, c.entropy);
    out += buf;
  }
  return out;
}

// The fixed side a best response is trained against. An empty adversary
// population means natural (unattacked) training for the agent.
struct Opponents {
  const std::vector<Policy>* agents = nullptr;
  const std::vector<AdversaryAttachment>* adversaries = nullptr;
  MetaStrategy meta;
};

struct BestResponse {
  Policy policy;
  AdversaryAttachment attachment;  // filled when the learner is an adversary
  ValueFunction value_fn;
  std::vector<CurvePoint> curve;
  double value = 0.0;  // learner's mean return over the final iteration
};

// Template for the learner when it is an adversary (kind, budget, dims).
struct AdversaryTemplate {
  AdversaryKind kind = AdversaryKind::PAAD;
  PerturbationBudget budget;
};

inline Architecture agent_architecture(const EnvSpec& spec, const std::vector<std::size_t>& hidden) {
  Architecture a;
  a.input_dim = spec.state_dim;
  a.output_dim = spec.action_dim;
  a.hidden = hidden;
  a.head = spec.discrete() ? Head::Categorical : Head::Gaussian;
  return a;
}

// PPO best response of one side against a frozen opponent meta-strategy.
// The opponent is resampled from the meta-strategy at the start of every episode.
inline BestResponse train_best_response(LearnerSide side, const Opponents& opp, const Environment& env_proto,
                                        const PerturbationBudget* budget, const OracleConfig& cfg, Rng& rng,
                                        const AdversaryTemplate* adv_template = nullptr) {
  cfg.validate();
  const EnvSpec& spec = env_proto.spec();
  auto env = env_proto.clone();
  BestResponse br;
  if (side == LearnerSide::Agent) {
    br.policy = Policy::random(agent_architecture(spec, cfg.hidden), rng);
    br.policy.obs_norm().enabled = cfg.obs_norm && !spec.discrete();
  } else {
    if (!adv_template) throw ConfigError("train_best_response: adversary learner needs a template");
    if (!opp.agents || opp.agents->empty()) throw ConfigError("train_best_response: adversary needs agent opponents");
    if (adv_template->kind == AdversaryKind::RandomBaseline) throw ConfigError("random adversary is not trainable");
    br.attachment = make_adversary(adv_template->kind, spec, adv_template->budget, cfg.hidden, rng);
    br.attachment.director.obs_norm().enabled = cfg.obs_norm && !spec.discrete();
  }
  Policy& learner = side == LearnerSide::Agent ? br.policy : br.attachment.director;
  Architecture varch = learner.arch();
  br.value_fn = ValueFunction::random(varch, rng);

  const bool has_adv_opp = opp.adversaries && !opp.adversaries->empty();
  if (side == LearnerSide::Agent && has_adv_opp && !opp.meta.valid())
    throw ContractViolation("train_best_response: invalid adversary meta-strategy");
  if (side == LearnerSide::Adversary && (!opp.meta.valid() || opp.meta.size() != opp.agents->size()))
    throw ContractViolation("train_best_response: invalid agent meta-strategy");

  Adam popt, vopt;
  RewardScaler scaler;
  scaler.enabled = cfg.reward_norm;
  std::size_t total_steps = 0;
  double initial_return = std::numeric_limits<double>::quiet_NaN();
  std::size_t below = 0;

  for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
    std::vector<Sample> batch;
    std::vector<double> returns;
    std::vector<Vec> raw_obs;
    while (batch.size() < cfg.steps_per_iteration) {
      Trajectory tr;
      if (side == LearnerSide::Agent) {
        const AdversaryAttachment* adv = nullptr;
        if (has_adv_opp) adv = &(*opp.adversaries)[opp.meta.sample(rng)];
        tr = rollout(*env, learner, adv, adv ? budget : nullptr, rng);
      } else {
        const Policy& victim = (*opp.agents)[opp.meta.sample(rng)];
        tr = rollout(*env, victim, &br.attachment, budget, rng);
      }
      const Vec rewards = learner_rewards(tr, side);
      double ret = 0.0;
      for (double r : rewards) ret += r;
      returns.push_back(ret);
      scaler.observe_episode(rewards, cfg.gamma);
      const double sc = scaler.scale();
      Vec values, scaled;
      std::vector<Vec> nobs;
      for (std::size_t t = 0; t < tr.steps.size(); ++t) {
        const auto& st = tr.steps[t];
        const Vec& obs = side == LearnerSide::Agent ? st.s_tilde : st.adv_obs;
        raw_obs.push_back(obs);
        nobs.push_back(learner.normalize(obs));
        values.push_back(br.value_fn.value(nobs.back()));
        scaled.push_back(rewards[t] * sc);
      }
      const Vec adv = gae_advantages(scaled, values, cfg.gamma, cfg.gae_lambda);
      for (std::size_t t = 0; t < tr.steps.size(); ++t) {
        const auto& st = tr.steps[t];
        Sample s;
        s.nobs = std::move(nobs[t]);
        s.action = side == LearnerSide::Agent ? st.a : st.adv_output;
        s.old_logprob = side == LearnerSide::Agent ? st.agent_logprob : st.adv_logprob;
        s.advantage = adv[t];
        s.ret = adv[t] + values[t];
        batch.push_back(std::move(s));
      }
    }
    total_steps += batch.size();

    if (cfg.normalize_advantages && batch.size() > 1) {
      double mean = 0.0, var = 0.0;
      for (const auto& s : batch) mean += s.advantage;
      mean /= static_cast<double>(batch.size());
      for (const auto& s : batch) var += (s.advantage - mean) * (s.advantage - mean);
      const double sd = std::sqrt(var / static_cast<double>(batch.size()));
      for (auto& s : batch) s.advantage = (s.advantage - mean) / (sd + 1e-8);
    }

    UpdateStats us;
    double kl_total = 0.0;
    std::size_t epochs_run = 0;
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
      us = clipped_surrogate_update(learner, br.value_fn, batch, cfg, popt, vopt, rng);
      kl_total += us.mean_kl;
      ++epochs_run;
      if (us.kl_stopped) break;
    }
    for (const auto& o : raw_obs) learner.obs_norm().update(o);

    const SampleStats rs = summarize(returns);
    br.curve.push_back({total_steps, rs.mean, us.last.policy_loss, us.last.value_loss,
                        kl_total / static_cast<double>(epochs_run), us.last.entropy});
    br.value = rs.mean;
    if (!std::isfinite(rs.mean) || !all_finite(learner.params()))
      throw NumericalError("train_best_response: non-finite parameters or returns at iteration " + std::to_string(iter));
    if (iter == 0) initial_return = rs.mean;
    if (std::isfinite(cfg.divergence_margin)) {
      below = rs.mean < initial_return - cfg.divergence_margin ? below + 1 : 0;
      if (below >= cfg.divergence_patience)
        throw NumericalError("train_best_response: diverged (return below initial - margin for " +
                             std::to_string(below) + " consecutive iterations)");
    }
  }
  learner.obs_norm().frozen = true;
  return br;
}

}  // namespace grad

#pragma once

#include "grad/adversaries.hpp"
#include "grad/env.hpp"
#include "grad/perturb.hpp"
#include "grad/policy.hpp"

namespace grad {

// p / p_action follow the sign convention p = perturbed - clean. For
// single-domain attacks `p` holds the applied perturbation; for mixed attacks
// `p` is the state-side and `p_action` the action-side perturbation.
struct TrajectoryStep {
  std::size_t t = 0;
  Vec s;
  Vec s_tilde;
  Vec a;        // agent's sampled output (pre-clip)
  Vec a_tilde;  // action executed by the environment
  Vec p;
  Vec p_action;
  double r = 0.0;
  double agent_logprob = 0.0;
  Vec adv_obs;
  Vec adv_output;
  double adv_logprob = 0.0;
  double adv_reward = 0.0;  // always -r
  bool replaced = false;    // model-uncertainty replacement happened
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;
  double episode_return = 0.0;
  bool terminal = false;

  std::vector<Vec> perturbations() const {
    std::vector<Vec> out;
    for (const auto& s : steps) out.push_back(s.p);
    return out;
  }
  std::vector<Vec> action_perturbations() const {
    std::vector<Vec> out;
    for (const auto& s : steps) out.push_back(s.p_action);
    return out;
  }
};

struct RolloutOptions {
  ActMode agent_mode = ActMode::Sample;
  ActMode adversary_mode = ActMode::Sample;
};

namespace detail {

inline void audit_step(const Vec& p, const CouplingContext& before, const Ball& ball) {
  const bool mag = norm_of(p, ball.norm) <= ball.epsilon + kFeasibilitySlack;
  const bool cpl = !before.prev || norm_of(sub(p, *before.prev), ball.norm) <= ball.epsilon_bar + kFeasibilitySlack;
  if (!mag || !cpl) throw ContractViolation("rollout: emitted perturbation violates its budget after projection");
}

inline void audit_memorized(const Vec& p, const CouplingContext& before, const Ball& ball) {
  const bool mag = norm_of(p, ball.norm) <= ball.epsilon + kFeasibilitySlack;
  const auto m = before.history_mean();
  const bool cpl = !m || norm_of(sub(p, *m), ball.norm) <= ball.epsilon_bar + kFeasibilitySlack;
  if (!mag || !cpl) throw ContractViolation("rollout: memorized perturbation violates its budget after projection");
}

}  // namespace detail

// Runs one episode. `budget`, when given, overrides the attachment's own budget
// (the engine passes the scheduled budget). With no adversary, a ModelUncertainty
// budget replaces executed actions with probability alpha.
inline Trajectory rollout(Environment& env, const Policy& agent, const AdversaryAttachment* adversary,
                          const PerturbationBudget* budget, Rng& rng, const RolloutOptions& opts = {}) {
  const EnvSpec& spec = env.spec();
  if (agent.observation_dim() != spec.state_dim) throw ContractViolation("rollout: agent observation_dim mismatch");
  if (!adversary && budget && budget->domain != AttackDomain::ModelUncertainty)
    throw ContractViolation("rollout: perturbation budget given without an adversary");
  if (adversary && budget && budget->domain == AttackDomain::ModelUncertainty)
    throw ContractViolation("rollout: model-uncertainty budget cannot drive an adversary");

  AdversaryAttachment att;
  if (adversary) {
    att = *adversary;
    if (budget) att.budget = *budget;
  }
  const bool attacked = adversary != nullptr;
  const double alpha = (!attacked && budget) ? budget->alpha : 0.0;

  // Adversary sampling uses its own stream.
  const std::uint64_t episode_seed = rng();
  env.reseed(episode_seed);
  Rng adv_rng = derive_rng(episode_seed, {0xad});
  Vec s = env.reset();
  Trajectory traj;
  AttackContext ctx;
  bool done = false;
  while (!done) {
    TrajectoryStep st;
    st.t = env.t();
    st.s = s;
    st.s_tilde = s;

    DirectorSample dir;
    MixedPerturbation mixed;
    const AttackContext before = ctx;
    if (attacked) {
      if (att.kind == AdversaryKind::Mixed) {
        mixed = mixed_perturb(
            att, s, [&](const Vec& obs) { return agent.act(obs, opts.agent_mode, rng).action; }, ctx, adv_rng, spec,
            opts.adversary_mode);
        dir = mixed.director;
      } else if (att.kind == AdversaryKind::RandomBaseline) {
        CouplingContext& c = att.perturbs_state() ? ctx.state : ctx.action;
        const Ball ball = att.perturbs_state() ? att.budget.state_ball() : att.budget.action_ball();
        st.p = random_adversary(att.perturbed_dim(), ball, c, adv_rng);
        c.record(st.p);
      } else {
        dir = sample_director(att, s, ctx, opts.adversary_mode, adv_rng);
      }
      st.adv_obs = dir.obs;
      st.adv_output = dir.output;
      st.adv_logprob = dir.logprob;

      switch (att.kind) {
        case AdversaryKind::MatrixColumn: env.set_opponent_action(static_cast<std::size_t>(dir.output[0])); break;
        case AdversaryKind::PAAD: {
          const Ball ball = att.budget.state_ball();
          st.p = project_coupled(actor_translate(dir.output, att.state_dim, ball.epsilon), ctx.state, ball);
          ctx.state.record(st.p);
          break;
        }
        case AdversaryKind::ACAD: {
          const Ball ball = att.budget.action_ball();
          st.p = project_coupled(actor_translate(dir.output, att.action_dim, ball.epsilon), ctx.action, ball);
          ctx.action.record(st.p);
          break;
        }
        case AdversaryKind::Memorized: st.p = memorized_perturbation(att, dir, ctx); break;
        case AdversaryKind::Mixed:
          st.p = mixed.p_state;
          st.p_action = mixed.p_action;
          break;
        case AdversaryKind::RandomBaseline: break;
      }

      if (att.kind == AdversaryKind::Memorized) {
        const bool state_side = att.perturbs_state();
        detail::audit_memorized(st.p, state_side ? before.state : before.action,
                                state_side ? att.budget.state_ball() : att.budget.action_ball());
      } else if (att.kind == AdversaryKind::Mixed) {
        detail::audit_step(st.p, before.state, att.budget.state_ball());
        detail::audit_step(st.p_action, before.action, att.budget.action_ball());
      } else if (att.kind != AdversaryKind::MatrixColumn) {
        const bool state_side = att.perturbs_state();
        detail::audit_step(st.p, state_side ? before.state : before.action,
                           state_side ? att.budget.state_ball() : att.budget.action_ball());
      }
      if (att.perturbs_state()) st.s_tilde = add(s, st.p);
    }

    if (attacked && att.kind == AdversaryKind::Mixed) {
      st.a = mixed.a;
      st.agent_logprob = agent.log_prob(agent.normalize(st.s_tilde), st.a);
      st.a_tilde = mixed.a_tilde;
    } else {
      const ActResult ar = agent.act(st.s_tilde, opts.agent_mode, rng);
      st.a = ar.action;
      st.agent_logprob = ar.logprob;
      st.a_tilde = env.clip_action(st.a);
      if (attacked && att.perturbs_action())
        st.a_tilde = clip_to(add(st.a_tilde, st.p), spec.action_lo, spec.action_hi);
      if (alpha > 0.0 && !spec.discrete())
        st.a_tilde = apply_model_uncertainty(st.a_tilde, alpha, rng, spec.action_lo, spec.action_hi, &st.replaced);
    }

    StepResult res = env.step(st.a_tilde);
    st.r = res.reward;
    st.adv_reward = -res.reward;
    traj.episode_return += res.reward;
    done = res.done;
    s = std::move(res.next_state);
    traj.steps.push_back(std::move(st));
  }
  traj.terminal = true;
  return traj;
}

}  // namespace grad

#pragma once

#include <functional>
#include <string>

#include "grad/common.hpp"
#include "grad/env.hpp"
#include "grad/perturb.hpp"
#include "grad/policy.hpp"

namespace grad {

// MatrixColumn is the adversary of a matrix game: its director picks the column directly.
enum class AdversaryKind { PAAD, ACAD, Mixed, Memorized, RandomBaseline, MatrixColumn };

inline std::string to_string(AdversaryKind k) {
  switch (k) {
    case AdversaryKind::PAAD: return "paad";
    case AdversaryKind::ACAD: return "acad";
    case AdversaryKind::Mixed: return "mixed";
    case AdversaryKind::Memorized: return "memorized";
    case AdversaryKind::RandomBaseline: return "random";
    case AdversaryKind::MatrixColumn: return "matrix_column";
  }
  return "?";
}

inline AdversaryKind parse_adversary_kind(const std::string& s) {
  for (auto k : {AdversaryKind::PAAD, AdversaryKind::ACAD, AdversaryKind::Mixed, AdversaryKind::Memorized,
                 AdversaryKind::RandomBaseline, AdversaryKind::MatrixColumn})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown adversary kind '" + s + "'");
}

// Per-rollout mutable state of an attachment.
struct AttackContext {
  CouplingContext state;
  CouplingContext action;
};

struct AdversaryAttachment {
  AdversaryKind kind = AdversaryKind::PAAD;
  Policy director;
  PerturbationBudget budget;
  // Dimensions of the attacked spaces (state_dim, continuous action_dim).
  std::size_t state_dim = 0;
  std::size_t action_dim = 0;

  bool perturbs_state() const {
    switch (kind) {
      case AdversaryKind::PAAD:
      case AdversaryKind::Mixed: return true;
      case AdversaryKind::Memorized:
      case AdversaryKind::RandomBaseline: return budget.domain == AttackDomain::State;
      default: return false;
    }
  }

  bool perturbs_action() const {
    switch (kind) {
      case AdversaryKind::ACAD:
      case AdversaryKind::Mixed: return true;
      case AdversaryKind::Memorized:
      case AdversaryKind::RandomBaseline: return budget.domain == AttackDomain::Action;
      default: return false;
    }
  }

  bool learned() const { return kind != AdversaryKind::RandomBaseline; }

  // Dimension of the space a single-domain attachment perturbs.
  std::size_t perturbed_dim() const { return perturbs_state() ? state_dim : action_dim; }
};

inline std::size_t director_output_dim(AdversaryKind kind, const EnvSpec& spec, AttackDomain domain) {
  switch (kind) {
    case AdversaryKind::PAAD: return spec.state_dim;
    case AdversaryKind::ACAD: return spec.action_dim;
    case AdversaryKind::Mixed: return std::max(spec.state_dim, spec.action_dim);
    case AdversaryKind::Memorized:
    case AdversaryKind::RandomBaseline: return domain == AttackDomain::Action ? spec.action_dim : spec.state_dim;
    case AdversaryKind::MatrixColumn: return spec.action_dim;
  }
  return 0;
}

// Director sees the victim state plus the coupling context of every perturbed space.
inline std::size_t director_obs_dim(AdversaryKind kind, const EnvSpec& spec, AttackDomain domain) {
  switch (kind) {
    case AdversaryKind::PAAD: return 2 * spec.state_dim;
    case AdversaryKind::ACAD: return spec.state_dim + spec.action_dim;
    case AdversaryKind::Mixed: return 2 * spec.state_dim + spec.action_dim;
    case AdversaryKind::Memorized:
    case AdversaryKind::RandomBaseline:
      return spec.state_dim + (domain == AttackDomain::Action ? spec.action_dim : spec.state_dim);
    case AdversaryKind::MatrixColumn: return 1;
  }
  return 0;
}

inline void validate_attachment_domain(AdversaryKind kind, const PerturbationBudget& b) {
  const auto d = b.domain;
  const bool ok = (kind == AdversaryKind::PAAD && d == AttackDomain::State) ||
                  (kind == AdversaryKind::ACAD && d == AttackDomain::Action) ||
                  (kind == AdversaryKind::Mixed && d == AttackDomain::Mixed) ||
                  ((kind == AdversaryKind::Memorized || kind == AdversaryKind::RandomBaseline) &&
                   (d == AttackDomain::State || d == AttackDomain::Action)) ||
                  kind == AdversaryKind::MatrixColumn;
  if (!ok) throw ConfigError("adversary kind '" + to_string(kind) + "' cannot attack domain '" + to_string(d) + "'");
}

inline AdversaryAttachment make_adversary(AdversaryKind kind, const EnvSpec& spec, const PerturbationBudget& budget,
                                          std::vector<std::size_t> hidden, Rng& rng) {
  budget.validate();
  validate_attachment_domain(kind, budget);
  if (kind == AdversaryKind::MatrixColumn && !spec.discrete())
    throw ConfigError("matrix_column adversary needs a matrix-game environment");
  if (kind != AdversaryKind::MatrixColumn && spec.discrete())
    throw ConfigError("perturbation adversaries need a continuous-control environment");
  AdversaryAttachment att;
  att.kind = kind;
  att.budget = budget;
  att.state_dim = spec.state_dim;
  att.action_dim = spec.discrete() ? 0 : spec.action_dim;
  Architecture arch;
  arch.input_dim = director_obs_dim(kind, spec, budget.domain);
  arch.output_dim = director_output_dim(kind, spec, budget.domain);
  arch.hidden = std::move(hidden);
  arch.head = kind == AdversaryKind::MatrixColumn ? Head::Categorical : Head::Gaussian;
  att.director = Policy::random(arch, rng);
  return att;
}

inline Vec director_observation(const AdversaryAttachment& att, std::span<const double> s, const AttackContext& ctx) {
  if (att.kind == AdversaryKind::MatrixColumn) return Vec{0.0};
  if (s.size() != att.state_dim) throw ContractViolation("adversary: state dimension mismatch");
  Vec obs(s.begin(), s.end());
  auto append = [&obs](const Vec& v) { obs.insert(obs.end(), v.begin(), v.end()); };
  switch (att.kind) {
    case AdversaryKind::PAAD: append(ctx.state.prev_or_zero(att.state_dim)); break;
    case AdversaryKind::ACAD: append(ctx.action.prev_or_zero(att.action_dim)); break;
    case AdversaryKind::Mixed:
      append(ctx.state.prev_or_zero(att.state_dim));
      append(ctx.action.prev_or_zero(att.action_dim));
      break;
    case AdversaryKind::Memorized: {
      const CouplingContext& c = att.perturbs_state() ? ctx.state : ctx.action;
      append(c.history_mean().value_or(Vec(att.perturbed_dim(), 0.0)));
      break;
    }
    case AdversaryKind::RandomBaseline: {
      const CouplingContext& c = att.perturbs_state() ? ctx.state : ctx.action;
      append(c.prev_or_zero(att.perturbed_dim()));
      break;
    }
    default: break;
  }
  return obs;
}

// Actor function: eps-scaled tanh squashing of the first `dim` director outputs.
inline Vec actor_translate(std::span<const double> direction, std::size_t dim, double epsilon) {
  if (direction.size() < dim) throw ContractViolation("actor: director output shorter than target space");
  Vec p(dim);
  for (std::size_t i = 0; i < dim; ++i) p[i] = epsilon * std::tanh(direction[i]);
  return p;
}

struct DirectorSample {
  Vec obs;
  Vec output;  // raw sampled direction (or {column})
  double logprob = 0.0;
};

inline DirectorSample sample_director(const AdversaryAttachment& att, std::span<const double> s,
                                      const AttackContext& ctx, ActMode mode, Rng& rng) {
  DirectorSample d;
  d.obs = director_observation(att, s, ctx);
  const ActResult r = att.director.act(d.obs, mode, rng);
  d.output = r.action;
  d.logprob = r.logprob;
  return d;
}

// Uniform draw from the coupled feasible set by rejection; falls back to projecting
// an eps-ball sample after 100 rejections.
inline Vec random_adversary(std::size_t dim, const Ball& ball, const CouplingContext& ctx, Rng& rng) {
  static constexpr int kMaxRejections = 100;
  if (ball.epsilon == 0.0) return Vec(dim, 0.0);
  Vec p;
  for (int k = 0; k < kMaxRejections; ++k) {
    p = sample_ball(dim, ball, rng);
    if (!ctx.prev || norm_of(sub(p, *ctx.prev), ball.norm) <= ball.epsilon_bar) return p;
  }
  return project_coupled(p, ctx, ball);
}

struct StatePerturbation {
  Vec s_tilde;
  Vec p;
  DirectorSample director;
};

inline StatePerturbation paad_perturb_state(const AdversaryAttachment& att, std::span<const double> s,
                                            AttackContext& ctx, Rng& rng, ActMode mode = ActMode::Sample) {
  if (att.kind != AdversaryKind::PAAD) throw ContractViolation("paad_perturb_state: attachment is not PAAD");
  if (att.budget.domain != AttackDomain::State) throw ContractViolation("paad_perturb_state: budget domain must be state");
  StatePerturbation out;
  out.director = sample_director(att, s, ctx, mode, rng);
  const Ball ball = att.budget.state_ball();
  out.p = project_coupled(actor_translate(out.director.output, att.state_dim, ball.epsilon), ctx.state, ball);
  out.s_tilde = add(s, out.p);
  ctx.state.record(out.p);
  return out;
}

struct ActionPerturbation {
  Vec a_tilde;
  Vec p;
  DirectorSample director;
};

inline Vec clip_to(std::span<const double> a, std::span<const double> lo, std::span<const double> hi) {
  Vec out(a.begin(), a.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], lo[i], hi[i]);
  return out;
}

inline ActionPerturbation acad_perturb_action(const AdversaryAttachment& att, std::span<const double> s,
                                              std::span<const double> a, AttackContext& ctx, Rng& rng,
                                              const EnvSpec& spec, ActMode mode = ActMode::Sample) {
  if (att.kind != AdversaryKind::ACAD) throw ContractViolation("acad_perturb_action: attachment is not ACAD");
  if (att.budget.domain != AttackDomain::Action)
    throw ContractViolation("acad_perturb_action: budget domain must be action");
  if (a.size() != att.action_dim) throw ContractViolation("acad_perturb_action: action dimension mismatch");
  ActionPerturbation out;
  out.director = sample_director(att, s, ctx, mode, rng);
  const Ball ball = att.budget.action_ball();
  out.p = project_coupled(actor_translate(out.director.output, att.action_dim, ball.epsilon), ctx.action, ball);
  out.a_tilde = clip_to(add(clip_to(a, spec.action_lo, spec.action_hi), out.p), spec.action_lo, spec.action_hi);
  ctx.action.record(out.p);
  return out;
}

struct MixedPerturbation {
  Vec s_tilde;
  Vec a;  // victim action taken on s_tilde (unclipped sample)
  Vec a_tilde;
  Vec p_state;
  Vec p_action;
  DirectorSample director;
};

// One direction drives both actors: the state actor reads the first state_dim
// entries, the action actor the first action_dim entries.
inline MixedPerturbation mixed_perturb(const AdversaryAttachment& att, std::span<const double> s,
                                       const std::function<Vec(const Vec&)>& act_on, AttackContext& ctx, Rng& rng,
                                       const EnvSpec& spec, ActMode mode = ActMode::Sample) {
  if (att.kind != AdversaryKind::Mixed) throw ContractViolation("mixed_perturb: attachment is not Mixed");
  if (att.budget.domain != AttackDomain::Mixed) throw ConfigError("mixed_perturb: mixed adversary needs both budgets");
  MixedPerturbation out;
  out.director = sample_director(att, s, ctx, mode, rng);
  const Ball sb = att.budget.state_ball();
  const Ball ab = att.budget.action_ball();
  out.p_state = project_coupled(actor_translate(out.director.output, att.state_dim, sb.epsilon), ctx.state, sb);
  out.s_tilde = add(s, out.p_state);
  out.a = act_on(out.s_tilde);
  out.p_action = project_coupled(actor_translate(out.director.output, att.action_dim, ab.epsilon), ctx.action, ab);
  out.a_tilde =
      clip_to(add(clip_to(out.a, spec.action_lo, spec.action_hi), out.p_action), spec.action_lo, spec.action_hi);
  ctx.state.record(out.p_state);
  ctx.action.record(out.p_action);
  return out;
}

// Memorized attacker: coupling is enforced against the mean of the last W perturbations.
inline Vec memorized_perturbation(const AdversaryAttachment& att, const DirectorSample& d, AttackContext& ctx) {
  CouplingContext& c = att.perturbs_state() ? ctx.state : ctx.action;
  const Ball ball = att.perturbs_state() ? att.budget.state_ball() : att.budget.action_ball();
  Vec p = memorized_project(actor_translate(d.output, att.perturbed_dim(), ball.epsilon), c, ball);
  c.record(p);
  return p;
}

}  // namespace grad

#pragma once

#include <deque>
#include <optional>
#include <string>

#include "grad/common.hpp"

namespace grad {

enum class Norm { Linf, L2 };
enum class AttackDomain { State, Action, Mixed, ModelUncertainty };

inline constexpr double kFeasibilitySlack = 1e-9;

inline std::string to_string(Norm n) { return n == Norm::Linf ? "linf" : "l2"; }

inline std::string to_string(AttackDomain d) {
  switch (d) {
    case AttackDomain::State: return "state";
    case AttackDomain::Action: return "action";
    case AttackDomain::Mixed: return "mixed";
    case AttackDomain::ModelUncertainty: return "model_uncertainty";
  }
  return "?";
}

inline Norm parse_norm(const std::string& s) {
  if (s == "linf") return Norm::Linf;
  if (s == "l2") return Norm::L2;
  throw ConfigError("unknown norm '" + s + "' (expected linf|l2)");
}

inline AttackDomain parse_domain(const std::string& s) {
  if (s == "state") return AttackDomain::State;
  if (s == "action") return AttackDomain::Action;
  if (s == "mixed") return AttackDomain::Mixed;
  if (s == "model_uncertainty") return AttackDomain::ModelUncertainty;
  throw ConfigError("unknown attack domain '" + s + "'");
}

inline double norm_of(std::span<const double> v, Norm n) { return n == Norm::Linf ? norm_inf(v) : norm_l2(v); }

// One feasible set: the eps-ball intersected with the eps_bar-ball around the
// previous perturbation.
struct Ball {
  double epsilon = 0.0;
  double epsilon_bar = 0.0;
  Norm norm = Norm::Linf;

  // With eps_bar >= 2 eps the coupling ball contains the whole eps-ball.
  bool coupling_inactive() const { return epsilon_bar >= 2.0 * epsilon; }
};

struct PerturbationBudget {
  double epsilon = 0.0;
  double epsilon_bar = 0.0;
  Norm norm = Norm::Linf;
  AttackDomain domain = AttackDomain::State;
  double alpha = 0.0;               // ModelUncertainty replacement probability
  double action_epsilon = 0.0;      // Mixed: action-side bound
  double action_epsilon_bar = 0.0;  // Mixed: action-side coupling bound

  Ball state_ball() const { return {epsilon, epsilon_bar, norm}; }

  Ball action_ball() const {
    if (domain == AttackDomain::Mixed) return {action_epsilon, action_epsilon_bar, norm};
    return {epsilon, epsilon_bar, norm};
  }

  // Ball of the single-domain attacks (State or Action).
  Ball ball() const { return {epsilon, epsilon_bar, norm}; }

  // Budget with every magnitude multiplied by `f` (schedule warmup).
  PerturbationBudget scaled(double f) const {
    PerturbationBudget b = *this;
    b.epsilon *= f;
    b.epsilon_bar *= f;
    b.action_epsilon *= f;
    b.action_epsilon_bar *= f;
    return b;
  }

  void validate() const {
    auto ok = [](double x) { return std::isfinite(x) && x >= 0.0; };
    if (!ok(epsilon) || !ok(epsilon_bar)) throw ConfigError("budget: epsilon and epsilon_bar must be finite and >= 0");
    if (!ok(action_epsilon) || !ok(action_epsilon_bar)) throw ConfigError("budget: action-side bounds must be >= 0");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("budget: alpha must lie in [0,1]");
  }

  bool operator==(const PerturbationBudget&) const = default;
};

// Coupling state carried across the steps of one rollout.
struct CouplingContext {
  static constexpr std::size_t kMemory = 10;

  std::optional<Vec> prev;
  std::deque<Vec> history;  // last kMemory perturbations, oldest first

  void record(const Vec& p) {
    prev = p;
    history.push_back(p);
    if (history.size() > kMemory) history.pop_front();
  }

  std::optional<Vec> history_mean() const {
    if (history.empty()) return std::nullopt;
    Vec m(history.front().size(), 0.0);
    for (const auto& h : history)
      for (std::size_t i = 0; i < m.size(); ++i) m[i] += h[i];
    for (double& x : m) x /= static_cast<double>(history.size());
    return m;
  }

  // Previous perturbation, or zeros at t = 0 (director observation context).
  Vec prev_or_zero(std::size_t dim) const { return prev ? *prev : Vec(dim, 0.0); }
};

inline Vec project_admissible(std::span<const double> p_raw, const Ball& ball) {
  Vec out(p_raw.begin(), p_raw.end());
  const double eps = ball.epsilon;
  if (ball.norm == Norm::Linf) {
    for (double& x : out) x = std::clamp(x, -eps, eps);
  } else {
    const double n = norm_l2(out);
    if (n > eps) {
      if (eps == 0.0) {
        std::fill(out.begin(), out.end(), 0.0);
      } else {
        const double s = eps / n;
        for (double& x : out) x *= s;
      }
    }
  }
  return out;
}

namespace detail {

inline Vec project_l2_ball(const Vec& x, std::span<const double> center, double radius) {
  Vec d = sub(x, center);
  const double n = norm_l2(d);
  if (n <= radius) return x;
  Vec out(x.size());
  const double s = n > 0.0 ? radius / n : 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = center[i] + s * d[i];
  return out;
}

// Largest t in [0,1] such that prev + t (x - prev) lies in both balls; prev is feasible.
inline Vec pull_toward_prev(const Vec& x, const Vec& prev, const Ball& ball) {
  const Vec d = sub(x, prev);
  double t = 1.0;
  const double dn = norm_l2(d);
  if (dn > ball.epsilon_bar) t = std::min(t, ball.epsilon_bar / dn);
  // |prev + t d|^2 <= eps^2  ->  a t^2 + 2 b t + c <= 0
  const double a = dot(d, d), b = dot(prev, d), c = dot(prev, prev) - ball.epsilon * ball.epsilon;
  if (a > 0.0) {
    const double disc = std::max(0.0, b * b - a * c);
    const double root = (-b + std::sqrt(disc)) / a;
    t = std::min(t, std::max(0.0, root));
  }
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = prev[i] + t * d[i];
  return out;
}

}  // namespace detail

// Projection onto {|p| <= eps} ∩ {|p - center| <= eps_bar}. `center` is the
// previous perturbation (or the memory mean for the memorized attacker).
inline Vec project_onto_coupled_set(std::span<const double> p_raw, const Vec& center, const Ball& ball) {
  if (ball.coupling_inactive()) return project_admissible(p_raw, ball);
  if (ball.norm == Norm::Linf) {
    Vec out(p_raw.size());
    for (std::size_t i = 0; i < p_raw.size(); ++i) {
      const double lo = std::max(-ball.epsilon, center[i] - ball.epsilon_bar);
      const double hi = std::min(ball.epsilon, center[i] + ball.epsilon_bar);
      out[i] = lo <= hi ? std::clamp(p_raw[i], lo, hi) : hi;
    }
    return out;
  }
  // Dykstra's alternating projection between the two L2 balls.
  static constexpr int kMaxIter = 100;
  static constexpr double kTol = 1e-9;
  const std::size_t n = p_raw.size();
  const Vec zero(n, 0.0);
  Vec x(p_raw.begin(), p_raw.end());
  Vec pa(n, 0.0), qb(n, 0.0);
  for (int it = 0; it < kMaxIter; ++it) {
    const Vec x_old = x;
    Vec y = detail::project_l2_ball(add(x, pa), zero, ball.epsilon);
    for (std::size_t i = 0; i < n; ++i) pa[i] = x[i] + pa[i] - y[i];
    Vec z = detail::project_l2_ball(add(y, qb), center, ball.epsilon_bar);
    for (std::size_t i = 0; i < n; ++i) qb[i] = y[i] + qb[i] - z[i];
    x = std::move(z);
    if (norm_l2(sub(x, x_old)) < kTol) break;
  }
  if (norm_l2(x) > ball.epsilon || norm_l2(sub(x, center)) > ball.epsilon_bar) x = detail::pull_toward_prev(x, center, ball);
  return x;
}

inline Vec project_coupled(std::span<const double> p_raw, const CouplingContext& ctx, const Ball& ball) {
  if (!ctx.prev) return project_admissible(p_raw, ball);
  const Vec& prev = *ctx.prev;
  if (prev.size() != p_raw.size()) throw ContractViolation("project_coupled: context dimension mismatch");
  if (norm_of(prev, ball.norm) > ball.epsilon + kFeasibilitySlack)
    throw ContractViolation("project_coupled: previous perturbation lies outside the epsilon ball");
  return project_onto_coupled_set(p_raw, prev, ball);
}

// Coupling against the mean of the last W perturbations.
inline Vec memorized_project(std::span<const double> p_raw, const CouplingContext& ctx, const Ball& ball) {
  const auto mean = ctx.history_mean();
  if (!mean) return project_admissible(p_raw, ball);
  if (mean->size() != p_raw.size()) throw ContractViolation("memorized_project: context dimension mismatch");
  return project_onto_coupled_set(p_raw, *mean, ball);
}

struct SequenceReport {
  std::vector<bool> magnitude_ok;  // per step
  std::vector<bool> coupling_ok;   // per consecutive pair (t, t+1)
  bool pass = true;
  std::size_t first_failure = 0;
};

inline SequenceReport check_sequence(const std::vector<Vec>& seq, const Ball& ball) {
  if (seq.empty()) throw ContractViolation("check_sequence: empty sequence");
  const std::size_t dim = seq.front().size();
  SequenceReport r;
  r.magnitude_ok.resize(seq.size());
  r.coupling_ok.resize(seq.size() - 1);
  bool first = true;
  auto fail = [&](std::size_t t) {
    if (first) r.first_failure = t;
    first = false;
    r.pass = false;
  };
  for (std::size_t t = 0; t < seq.size(); ++t) {
    if (seq[t].size() != dim) throw ContractViolation("check_sequence: dimension mismatch at step " + std::to_string(t));
    r.magnitude_ok[t] = norm_of(seq[t], ball.norm) <= ball.epsilon + kFeasibilitySlack;
    if (!r.magnitude_ok[t]) fail(t);
    if (t > 0) {
      r.coupling_ok[t - 1] = norm_of(sub(seq[t], seq[t - 1]), ball.norm) <= ball.epsilon_bar + kFeasibilitySlack;
      if (!r.coupling_ok[t - 1]) fail(t);
    }
  }
  return r;
}

// Auditor for the memorized attacker: step t is coupled to the mean of steps t-W..t-1.
inline SequenceReport check_memorized_sequence(const std::vector<Vec>& seq, const Ball& ball,
                                               std::size_t window = CouplingContext::kMemory) {
  if (seq.empty()) throw ContractViolation("check_memorized_sequence: empty sequence");
  SequenceReport r;
  r.magnitude_ok.resize(seq.size());
  r.coupling_ok.resize(seq.size() - 1);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    r.magnitude_ok[t] = norm_of(seq[t], ball.norm) <= ball.epsilon + kFeasibilitySlack;
    if (t > 0) {
      const std::size_t from = t > window ? t - window : 0;
      Vec m(seq[t].size(), 0.0);
      for (std::size_t k = from; k < t; ++k)
        for (std::size_t i = 0; i < m.size(); ++i) m[i] += seq[k][i];
      for (double& x : m) x /= static_cast<double>(t - from);
      r.coupling_ok[t - 1] = norm_of(sub(seq[t], m), ball.norm) <= ball.epsilon_bar + kFeasibilitySlack;
    }
    if (r.pass && (!r.magnitude_ok[t] || (t > 0 && !r.coupling_ok[t - 1]))) {
      r.pass = false;
      r.first_failure = t;
    }
  }
  return r;
}

// With probability alpha the action is replaced by a uniform draw over the bounds.
inline Vec apply_model_uncertainty(std::span<const double> a, double alpha, Rng& rng, std::span<const double> lo,
                                   std::span<const double> hi, bool* replaced = nullptr) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractViolation("apply_model_uncertainty: alpha outside [0,1]");
  const bool swap = alpha > 0.0 && uniform01(rng) < alpha;
  if (replaced) *replaced = swap;
  if (!swap) return Vec(a.begin(), a.end());
  Vec out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::uniform_real_distribution<double>(lo[i], hi[i])(rng);
  return out;
}

// Uniform sample from the eps-ball of the given norm.
inline Vec sample_ball(std::size_t dim, const Ball& ball, Rng& rng) {
  Vec out(dim, 0.0);
  if (ball.epsilon == 0.0) return out;
  if (ball.norm == Norm::Linf) {
    for (double& x : out) x = std::uniform_real_distribution<double>(-ball.epsilon, ball.epsilon)(rng);
    return out;
  }
  for (double& x : out) x = std_normal(rng);
  const double n = norm_l2(out);
  const double r = ball.epsilon * std::pow(uniform01(rng), 1.0 / static_cast<double>(dim));
  for (double& x : out) x *= n > 0.0 ? r / n : 0.0;
  return out;
}

}  // namespace grad

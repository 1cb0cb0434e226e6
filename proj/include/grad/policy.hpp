#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "grad/common.hpp"

namespace grad {

enum class Head { Gaussian, Categorical };

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

struct Architecture {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t output_dim = 1;
  Head head = Head::Gaussian;
  bool recurrent = false;

  // Weights and biases of the MLP trunk only (no log-std).
  std::size_t trunk_params() const {
    std::size_t n = 0, in = input_dim;
    for (std::size_t h : hidden) {
      n += h * in + h;
      in = h;
    }
    return n + output_dim * in + output_dim;
  }

  std::size_t param_count() const { return trunk_params() + (head == Head::Gaussian ? output_dim : 0); }

  void validate() const {
    if (input_dim == 0 || output_dim == 0) throw ConfigError("architecture: dims must be positive");
    for (std::size_t h : hidden)
      if (h == 0) throw ConfigError("architecture: hidden layer of width 0");
    if (recurrent) throw ConfigError("architecture: recurrent cells are not supported; use context features");
  }

  bool operator==(const Architecture&) const = default;
};

// Tanh MLP with a linear output layer and a hand-written backward pass.
// Parameters are a flat vector laid out layer by layer as [W (out x in, row-major), b].
class Mlp {
 public:
  struct Cache {
    std::vector<Vec> activations;  // activations[0] = input, last = output (pre-head)
  };

  static Vec forward(const Architecture& arch, std::span<const double> params, std::span<const double> x,
                     Cache* cache = nullptr) {
    Vec in(x.begin(), x.end());
    if (cache) {
      cache->activations.clear();
      cache->activations.push_back(in);
    }
    std::size_t off = 0;
    const std::size_t layers = arch.hidden.size() + 1;
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t n_in = in.size();
      const std::size_t n_out = l < arch.hidden.size() ? arch.hidden[l] : arch.output_dim;
      const double* w = params.data() + off;
      const double* b = w + n_out * n_in;
      Vec out(n_out);
      for (std::size_t o = 0; o < n_out; ++o) {
        double s = b[o];
        const double* row = w + o * n_in;
        for (std::size_t i = 0; i < n_in; ++i) s += row[i] * in[i];
        out[o] = l + 1 < layers ? std::tanh(s) : s;
      }
      off += n_out * n_in + n_out;
      in = std::move(out);
      if (cache) cache->activations.push_back(in);
    }
    return in;
  }

  // Accumulates d(loss)/d(params) into grad given d(loss)/d(output).
  static void backward(const Architecture& arch, std::span<const double> params, const Cache& cache,
                       std::span<const double> d_out, std::span<double> grad) {
    const std::size_t layers = arch.hidden.size() + 1;
    std::vector<std::size_t> offsets(layers);
    std::size_t off = 0;
    for (std::size_t l = 0; l < layers; ++l) {
      offsets[l] = off;
      const std::size_t n_in = cache.activations[l].size();
      const std::size_t n_out = cache.activations[l + 1].size();
      off += n_out * n_in + n_out;
    }
    Vec delta(d_out.begin(), d_out.end());
    for (std::size_t l = layers; l-- > 0;) {
      const Vec& in = cache.activations[l];
      const Vec& out = cache.activations[l + 1];
      const std::size_t n_in = in.size();
      const std::size_t n_out = out.size();
      if (l + 1 < layers)
        for (std::size_t o = 0; o < n_out; ++o) delta[o] *= 1.0 - out[o] * out[o];
      double* gw = grad.data() + offsets[l];
      double* gb = gw + n_out * n_in;
      const double* w = params.data() + offsets[l];
      Vec d_in(l > 0 ? n_in : 0, 0.0);
      for (std::size_t o = 0; o < n_out; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        gb[o] += d;
        double* grow = gw + o * n_in;
        const double* wrow = w + o * n_in;
        for (std::size_t i = 0; i < n_in; ++i) grow[i] += d * in[i];
        if (l > 0)
          for (std::size_t i = 0; i < n_in; ++i) d_in[i] += d * wrow[i];
      }
      delta = std::move(d_in);
    }
  }

  // Scaled-normal init; the last layer is multiplied by `out_gain`.
  static void init(const Architecture& arch, std::span<double> params, Rng& rng, double out_gain) {
    std::size_t off = 0, in = arch.input_dim;
    const std::size_t layers = arch.hidden.size() + 1;
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t out = l < arch.hidden.size() ? arch.hidden[l] : arch.output_dim;
      const double scale = (l + 1 < layers ? 1.0 : out_gain) / std::sqrt(static_cast<double>(in));
      for (std::size_t k = 0; k < out * in; ++k) params[off + k] = scale * std_normal(rng);
      for (std::size_t k = 0; k < out; ++k) params[off + out * in + k] = 0.0;
      off += out * in + out;
      in = out;
    }
  }
};

// Running mean/variance of observations. Frozen statistics are used verbatim.
struct RunningNorm {
  bool enabled = false;
  bool frozen = false;
  double count = 0.0;
  Vec mean;
  Vec m2;

  static constexpr double kClip = 10.0;

  void resize(std::size_t dim) {
    mean.assign(dim, 0.0);
    m2.assign(dim, 0.0);
    count = 0.0;
  }

  void update(std::span<const double> x) {
    if (!enabled || frozen) return;
    count += 1.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - mean[i];
      mean[i] += d / count;
      m2[i] += d * (x[i] - mean[i]);
    }
  }

  Vec apply(std::span<const double> x) const {
    Vec out(x.begin(), x.end());
    if (!enabled || count < 2.0) return out;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double var = m2[i] / count;
      out[i] = std::clamp((x[i] - mean[i]) / std::sqrt(var + 1e-8), -kClip, kClip);
    }
    return out;
  }

  bool operator==(const RunningNorm&) const = default;
};

enum class ActMode { Sample, Mean };

struct ActResult {
  Vec action;  // unclipped sample (continuous) or {index} (categorical)
  double logprob = 0.0;
};

// Distribution parameters for one observation.
struct HeadOutput {
  Vec out;      // Gaussian mean or categorical logits
  Vec log_std;  // clamped, Gaussian only
  Mlp::Cache cache;
};

inline Vec softmax(std::span<const double> z) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : z) m = std::max(m, v);
  Vec p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - m));
  for (double& v : p) v /= s;
  return p;
}

inline double log_sum_exp(std::span<const double> z) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : z) m = std::max(m, v);
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

class Policy {
 public:
  static constexpr double kInitLogStd = -0.6931471805599453;  // log 0.5

  Policy() = default;

  explicit Policy(Architecture arch) : arch_(std::move(arch)), params_(arch_.param_count(), 0.0) {
    arch_.validate();
    norm_.resize(arch_.input_dim);
    if (arch_.head == Head::Gaussian)
      for (std::size_t i = 0; i < arch_.output_dim; ++i) params_[arch_.trunk_params() + i] = kInitLogStd;
  }

  static Policy random(const Architecture& arch, Rng& rng) {
    Policy p(arch);
    Mlp::init(p.arch_, p.params_, rng, 0.01);
    return p;
  }

  // All parameters zero, including log-std.
  static Policy zeros(const Architecture& arch) {
    Policy p(arch);
    std::fill(p.params_.begin(), p.params_.end(), 0.0);
    return p;
  }

  const Architecture& arch() const { return arch_; }
  std::size_t observation_dim() const { return arch_.input_dim; }
  std::size_t output_dim() const { return arch_.output_dim; }
  const Vec& params() const { return params_; }
  Vec& mutable_params() { return params_; }
  void set_params(Vec p) {
    if (p.size() != arch_.param_count()) throw ContractViolation("parameter count mismatch");
    params_ = std::move(p);
  }
  RunningNorm& obs_norm() { return norm_; }
  const RunningNorm& obs_norm() const { return norm_; }

  Vec normalize(std::span<const double> obs) const { return norm_.apply(obs); }

  // Head distribution for an already-normalized observation.
  HeadOutput head(std::span<const double> nobs) const {
    HeadOutput h;
    h.out = Mlp::forward(arch_, params_, nobs, &h.cache);
    if (arch_.head == Head::Gaussian) {
      h.log_std.resize(arch_.output_dim);
      for (std::size_t i = 0; i < arch_.output_dim; ++i)
        h.log_std[i] = std::clamp(params_[arch_.trunk_params() + i], kLogStdMin, kLogStdMax);
    }
    return h;
  }

  ActResult act(std::span<const double> obs, ActMode mode, Rng& rng) const {
    if (obs.size() != arch_.input_dim)
      throw ContractViolation("policy_act: observation has dimension " + std::to_string(obs.size()) +
                              ", expected " + std::to_string(arch_.input_dim));
    if (!all_finite(obs)) throw NumericalError("policy_act: non-finite observation");
    if (!all_finite(params_)) throw NumericalError("policy_act: non-finite policy parameters");
    const HeadOutput h = head(normalize(obs));
    ActResult r;
    if (arch_.head == Head::Gaussian) {
      r.action.resize(arch_.output_dim);
      for (std::size_t i = 0; i < arch_.output_dim; ++i)
        r.action[i] = mode == ActMode::Mean ? h.out[i] : h.out[i] + std::exp(h.log_std[i]) * std_normal(rng);
      r.logprob = gaussian_logprob(h, r.action);
    } else {
      const Vec p = softmax(h.out);
      std::size_t k = 0;
      if (mode == ActMode::Mean) {
        k = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
      } else {
        double u = uniform01(rng), c = 0.0;
        k = p.size() - 1;
        for (std::size_t i = 0; i < p.size(); ++i) {
          c += p[i];
          if (u < c) {
            k = i;
            break;
          }
        }
      }
      r.action = {static_cast<double>(k)};
      r.logprob = h.out[k] - log_sum_exp(h.out);
    }
    return r;
  }

  // Categorical probabilities for an observation (categorical heads only).
  Vec probabilities(std::span<const double> obs) const {
    if (arch_.head != Head::Categorical) throw ContractViolation("probabilities: categorical head required");
    return softmax(head(normalize(obs)).out);
  }

  double log_prob(std::span<const double> nobs, std::span<const double> action) const {
    return logprob_from_head(head(nobs), action);
  }

  // Returns log pi(action | nobs) and accumulates coeff_lp * dlogp/dtheta + coeff_ent * dH/dtheta
  // into grad. Entropy is written to *entropy when non-null.
  double logprob_entropy_grad(std::span<const double> nobs, std::span<const double> action, double coeff_lp,
                              double coeff_ent, std::span<double> grad, double* entropy = nullptr) const {
    const HeadOutput h = head(nobs);
    accumulate_grad(h, action, coeff_lp, coeff_ent, grad, entropy);
    return logprob_from_head(h, action);
  }

  double logprob_from_head(const HeadOutput& h, std::span<const double> action) const {
    if (arch_.head == Head::Gaussian) return gaussian_logprob(h, action);
    return h.out[static_cast<std::size_t>(action[0])] - log_sum_exp(h.out);
  }

  // Backward pass from a cached head evaluation.
  void accumulate_grad(const HeadOutput& h, std::span<const double> action, double coeff_lp, double coeff_ent,
                       std::span<double> grad, double* entropy = nullptr) const {
    const std::size_t n = arch_.output_dim;
    Vec d_out(n, 0.0);
    if (arch_.head == Head::Gaussian) {
      const std::size_t ls_off = arch_.trunk_params();
      double ent = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double sigma = std::exp(h.log_std[i]);
        const double z = (action[i] - h.out[i]) / sigma;
        d_out[i] = coeff_lp * z / sigma;
        const double raw = params_[ls_off + i];
        if (raw > kLogStdMin && raw < kLogStdMax) grad[ls_off + i] += coeff_lp * (z * z - 1.0) + coeff_ent;
        ent += h.log_std[i] + 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
      }
      if (entropy) *entropy = ent;
    } else {
      const Vec p = softmax(h.out);
      const auto a = static_cast<std::size_t>(action[0]);
      double ent = 0.0;
      for (std::size_t k = 0; k < n; ++k)
        if (p[k] > 0.0) ent -= p[k] * std::log(p[k]);
      for (std::size_t k = 0; k < n; ++k) {
        const double logp = p[k] > 0.0 ? std::log(p[k]) : 0.0;
        d_out[k] = coeff_lp * ((k == a ? 1.0 : 0.0) - p[k]) + coeff_ent * (-p[k] * (logp + ent));
      }
      if (entropy) *entropy = ent;
    }
    Mlp::backward(arch_, params_, h.cache, d_out, grad);
  }

  double entropy(std::span<const double> nobs) const {
    const HeadOutput h = head(nobs);
    double ent = 0.0;
    if (arch_.head == Head::Gaussian) {
      for (double ls : h.log_std) ent += ls + 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e);
    } else {
      for (double p : softmax(h.out))
        if (p > 0.0) ent -= p * std::log(p);
    }
    return ent;
  }

  std::uint64_t hash() const { return hash_params(params_); }

  bool operator==(const Policy&) const = default;

 private:
  static double gaussian_logprob(const HeadOutput& h, std::span<const double> a) {
    double lp = 0.0;
    for (std::size_t i = 0; i < h.out.size(); ++i) {
      const double sigma = std::exp(h.log_std[i]);
      const double z = (a[i] - h.out[i]) / sigma;
      lp += -0.5 * z * z - h.log_std[i] - 0.5 * std::log(2.0 * std::numbers::pi);
    }
    return lp;
  }

  Architecture arch_;
  Vec params_;
  RunningNorm norm_;
};

// State-value critic sharing the MLP machinery.
class ValueFunction {
 public:
  ValueFunction() = default;
  explicit ValueFunction(Architecture arch) : arch_(std::move(arch)) {
    arch_.output_dim = 1;
    arch_.head = Head::Gaussian;
    arch_.validate();
    params_.assign(arch_.trunk_params(), 0.0);
  }

  static ValueFunction random(Architecture arch, Rng& rng) {
    ValueFunction v(std::move(arch));
    Mlp::init(v.arch_, v.params_, rng, 1.0);
    return v;
  }

  const Architecture& arch() const { return arch_; }
  const Vec& params() const { return params_; }
  Vec& mutable_params() { return params_; }

  double value(std::span<const double> nobs) const { return Mlp::forward(arch_, params_, nobs)[0]; }

  // Accumulates coeff * dV/dtheta into grad and returns V.
  double value_grad(std::span<const double> nobs, double coeff, std::span<double> grad) const {
    Mlp::Cache cache;
    const double v = value_cached(nobs, cache);
    backward(cache, coeff, grad);
    return v;
  }

  double value_cached(std::span<const double> nobs, Mlp::Cache& cache) const {
    return Mlp::forward(arch_, params_, nobs, &cache)[0];
  }

  void backward(const Mlp::Cache& cache, double coeff, std::span<double> grad) const {
    const double d[1] = {coeff};
    Mlp::backward(arch_, params_, cache, d, grad);
  }

 private:
  Architecture arch_;
  Vec params_;
};

}  // namespace grad

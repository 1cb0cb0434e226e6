#pragma once

#include <functional>

#include "grad/common.hpp"

namespace grad::testing {

// Central finite differences of f at x with step h.
inline Vec finite_difference(const std::function<double(const Vec&)>& f, Vec x, double h = 1e-5) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f(x);
    x[i] = orig - h;
    const double fm = f(x);
    x[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

// ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(const Vec& a, const Vec& b, double floor = 1e-8) {
  const double d = norm_l2(sub(a, b));
  return d / std::max({norm_l2(a), norm_l2(b), floor});
}

}  // namespace grad::testing

#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "grad/common.hpp"

namespace grad::testing {

struct SupportEquilibrium {
  Vec row;
  Vec col;
  double value = 0.0;
};

// Equilibrium of a nondegenerate zero-sum game by enumerating equal-size support
// pairs and solving the indifference equations. Exponential; small games only.
inline std::optional<SupportEquilibrium> support_enumeration(const std::vector<Vec>& u, double tol = 1e-9) {
  const int m = static_cast<int>(u.size()), n = static_cast<int>(u.front().size());
  auto subsets = [](int total, int k) {
    std::vector<std::vector<int>> out;
    std::vector<int> cur;
    auto rec = [&](auto&& self, int start) -> void {
      if (static_cast<int>(cur.size()) == k) {
        out.push_back(cur);
        return;
      }
      for (int i = start; i < total; ++i) {
        cur.push_back(i);
        self(self, i + 1);
        cur.pop_back();
      }
    };
    rec(rec, 0);
    return out;
  };
  for (int k = 1; k <= std::min(m, n); ++k) {
    const auto rows = subsets(m, k), cols = subsets(n, k);
    for (const auto& I : rows)
      for (const auto& J : cols) {
        // Unknowns (q_J, v): U[I,J] q - v = 0, sum q = 1; likewise for x_I.
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(k + 1, k + 1), B = A;
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k + 1);
        rhs(k) = 1.0;
        for (int a = 0; a < k; ++a) {
          for (int b = 0; b < k; ++b) {
            A(a, b) = u[I[a]][J[b]];
            B(a, b) = u[I[b]][J[a]];
          }
          A(a, k) = -1.0;
          B(a, k) = -1.0;
          A(k, a) = 1.0;
          B(k, a) = 1.0;
        }
        Eigen::FullPivLU<Eigen::MatrixXd> la(A), lb(B);
        if (!la.isInvertible() || !lb.isInvertible()) continue;
        const Eigen::VectorXd qs = la.solve(rhs), xs = lb.solve(rhs);
        SupportEquilibrium eq;
        eq.row.assign(m, 0.0);
        eq.col.assign(n, 0.0);
        bool ok = true;
        for (int a = 0; a < k; ++a) {
          ok = ok && qs(a) >= -tol && xs(a) >= -tol;
          eq.col[J[a]] = qs(a);
          eq.row[I[a]] = xs(a);
        }
        if (!ok) continue;
        eq.value = qs(k);
        for (int i = 0; i < m && ok; ++i) {
          double r = 0.0;
          for (int j = 0; j < n; ++j) r += u[i][j] * eq.col[j];
          ok = r <= eq.value + tol;
        }
        for (int j = 0; j < n && ok; ++j) {
          double c = 0.0;
          for (int i = 0; i < m; ++i) c += eq.row[i] * u[i][j];
          ok = c >= eq.value - tol;
        }
        if (ok) return eq;
      }
  }
  return std::nullopt;
}

}  // namespace grad::testing

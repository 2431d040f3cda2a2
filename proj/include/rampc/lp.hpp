#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/QR>

#include "rampc/sdp.hpp"

namespace rampc {

/// minimize c'x subject to A x <= b and lower <= x <= upper (infinite bounds allowed).
struct LpProblem {
  Eigen::VectorXd objective;
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::VectorXd lower, upper;

  int nvars() const { return static_cast<int>(objective.size()); }

  void validate() const {
    const auto n = objective.size();
    if (n == 0) throw std::invalid_argument("LpProblem: no variables");
    if (A.cols() != n && A.rows() > 0) throw std::invalid_argument("LpProblem: A has wrong column count");
    if (A.rows() != b.size()) throw std::invalid_argument("LpProblem: A and b disagree on rows");
    if (lower.size() != 0 && lower.size() != n) throw std::invalid_argument("LpProblem: lower bound size");
    if (upper.size() != 0 && upper.size() != n) throw std::invalid_argument("LpProblem: upper bound size");
    if (!objective.allFinite() || !b.allFinite() || !A.allFinite())
      throw std::invalid_argument("LpProblem: non-finite data");
  }

  /// All constraints as one row block G x <= h, bounds included.
  void stacked(Eigen::MatrixXd& G, Eigen::VectorXd& h) const {
    const int n = nvars();
    std::vector<std::pair<int, double>> extra;  // (+/- (var+1), bound)
    for (int i = 0; i < n; ++i) {
      if (upper.size() && std::isfinite(upper(i))) extra.emplace_back(i + 1, upper(i));
      if (lower.size() && std::isfinite(lower(i))) extra.emplace_back(-(i + 1), -lower(i));
    }
    const Eigen::Index rows = A.rows() + static_cast<Eigen::Index>(extra.size());
    G = Eigen::MatrixXd::Zero(rows, n);
    h = Eigen::VectorXd::Zero(rows);
    if (A.rows() > 0) {
      G.topRows(A.rows()) = A;
      h.head(A.rows()) = b;
    }
    for (std::size_t k = 0; k < extra.size(); ++k) {
      const auto r = A.rows() + static_cast<Eigen::Index>(k);
      const int var = std::abs(extra[k].first) - 1;
      G(r, var) = extra[k].first > 0 ? 1.0 : -1.0;
      h(r) = extra[k].second;
    }
  }
};

enum class LpStatus { Optimal, Infeasible, Unbounded, Failed };

inline const char* to_string(LpStatus s) {
  switch (s) {
    case LpStatus::Optimal: return "Optimal";
    case LpStatus::Infeasible: return "Infeasible";
    case LpStatus::Unbounded: return "Unbounded";
    case LpStatus::Failed: return "Failed";
  }
  return "?";
}

struct LpSolution {
  LpStatus status = LpStatus::Failed;
  Eigen::VectorXd x;
  double objective = 0.0;
  double max_violation = 0.0;
  bool vertex = false;
};

namespace detail {

inline int numeric_rank(const Eigen::MatrixXd& M) {
  if (M.rows() == 0) return 0;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(M);
  qr.setThreshold(1e-10);
  return static_cast<int>(qr.rank());
}

/**
 * Moves a feasible point of an optimal face to a vertex of that face without
 * increasing the objective: repeatedly steps along a null-space direction of
 * the active rows until another row becomes active.
 */
inline Eigen::VectorXd purify(const Eigen::MatrixXd& G, const Eigen::VectorXd& h, const Eigen::VectorXd& c,
                              Eigen::VectorXd x, double act_tol, bool& is_vertex) {
  const int n = static_cast<int>(x.size());
  is_vertex = false;
  for (int round = 0; round <= n; ++round) {
    const Eigen::VectorXd slack = h - G * x;
    std::vector<int> active;
    for (Eigen::Index i = 0; i < G.rows(); ++i)
      if (slack(i) <= act_tol * (1.0 + std::abs(h(i)))) active.push_back(static_cast<int>(i));
    Eigen::MatrixXd Ga(active.size(), n);
    for (std::size_t k = 0; k < active.size(); ++k) Ga.row(k) = G.row(active[k]);
    if (numeric_rank(Ga) == n) {
      // Snap onto the vertex through n independent active rows.
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Ga.transpose());
      qr.setThreshold(1e-10);
      Eigen::MatrixXd B(n, n);
      Eigen::VectorXd hb(n);
      const auto perm = qr.colsPermutation().indices();
      for (int k = 0; k < n; ++k) {
        B.row(k) = Ga.row(perm(k));
        hb(k) = h(active[perm(k)]);
      }
      x = B.partialPivLu().solve(hb);
      is_vertex = true;
      return x;
    }
    // Direction in the null space of the active rows.
    Eigen::VectorXd d;
    if (active.empty()) {
      d = -c;
    } else {
      Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Ga);
      cod.setThreshold(1e-10);
      const Eigen::MatrixXd Z = Eigen::MatrixXd(cod.matrixZ().transpose()).rightCols(n - cod.rank());
      const Eigen::MatrixXd P = cod.colsPermutation() * Z;
      d = -(P * (P.transpose() * c));
      if (d.norm() < 1e-12 * (1.0 + c.norm())) d = P.col(0);
    }
    if (d.norm() == 0.0) return x;
    d /= d.norm();
    auto ratio = [&](const Eigen::VectorXd& dir) {
      double t = std::numeric_limits<double>::infinity();
      const Eigen::VectorXd gd = G * dir;
      for (Eigen::Index i = 0; i < G.rows(); ++i)
        if (gd(i) > 1e-12) t = std::min(t, std::max(0.0, slack(i)) / gd(i));
      return t;
    };
    double t = ratio(d);
    if (!std::isfinite(t)) {
      if (c.dot(d) < -1e-12) return x;  // objective decreases without bound; caller decides
      d = -d;
      t = ratio(d);
      if (!std::isfinite(t)) return x;  // a line inside the feasible set
    }
    x += t * d;
  }
  return x;
}

}  // namespace detail

/**
 * LP through the conic interior-point solver applied to the dual
 *   min h'l  s.t.  G'l = -c,  l >= 0  (one 1x1 block per row),
 * whose equality multipliers are the primal x; then purified to a vertex.
 */
inline LpSolution solve_lp(const LpProblem& lp, const SdpOptions& opts = {}) {
  lp.validate();
  Eigen::MatrixXd G;
  Eigen::VectorXd h;
  lp.stacked(G, h);
  const int n = lp.nvars();
  const int rows = static_cast<int>(G.rows());

  LpSolution out;
  if (rows == 0) {
    if (lp.objective.cwiseAbs().maxCoeff() > 0.0) {
      out.status = LpStatus::Unbounded;
      return out;
    }
    out.status = LpStatus::Optimal;
    out.x = Eigen::VectorXd::Zero(n);
    out.vertex = true;
    return out;
  }

  SdpProblem dual;
  for (int i = 0; i < rows; ++i) dual.add_block(1);
  std::vector<int> priced;  // variables appearing in some row
  for (int j = 0; j < n; ++j) {
    SdpProblem::Equality eq;
    for (int i = 0; i < rows; ++i)
      if (G(i, j) != 0.0) eq.lhs.add_gram(i, 0, 0, G(i, j));
    eq.rhs = -lp.objective(j);
    if (eq.lhs.empty()) {
      if (eq.rhs != 0.0) {
        out.status = LpStatus::Unbounded;  // unconstrained variable with nonzero price
        return out;
      }
      continue;
    }
    priced.push_back(j);
    dual.equalities.push_back(eq);
  }
  for (int i = 0; i < rows; ++i)
    if (h(i) != 0.0) dual.objective.add_gram(i, 0, 0, h(i));

  const SdpSolution sol = solve_sdp(dual, opts);
  switch (sol.status) {
    case SdpStatus::Infeasible:
      // The dual has no feasible point: the LP is unbounded or infeasible.
      out.status = LpStatus::Unbounded;
      return out;
    case SdpStatus::Unbounded:
      out.status = LpStatus::Infeasible;
      return out;
    default:
      break;
  }
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  for (std::size_t k = 0; k < priced.size(); ++k) x(priced[k]) = sol.dual(static_cast<Eigen::Index>(k));
  if (!x.allFinite()) return out;

  const double scale = 1.0 + h.cwiseAbs().maxCoeff();
  // Rows whose multiplier dominates their slack are taken as active; land on them exactly.
  Eigen::VectorXd x1 = x;
  {
    const Eigen::VectorXd slack = h - G * x;
    std::vector<int> active;
    for (int i = 0; i < rows; ++i)
      if (sol.gram_blocks[i](0, 0) > std::max(slack(i), 0.0)) active.push_back(i);
    if (!active.empty()) {
      Eigen::MatrixXd Ga(active.size(), n);
      Eigen::VectorXd ra(active.size());
      for (std::size_t k = 0; k < active.size(); ++k) {
        Ga.row(k) = G.row(active[k]);
        ra(k) = h(active[k]) - G.row(active[k]).dot(x);
      }
      Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Ga);
      cod.setThreshold(1e-10);
      x1 = x + cod.solve(ra);
    }
  }
  bool is_vertex = false;
  Eigen::VectorXd xv = detail::purify(G, h, lp.objective, x1, 1e-9, is_vertex);
  const double viol_v = std::max(0.0, (G * xv - h).maxCoeff());
  const double viol_x = std::max(0.0, (G * x - h).maxCoeff());
  // Keep the vertex unless it is worse than the interior estimate.
  if (viol_v <= 1e-9 * scale && lp.objective.dot(xv) <= lp.objective.dot(x) + 1e-5 * (1.0 + std::abs(lp.objective.dot(x)))) {
    x = xv;
  } else {
    is_vertex = false;
    if (sol.status != SdpStatus::Feasible && viol_x > 1e-6 * scale) return out;
  }
  out.x = x;
  out.objective = lp.objective.dot(x);
  out.max_violation = std::max(0.0, (G * x - h).maxCoeff());
  out.vertex = is_vertex;
  out.status = LpStatus::Optimal;
  return out;
}

}  // namespace rampc

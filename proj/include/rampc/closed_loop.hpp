#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <Eigen/QR>

#include "rampc/poly.hpp"

namespace rampc {

/// Axis-aligned box [lo, hi].
struct Box {
  Eigen::VectorXd lo, hi;

  Box() = default;
  Box(Eigen::VectorXd l, Eigen::VectorXd h) : lo(std::move(l)), hi(std::move(h)) { validate(); }

  int dim() const { return static_cast<int>(lo.size()); }

  void validate() const {
    if (lo.size() != hi.size() || lo.size() == 0) throw std::invalid_argument("Box: bounds disagree on dimension");
    for (Eigen::Index i = 0; i < lo.size(); ++i)
      if (!(std::isfinite(lo(i)) && std::isfinite(hi(i)) && lo(i) <= hi(i)))
        throw std::invalid_argument("Box: need finite lo <= hi");
  }
  bool contains(const Eigen::VectorXd& x, double tol = 0.0) const {
    return ((x.array() >= lo.array() - tol) && (x.array() <= hi.array() + tol)).all();
  }
  Eigen::VectorXd clip(const Eigen::VectorXd& x) const { return x.cwiseMax(lo).cwiseMin(hi); }
  /// Largest amount by which x leaves the box (0 inside).
  double violation(const Eigen::VectorXd& x) const {
    return std::max(0.0, std::max((lo - x).maxCoeff(), (x - hi).maxCoeff()));
  }
};

/// x+ = f(x, u); each component is a polynomial over (x_1..x_n, u_1..u_m).
struct DiscreteSystem {
  int n = 0;
  int m = 0;
  std::vector<Polynomial> f;

  void validate() const {
    if (n < 1 || m < 1) throw std::invalid_argument("DiscreteSystem: n and m must be >= 1");
    if (static_cast<int>(f.size()) != n) throw std::invalid_argument("DiscreteSystem: need n components");
    for (const auto& p : f)
      if (p.nvars() != n + m) throw std::invalid_argument("DiscreteSystem: components must have n+m variables");
  }

  Eigen::VectorXd next(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
    Eigen::VectorXd xu(n + m);
    xu << x, u;
    return eval_all(f, xu);
  }

  /// f(x, u(x)) for polynomial feedback u (m polynomials over n variables).
  std::vector<Polynomial> closed_loop(const std::vector<Polynomial>& u) const {
    if (static_cast<int>(u.size()) != m) throw std::invalid_argument("closed_loop: need m control polynomials");
    std::vector<Polynomial> subs;
    for (int i = 0; i < n; ++i) subs.push_back(Polynomial::variable(n, i));
    for (const auto& ui : u) subs.push_back(ui);
    std::vector<Polynomial> out;
    for (const auto& fi : f) out.push_back(compose(fi, subs));
    return out;
  }
};

/// h(x, u) = x' diag(q) x + u' diag(r) u. The terminal term is x' diag(q) x.
struct QuadraticCost {
  Eigen::VectorXd q, r;

  static QuadraticCost identity(int n, int m) {
    return {Eigen::VectorXd::Ones(n), Eigen::VectorXd::Ones(m)};
  }
  double stage(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
    return x.cwiseProduct(q).dot(x) + u.cwiseProduct(r).dot(u);
  }
  double terminal(const Eigen::VectorXd& x) const { return x.cwiseProduct(q).dot(x); }
};

/// u(x) = clip_U(K x + k0).
struct LinearFeedback {
  Eigen::MatrixXd K;
  Eigen::VectorXd k0;
  Box clip_box;

  Eigen::VectorXd raw(const Eigen::VectorXd& x) const { return K * x + k0; }
  Eigen::VectorXd operator()(const Eigen::VectorXd& x) const { return clip_box.clip(raw(x)); }

  /// The unclipped law as polynomials over n state variables.
  std::vector<Polynomial> polynomial() const {
    const int n = static_cast<int>(K.cols());
    std::vector<Polynomial> out;
    for (Eigen::Index i = 0; i < K.rows(); ++i) {
      Polynomial p = Polynomial::constant(n, k0(i));
      for (int j = 0; j < n; ++j) p += K(i, j) * Polynomial::variable(n, j);
      out.push_back(p);
    }
    return out;
  }
};

using Controller = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct Trajectory {
  std::vector<Eigen::VectorXd> states;    // L + 1
  std::vector<Eigen::VectorXd> controls;  // L
  std::vector<double> stage_costs;        // L

  int length() const { return static_cast<int>(controls.size()); }
  const Eigen::VectorXd& final_state() const { return states.back(); }
};

enum class NotReachedCause { Timeout, LeftSafeSet };

inline const char* to_string(NotReachedCause c) {
  return c == NotReachedCause::Timeout ? "Timeout" : "LeftSafeSet";
}

struct NotReached {
  int step = 0;
  NotReachedCause cause = NotReachedCause::Timeout;
  Trajectory partial;
};

using SimulationResult = std::variant<Trajectory, NotReached>;

/**
 * Runs the closed loop from x0 until the first state with g(x) <= 0.
 * A state with w(x) > 0 before that ends the run as LeftSafeSet.
 */
inline SimulationResult simulate(const DiscreteSystem& sys, const Controller& ctrl, const Eigen::VectorXd& x0,
                                 const Polynomial& target_g, const Polynomial& safe_w, int max_steps,
                                 const QuadraticCost& h) {
  if (max_steps < 1) throw std::invalid_argument("simulate: max_steps must be >= 1");
  Trajectory tr;
  tr.states.push_back(x0);
  for (int i = 0;; ++i) {
    const Eigen::VectorXd& x = tr.states.back();
    if (target_g.eval(x) <= 0.0) return tr;
    if (safe_w.eval(x) > 0.0) return NotReached{i, NotReachedCause::LeftSafeSet, tr};
    if (i == max_steps) return NotReached{i, NotReachedCause::Timeout, tr};
    const Eigen::VectorXd u = ctrl(x);
    tr.controls.push_back(u);
    tr.stage_costs.push_back(h.stage(x, u));
    tr.states.push_back(sys.next(x, u));
  }
}

/// Sum of stage costs.
inline double trajectory_cost(const Trajectory& tr) {
  double s = 0.0;
  for (double c : tr.stage_costs) s += c;
  return s;
}

/// Stage costs plus the terminal state's cost x_L' Q x_L (the reported iteration cost).
inline double iteration_cost(const Trajectory& tr, const QuadraticCost& h) {
  return trajectory_cost(tr) + h.terminal(tr.final_state());
}

/// Least-squares fit u ~ K x + k0 over the trajectory pairs (minimum-norm).
/// With with_offset = false the law is linear (k0 = 0).
inline LinearFeedback fit_linear(const Trajectory& tr, const Box& clip_box, bool with_offset = true) {
  const int L = tr.length();
  if (L < 1) throw std::invalid_argument("fit_linear: trajectory has no steps");
  const int n = static_cast<int>(tr.states.front().size());
  const int m = static_cast<int>(tr.controls.front().size());
  const int cols = with_offset ? n + 1 : n;
  Eigen::MatrixXd A(L, cols);
  Eigen::MatrixXd B(L, m);
  for (int i = 0; i < L; ++i) {
    A.row(i).head(n) = tr.states[i].transpose();
    if (with_offset) A(i, n) = 1.0;
    B.row(i) = tr.controls[i].transpose();
  }
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
  const Eigen::MatrixXd theta = cod.solve(B);  // cols x m
  LinearFeedback out;
  out.K = theta.topRows(n).transpose();
  out.k0 = with_offset ? Eigen::VectorXd(theta.row(n).transpose()) : Eigen::VectorXd::Zero(m);
  out.clip_box = clip_box;
  return out;
}

/// CSV with header iter,t,x_1..x_n,u_1..u_m,stage_cost. The final row holds
/// the terminal state with empty controls and its terminal cost.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& tr, int iter, const QuadraticCost& h) {
  const auto n = tr.states.front().size();
  const Eigen::Index m = tr.controls.empty() ? h.r.size() : tr.controls.front().size();
  os << "iter,t";
  for (Eigen::Index i = 0; i < n; ++i) os << ",x_" << i + 1;
  for (Eigen::Index i = 0; i < m; ++i) os << ",u_" << i + 1;
  os << ",stage_cost\n";
  os.precision(17);
  for (std::size_t t = 0; t < tr.states.size(); ++t) {
    os << iter << ',' << t;
    for (Eigen::Index i = 0; i < n; ++i) os << ',' << tr.states[t](i);
    if (t < tr.controls.size()) {
      for (Eigen::Index i = 0; i < m; ++i) os << ',' << tr.controls[t](i);
      os << ',' << tr.stage_costs[t] << '\n';
    } else {
      for (Eigen::Index i = 0; i < m; ++i) os << ',';
      os << ',' << h.terminal(tr.states[t]) << '\n';
    }
  }
}

struct CsvError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_cell(const std::string& cell, int row) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw CsvError("row " + std::to_string(row) + ": '" + cell + "' is not a number");
  }
}

}  // namespace detail

struct TrajectoryRecord {
  int iter = 0;
  Trajectory trajectory;
  double terminal_cost = 0.0;
};

/// Inverse of write_trajectory_csv.
inline TrajectoryRecord read_trajectory_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw CsvError("trajectory CSV: missing header");
  const auto head = detail::split_csv(line);
  int n = 0, m = 0;
  for (const auto& h : head) {
    if (h.rfind("x_", 0) == 0) ++n;
    if (h.rfind("u_", 0) == 0) ++m;
  }
  const auto cols = static_cast<std::size_t>(n + m + 3);
  if (head.size() != cols || head[0] != "iter" || head[1] != "t" || head.back() != "stage_cost" || n == 0)
    throw CsvError("trajectory CSV: unexpected header '" + line + "'");

  TrajectoryRecord rec;
  bool closed = false;
  for (int row = 1; std::getline(is, line); ++row) {
    if (line.empty()) continue;
    if (closed) throw CsvError("trajectory CSV: rows after the final state");
    const auto cells = detail::split_csv(line);
    if (cells.size() != cols) throw CsvError("trajectory CSV: row " + std::to_string(row) + " has wrong width");
    rec.iter = static_cast<int>(detail::parse_cell(cells[0], row));
    if (static_cast<int>(detail::parse_cell(cells[1], row)) != row - 1)
      throw CsvError("trajectory CSV: row " + std::to_string(row) + " is out of order");
    Eigen::VectorXd x(n);
    for (int i = 0; i < n; ++i) x(i) = detail::parse_cell(cells[static_cast<std::size_t>(2 + i)], row);
    rec.trajectory.states.push_back(x);
    const double cost = detail::parse_cell(cells.back(), row);
    if (cells[static_cast<std::size_t>(2 + n)].empty()) {
      rec.terminal_cost = cost;
      closed = true;
      continue;
    }
    Eigen::VectorXd u(m);
    for (int i = 0; i < m; ++i) u(i) = detail::parse_cell(cells[static_cast<std::size_t>(2 + n + i)], row);
    rec.trajectory.controls.push_back(u);
    rec.trajectory.stage_costs.push_back(cost);
  }
  if (!closed) throw CsvError("trajectory CSV: missing final state row");
  return rec;
}

}  // namespace rampc

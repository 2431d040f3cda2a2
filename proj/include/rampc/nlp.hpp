#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "rampc/closed_loop.hpp"
#include "rampc/poly.hpp"

namespace rampc {

/// Flat polynomial evaluator: coefficients with exponents stored row-wise.
class CompiledPolynomial {
 public:
  CompiledPolynomial() = default;
  explicit CompiledPolynomial(const Polynomial& p) : nvars_(p.nvars()), maxexp_(p.nvars(), 0) {
    for (const auto& [m, c] : p.terms()) {
      coef_.push_back(c);
      for (int i = 0; i < nvars_; ++i) {
        exps_.push_back(m[i]);
        maxexp_[i] = std::max(maxexp_[i], m[i]);
      }
    }
  }

  int nvars() const { return nvars_; }

  double operator()(const double* x) const {
    // Power table on the stack for the small dimensions used here.
    double pw[16][16];
    if (nvars_ > 16) throw std::invalid_argument("CompiledPolynomial: too many variables");
    for (int i = 0; i < nvars_; ++i) {
      if (maxexp_[i] >= 16) throw std::invalid_argument("CompiledPolynomial: degree too high");
      pw[i][0] = 1.0;
      for (int e = 1; e <= maxexp_[i]; ++e) pw[i][e] = pw[i][e - 1] * x[i];
    }
    double s = 0.0;
    const int* e = exps_.data();
    for (std::size_t t = 0; t < coef_.size(); ++t, e += nvars_) {
      double term = coef_[t];
      for (int i = 0; i < nvars_; ++i) term *= pw[i][e[i]];
      s += term;
    }
    return s;
  }
  double operator()(const Eigen::VectorXd& x) const { return (*this)(x.data()); }

 private:
  int nvars_ = 0;
  std::vector<double> coef_;
  std::vector<int> exps_;
  std::vector<int> maxexp_;
};

/// Polynomial with its gradient, compiled.
struct CompiledWithGradient {
  CompiledPolynomial f;
  std::vector<CompiledPolynomial> df;

  CompiledWithGradient() = default;
  explicit CompiledWithGradient(const Polynomial& p) : f(p) {
    for (int i = 0; i < p.nvars(); ++i) df.emplace_back(p.derivative(i));
  }
  Eigen::VectorXd gradient(const Eigen::VectorXd& x) const {
    Eigen::VectorXd g(static_cast<Eigen::Index>(df.size()));
    for (std::size_t i = 0; i < df.size(); ++i) g(static_cast<Eigen::Index>(i)) = df[i](x.data());
    return g;
  }
};

/**
 * Finite-horizon problem over controls u_0..u_{N-1}:
 *   min  sum_k h(x_k, u_k) + Qa(x_N)
 *   s.t. u_k in U, w(x_k) <= 0 (k = 1..N), v(x_N) >= terminal_bound,
 * with x_{k+1} = f(x_k, u_k) and x_0 = initial_state.
 */
struct NlpProblem {
  int N = 1;
  DiscreteSystem system;
  Box control_box;
  Eigen::VectorXd initial_state;
  QuadraticCost stage_cost;
  Polynomial state_constraint;  // w
  Polynomial terminal_value;    // v
  double terminal_bound = 0.0;
  Polynomial terminal_cost;     // Qa

  void validate() const {
    if (N < 1) throw std::invalid_argument("NlpProblem: horizon must be >= 1");
    system.validate();
    if (control_box.dim() != system.m) throw std::invalid_argument("NlpProblem: control box dimension");
    if (initial_state.size() != system.n) throw std::invalid_argument("NlpProblem: initial state dimension");
    if (stage_cost.q.size() != system.n || stage_cost.r.size() != system.m)
      throw std::invalid_argument("NlpProblem: stage cost weights dimension");
    for (const Polynomial* p : {&state_constraint, &terminal_value, &terminal_cost})
      if (p->nvars() != system.n) throw std::invalid_argument("NlpProblem: polynomial over wrong variable count");
  }
};

struct NlpSolution {
  Eigen::MatrixXd controls;  // N x m
  Eigen::MatrixXd states;    // (N+1) x n
  double objective = 0.0;
  double max_violation = 0.0;
  bool converged = false;
  int start_index = -1;  // -1: the warm start itself was returned
};

struct NlpOptions {
  double feas_tol = 1e-6;
  int multistarts = 4;
  std::uint64_t seed = 11;
  double inner_tol = 1e-8;
  int max_inner = 400;
  int max_outer = 12;
  double rho0 = 10.0;
  double rho_growth = 10.0;
  double rho_max = 1e8;
};

/// Compiled form of an NlpProblem; reusable across solves with the same polynomials.
class NlpModel {
 public:
  explicit NlpModel(const NlpProblem& p) : p_(p), n_(p.system.n), m_(p.system.m) {
    p.validate();
    for (const auto& fi : p.system.f) f_.emplace_back(fi);
    w_ = CompiledWithGradient(p.state_constraint);
    v_ = CompiledWithGradient(p.terminal_value);
    qa_ = CompiledWithGradient(p.terminal_cost);
  }

  const NlpProblem& problem() const { return p_; }
  int N() const { return p_.N; }

  Eigen::MatrixXd rollout(const Eigen::MatrixXd& U) const {
    Eigen::MatrixXd X(p_.N + 1, n_);
    X.row(0) = p_.initial_state.transpose();
    Eigen::VectorXd xu(n_ + m_);
    for (int k = 0; k < p_.N; ++k) {
      xu << X.row(k).transpose(), U.row(k).transpose();
      for (int i = 0; i < n_; ++i) X(k + 1, i) = f_[i].f(xu.data());
    }
    return X;
  }

  double objective(const Eigen::MatrixXd& U, const Eigen::MatrixXd& X) const {
    double J = 0.0;
    for (int k = 0; k < p_.N; ++k) J += p_.stage_cost.stage(X.row(k).transpose(), U.row(k).transpose());
    return J + qa_.f(Eigen::VectorXd(X.row(p_.N).transpose()));
  }

  /// Inequality values c_i <= 0: w(x_1..x_N), then bound - v(x_N).
  Eigen::VectorXd constraints(const Eigen::MatrixXd& X) const {
    Eigen::VectorXd c(p_.N + 1);
    for (int k = 1; k <= p_.N; ++k) c(k - 1) = w_.f(Eigen::VectorXd(X.row(k).transpose()));
    c(p_.N) = p_.terminal_bound - v_.f(Eigen::VectorXd(X.row(p_.N).transpose()));
    return c;
  }

  double violation(const Eigen::MatrixXd& U, const Eigen::MatrixXd& X) const {
    double viol = std::max(0.0, constraints(X).maxCoeff());
    for (int k = 0; k < p_.N; ++k) viol = std::max(viol, p_.control_box.violation(U.row(k).transpose()));
    return viol;
  }

  /**
   * Augmented Lagrangian value and adjoint gradient. mu/rho weight the
   * inequalities; rho = 0 with empty mu gives the plain objective.
   */
  double lagrangian(const Eigen::MatrixXd& U, const Eigen::VectorXd& mu, double rho, Eigen::MatrixXd* grad) const {
    const Eigen::MatrixXd X = rollout(U);
    double L = objective(U, X);
    Eigen::VectorXd dphi = Eigen::VectorXd::Zero(p_.N + 1);
    if (rho > 0.0) {
      const Eigen::VectorXd c = constraints(X);
      for (int i = 0; i <= p_.N; ++i) {
        const double t = std::max(0.0, mu(i) + rho * c(i));
        L += (t * t - mu(i) * mu(i)) / (2.0 * rho);
        dphi(i) = t;
      }
    }
    if (!grad) return L;

    const int N = p_.N;
    grad->resize(N, m_);
    const Eigen::VectorXd xN = X.row(N).transpose();
    Eigen::VectorXd lam = qa_.gradient(xN);
    if (dphi(N - 1) != 0.0) lam += dphi(N - 1) * w_.gradient(xN);
    if (dphi(N) != 0.0) lam -= dphi(N) * v_.gradient(xN);
    Eigen::VectorXd xu(n_ + m_);
    Eigen::MatrixXd Jf(n_, n_ + m_);
    for (int k = N - 1; k >= 0; --k) {
      const Eigen::VectorXd xk = X.row(k).transpose();
      const Eigen::VectorXd uk = U.row(k).transpose();
      xu << xk, uk;
      for (int i = 0; i < n_; ++i)
        for (int j = 0; j < n_ + m_; ++j) Jf(i, j) = f_[i].df[j](xu.data());
      const Eigen::VectorXd gu = 2.0 * p_.stage_cost.r.cwiseProduct(uk) + Jf.rightCols(m_).transpose() * lam;
      grad->row(k) = gu.transpose();
      Eigen::VectorXd lx = 2.0 * p_.stage_cost.q.cwiseProduct(xk) + Jf.leftCols(n_).transpose() * lam;
      if (k >= 1 && dphi(k - 1) != 0.0) lx += dphi(k - 1) * w_.gradient(xk);
      lam = lx;
    }
    return L;
  }

 private:
  NlpProblem p_;
  int n_, m_;
  std::vector<CompiledWithGradient> f_;
  CompiledWithGradient w_, v_, qa_;
};

/// Gradient of the plain objective with respect to the controls (adjoint method).
inline Eigen::MatrixXd gradient(const NlpProblem& problem, const Eigen::MatrixXd& controls) {
  const NlpModel model(problem);
  Eigen::MatrixXd g;
  model.lagrangian(controls, Eigen::VectorXd(), 0.0, &g);
  return g;
}

namespace detail {

inline Eigen::MatrixXd project(const Eigen::MatrixXd& U, const Box& box) {
  Eigen::MatrixXd P = U;
  for (Eigen::Index k = 0; k < U.rows(); ++k) P.row(k) = box.clip(U.row(k).transpose()).transpose();
  return P;
}

/// Nonmonotone spectral projected gradient on the box. Returns true on stationarity.
inline bool spg_minimize(const NlpModel& model, Eigen::MatrixXd& U, const Eigen::VectorXd& mu, double rho,
                         double tol, int max_iter) {
  const Box& box = model.problem().control_box;
  U = project(U, box);
  Eigen::MatrixXd g;
  double f = model.lagrangian(U, mu, rho, &g);
  std::deque<double> hist{f};
  double alpha = 1.0;
  {
    const double gn = (project(U - g, box) - U).cwiseAbs().maxCoeff();
    if (gn > 0.0) alpha = std::min(1.0, 1.0 / std::max(1e-12, g.cwiseAbs().maxCoeff()));
  }
  for (int it = 0; it < max_iter; ++it) {
    const double pg = (project(U - g, box) - U).cwiseAbs().maxCoeff();
    if (pg <= tol) return true;
    const Eigen::MatrixXd d = project(U - alpha * g, box) - U;
    const double fmax = *std::max_element(hist.begin(), hist.end());
    const double gtd = (g.array() * d.array()).sum();
    double t = 1.0;
    Eigen::MatrixXd Un;
    Eigen::MatrixXd gn;
    double fn = 0.0;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      Un = U + t * d;
      fn = model.lagrangian(Un, mu, rho, &gn);
      if (std::isfinite(fn) && fn <= fmax + 1e-4 * t * gtd) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) return pg <= 1e3 * tol;
    const Eigen::MatrixXd s = Un - U;
    const Eigen::MatrixXd y = gn - g;
    const double sy = (s.array() * y.array()).sum();
    const double ss = (s.array() * s.array()).sum();
    alpha = sy > 0.0 ? std::clamp(ss / sy, 1e-12, 1e12) : 1e3 * alpha;
    alpha = std::min(alpha, 1e12);
    U = Un;
    g = gn;
    f = fn;
    hist.push_back(f);
    if (hist.size() > 10) hist.pop_front();
  }
  return false;
}

}  // namespace detail

/**
 * Augmented Lagrangian with SPG inner solves from the warm start and from
 * `multistarts` uniform random control sequences. Never returns a point
 * worse than a feasible warm start; if no start becomes feasible the warm
 * start is returned with converged = false.
 */
inline NlpSolution solve(const NlpProblem& problem, const Eigen::MatrixXd& warm_start, const NlpOptions& opt = {}) {
  const NlpModel model(problem);
  const int N = problem.N;
  const int m = problem.system.m;
  if (warm_start.rows() != N || warm_start.cols() != m)
    throw std::invalid_argument("nlp solve: warm start must be N x m");
  const Box& box = problem.control_box;

  auto evaluate = [&](const Eigen::MatrixXd& U, int idx) {
    NlpSolution s;
    s.controls = U;
    s.states = model.rollout(U);
    s.objective = model.objective(U, s.states);
    s.max_violation = model.violation(U, s.states);
    s.start_index = idx;
    return s;
  };

  NlpSolution warm = evaluate(warm_start, -1);
  const bool warm_ok = warm.max_violation <= opt.feas_tol;

  std::mt19937_64 rng(opt.seed);
  std::vector<Eigen::MatrixXd> starts{detail::project(warm_start, box)};
  for (int s = 0; s < opt.multistarts; ++s) {
    Eigen::MatrixXd U(N, m);
    for (int k = 0; k < N; ++k)
      for (int j = 0; j < m; ++j) U(k, j) = std::uniform_real_distribution<double>(box.lo(j), box.hi(j))(rng);
    starts.push_back(U);
  }

  NlpSolution best = warm;
  bool have = warm_ok;
  bool any_converged = false;
  for (std::size_t s = 0; s < starts.size(); ++s) {
    Eigen::MatrixXd U = starts[s];
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(N + 1);
    double rho = opt.rho0;
    double prev_viol = std::numeric_limits<double>::infinity();
    bool stationary = false;
    for (int outer = 0; outer < opt.max_outer; ++outer) {
      stationary = detail::spg_minimize(model, U, mu, rho, opt.inner_tol, opt.max_inner);
      const Eigen::MatrixXd X = model.rollout(U);
      const Eigen::VectorXd c = model.constraints(X);
      const double viol = std::max(0.0, c.maxCoeff());
      for (int i = 0; i <= N; ++i) mu(i) = std::max(0.0, mu(i) + rho * c(i));
      if (viol <= 0.1 * opt.feas_tol && stationary) break;
      if (viol > 0.25 * prev_viol) rho = std::min(rho * opt.rho_growth, opt.rho_max);
      prev_viol = viol;
    }
    NlpSolution cand = evaluate(U, static_cast<int>(s));
    if (cand.max_violation > opt.feas_tol) continue;
    any_converged = true;
    const double margin = 1e-12 * (1.0 + std::abs(best.objective));
    if (!have || cand.objective < best.objective - margin) {
      best = cand;
      have = true;
    }
  }
  if (!have) {
    warm.converged = false;
    return warm;
  }
  best.converged = any_converged || warm_ok;
  return best;
}

}  // namespace rampc

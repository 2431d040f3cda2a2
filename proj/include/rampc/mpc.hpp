#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "rampc/closed_loop.hpp"
#include "rampc/gbf.hpp"
#include "rampc/nlp.hpp"
#include "rampc/scenario.hpp"

namespace rampc {

struct MpcOptions {
  int N = 4;
  NlpOptions nlp;
  /// Relaxation applied once to the first terminal bound if the first solve fails.
  double initial_relax = 1e-6;
  bool log_steps = false;
};

/// Bound on v at the predicted terminal state.
inline double terminal_bound(int t, double lambda, double v_x0, double prev_terminal_v, int N) {
  if (t == 0) {
    if (!(v_x0 > 0.0)) throw std::invalid_argument("terminal_bound: v(x0) must be > 0 at t = 0");
    return std::pow(lambda, N) * v_x0;
  }
  return lambda * prev_terminal_v;
}

/// Controls obtained by running the feedback law for N steps from x.
inline Eigen::MatrixXd feedback_rollout(const DiscreteSystem& sys, const Controller& ctrl, const Eigen::VectorXd& x,
                                        int N) {
  Eigen::MatrixXd U(N, sys.m);
  Eigen::VectorXd xi = x;
  for (int k = 0; k < N; ++k) {
    const Eigen::VectorXd u = ctrl(xi);
    U.row(k) = u.transpose();
    xi = sys.next(xi, u);
  }
  return U;
}

/// Drops the first control of a converged solution and appends the feedback at its terminal state.
inline Eigen::MatrixXd warm_start_shift(const NlpSolution& prev, const Controller& ctrl) {
  if (!prev.converged) throw std::invalid_argument("warm_start_shift: previous solution did not converge");
  const auto N = prev.controls.rows();
  Eigen::MatrixXd U(N, prev.controls.cols());
  if (N > 1) U.topRows(N - 1) = prev.controls.bottomRows(N - 1);
  U.row(N - 1) = ctrl(prev.states.row(N).transpose()).transpose();
  return U;
}

struct EpisodeAbort : std::runtime_error {
  Trajectory partial;
  EpisodeAbort(const std::string& what, Trajectory tr) : std::runtime_error(what), partial(std::move(tr)) {}
};

struct EpisodeResult {
  Trajectory trajectory;
  double cost = 0.0;  // stage costs plus terminal term
  int solves = 0;
  int warm_start_checks = 0;
  int warm_start_failures = 0;  // shifted sequence failed direct evaluation
  bool relaxed_initial_bound = false;
  std::vector<double> bounds;      // terminal bound per solve
  std::vector<double> objectives;  // optimal objective per solve
  double max_state_violation = 0.0;
  nlohmann::json log = nlohmann::json::array();
};

/**
 * Receding-horizon episode: at each step solve the finite-horizon problem with
 * surrogate terminal cost and terminal bound on v, apply the first control.
 * Once a predicted state lands in T, the remaining prefix is applied open loop.
 */
inline EpisodeResult run_episode(const DiscreteSystem& sys, const ReachAvoidSets& sets, const QuadraticCost& h,
                                 const Box& control_box, const Eigen::VectorXd& x0, const GuidanceBarrier& barrier,
                                 const CostSurrogate& surrogate, const Controller& u_prev, const MpcOptions& opt) {
  const int N = opt.N;
  EpisodeResult res;
  Trajectory& tr = res.trajectory;
  tr.states.push_back(x0);
  if (sets.g.eval(x0) <= 0.0) {
    res.cost = h.terminal(x0);
    return res;
  }
  const double v0 = barrier.v.eval(x0);
  if (!(v0 > 0.0)) throw EpisodeAbort("run_episode: x0 is outside the reach-avoid set", tr);
  const long max_steps = hitting_time_bound(barrier, x0) + N + 1;

  NlpProblem prob;
  prob.N = N;
  prob.system = sys;
  prob.control_box = control_box;
  prob.stage_cost = h;
  prob.state_constraint = sets.w;
  prob.terminal_value = barrier.v;
  prob.terminal_cost = surrogate.polynomial();

  auto apply = [&](const Eigen::VectorXd& u) {
    const Eigen::VectorXd& x = tr.states.back();
    tr.controls.push_back(u);
    tr.stage_costs.push_back(h.stage(x, u));
    tr.states.push_back(sys.next(x, u));
    res.max_state_violation = std::max(res.max_state_violation, sets.w.eval(tr.states.back()));
  };

  std::optional<NlpSolution> prev;
  double prev_terminal_v = 0.0;
  for (int t = 0;; ++t) {
    const Eigen::VectorXd x = tr.states.back();
    if (t > max_steps) throw EpisodeAbort("run_episode: exceeded the hitting-time bound", tr);
    prob.initial_state = x;
    prob.terminal_bound = terminal_bound(t, barrier.lambda, v0, prev_terminal_v, N);

    Eigen::MatrixXd warm;
    if (prev) {
      warm = warm_start_shift(*prev, u_prev);
      ++res.warm_start_checks;
      const NlpModel model(prob);
      if (model.violation(warm, model.rollout(warm)) > opt.nlp.feas_tol) {
        ++res.warm_start_failures;
        warm = feedback_rollout(sys, u_prev, x, N);
      }
    } else {
      warm = feedback_rollout(sys, u_prev, x, N);
    }

    NlpSolution sol = solve(prob, warm, opt.nlp);
    if (!sol.converged && t == 0) {
      prob.terminal_bound *= 1.0 - opt.initial_relax;
      res.relaxed_initial_bound = true;
      sol = solve(prob, warm, opt.nlp);
    }
    ++res.solves;
    if (!sol.converged)
      throw EpisodeAbort("run_episode: no feasible solution at step " + std::to_string(t) + " (violation " +
                         std::to_string(sol.max_violation) + ")", tr);
    res.bounds.push_back(prob.terminal_bound);
    res.objectives.push_back(sol.objective);
    const double vN = barrier.v.eval(sol.states.row(N).transpose());

    int hit = 0;
    for (int l = 1; l <= N && !hit; ++l)
      if (sets.g.eval(sol.states.row(l).transpose()) <= 0.0) hit = l;

    if (opt.log_steps) {
      res.log.push_back({{"t", t},
                         {"x", std::vector<double>(x.data(), x.data() + x.size())},
                         {"u", std::vector<double>(sol.controls.row(0).data(), sol.controls.row(0).data() + sys.m)},
                         {"bound", prob.terminal_bound},
                         {"v_terminal", vN},
                         {"objective", sol.objective},
                         {"open_loop_steps", hit}});
    }

    if (hit) {
      for (int k = 0; k < hit; ++k) apply(sol.controls.row(k).transpose());
      break;
    }
    apply(sol.controls.row(0).transpose());
    prev_terminal_v = vN;
    prev = std::move(sol);
    if (sets.g.eval(tr.states.back()) <= 0.0) break;
  }
  res.cost = iteration_cost(tr, h);
  return res;
}

}  // namespace rampc

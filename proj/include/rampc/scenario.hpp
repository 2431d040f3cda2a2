#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "rampc/closed_loop.hpp"
#include "rampc/gbf.hpp"
#include "rampc/lp.hpp"
#include "rampc/poly.hpp"

namespace rampc {

/// Q_a(c, x) = sum_i c_i * m_i(x) over a monomial template.
struct CostSurrogate {
  std::vector<Monomial> cost_template;
  Eigen::VectorXd c;
  double delta_star = 0.0;
  double epsilon = 0.1;
  double beta = 0.1;
  int n_samples = 0;

  Polynomial polynomial() const {
    if (cost_template.empty()) throw std::invalid_argument("CostSurrogate: empty template");
    Polynomial p(static_cast<int>(cost_template.front().size()));
    for (std::size_t i = 0; i < cost_template.size(); ++i) p.add_term(cost_template[i], c(static_cast<Eigen::Index>(i)));
    return p;
  }
  double operator()(const Eigen::VectorXd& x) const { return polynomial().eval(x); }
};

inline void to_json(nlohmann::json& j, const CostSurrogate& s) {
  j = {{"template", s.cost_template},
       {"c", std::vector<double>(s.c.data(), s.c.data() + s.c.size())},
       {"delta_star", s.delta_star},
       {"epsilon", s.epsilon},
       {"beta", s.beta},
       {"n_samples", s.n_samples}};
}

inline void from_json(const nlohmann::json& j, CostSurrogate& s) {
  s.cost_template = j.at("template").get<std::vector<Monomial>>();
  const auto c = j.at("c").get<std::vector<double>>();
  if (c.size() != s.cost_template.size()) throw std::invalid_argument("surrogate JSON: c and template lengths differ");
  s.c = Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
  s.delta_star = j.at("delta_star").get<double>();
  s.epsilon = j.at("epsilon").get<double>();
  s.beta = j.at("beta").get<double>();
  s.n_samples = j.value("n_samples", 0);
}

/// Smallest N' with epsilon >= 2 (ln(1/beta) + l + 1) / N'.
inline int required_samples(double epsilon, double beta, int l) {
  if (!(epsilon > 0.0 && epsilon < 1.0) || !(beta > 0.0 && beta < 1.0))
    throw std::invalid_argument("required_samples: epsilon and beta must lie in (0, 1)");
  if (l < 1) throw std::invalid_argument("required_samples: l must be >= 1");
  const double need = 2.0 * (std::log(1.0 / beta) + l + 1.0) / epsilon;
  auto n = static_cast<int>(std::ceil(need - 1e-9));
  while (epsilon < 2.0 * (std::log(1.0 / beta) + l + 1.0) / n) ++n;
  return n;
}

struct CostSample {
  Eigen::VectorXd x;
  double cost = 0.0;
};

struct Dataset {
  std::vector<CostSample> samples;
  int excluded = 0;    // rollouts that did not reach T
  long proposals = 0;  // rejection-sampling proposals
};

struct SamplingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/**
 * Draws `count` states uniformly from the reach-avoid set {v > 0} within X and
 * records the closed-loop stage-cost sum until T is reached.
 * Rollouts that miss T within 1.1 times the hitting bound are excluded and
 * replaced; more than 1% exclusions is an error.
 */
inline Dataset collect_dataset(const GuidanceBarrier& barrier, const ReachAvoidSets& sets, const DiscreteSystem& sys,
                               const Controller& ctrl, const QuadraticCost& h, int count, std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("collect_dataset: count must be >= 1");
  const Box box = quadratic_bounding_box_or(sets);
  Dataset ds;
  const long max_proposals = std::max<long>(1000000, 10000L * count);
  std::mt19937_64 rng(seed);
  while (static_cast<int>(ds.samples.size()) < count) {
    if (ds.proposals >= max_proposals) break;
    Eigen::VectorXd x(box.dim());
    for (int i = 0; i < box.dim(); ++i) x(i) = std::uniform_real_distribution<double>(box.lo(i), box.hi(i))(rng);
    ++ds.proposals;
    if (!(barrier.v.eval(x) > 0.0 && sets.w.eval(x) <= 0.0)) continue;
    const int cap = sets.g.eval(x) <= 0.0 ? 1 : static_cast<int>(std::ceil(1.1 * hitting_time_bound(barrier, x))) + 1;
    const auto res = simulate(sys, ctrl, x, sets.g, sets.w, std::max(cap, 1), h);
    if (const auto* tr = std::get_if<Trajectory>(&res)) {
      ds.samples.push_back({x, trajectory_cost(*tr)});
    } else {
      ++ds.excluded;
    }
  }
  const double accepted = static_cast<double>(ds.samples.size() + ds.excluded);
  if (static_cast<int>(ds.samples.size()) < count || accepted / static_cast<double>(ds.proposals) < 1e-4)
    throw SamplingError("collect_dataset: acceptance rate too low (" + std::to_string(accepted) + " of " +
                        std::to_string(ds.proposals) + " proposals)");
  if (ds.excluded > 0.01 * accepted)
    throw SamplingError("collect_dataset: " + std::to_string(ds.excluded) + " of " +
                        std::to_string(static_cast<long>(accepted)) + " rollouts failed to reach the target");
  return ds;
}

inline Eigen::MatrixXd template_matrix(const std::vector<CostSample>& data, const std::vector<Monomial>& tmpl) {
  Eigen::MatrixXd Phi(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(tmpl.size()));
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t k = 0; k < tmpl.size(); ++k) {
      double v = 1.0;
      for (std::size_t d = 0; d < tmpl[k].size(); ++d) v *= std::pow(data[i].x(static_cast<Eigen::Index>(d)), tmpl[k][d]);
      Phi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = v;
    }
  return Phi;
}

struct FitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Minimax fit: min delta s.t. |Phi c - Q| <= delta, |c_i| <= coef_bound.
inline CostSurrogate fit(const std::vector<CostSample>& data, const std::vector<Monomial>& tmpl, double coef_bound,
                         double epsilon, double beta, const SdpOptions& lp_opts = {}) {
  if (data.empty()) throw std::invalid_argument("fit: empty dataset");
  if (tmpl.empty()) throw std::invalid_argument("fit: empty template");
  const Eigen::MatrixXd Phi = template_matrix(data, tmpl);
  const auto S = Phi.rows();
  const auto l = Phi.cols();
  Eigen::VectorXd Q(S);
  for (Eigen::Index i = 0; i < S; ++i) Q(i) = data[static_cast<std::size_t>(i)].cost;
  // Scale columns and costs so the LP sees entries of order one.
  Eigen::VectorXd colscale = Phi.cwiseAbs().colwise().maxCoeff().transpose();
  for (Eigen::Index k = 0; k < l; ++k)
    if (colscale(k) == 0.0) colscale(k) = 1.0;
  const double qscale = std::max(1.0, Q.cwiseAbs().maxCoeff());

  LpProblem lp;
  lp.objective = Eigen::VectorXd::Zero(l + 1);
  lp.objective(l) = 1.0;
  lp.A = Eigen::MatrixXd::Zero(2 * S, l + 1);
  lp.b = Eigen::VectorXd::Zero(2 * S);
  const Eigen::MatrixXd P = Phi * colscale.cwiseInverse().asDiagonal();
  lp.A.topLeftCorner(S, l) = P;
  lp.A.topRightCorner(S, 1).setConstant(-1.0);
  lp.b.head(S) = Q / qscale;
  lp.A.bottomLeftCorner(S, l) = -P;
  lp.A.bottomRightCorner(S, 1).setConstant(-1.0);
  lp.b.tail(S) = -Q / qscale;
  lp.lower = Eigen::VectorXd::Constant(l + 1, -std::numeric_limits<double>::infinity());
  lp.upper = Eigen::VectorXd::Constant(l + 1, std::numeric_limits<double>::infinity());
  for (Eigen::Index k = 0; k < l; ++k) {
    lp.lower(k) = -coef_bound * colscale(k) / qscale;
    lp.upper(k) = coef_bound * colscale(k) / qscale;
  }
  lp.lower(l) = 0.0;
  const LpSolution sol = solve_lp(lp, lp_opts);
  if (sol.status != LpStatus::Optimal)
    throw FitError(std::string("fit: linear program ") + to_string(sol.status));

  CostSurrogate s;
  s.cost_template = tmpl;
  s.c = (sol.x.head(l).array() * qscale / colscale.array()).matrix();
  s.c = s.c.cwiseMax(-coef_bound).cwiseMin(coef_bound);
  // Report the realized residual so the training identity holds exactly.
  s.delta_star = (Phi * s.c - Q).cwiseAbs().maxCoeff();
  s.epsilon = epsilon;
  s.beta = beta;
  s.n_samples = static_cast<int>(S);
  return s;
}

/// Fraction of points whose residual exceeds delta_star.
inline double holdout_validate(const CostSurrogate& s, const std::vector<CostSample>& fresh) {
  if (fresh.empty()) return 0.0;
  const Eigen::VectorXd pred = template_matrix(fresh, s.cost_template) * s.c;
  int bad = 0;
  for (std::size_t i = 0; i < fresh.size(); ++i)
    if (std::abs(pred(static_cast<Eigen::Index>(i)) - fresh[i].cost) > s.delta_star) ++bad;
  return static_cast<double>(bad) / static_cast<double>(fresh.size());
}

}  // namespace rampc

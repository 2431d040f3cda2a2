#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <json.hpp>

#include "rampc/closed_loop.hpp"
#include "rampc/poly.hpp"
#include "rampc/sdp.hpp"
#include "rampc/sos.hpp"

namespace rampc {

/// Safe set X = {w <= 0}, target T = {g <= 0}, enlarged set Y = {w0 <= 0}.
struct ReachAvoidSets {
  Polynomial w, g, w0;
  /// Bounding box of Y used for rejection sampling.
  Box y_box;
};

/**
 * Bounding box of {q(x) <= 0} for a quadratic q with positive definite
 * Hessian. Throws for anything else.
 */
inline Box quadratic_bounding_box(const Polynomial& q) {
  const int n = q.nvars();
  if (q.degree() != 2) throw std::invalid_argument("quadratic_bounding_box: polynomial is not quadratic");
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  double c = 0.0;
  for (const auto& [m, coef] : q.terms()) {
    std::vector<int> idx;
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < m[i]; ++k) idx.push_back(i);
    if (idx.empty()) {
      c += coef;
    } else if (idx.size() == 1) {
      b(idx[0]) += coef;
    } else if (idx[0] == idx[1]) {
      P(idx[0], idx[0]) += coef;
    } else {
      P(idx[0], idx[1]) += 0.5 * coef;
      P(idx[1], idx[0]) += 0.5 * coef;
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(P);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("quadratic_bounding_box: Hessian not positive definite");
  const Eigen::VectorXd center = -0.5 * llt.solve(b);
  const double rho = center.dot(P * center) - c;
  if (!(rho > 0.0)) throw std::invalid_argument("quadratic_bounding_box: empty set");
  const Eigen::MatrixXd Pinv = llt.solve(Eigen::MatrixXd::Identity(n, n));
  const Eigen::VectorXd half = (rho * Pinv.diagonal().array()).sqrt().matrix();
  return Box(center - half, center + half);
}

struct GuidanceBarrier {
  Polynomial v;
  double lambda = 1.001;
  double M = 1.0;
  /// s1..s5 in original coordinates, multiplying the original set polynomials.
  std::vector<Polynomial> multipliers;
  Eigen::VectorXd x0;
  int degree = 0;

  void validate() const {
    if (!(lambda > 1.0)) throw std::invalid_argument("GuidanceBarrier: lambda must be > 1");
    if (!(M > 0.0)) throw std::invalid_argument("GuidanceBarrier: M must be > 0");
  }
  double operator()(const Eigen::VectorXd& x) const { return v.eval(x); }
};

struct ReachAvoidSet {
  GuidanceBarrier barrier;
  Polynomial safe_w;

  bool contains(const Eigen::VectorXd& x) const { return barrier.v.eval(x) > 0.0 && safe_w.eval(x) <= 0.0; }
};

/// Domain error for hitting_time_bound.
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// ceil(log(M / v(x)) / log(lambda)): steps within which T is reached from x.
inline long hitting_time_bound(const GuidanceBarrier& b, const Eigen::VectorXd& x) {
  const double vx = b.v.eval(x);
  if (!(vx > 0.0)) throw DomainError("hitting_time_bound: v(x) must be > 0");
  if (vx >= b.M) return 0;
  const double r = std::log(b.M / vx) / std::log(b.lambda);
  return static_cast<long>(std::ceil(r - 1e-9));
}

enum class SynthesisFailureKind { InfeasibleAtAllDegrees, SolverBreakdown };

struct SynthesisFailure : std::runtime_error {
  SynthesisFailureKind kind;
  SynthesisFailure(SynthesisFailureKind k, const std::string& what) : std::runtime_error(what), kind(k) {}
};

struct GbfOptions {
  std::vector<int> degrees{2, 4, 6};
  int deg_s = 0;
  double eps_pos = 1e-3;
  GbfObjective objective = GbfObjective::Feasibility;
  /// Fraction of the maximal v(x0) demanded in the second MaxValueAtInitial pass.
  double backoff = 0.9;
  /// Per-region samples for the post-synthesis check; 0 disables it.
  int verify_samples = 10000;
  double verify_tol = 1e-6;
  std::uint64_t seed = 7;
  SdpOptions sdp;
};

struct ViolationReport {
  double decrease = std::numeric_limits<double>::infinity();      // min v(f(x)) - lambda v(x) on X \ T
  double outside_safe = std::numeric_limits<double>::infinity();  // min -v(x) on Y \ X
  double target_bound = std::numeric_limits<double>::infinity();  // min M - v(x) on T
  double value_at_x0 = 0.0;                                       // v(x0)
  int samples_decrease = 0, samples_outside = 0, samples_target = 0;

  double worst() const { return std::min({decrease, outside_safe, target_bound}); }
  bool passed(double tol = 1e-6) const { return worst() >= -tol && value_at_x0 > 0.0; }
};

namespace detail {

/// Rejection sampler from a box; throws once `cap` proposals fail to produce `count` points.
template <typename Pred>
std::vector<Eigen::VectorXd> rejection_sample(const Box& box, Pred accept, int count, std::mt19937_64& rng,
                                              long cap = 1000000) {
  std::vector<std::uniform_real_distribution<double>> dist;
  for (int i = 0; i < box.dim(); ++i) dist.emplace_back(box.lo(i), box.hi(i));
  std::vector<Eigen::VectorXd> out;
  out.reserve(count);
  Eigen::VectorXd x(box.dim());
  long attempts = 0;
  while (static_cast<int>(out.size()) < count) {
    if (attempts++ >= cap) throw std::runtime_error("rejection sampling exceeded the attempt cap");
    for (int i = 0; i < box.dim(); ++i) x(i) = dist[i](rng);
    if (accept(x)) out.push_back(x);
  }
  return out;
}

/// Affine map x = c + D y with D diagonal.
struct StateScaling {
  Eigen::VectorXd c, d;

  std::vector<Polynomial> forward(int n) const {  // x as polynomials in y
    std::vector<Polynomial> out;
    for (int i = 0; i < n; ++i) out.push_back(Polynomial::constant(n, c(i)) + d(i) * Polynomial::variable(n, i));
    return out;
  }
  std::vector<Polynomial> inverse(int n) const {  // y as polynomials in x
    std::vector<Polynomial> out;
    for (int i = 0; i < n; ++i)
      out.push_back((1.0 / d(i)) * (Polynomial::variable(n, i) - Polynomial::constant(n, c(i))));
    return out;
  }
};

inline Polynomial normalized(const Polynomial& p, double& scale) {
  scale = p.max_abs_coefficient();
  if (!(scale > 0.0)) throw std::invalid_argument("set polynomial is identically zero");
  return p * (1.0 / scale);
}

}  // namespace detail

/**
 * Samples every clause of the guidance-barrier conditions: decrease on X \ T,
 * non-positivity on Y \ X, the bound M on T, and v(x0) > 0. `closed_loop` is
 * the polynomial (unclipped) closed loop the certificate was built for.
 */
inline ViolationReport verify_certificate(const GuidanceBarrier& b, const std::vector<Polynomial>& closed_loop,
                                          const ReachAvoidSets& sets, int samples, std::mt19937_64& rng) {
  if (samples < 1) throw std::invalid_argument("verify_certificate: samples must be >= 1");
  ViolationReport rep;
  auto in_x_not_t = [&](const Eigen::VectorXd& x) { return sets.w.eval(x) <= 0.0 && sets.g.eval(x) > 0.0; };
  auto in_y_not_x = [&](const Eigen::VectorXd& x) { return sets.w0.eval(x) <= 0.0 && sets.w.eval(x) > 0.0; };
  auto in_t = [&](const Eigen::VectorXd& x) { return sets.g.eval(x) <= 0.0; };
  // Propose from the tightest available box per region.
  auto box_of = [&](const Polynomial& q) {
    try {
      return quadratic_bounding_box(q);
    } catch (const std::invalid_argument&) {
      return sets.y_box;
    }
  };
  for (const auto& x : detail::rejection_sample(box_of(sets.w), in_x_not_t, samples, rng)) {
    const double s = b.v.eval(eval_all(closed_loop, x)) - b.lambda * b.v.eval(x);
    rep.decrease = std::min(rep.decrease, s);
  }
  rep.samples_decrease = samples;
  for (const auto& x : detail::rejection_sample(sets.y_box, in_y_not_x, samples, rng))
    rep.outside_safe = std::min(rep.outside_safe, -b.v.eval(x));
  rep.samples_outside = samples;
  for (const auto& x : detail::rejection_sample(box_of(sets.g), in_t, samples, rng))
    rep.target_bound = std::min(rep.target_bound, b.M - b.v.eval(x));
  rep.samples_target = samples;
  rep.value_at_x0 = b.x0.size() > 0 ? b.v.eval(b.x0) : 0.0;
  return rep;
}

/// Bounding box of X when w is a definite quadratic, else the sampling box of Y.
inline Box quadratic_bounding_box_or(const ReachAvoidSets& sets) {
  try {
    return quadratic_bounding_box(sets.w);
  } catch (const std::invalid_argument&) {
    return sets.y_box;
  }
}

/// One SDP attempt at a fixed degree. Returns nullopt when the SDP is infeasible.
/// Synthesis program in coordinates where the bounding box of X is [-1, 1]^n.
struct ScaledSynthesis {
  GbfSynthesisSpec spec;
  detail::StateScaling scaling;
  double sw = 1.0, sg = 1.0, sw0 = 1.0;  // normalization of w, g, w0
};

inline ScaledSynthesis scaled_synthesis(const std::vector<Polynomial>& closed_loop, const ReachAvoidSets& sets,
                                        double lambda, double M, const Eigen::VectorXd& x0, int deg_v,
                                        const GbfOptions& opt) {
  const int n = sets.w.nvars();
  const Box xbox = quadratic_bounding_box_or(sets);
  ScaledSynthesis out{{}, {0.5 * (xbox.lo + xbox.hi), 0.5 * (xbox.hi - xbox.lo)}};
  const auto& sc = out.scaling;
  const auto fwd = sc.forward(n);
  GbfSynthesisSpec& spec = out.spec;
  spec.w = detail::normalized(compose(sets.w, fwd), out.sw);
  spec.g = detail::normalized(compose(sets.g, fwd), out.sg);
  spec.w0 = detail::normalized(compose(sets.w0, fwd), out.sw0);
  for (int i = 0; i < n; ++i) {
    // y+_i = (f_i(c + D y) - c_i) / d_i
    Polynomial fi = compose(closed_loop[i], fwd);
    fi -= Polynomial::constant(n, sc.c(i));
    spec.closed_loop.push_back(fi * (1.0 / sc.d(i)));
  }
  spec.lambda = lambda;
  spec.M = M;
  spec.x0 = (x0 - sc.c).cwiseQuotient(sc.d);
  spec.deg_v = deg_v;
  spec.deg_s = opt.deg_s;
  spec.eps_pos = opt.eps_pos;
  spec.objective = opt.objective;
  return out;
}

inline std::optional<GuidanceBarrier> synthesize_at_degree(const std::vector<Polynomial>& closed_loop,
                                                           const ReachAvoidSets& sets, double lambda, double M,
                                                           const Eigen::VectorXd& x0, int deg_v,
                                                           const GbfOptions& opt, SdpStatus* status_out = nullptr) {
  const int n = sets.w.nvars();
  const ScaledSynthesis scaled = scaled_synthesis(closed_loop, sets, lambda, M, x0, deg_v, opt);
  const GbfSynthesisSpec& spec = scaled.spec;
  const auto inv = scaled.scaling.inverse(n);
  const double sw = scaled.sw, sg = scaled.sg, sw0 = scaled.sw0;

  auto solve_once = [&](const GbfSynthesisSpec& s) -> std::optional<GbfCertificateData> {
    const GbfSdp sdp = build_gbf_sdp(s);
    const SdpSolution sol = solve_sdp(sdp.problem, opt.sdp);
    if (status_out) *status_out = sol.status;
    if (sol.status == SdpStatus::Infeasible) return std::nullopt;
    if (sol.status != SdpStatus::Feasible && !sol.primal_feasible)
      throw SynthesisError(std::string("SDP returned ") + to_string(sol.status));
    return extract_certificate(s, sdp, sol);
  };

  std::optional<GbfCertificateData> cert;
  if (opt.objective == GbfObjective::MaxValueAtInitial) {
    // The maximizer sits on the boundary of the PSD cone; re-center at a fraction of it.
    GbfSynthesisSpec probe = spec;
    double best = 0.0;
    try {
      const GbfSdp sdp = build_gbf_sdp(probe);
      const SdpSolution sol = solve_sdp(sdp.problem, opt.sdp);
      if (sol.status == SdpStatus::Infeasible) {
        if (status_out) *status_out = sol.status;
        return std::nullopt;
      }
      best = -sol.primal_objective;
    } catch (const SynthesisError&) {
    }
    GbfSynthesisSpec centered = spec;
    centered.objective = GbfObjective::Feasibility;
    centered.eps_pos = std::max(spec.eps_pos, opt.backoff * best);
    cert = solve_once(centered);
    if (!cert && centered.eps_pos > spec.eps_pos) {
      centered.eps_pos = spec.eps_pos;
      cert = solve_once(centered);
    }
  } else {
    cert = solve_once(spec);
  }
  if (!cert) return std::nullopt;

  GuidanceBarrier out;
  out.v = compose(cert->v, inv);
  out.lambda = lambda;
  out.M = M;
  out.x0 = x0;
  out.degree = deg_v;
  const double set_scale[5] = {sw, sg, sw0, sw, sg};  // s1 w, s2 g, s3 w0, s4 w, s5 g
  for (std::size_t k = 0; k < cert->multipliers.size(); ++k)
    out.multipliers.push_back(compose(cert->multipliers[k], inv) * (1.0 / set_scale[k]));
  return out;
}

/**
 * Degree ladder over opt.degrees; the first certificate that also passes
 * sampled verification wins.
 */
inline GuidanceBarrier synthesize(const DiscreteSystem& sys, const LinearFeedback& ctrl, const ReachAvoidSets& sets,
                                  double lambda, double M, const Eigen::VectorXd& x0, const GbfOptions& opt = {}) {
  if (!(lambda > 1.0)) throw std::invalid_argument("synthesize: lambda must be > 1");
  if (sets.w.eval(x0) > 0.0 || sets.g.eval(x0) <= 0.0)
    throw std::invalid_argument("synthesize: x0 must lie in X \\ T");
  const auto cl = sys.closed_loop(ctrl.polynomial());
  std::string log;
  bool breakdown = false;
  for (int deg : opt.degrees) {
    SdpStatus st = SdpStatus::MaxIter;
    std::optional<GuidanceBarrier> b;
    try {
      b = synthesize_at_degree(cl, sets, lambda, M, x0, deg, opt, &st);
    } catch (const SynthesisError& e) {
      breakdown = true;
      log += " deg " + std::to_string(deg) + ": " + e.what() + ";";
      continue;
    }
    if (!b) {
      log += " deg " + std::to_string(deg) + ": infeasible;";
      continue;
    }
    if (opt.verify_samples > 0) {
      std::mt19937_64 rng(opt.seed);
      const auto rep = verify_certificate(*b, cl, sets, opt.verify_samples, rng);
      if (!rep.passed(opt.verify_tol)) {
        breakdown = true;
        log += " deg " + std::to_string(deg) + ": sampled check failed (worst " + std::to_string(rep.worst()) + ");";
        continue;
      }
    }
    return *b;
  }
  throw SynthesisFailure(breakdown ? SynthesisFailureKind::SolverBreakdown : SynthesisFailureKind::InfeasibleAtAllDegrees,
                         "guidance-barrier synthesis failed:" + log);
}

// Certificate file: {"lambda", "M", "v", "multipliers", "x0"}.

inline void to_json(nlohmann::json& j, const GuidanceBarrier& b) {
  j = {{"lambda", b.lambda}, {"M", b.M}, {"v", b.v}, {"multipliers", b.multipliers},
       {"x0", std::vector<double>(b.x0.data(), b.x0.data() + b.x0.size())}, {"degree", b.degree}};
}

inline void from_json(const nlohmann::json& j, GuidanceBarrier& b) {
  for (const char* key : {"lambda", "M", "v"})
    if (!j.contains(key)) throw std::invalid_argument(std::string("certificate JSON missing \"") + key + "\"");
  b.lambda = j.at("lambda").get<double>();
  b.M = j.at("M").get<double>();
  b.v = j.at("v").get<Polynomial>();
  b.multipliers = j.value("multipliers", std::vector<Polynomial>{});
  const auto x0 = j.value("x0", std::vector<double>{});
  b.x0 = Eigen::Map<const Eigen::VectorXd>(x0.data(), static_cast<Eigen::Index>(x0.size()));
  b.degree = j.value("degree", b.v.degree());
  b.validate();
}

}  // namespace rampc

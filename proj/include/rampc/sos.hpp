#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "rampc/poly.hpp"
#include "rampc/sdp.hpp"

namespace rampc {

/// Gram parameterization z(x)' Q z(x) of an SOS polynomial; Q is SDP block `block`.
struct SosTemplate {
  std::vector<Monomial> basis;
  int block = -1;

  int dim() const { return static_cast<int>(basis.size()); }
  int max_degree() const {
    int d = 0;
    for (const auto& m : basis) d = std::max(d, total_degree(m));
    return d;
  }
};

/// Coefficient of an affinely parameterized polynomial: constant + linear form.
struct AffineCoefficient {
  double constant = 0.0;
  LinearForm form;
};

/**
 * Polynomial whose coefficients are affine in SDP decision variables
 * (free scalars and Gram entries).
 */
class AffinePolynomial {
 public:
  explicit AffinePolynomial(int nvars) : nvars_(nvars) {}

  static AffinePolynomial from(const Polynomial& p) {
    AffinePolynomial out(p.nvars());
    for (const auto& [m, c] : p.terms()) out.terms_[m].constant += c;
    return out;
  }

  /// sum_k z_k * basis_polys[k], with z the free variables starting at `first_free`.
  static AffinePolynomial linear_combination(const std::vector<Polynomial>& basis_polys, int first_free) {
    if (basis_polys.empty()) throw std::invalid_argument("linear_combination: empty basis");
    AffinePolynomial out(basis_polys.front().nvars());
    for (std::size_t k = 0; k < basis_polys.size(); ++k)
      for (const auto& [m, c] : basis_polys[k].terms())
        out.terms_[m].form.add_free(first_free + static_cast<int>(k), c);
    return out;
  }

  /// z(x)' Q z(x) for the given template.
  static AffinePolynomial gram(const SosTemplate& t, int nvars) {
    AffinePolynomial out(nvars);
    for (int i = 0; i < t.dim(); ++i)
      for (int j = i; j < t.dim(); ++j) {
        const Monomial m = monomial_product(t.basis[i], t.basis[j]);
        out.terms_[m].form.add_gram(t.block, i, j, i == j ? 1.0 : 2.0);
      }
    return out;
  }

  int nvars() const { return nvars_; }
  const std::map<Monomial, AffineCoefficient, GradedLexLess>& terms() const { return terms_; }

  int degree() const {
    int d = 0;
    for (const auto& [m, c] : terms_) d = std::max(d, total_degree(m));
    return d;
  }

  AffinePolynomial& operator+=(const AffinePolynomial& q) {
    for (const auto& [m, c] : q.terms_) {
      auto& dst = terms_[m];
      dst.constant += c.constant;
      dst.form.gram.insert(dst.form.gram.end(), c.form.gram.begin(), c.form.gram.end());
      dst.form.free.insert(dst.form.free.end(), c.form.free.begin(), c.form.free.end());
    }
    return *this;
  }

  AffinePolynomial scaled(double s) const {
    AffinePolynomial out = *this;
    for (auto& [m, c] : out.terms_) {
      c.constant *= s;
      for (auto& e : c.form.gram) e.coef *= s;
      for (auto& f : c.form.free) f.second *= s;
    }
    return out;
  }

  /// Product with a fixed polynomial.
  AffinePolynomial times(const Polynomial& p) const {
    AffinePolynomial out(nvars_);
    for (const auto& [m, c] : terms_)
      for (const auto& [mp, cp] : p.terms()) {
        auto& dst = out.terms_[monomial_product(m, mp)];
        dst.constant += c.constant * cp;
        for (auto e : c.form.gram) {
          e.coef *= cp;
          dst.form.gram.push_back(e);
        }
        for (auto f : c.form.free) {
          f.second *= cp;
          dst.form.free.push_back(f);
        }
      }
    return out;
  }

 private:
  int nvars_;
  std::map<Monomial, AffineCoefficient, GradedLexLess> terms_;
};

/// Thrown when a polynomial identity cannot be represented by the chosen Gram spans.
struct DegreeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/**
 * Emits one equality per monomial enforcing lhs(x) == sum_k z_k(x)' Q_k z_k(x).
 */
inline std::vector<SdpProblem::Equality> encode_sos_identity(const AffinePolynomial& lhs,
                                                             const std::vector<SosTemplate>& gram_templates) {
  int max_deg = 0;
  AffinePolynomial rhs(lhs.nvars());
  for (const auto& t : gram_templates) {
    max_deg = std::max(max_deg, t.max_degree());
    rhs += AffinePolynomial::gram(t, lhs.nvars());
  }
  for (const auto& [m, c] : lhs.terms()) {
    const bool nontrivial = c.constant != 0.0 || !c.form.empty();
    if (nontrivial && total_degree(m) > 2 * max_deg)
      throw DegreeError("encode_sos_identity: lhs monomial of degree " + std::to_string(total_degree(m)) +
                        " exceeds Gram span of degree " + std::to_string(2 * max_deg));
  }

  std::map<Monomial, SdpProblem::Equality, GradedLexLess> rows;
  // Gram side minus parameter side equals the lhs constant.
  for (const auto& [m, c] : rhs.terms()) {
    auto& eq = rows[m];
    eq.lhs.gram.insert(eq.lhs.gram.end(), c.form.gram.begin(), c.form.gram.end());
  }
  for (const auto& [m, c] : lhs.terms()) {
    auto& eq = rows[m];
    for (auto e : c.form.gram) {
      e.coef = -e.coef;
      eq.lhs.gram.push_back(e);
    }
    for (auto f : c.form.free) eq.lhs.free.emplace_back(f.first, -f.second);
    eq.rhs += c.constant;
  }
  std::vector<SdpProblem::Equality> out;
  out.reserve(rows.size());
  for (auto& [m, eq] : rows) {
    if (eq.lhs.empty()) {
      if (std::abs(eq.rhs) > 0.0)
        throw DegreeError("encode_sos_identity: monomial with nonzero constant has no decision variables");
      continue;
    }
    out.push_back(std::move(eq));
  }
  return out;
}

/// Reconstructs sum_k z_k' Q_k z_k from solved Gram blocks.
inline Polynomial gram_polynomial(const SosTemplate& t, const Eigen::MatrixXd& Q, int nvars) {
  Polynomial out(nvars);
  for (int i = 0; i < t.dim(); ++i)
    for (int j = 0; j < t.dim(); ++j) out.add_term(monomial_product(t.basis[i], t.basis[j]), Q(i, j));
  return out;
}

/// How the guidance-barrier SDP chooses among feasible certificates.
/// Feasibility returns the analytic center; MaxValueAtInitial maximizes v(x0).
enum class GbfObjective { Feasibility, MaxValueAtInitial };

/**
 * Data for one guidance-barrier synthesis: closed loop x -> f(x, u(x)) and
 * the sets X = {w <= 0}, T = {g <= 0}, Y = {w0 <= 0}.
 */
struct GbfSynthesisSpec {
  std::vector<Polynomial> closed_loop;
  Polynomial w, g, w0;
  double lambda = 1.001;
  double M = 1.0;
  Eigen::VectorXd x0;
  int deg_v = 2;
  /// Multiplier degree; 0 selects the minimal complete span per identity.
  int deg_s = 0;
  double eps_pos = 1e-3;
  GbfObjective objective = GbfObjective::Feasibility;

  int nvars() const { return w.nvars(); }

  void validate() const {
    if (!(lambda > 1.0)) throw std::invalid_argument("GbfSynthesisSpec: lambda must be > 1");
    if (!(M > 0.0)) throw std::invalid_argument("GbfSynthesisSpec: M must be > 0");
    if (!(eps_pos > 0.0)) throw std::invalid_argument("GbfSynthesisSpec: eps_pos must be > 0");
    const int n = nvars();
    if (static_cast<int>(closed_loop.size()) != n)
      throw std::invalid_argument("GbfSynthesisSpec: closed loop must have one component per state");
    for (const auto& f : closed_loop)
      if (f.nvars() != n) throw std::invalid_argument("GbfSynthesisSpec: closed loop nvars mismatch");
    if (g.nvars() != n || w0.nvars() != n)
      throw std::invalid_argument("GbfSynthesisSpec: set polynomials disagree on nvars");
    if (x0.size() != n) throw std::invalid_argument("GbfSynthesisSpec: x0 dimension mismatch");
    if (deg_v < 1) throw std::invalid_argument("GbfSynthesisSpec: deg_v must be >= 1");
    if (deg_s < 0 || deg_s % 2 != 0) throw std::invalid_argument("GbfSynthesisSpec: deg_s must be even");
  }
};

/// Block/variable layout of a compiled guidance-barrier SDP.
struct GbfSdpLayout {
  std::vector<Monomial> v_basis;
  int v_first_free = 0;
  // Identity SOS blocks (decrease, outside-safe, target-bound) and multipliers s1..s5.
  std::vector<SosTemplate> identity_blocks;
  std::vector<SosTemplate> multipliers;
  std::vector<int> identity_degrees;
  int slack_block = -1;  // v(x0) - eps_pos = slack >= 0
};

struct GbfSdp {
  SdpProblem problem;
  GbfSdpLayout layout;
};

namespace detail {
inline int round_up_even(int d) { return d % 2 == 0 ? d : d + 1; }

}  // namespace detail

/**
 * Compiles the guidance-barrier conditions into one SDP:
 *
 *   v(f(x)) - lambda v(x) + s1 w - s2 g   is SOS
 *   -v(x) + s3 w0 - s4 w                  is SOS
 *   M - v(x) + s5 g                       is SOS
 *   v(x0) >= eps_pos,  s1..s5 SOS.
 */
inline GbfSdp build_gbf_sdp(const GbfSynthesisSpec& spec) {
  spec.validate();
  const int n = spec.nvars();
  GbfSdp out;
  auto& prob = out.problem;
  auto& lay = out.layout;

  lay.v_basis = monomial_basis(n, spec.deg_v);
  const int nv = static_cast<int>(lay.v_basis.size());
  lay.v_first_free = prob.add_free_vars(nv);

  std::vector<Polynomial> v_polys;
  std::vector<Polynomial> vf_polys;
  for (const auto& m : lay.v_basis) {
    Polynomial mono(n);
    mono.add_term(m, 1.0);
    vf_polys.push_back(compose(mono, spec.closed_loop));
    v_polys.push_back(std::move(mono));
  }
  const AffinePolynomial v = AffinePolynomial::linear_combination(v_polys, lay.v_first_free);
  const AffinePolynomial vf = AffinePolynomial::linear_combination(vf_polys, lay.v_first_free);

  int deg_vf = 0;
  for (const auto& p : vf_polys) deg_vf = std::max(deg_vf, p.degree());

  auto multiplier_degree = [&](int identity_deg, const Polynomial& set) {
    if (spec.deg_s > 0) return spec.deg_s;
    return std::max(0, detail::round_up_even(identity_deg - set.degree()));
  };
  auto make_template = [&](int deg) {
    SosTemplate t;
    t.basis = monomial_basis(n, deg / 2);
    t.block = prob.add_block(t.dim());
    return t;
  };

  // Decrease identity.
  int d1 = detail::round_up_even(std::max(deg_vf, spec.deg_v));
  const int ds1 = multiplier_degree(d1, spec.w);
  const int ds2 = multiplier_degree(d1, spec.g);
  d1 = std::max({d1, detail::round_up_even(ds1 + spec.w.degree()), detail::round_up_even(ds2 + spec.g.degree())});
  SosTemplate s1 = make_template(ds1);
  SosTemplate s2 = make_template(ds2);
  SosTemplate sig1 = make_template(d1);
  AffinePolynomial id1 = vf;
  id1 += v.scaled(-spec.lambda);
  id1 += AffinePolynomial::gram(s1, n).times(spec.w);
  id1 += AffinePolynomial::gram(s2, n).times(spec.g).scaled(-1.0);

  // Outside-safe identity.
  int d2 = detail::round_up_even(spec.deg_v);
  const int ds3 = multiplier_degree(d2, spec.w0);
  const int ds4 = multiplier_degree(d2, spec.w);
  d2 = std::max({d2, detail::round_up_even(ds3 + spec.w0.degree()), detail::round_up_even(ds4 + spec.w.degree())});
  SosTemplate s3 = make_template(ds3);
  SosTemplate s4 = make_template(ds4);
  SosTemplate sig2 = make_template(d2);
  AffinePolynomial id2 = v.scaled(-1.0);
  id2 += AffinePolynomial::gram(s3, n).times(spec.w0);
  id2 += AffinePolynomial::gram(s4, n).times(spec.w).scaled(-1.0);

  // Target-bound identity.
  int d3 = detail::round_up_even(spec.deg_v);
  const int ds5 = multiplier_degree(d3, spec.g);
  d3 = std::max(d3, detail::round_up_even(ds5 + spec.g.degree()));
  SosTemplate s5 = make_template(ds5);
  SosTemplate sig3 = make_template(d3);
  AffinePolynomial id3 = AffinePolynomial::from(Polynomial::constant(n, spec.M));
  id3 += v.scaled(-1.0);
  id3 += AffinePolynomial::gram(s5, n).times(spec.g);

  for (auto& eq : encode_sos_identity(id1, {sig1})) prob.equalities.push_back(std::move(eq));
  for (auto& eq : encode_sos_identity(id2, {sig2})) prob.equalities.push_back(std::move(eq));
  for (auto& eq : encode_sos_identity(id3, {sig3})) prob.equalities.push_back(std::move(eq));

  // v(x0) - slack = eps_pos.
  lay.slack_block = prob.add_block(1);
  SdpProblem::Equality pos;
  for (int k = 0; k < nv; ++k) {
    Polynomial mono(n);
    mono.add_term(lay.v_basis[k], 1.0);
    const double val = mono.eval(spec.x0);
    if (val != 0.0) pos.lhs.add_free(lay.v_first_free + k, val);
  }
  pos.lhs.add_gram(lay.slack_block, 0, 0, -1.0);
  pos.rhs = spec.eps_pos;
  prob.equalities.push_back(pos);

  switch (spec.objective) {
    case GbfObjective::MaxValueAtInitial:
      for (const auto& [k, c] : pos.lhs.free) prob.objective.add_free(k, -c);
      break;
    case GbfObjective::Feasibility:
      break;
  }

  lay.identity_blocks = {sig1, sig2, sig3};
  lay.identity_degrees = {d1, d2, d3};
  lay.multipliers = {s1, s2, s3, s4, s5};
  return out;
}

/// Synthesis failure surfaced to callers of extract_certificate / synthesize.
struct SynthesisError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GbfCertificateData {
  Polynomial v;
  std::vector<Polynomial> multipliers;  // s1..s5
  double value_at_x0 = 0.0;
  double residual = 0.0;
};

/// Decodes v and the multipliers; rejects non-feasible or inaccurate solver output.
inline GbfCertificateData extract_certificate(const GbfSynthesisSpec& spec, const GbfSdp& sdp,
                                              const SdpSolution& sol, double max_residual = 1e-7) {
  if (sol.status != SdpStatus::Feasible && !sol.primal_feasible)
    throw SynthesisError(std::string("guidance-barrier SDP not feasible: ") + to_string(sol.status));
  if (sol.primal_residual > max_residual)
    throw SynthesisError("guidance-barrier SDP residual too large: " + std::to_string(sol.primal_residual));
  const int n = spec.nvars();
  GbfCertificateData out;
  out.v = Polynomial(n);
  for (std::size_t k = 0; k < sdp.layout.v_basis.size(); ++k)
    out.v.add_term(sdp.layout.v_basis[k], sol.free_vars(sdp.layout.v_first_free + static_cast<int>(k)));
  for (const auto& t : sdp.layout.multipliers) out.multipliers.push_back(gram_polynomial(t, sol.gram_blocks[t.block], n));
  out.value_at_x0 = out.v.eval(spec.x0);
  out.residual = sol.primal_residual;
  if (out.value_at_x0 < spec.eps_pos * (1.0 - 1e-6))
    throw SynthesisError("certificate has v(x0) below eps_pos");
  return out;
}

}  // namespace rampc

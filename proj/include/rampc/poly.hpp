#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace rampc {

/// Exponent vector of a monomial; its length is the ambient variable count.
using Monomial = std::vector<int>;

inline int total_degree(const Monomial& m) { return std::accumulate(m.begin(), m.end(), 0); }

/// Graded-lexicographic order: lower total degree first, then larger
/// exponent on the earlier variable first (1, x1, x2, x1^2, x1x2, x2^2, ...).
struct GradedLexLess {
  bool operator()(const Monomial& a, const Monomial& b) const {
    const int da = total_degree(a);
    const int db = total_degree(b);
    if (da != db) return da < db;
    return std::lexicographical_compare(b.begin(), b.end(), a.begin(), a.end());
  }
};

inline Monomial monomial_product(const Monomial& a, const Monomial& b) {
  Monomial out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

/// All monomials in `nvars` variables with total degree <= maxdeg, graded-lex.
inline std::vector<Monomial> monomial_basis(int nvars, int maxdeg) {
  if (nvars < 1) throw std::invalid_argument("monomial_basis: nvars must be >= 1");
  if (maxdeg < 0) throw std::invalid_argument("monomial_basis: maxdeg must be >= 0");
  std::vector<Monomial> out;
  Monomial cur(nvars, 0);
  // Enumerate exponents of each degree in descending-lex order.
  for (int d = 0; d <= maxdeg; ++d) {
    auto rec = [&](auto&& self, int var, int remaining) -> void {
      if (var == nvars - 1) {
        cur[var] = remaining;
        out.push_back(cur);
        return;
      }
      for (int e = remaining; e >= 0; --e) {
        cur[var] = e;
        self(self, var + 1, remaining - e);
      }
    };
    rec(rec, 0, d);
  }
  return out;
}

/**
 * Sparse multivariate polynomial with real coefficients.
 *
 * Terms are kept in graded-lex order and coefficients with magnitude below
 * kCanonicalEps are dropped after every operation.
 */
class Polynomial {
 public:
  static constexpr double kCanonicalEps = 1e-14;
  using Terms = std::map<Monomial, double, GradedLexLess>;

  Polynomial() = default;
  explicit Polynomial(int nvars) : nvars_(nvars) {
    if (nvars < 1) throw std::invalid_argument("Polynomial: nvars must be >= 1");
  }

  static Polynomial constant(int nvars, double c) {
    Polynomial p(nvars);
    p.add_term(Monomial(nvars, 0), c);
    return p;
  }

  /// The polynomial x_i (0-based index).
  static Polynomial variable(int nvars, int i) {
    if (i < 0 || i >= nvars) throw std::out_of_range("Polynomial::variable: index out of range");
    Polynomial p(nvars);
    Monomial m(nvars, 0);
    m[i] = 1;
    p.add_term(m, 1.0);
    return p;
  }

  int nvars() const { return nvars_; }
  const Terms& terms() const { return terms_; }
  bool is_zero() const { return terms_.empty(); }
  std::size_t size() const { return terms_.size(); }

  int degree() const {
    int d = 0;
    for (const auto& [m, c] : terms_) d = std::max(d, total_degree(m));
    return d;
  }

  double coefficient(const Monomial& m) const {
    auto it = terms_.find(m);
    return it == terms_.end() ? 0.0 : it->second;
  }

  double max_abs_coefficient() const {
    double best = 0.0;
    for (const auto& [m, c] : terms_) best = std::max(best, std::abs(c));
    return best;
  }

  /// Accumulates c into the coefficient of m; canonicalizes that entry.
  void add_term(const Monomial& m, double c) {
    if (static_cast<int>(m.size()) != nvars_)
      throw std::invalid_argument("Polynomial::add_term: monomial length != nvars");
    for (int e : m)
      if (e < 0) throw std::invalid_argument("Polynomial::add_term: negative exponent");
    auto [it, inserted] = terms_.try_emplace(m, 0.0);
    it->second += c;
    if (std::abs(it->second) < kCanonicalEps) terms_.erase(it);
  }

  void canonicalize() {
    std::erase_if(terms_, [](const auto& kv) { return std::abs(kv.second) < kCanonicalEps; });
  }

  double eval(std::span<const double> x) const {
    if (static_cast<int>(x.size()) != nvars_)
      throw std::invalid_argument("Polynomial::eval: dimension mismatch (got " +
                                  std::to_string(x.size()) + ", expected " +
                                  std::to_string(nvars_) + ")");
    double sum = 0.0;
    for (const auto& [m, c] : terms_) {
      double t = c;
      for (int i = 0; i < nvars_; ++i) {
        for (int k = 0; k < m[i]; ++k) t *= x[i];
      }
      sum += t;
    }
    return sum;
  }

  double eval(const Eigen::VectorXd& x) const {
    return eval(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
  }

  double operator()(const Eigen::VectorXd& x) const { return eval(x); }

  /// Partial derivative with respect to x_i.
  Polynomial derivative(int i) const {
    if (i < 0 || i >= nvars_) throw std::out_of_range("Polynomial::derivative: index out of range");
    Polynomial out(nvars_);
    for (const auto& [m, c] : terms_) {
      if (m[i] == 0) continue;
      Monomial d = m;
      d[i] -= 1;
      out.add_term(d, c * m[i]);
    }
    return out;
  }

  Polynomial& operator+=(const Polynomial& q) {
    check_same(q, "add");
    for (const auto& [m, c] : q.terms_) add_term(m, c);
    return *this;
  }
  Polynomial& operator-=(const Polynomial& q) {
    check_same(q, "sub");
    for (const auto& [m, c] : q.terms_) add_term(m, -c);
    return *this;
  }
  Polynomial& operator*=(double s) {
    for (auto& [m, c] : terms_) c *= s;
    canonicalize();
    return *this;
  }

  friend Polynomial operator+(Polynomial p, const Polynomial& q) { return p += q; }
  friend Polynomial operator-(Polynomial p, const Polynomial& q) { return p -= q; }
  friend Polynomial operator*(Polynomial p, double s) { return p *= s; }
  friend Polynomial operator*(double s, Polynomial p) { return p *= s; }
  friend Polynomial operator-(Polynomial p) { return p *= -1.0; }

  friend Polynomial operator*(const Polynomial& p, const Polynomial& q) {
    p.check_same(q, "mul");
    Polynomial out(p.nvars_);
    for (const auto& [mp, cp] : p.terms_)
      for (const auto& [mq, cq] : q.terms_) out.add_term(monomial_product(mp, mq), cp * cq);
    out.canonicalize();
    return out;
  }

  friend bool operator==(const Polynomial& a, const Polynomial& b) {
    return a.nvars_ == b.nvars_ && a.terms_ == b.terms_;
  }

  Polynomial pow(int k) const {
    if (k < 0) throw std::invalid_argument("Polynomial::pow: negative exponent");
    Polynomial out = constant(nvars_, 1.0);
    Polynomial base = *this;
    while (k > 0) {
      if (k & 1) out = out * base;
      k >>= 1;
      if (k > 0) base = base * base;
    }
    return out;
  }

 private:
  void check_same(const Polynomial& q, const char* op) const {
    if (nvars_ != q.nvars_)
      throw std::invalid_argument(std::string("Polynomial::") + op + ": dimension mismatch");
  }

  int nvars_ = 1;
  Terms terms_;
};

/// Substitutes subs[i] for x_i. All substitutions share a common variable count.
inline Polynomial compose(const Polynomial& p, std::span<const Polynomial> subs) {
  if (static_cast<int>(subs.size()) != p.nvars())
    throw std::invalid_argument("compose: need one substitution per variable");
  if (subs.empty()) throw std::invalid_argument("compose: empty substitution list");
  const int out_vars = subs.front().nvars();
  for (const auto& s : subs)
    if (s.nvars() != out_vars) throw std::invalid_argument("compose: substitutions disagree on nvars");

  // Cache powers of each substitution; degrees are small.
  std::vector<std::vector<Polynomial>> powers(subs.size());
  for (std::size_t i = 0; i < subs.size(); ++i) powers[i].push_back(Polynomial::constant(out_vars, 1.0));

  auto power = [&](std::size_t i, int k) -> const Polynomial& {
    while (static_cast<int>(powers[i].size()) <= k) powers[i].push_back(powers[i].back() * subs[i]);
    return powers[i][k];
  };

  Polynomial out(out_vars);
  for (const auto& [m, c] : p.terms()) {
    Polynomial term = Polynomial::constant(out_vars, c);
    for (std::size_t i = 0; i < m.size(); ++i)
      if (m[i] > 0) term = term * power(i, m[i]);
    out += term;
  }
  return out;
}

inline Polynomial compose(const Polynomial& p, const std::vector<Polynomial>& subs) {
  return compose(p, std::span<const Polynomial>(subs));
}

/// Evaluates a vector of polynomials at x.
inline Eigen::VectorXd eval_all(const std::vector<Polynomial>& ps, const Eigen::VectorXd& x) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(ps.size()));
  for (std::size_t i = 0; i < ps.size(); ++i) out(static_cast<Eigen::Index>(i)) = ps[i].eval(x);
  return out;
}

/// Embeds p (over k variables) into a ring of n >= k variables; x_i maps to x_{offset+i}.
inline Polynomial embed(const Polynomial& p, int nvars, int offset = 0) {
  if (offset < 0 || offset + p.nvars() > nvars) throw std::invalid_argument("embed: variables out of range");
  Polynomial out(nvars);
  for (const auto& [m, c] : p.terms()) {
    Monomial e(nvars, 0);
    for (int i = 0; i < p.nvars(); ++i) e[offset + i] = m[i];
    out.add_term(e, c);
  }
  return out;
}

// JSON: {"nvars": n, "terms": [{"exp": [...], "coef": c}, ...]}

inline void to_json(nlohmann::json& j, const Polynomial& p) {
  nlohmann::json terms = nlohmann::json::array();
  for (const auto& [m, c] : p.terms()) terms.push_back({{"exp", m}, {"coef", c}});
  j = {{"nvars", p.nvars()}, {"terms", terms}};
}

inline void from_json(const nlohmann::json& j, Polynomial& p) {
  if (!j.is_object() || !j.contains("nvars") || !j.contains("terms"))
    throw std::invalid_argument("polynomial JSON needs \"nvars\" and \"terms\"");
  const int n = j.at("nvars").get<int>();
  Polynomial out(n);
  for (const auto& t : j.at("terms")) {
    auto e = t.at("exp").get<Monomial>();
    if (static_cast<int>(e.size()) != n)
      throw std::invalid_argument("polynomial JSON: exponent length != nvars");
    out.add_term(e, t.at("coef").get<double>());
  }
  p = std::move(out);
}

}  // namespace rampc

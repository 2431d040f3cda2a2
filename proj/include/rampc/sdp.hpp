#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <tuple>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <json.hpp>

namespace rampc {

/// Coefficient on entry (row, col) of a Gram block. For row != col the
/// coefficient multiplies X(row, col) once (X is symmetric).
struct GramEntry {
  int block = 0;
  int row = 0;
  int col = 0;
  double coef = 0.0;
};

/// Linear functional over all Gram entries and free scalar variables.
struct LinearForm {
  std::vector<GramEntry> gram;
  std::vector<std::pair<int, double>> free;

  void add_gram(int block, int row, int col, double coef) {
    if (row > col) std::swap(row, col);
    gram.push_back({block, row, col, coef});
  }
  void add_free(int index, double coef) { free.emplace_back(index, coef); }
  bool empty() const { return gram.empty() && free.empty(); }
};

/**
 * Semidefinite program in the form
 *
 *   minimize    <objective>(X, z)
 *   subject to  lhs_i(X, z) = rhs_i,   X_k PSD for every block k,  z free.
 */
struct SdpProblem {
  struct Equality {
    LinearForm lhs;
    double rhs = 0.0;
  };

  std::vector<int> block_dims;
  int free_vars = 0;
  std::vector<Equality> equalities;
  LinearForm objective;

  int add_block(int dim) {
    if (dim < 1) throw std::invalid_argument("SdpProblem::add_block: dimension must be >= 1");
    block_dims.push_back(dim);
    return static_cast<int>(block_dims.size()) - 1;
  }
  int add_free_vars(int count) {
    const int first = free_vars;
    free_vars += count;
    return first;
  }

  void validate() const {
    auto check_form = [&](const LinearForm& f, const std::string& where) {
      for (const auto& e : f.gram) {
        if (e.block < 0 || e.block >= static_cast<int>(block_dims.size()))
          throw std::invalid_argument(where + ": undeclared block " + std::to_string(e.block));
        const int n = block_dims[e.block];
        if (e.row < 0 || e.col < 0 || e.row >= n || e.col >= n)
          throw std::invalid_argument(where + ": Gram index out of range");
        if (!std::isfinite(e.coef)) throw std::invalid_argument(where + ": non-finite coefficient");
      }
      for (const auto& [k, c] : f.free) {
        if (k < 0 || k >= free_vars) throw std::invalid_argument(where + ": undeclared free variable");
        if (!std::isfinite(c)) throw std::invalid_argument(where + ": non-finite coefficient");
      }
    };
    for (int d : block_dims)
      if (d < 1) throw std::invalid_argument("SdpProblem: block dimension must be >= 1");
    for (std::size_t i = 0; i < equalities.size(); ++i) {
      check_form(equalities[i].lhs, "equality " + std::to_string(i));
      if (!std::isfinite(equalities[i].rhs)) throw std::invalid_argument("SdpProblem: non-finite rhs");
    }
    check_form(objective, "objective");
  }
};

enum class SdpStatus { Feasible, Infeasible, Unbounded, MaxIter, NumericalBreakdown };

inline const char* to_string(SdpStatus s) {
  switch (s) {
    case SdpStatus::Feasible: return "Feasible";
    case SdpStatus::Infeasible: return "Infeasible";
    case SdpStatus::Unbounded: return "Unbounded";
    case SdpStatus::MaxIter: return "MaxIter";
    case SdpStatus::NumericalBreakdown: return "NumericalBreakdown";
  }
  return "?";
}

struct SdpSolution {
  std::vector<Eigen::MatrixXd> gram_blocks;
  Eigen::VectorXd free_vars;
  /// Equality multipliers and dual slack blocks (C - A*y = S).
  Eigen::VectorXd dual;
  std::vector<Eigen::MatrixXd> dual_slacks;
  SdpStatus status = SdpStatus::MaxIter;
  double primal_residual = 0.0;  // max |lhs_i - rhs_i|
  double dual_residual = 0.0;    // max-abs entry of C - A*y - S and d - B'y
  double duality_gap = 0.0;      // |primal objective - dual objective|
  double kkt_residual = 0.0;     // max of the three above
  /// Gram blocks PSD and equalities met to 1e-7, whatever the dual side did.
  bool primal_feasible = false;
  double primal_objective = 0.0;
  double dual_objective = 0.0;
  int iterations = 0;
};

struct SdpOptions {
  double tol = 1e-8;
  /// Relative dual residual and gap at which a projection onto the equalities is attempted.
  double polish_tol = 1e-6;
  /// Absolute residual a polished solution must meet.
  double polish_accept = 1e-7;
  int max_iters = 200;
  bool verbose = false;
};

namespace detail {

/// Problem data in solver layout, with equality rows equilibrated.
struct ConicData {
  int m = 0;
  int p = 0;
  std::vector<int> dims;
  // Per-constraint Gram entries.
  std::vector<std::vector<GramEntry>> rows;
  // Per-block entries tagged with their constraint index.
  struct Tagged {
    int con;
    int r;
    int c;
    double coef;
  };
  std::vector<std::vector<Tagged>> by_block;
  Eigen::MatrixXd B;  // m x p
  Eigen::VectorXd b;
  std::vector<Eigen::MatrixXd> C;
  Eigen::VectorXd d;
  Eigen::VectorXd row_scale;  // equality i was divided by row_scale(i)
  double obj_scale = 1.0;     // objective was divided by obj_scale

  using Blocks = std::vector<Eigen::MatrixXd>;

  Blocks zeros() const {
    Blocks out;
    out.reserve(dims.size());
    for (int n : dims) out.push_back(Eigen::MatrixXd::Zero(n, n));
    return out;
  }
  Blocks identity() const {
    Blocks out;
    out.reserve(dims.size());
    for (int n : dims) out.push_back(Eigen::MatrixXd::Identity(n, n));
    return out;
  }

  Eigen::VectorXd apply_A(const Blocks& V) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(m);
    for (int i = 0; i < m; ++i) {
      double s = 0.0;
      for (const auto& e : rows[i]) s += e.coef * V[e.block](e.row, e.col);
      out(i) = s;
    }
    return out;
  }

  Blocks apply_At(const Eigen::VectorXd& y) const {
    Blocks out = zeros();
    for (int i = 0; i < m; ++i) {
      if (y(i) == 0.0) continue;
      for (const auto& e : rows[i]) {
        if (e.row == e.col) {
          out[e.block](e.row, e.row) += y(i) * e.coef;
        } else {
          const double h = 0.5 * y(i) * e.coef;
          out[e.block](e.row, e.col) += h;
          out[e.block](e.col, e.row) += h;
        }
      }
    }
    return out;
  }
};

inline double inner(const ConicData::Blocks& a, const ConicData::Blocks& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k].cwiseProduct(b[k]).sum();
  return s;
}

inline double max_abs(const ConicData::Blocks& a) {
  double s = 0.0;
  for (const auto& blk : a) s = std::max(s, blk.cwiseAbs().maxCoeff());
  return s;
}

inline void axpy(ConicData::Blocks& y, double a, const ConicData::Blocks& x) {
  for (std::size_t k = 0; k < y.size(); ++k) y[k] += a * x[k];
}

inline ConicData build_conic_data(const SdpProblem& prob) {
  ConicData data;
  data.m = static_cast<int>(prob.equalities.size());
  data.p = prob.free_vars;
  data.dims = prob.block_dims;
  data.rows.resize(data.m);
  data.B = Eigen::MatrixXd::Zero(data.m, data.p);
  data.b = Eigen::VectorXd::Zero(data.m);
  data.row_scale = Eigen::VectorXd::Ones(data.m);

  for (int i = 0; i < data.m; ++i) {
    const auto& eq = prob.equalities[i];
    // Merge duplicate entries so each (block,row,col) appears once per row.
    std::vector<GramEntry> entries = eq.lhs.gram;
    std::sort(entries.begin(), entries.end(), [](const GramEntry& a, const GramEntry& b) {
      return std::tie(a.block, a.row, a.col) < std::tie(b.block, b.row, b.col);
    });
    std::vector<GramEntry> merged;
    for (const auto& e : entries) {
      if (!merged.empty() && merged.back().block == e.block && merged.back().row == e.row &&
          merged.back().col == e.col) {
        merged.back().coef += e.coef;
      } else {
        merged.push_back(e);
      }
    }
    std::erase_if(merged, [](const GramEntry& e) { return e.coef == 0.0; });
    for (const auto& [k, c] : eq.lhs.free) data.B(i, k) += c;

    double norm2 = data.B.row(i).squaredNorm();
    for (const auto& e : merged) norm2 += e.coef * e.coef;
    const double scale = norm2 > 0.0 ? std::sqrt(norm2) : 1.0;
    data.row_scale(i) = scale;
    for (auto& e : merged) e.coef /= scale;
    data.B.row(i) /= scale;
    data.b(i) = eq.rhs / scale;
    data.rows[i] = std::move(merged);
  }

  data.by_block.resize(data.dims.size());
  for (int i = 0; i < data.m; ++i)
    for (const auto& e : data.rows[i]) data.by_block[e.block].push_back({i, e.row, e.col, e.coef});

  data.C = data.zeros();
  data.d = Eigen::VectorXd::Zero(data.p);
  for (const auto& e : prob.objective.gram) {
    if (e.row == e.col) {
      data.C[e.block](e.row, e.row) += e.coef;
    } else {
      data.C[e.block](e.row, e.col) += 0.5 * e.coef;
      data.C[e.block](e.col, e.row) += 0.5 * e.coef;
    }
  }
  for (const auto& [k, c] : prob.objective.free) data.d(k) += c;
  double cmax = data.p > 0 ? data.d.cwiseAbs().maxCoeff() : 0.0;
  if (!data.C.empty()) cmax = std::max(cmax, max_abs(data.C));
  data.obj_scale = cmax > 0.0 ? cmax : 1.0;
  for (auto& c : data.C) c /= data.obj_scale;
  data.d /= data.obj_scale;
  return data;
}

/// Nesterov-Todd scaling of one block: X = R diag(lambda) R', S = R^{-T} diag(lambda) R^{-1}.
struct NtScaling {
  Eigen::MatrixXd R;
  Eigen::MatrixXd W;  // R R'
  Eigen::VectorXd lambda;
};

inline bool safe_cholesky(const Eigen::MatrixXd& A, Eigen::MatrixXd& L) {
  Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (A + A.transpose()));
  if (llt.info() != Eigen::Success) return false;
  L = llt.matrixL();
  return L.allFinite();
}

inline bool nt_scaling(const Eigen::MatrixXd& X, const Eigen::MatrixXd& S, NtScaling& out) {
  Eigen::MatrixXd Lx, Ls;
  if (!safe_cholesky(X, Lx) || !safe_cholesky(S, Ls)) return false;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Ls.transpose() * Lx, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::VectorXd sig = svd.singularValues();
  if (!(sig.minCoeff() > 0.0)) return false;
  out.lambda = sig;
  out.R = Lx * svd.matrixV() * sig.cwiseSqrt().cwiseInverse().asDiagonal();
  out.W = out.R * out.R.transpose();
  return out.R.allFinite();
}

/// Largest alpha with diag(lambda) + alpha*D PSD (infinity if unbounded).
inline double max_step(const Eigen::VectorXd& lambda, const Eigen::MatrixXd& D) {
  const Eigen::VectorXd is = lambda.cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd T = is.asDiagonal() * D * is.asDiagonal();
  T = 0.5 * (T + T.transpose());
  double emin;
  if (T.rows() == 1) {
    emin = T(0, 0);
  } else {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T, Eigen::EigenvaluesOnly);
    emin = es.eigenvalues()(0);
  }
  return emin >= 0.0 ? std::numeric_limits<double>::infinity() : -1.0 / emin;
}

/// Solves (L Y + Y L)/2 = T for diagonal L = diag(lambda).
inline Eigen::MatrixXd lyap_solve(const Eigen::VectorXd& lambda, const Eigen::MatrixXd& T) {
  const auto n = lambda.size();
  Eigen::MatrixXd Y(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) Y(i, j) = 2.0 * T(i, j) / (lambda(i) + lambda(j));
  return Y;
}

}  // namespace detail

/**
 * Primal-dual interior-point method on the homogeneous self-dual embedding.
 *
 * Nesterov-Todd scaling per block, Mehrotra predictor-corrector, and a dense
 * bordered Schur-complement system carrying the free variables and the
 * homogenizing variable. Deterministic for identical input.
 */
inline SdpSolution solve_sdp(const SdpProblem& prob, const SdpOptions& opts = {}) {
  using detail::ConicData;
  using Blocks = ConicData::Blocks;
  prob.validate();

  const ConicData data = detail::build_conic_data(prob);
  const int m = data.m;
  const int p = data.p;
  const int nblocks = static_cast<int>(data.dims.size());
  int nu = 0;
  for (int n : data.dims) nu += n;

  Blocks X = data.identity();
  Blocks S = data.identity();
  Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(p);
  double tau = 1.0;
  double kappa = 1.0;

  const double bnorm = std::max(1.0, data.b.cwiseAbs().maxCoeff() * (m > 0 ? 1.0 : 0.0));
  double cnorm = data.p > 0 ? data.d.cwiseAbs().maxCoeff() : 0.0;
  if (nblocks > 0) cnorm = std::max(cnorm, detail::max_abs(data.C));
  cnorm = std::max(1.0, cnorm);

  SdpSolution sol;
  sol.status = SdpStatus::MaxIter;

  std::vector<detail::NtScaling> nt(nblocks);

  auto unscaled_report = [&](SdpSolution& out) {
    // Undo the homogenization and the row/objective scaling.
    out.gram_blocks.resize(nblocks);
    out.dual_slacks.resize(nblocks);
    for (int k = 0; k < nblocks; ++k) {
      out.gram_blocks[k] = X[k] / tau;
      out.dual_slacks[k] = S[k] * (data.obj_scale / tau);
    }
    out.free_vars = z / tau;
    out.dual = Eigen::VectorXd(m);
    for (int i = 0; i < m; ++i) out.dual(i) = y(i) / tau * data.obj_scale / data.row_scale(i);

    double pres = 0.0;
    for (int i = 0; i < m; ++i) {
      const auto& eq = prob.equalities[i];
      double lhs = 0.0;
      for (const auto& e : eq.lhs.gram) lhs += e.coef * out.gram_blocks[e.block](e.row, e.col);
      for (const auto& [k, c] : eq.lhs.free) lhs += c * out.free_vars(k);
      pres = std::max(pres, std::abs(lhs - eq.rhs));
    }
    // Dual residual in the original scaling.
    Blocks Aty = data.apply_At(y / tau);
    double dres = 0.0;
    for (int k = 0; k < nblocks; ++k) {
      Eigen::MatrixXd r = (data.C[k] - Aty[k]) * data.obj_scale - out.dual_slacks[k];
      dres = std::max(dres, r.cwiseAbs().maxCoeff());
    }
    if (p > 0) {
      Eigen::VectorXd rf = (data.d - data.B.transpose() * (y / tau)) * data.obj_scale;
      dres = std::max(dres, rf.cwiseAbs().maxCoeff());
    }
    double pobj = 0.0;
    for (const auto& e : prob.objective.gram) pobj += e.coef * out.gram_blocks[e.block](e.row, e.col);
    for (const auto& [k, c] : prob.objective.free) pobj += c * out.free_vars(k);
    double dobj = 0.0;
    for (int i = 0; i < m; ++i) dobj += prob.equalities[i].rhs * out.dual(i);
    out.primal_residual = pres;
    out.dual_residual = dres;
    out.primal_objective = pobj;
    out.dual_objective = dobj;
    out.duality_gap = std::abs(pobj - dobj);
    out.kkt_residual = std::max({pres, dres, out.duality_gap});
  };

  // Minimum-norm correction of (X, z) onto A X + B z = b in the equilibrated rows.
  Eigen::MatrixXd AAt;
  auto try_polish = [&](const Blocks& Xh, const Eigen::VectorXd& zh, double th, SdpSolution& out) -> bool {
    if (m == 0) return false;
    if (AAt.size() == 0) {
      AAt = data.B * data.B.transpose();
      for (int k = 0; k < nblocks; ++k) {
        std::vector<std::vector<const ConicData::Tagged*>> cells;
        std::map<std::pair<int, int>, std::vector<std::pair<int, double>>> by_cell;
        for (const auto& t : data.by_block[k]) by_cell[{t.r, t.c}].emplace_back(t.con, t.coef);
        for (const auto& [cell, list] : by_cell) {
          // <A_i, A_j> counts off-diagonal cells twice with half weight each.
          const double w = cell.first == cell.second ? 1.0 : 0.5;
          for (const auto& [i, ci] : list)
            for (const auto& [j, cj] : list) AAt(i, j) += w * ci * cj;
        }
      }
    }
    Blocks Xp = Xh;
    for (auto& blk : Xp) blk /= th;
    Eigen::VectorXd zp = zh / th;
    for (int pass = 0; pass < 2; ++pass) {
      const Eigen::VectorXd r = data.b - data.apply_A(Xp) - data.B * zp;
      Eigen::MatrixXd G = AAt;
      G.diagonal().array() += 1e-13 * std::max(1.0, G.diagonal().maxCoeff());
      const Eigen::VectorXd u = G.ldlt().solve(r);
      if (!u.allFinite()) return false;
      detail::axpy(Xp, 1.0, data.apply_At(u));
      zp += data.B.transpose() * u;
    }
    for (const auto& blk : Xp) {
      if (blk.rows() == 1) {
        if (blk(0, 0) < 0.0) return false;
        continue;
      }
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(blk, Eigen::EigenvaluesOnly);
      if (es.eigenvalues()(0) < 0.0) return false;
    }
    // Report through the common path with tau = 1.
    Blocks Xs = X;
    Eigen::VectorXd zs = z;
    const double ts = tau;
    X = Xp;
    z = zp;
    const Eigen::VectorXd ys = y;
    y /= ts;
    for (auto& blk : S) blk /= ts;
    tau = 1.0;
    unscaled_report(out);
    X = Xs;
    z = zs;
    y = ys;
    for (auto& blk : S) blk *= ts;
    tau = ts;
    return out.primal_residual <= opts.polish_accept;
  };

  SdpSolution polished;
  bool have_polished = false;

  for (int iter = 0; iter < opts.max_iters; ++iter) {
    sol.iterations = iter;

    // Residuals of the homogeneous model.
    const Blocks AtY = data.apply_At(y);
    const Eigen::VectorXd AX = data.apply_A(X);
    Eigen::VectorXd r1 = data.b * tau - AX - data.B * z;
    Blocks r2 = data.C;
    for (int k = 0; k < nblocks; ++k) r2[k] = data.C[k] * tau - AtY[k] - S[k];
    Eigen::VectorXd r3 = data.d * tau - data.B.transpose() * y;
    const double cx = detail::inner(data.C, X) + data.d.dot(z);
    const double by = data.b.dot(y);
    const double r4 = kappa - by + cx;

    double xs = 0.0;
    for (int k = 0; k < nblocks; ++k) xs += X[k].cwiseProduct(S[k]).sum();
    const double mu = (xs + tau * kappa) / (nu + 1);

    // Convergence tests on the de-homogenized iterate.
    const double pres = (m > 0 ? r1.cwiseAbs().maxCoeff() : 0.0) / tau / bnorm;
    double dres = nblocks > 0 ? detail::max_abs(r2) : 0.0;
    if (p > 0) dres = std::max(dres, r3.cwiseAbs().maxCoeff());
    dres = dres / tau / cnorm;
    const double pobj = cx / tau;
    const double dobj = by / tau;
    const double gap = std::abs(pobj - dobj) / (1.0 + std::min(std::abs(pobj), std::abs(dobj)));
    const double comp = xs / (tau * tau) / (1.0 + std::abs(pobj));
    if (opts.verbose) {
      std::fprintf(stderr, "it %3d pres %.2e dres %.2e gap %.2e mu %.2e tau %.2e kap %.2e pobj %.6e\n",
                   iter, pres, dres, gap, mu, tau, kappa, pobj);
    }
    if (pres <= opts.tol && dres <= opts.tol && gap <= opts.tol && comp <= opts.tol) {
      sol.status = SdpStatus::Feasible;
      break;
    }
    // Near the optimum the Newton directions lose primal accuracy; try an
    // exact projection onto the affine set while the iterate is still interior.
    if (pres <= 1e-2 && dres <= opts.polish_tol && gap <= opts.polish_tol) {
      SdpSolution cand;
      if (try_polish(X, z, tau, cand)) {
        cand.iterations = iter;
        polished = std::move(cand);
        have_polished = true;
      }
    }
    // Infeasibility certificates.
    if (by > 0.0) {
      double ray = nblocks > 0 ? 0.0 : 0.0;
      for (int k = 0; k < nblocks; ++k) ray = std::max(ray, (AtY[k] + S[k]).cwiseAbs().maxCoeff());
      if (p > 0) ray = std::max(ray, (data.B.transpose() * y).cwiseAbs().maxCoeff());
      if (ray / by <= opts.tol && tau <= 1e-3 * kappa) {
        sol.status = SdpStatus::Infeasible;
        break;
      }
    }
    if (-cx > 0.0) {
      const double ray = m > 0 ? (AX + data.B * z).cwiseAbs().maxCoeff() : 0.0;
      if (ray / -cx <= opts.tol && tau <= 1e-3 * kappa) {
        sol.status = SdpStatus::Unbounded;
        break;
      }
    }

    // Scaling and the Schur complement M_ij = <A_i, W A_j W>.
    bool ok = true;
    for (int k = 0; k < nblocks && ok; ++k) ok = detail::nt_scaling(X[k], S[k], nt[k]);
    if (!ok) {
      sol.status = SdpStatus::NumericalBreakdown;
      break;
    }

    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(m, m);
    for (int k = 0; k < nblocks; ++k) {
      const auto& W = nt[k].W;
      const int n = data.dims[k];
      // Group this block's entries by constraint.
      std::vector<std::vector<const ConicData::Tagged*>> per_con(m);
      for (const auto& t : data.by_block[k]) per_con[t.con].push_back(&t);
      Eigen::MatrixXd T(n, n);
      for (int j = 0; j < m; ++j) {
        if (per_con[j].empty()) continue;
        T.setZero();
        for (const auto* t : per_con[j]) {
          if (t->r == t->c) {
            T.noalias() += t->coef * W.col(t->r) * W.col(t->r).transpose();
          } else {
            const double h = 0.5 * t->coef;
            T.noalias() += h * W.col(t->r) * W.col(t->c).transpose();
            T.noalias() += h * W.col(t->c) * W.col(t->r).transpose();
          }
        }
        for (const auto& t : data.by_block[k]) M(t.con, j) += t.coef * T(t.r, t.c);
      }
    }
    M = 0.5 * (M + M.transpose());

    Blocks WCW(nblocks);
    for (int k = 0; k < nblocks; ++k) WCW[k] = nt[k].W * data.C[k] * nt[k].W;
    const Eigen::VectorXd gA = data.apply_A(WCW);
    const double cWc = detail::inner(data.C, WCW);

    // Bordered system over (dy, dz, dtau).
    const int K = m + p + 1;
    Eigen::MatrixXd KKT = Eigen::MatrixXd::Zero(K, K);
    KKT.topLeftCorner(m, m) = M;
    KKT.block(0, m, m, p) = data.B;
    KKT.block(m, 0, p, m) = data.B.transpose();
    KKT.block(0, m + p, m, 1) = -(gA + data.b);
    KKT.block(m, m + p, p, 1) = -data.d;
    KKT.block(m + p, 0, 1, m) = (data.b - gA).transpose();
    KKT.block(m + p, m, 1, p) = -data.d.transpose();
    KKT(m + p, m + p) = cWc + kappa / tau;
    // Tiny regularization against rank-deficient equality rows.
    const double reg = 1e-14 * std::max(1.0, M.diagonal().cwiseAbs().maxCoeff());
    for (int i = 0; i < m; ++i) KKT(i, i) += reg;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(KKT);

    struct Direction {
      Blocks dX, dS, dXs, dSs;  // dXs/dSs are the scaled directions
      Eigen::VectorXd dy, dz;
      double dtau = 0.0, dkappa = 0.0;
    };

    auto solve_direction = [&](double eta, const std::vector<Eigen::MatrixXd>& H, double rtau,
                               Direction& dir) -> bool {
      Blocks RHR(nblocks), WrW(nblocks);
      for (int k = 0; k < nblocks; ++k) {
        RHR[k] = nt[k].R * H[k] * nt[k].R.transpose();
        WrW[k] = nt[k].W * r2[k] * nt[k].W;
      }
      Blocks tmp = RHR;
      detail::axpy(tmp, -eta, WrW);
      Eigen::VectorXd rhs(K);
      rhs.head(m) = eta * r1 - data.apply_A(tmp);
      rhs.segment(m, p) = eta * r3;
      rhs(m + p) = eta * r4 + detail::inner(data.C, RHR) - eta * detail::inner(WCW, r2) + rtau / tau;
      Eigen::VectorXd sol_v = lu.solve(rhs);
      // Two steps of iterative refinement.
      for (int ref = 0; ref < 2; ++ref) {
        Eigen::VectorXd res = rhs - KKT * sol_v;
        sol_v += lu.solve(res);
      }
      if (!sol_v.allFinite()) return false;
      dir.dy = sol_v.head(m);
      dir.dz = sol_v.segment(m, p);
      dir.dtau = sol_v(m + p);
      dir.dkappa = (rtau - kappa * dir.dtau) / tau;
      const Blocks Atdy = data.apply_At(dir.dy);
      dir.dS.resize(nblocks);
      dir.dX.resize(nblocks);
      dir.dSs.resize(nblocks);
      dir.dXs.resize(nblocks);
      for (int k = 0; k < nblocks; ++k) {
        dir.dS[k] = eta * r2[k] - Atdy[k] + data.C[k] * dir.dtau;
        dir.dSs[k] = nt[k].R.transpose() * dir.dS[k] * nt[k].R;
        dir.dXs[k] = H[k] - dir.dSs[k];
        dir.dX[k] = nt[k].R * dir.dXs[k] * nt[k].R.transpose();
      }
      return true;
    };

    auto step_length = [&](const Direction& dir) {
      double a = std::numeric_limits<double>::infinity();
      for (int k = 0; k < nblocks; ++k) {
        a = std::min(a, detail::max_step(nt[k].lambda, dir.dXs[k]));
        a = std::min(a, detail::max_step(nt[k].lambda, dir.dSs[k]));
      }
      if (dir.dtau < 0.0) a = std::min(a, -tau / dir.dtau);
      if (dir.dkappa < 0.0) a = std::min(a, -kappa / dir.dkappa);
      return a;
    };

    // Predictor.
    std::vector<Eigen::MatrixXd> H(nblocks);
    for (int k = 0; k < nblocks; ++k) H[k] = -Eigen::MatrixXd(nt[k].lambda.asDiagonal());
    Direction aff;
    if (!solve_direction(1.0, H, -tau * kappa, aff)) {
      sol.status = SdpStatus::NumericalBreakdown;
      break;
    }
    const double alpha_aff = std::min(1.0, step_length(aff));
    const double sigma = std::pow(1.0 - alpha_aff, 3);

    // Corrector.
    for (int k = 0; k < nblocks; ++k) {
      const auto& lam = nt[k].lambda;
      Eigen::MatrixXd corr = 0.5 * (aff.dXs[k] * aff.dSs[k] + aff.dSs[k] * aff.dXs[k]);
      Eigen::MatrixXd T = -corr;
      T.diagonal() += Eigen::VectorXd::Constant(lam.size(), sigma * mu) - lam.cwiseProduct(lam);
      H[k] = detail::lyap_solve(lam, T);
    }
    Direction dir;
    const double rtau = sigma * mu - tau * kappa - aff.dtau * aff.dkappa;
    if (!solve_direction(1.0 - sigma, H, rtau, dir)) {
      sol.status = SdpStatus::NumericalBreakdown;
      break;
    }
    double alpha = std::min(1.0, 0.99 * step_length(dir));
    if (!(alpha > 1e-14)) {
      sol.status = SdpStatus::NumericalBreakdown;
      break;
    }

    detail::axpy(X, alpha, dir.dX);
    detail::axpy(S, alpha, dir.dS);
    for (int k = 0; k < nblocks; ++k) {
      X[k] = 0.5 * (X[k] + X[k].transpose());
      S[k] = 0.5 * (S[k] + S[k].transpose());
    }
    y += alpha * dir.dy;
    z += alpha * dir.dz;
    tau += alpha * dir.dtau;
    kappa += alpha * dir.dkappa;
    sol.iterations = iter + 1;
  }

  unscaled_report(sol);
  if (sol.status == SdpStatus::MaxIter || sol.status == SdpStatus::NumericalBreakdown) {
    // Accept a stalled iterate that already meets the feasibility contract.
    bool psd = true;
    for (const auto& blk : sol.gram_blocks) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(blk, Eigen::EigenvaluesOnly);
      if (es.eigenvalues()(0) < -1e-8) psd = false;
    }
    if (psd && sol.primal_residual <= 1e-7 && sol.dual_residual <= 1e-7 && sol.duality_gap <= 1e-6)
      sol.status = SdpStatus::Feasible;
    sol.primal_feasible = psd && sol.primal_residual <= 1e-7;
    if (sol.status != SdpStatus::Feasible && have_polished) {
      const SdpStatus stalled = sol.status;
      const int iters = sol.iterations;
      sol = std::move(polished);
      sol.iterations = iters;
      sol.primal_feasible = true;
      sol.status = sol.dual_residual <= 1e-7 && sol.duality_gap <= 1e-6 ? SdpStatus::Feasible : stalled;
    }
  } else if (sol.status == SdpStatus::Feasible) {
    sol.primal_feasible = true;
  }
  return sol;
}

/// Debug dump of an SdpProblem (one object per equality, see README).
inline nlohmann::json sdp_to_json(const SdpProblem& prob) {
  auto form = [](const LinearForm& f) {
    nlohmann::json g = nlohmann::json::array();
    for (const auto& e : f.gram) g.push_back({e.block, e.row, e.col, e.coef});
    nlohmann::json fr = nlohmann::json::array();
    for (const auto& [k, c] : f.free) fr.push_back({k, c});
    return nlohmann::json{{"gram", g}, {"free", fr}};
  };
  nlohmann::json eqs = nlohmann::json::array();
  for (const auto& eq : prob.equalities) eqs.push_back({{"lhs", form(eq.lhs)}, {"rhs", eq.rhs}});
  return {{"block_dims", prob.block_dims},
          {"free_vars", prob.free_vars},
          {"equalities", eqs},
          {"objective", form(prob.objective)}};
}

}  // namespace rampc

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace racestack {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Fixed COO sparsity of a constraint Jacobian. Values are written by the
/// callback in the same order on every call.
struct SparsityPattern {
  std::vector<int> row, col;
  std::size_t nnz() const { return row.size(); }
};

/// Smooth constrained problem min f(x) s.t. c_eq(x) = 0, c_ineq(x) <= 0,
/// lo <= x <= hi. Callbacks:
///   cost(x, grad):   returns f; fills grad (size n) unless null.
///   eq/ineq(x, c, jac): fills residuals; fills pattern-ordered Jacobian
///                       values unless jac is null.
struct NlpProblem {
  int n = 0;
  int m_eq = 0;
  int m_ineq = 0;
  std::function<double(const double*, double*)> cost;
  std::function<void(const double*, double*, double*)> eq;
  std::function<void(const double*, double*, double*)> ineq;
  SparsityPattern eq_pat, ineq_pat;
  std::vector<double> lo, hi;     // empty means unbounded
  std::vector<double> scale;      // per-variable scaling, empty means 1
  // Optional rough diagonal of the cost Hessian (x-space units). Improves the
  // inner solver's Newton model; correctness does not depend on it.
  std::vector<double> cost_curvature;
};

struct NlpOptions {
  double tol_kkt = 1e-4;
  double tol_eq = 1e-4;
  double tol_ineq = 1e-4;
  int max_outer = 50;
  int max_inner = 600;       // L-BFGS iterations per outer iteration
  double rho0 = 10.0;
  double rho_growth = 10.0;
  double rho_max = 1e8;
  int lbfgs_mem = 20;
  double wolfe_c1 = 1e-4;
  double wolfe_c2 = 0.9;
  int max_linesearch = 40;
  bool verbose = false;
};

enum class NlpStatus { success, max_iter, diverged };

struct NlpSolution {
  std::vector<double> x;
  std::vector<double> lambda_eq;   // equality multipliers
  std::vector<double> mu_ineq;     // inequality multipliers (>= 0)
  double cost = 0.0;
  // Residuals recomputed from the callbacks at x, not taken from the loop.
  double kkt = 0.0;       // scaled stationarity infinity-norm
  double eq_inf = 0.0;    // equality residual infinity-norm
  double ineq_inf = 0.0;  // inequality violation infinity-norm (incl. bounds)
  int outer_iters = 0;
  int inner_iters = 0;
  int evals = 0;
  NlpStatus status = NlpStatus::max_iter;
  std::string message;
  std::vector<double> outer_infeasibility;  // per outer iteration
};

struct SolverError : std::runtime_error {
  SolverError(const std::string& what, NlpSolution sol)
      : std::runtime_error(what), solution(std::move(sol)) {}
  NlpSolution solution;
};

namespace detail {

struct NonFiniteSignal {
  int index;  // offending callback output index (-1 for cost)
};

class AugLag {
 public:
  AugLag(const NlpProblem& p, const NlpOptions& o) : p_(p), o_(o) {
    n_ = p.n;
    scale_.assign(n_, 1.0);
    if (!p.scale.empty()) scale_ = p.scale;
    lo_.assign(n_, -kInf);
    hi_.assign(n_, kInf);
    if (!p.lo.empty()) lo_ = p.lo;
    if (!p.hi.empty()) hi_ = p.hi;
    base_diag_.assign(n_, 1.0);
    if (!p.cost_curvature.empty())
      for (int i = 0; i < n_; ++i)
        base_diag_[i] = std::max(0.1, p.cost_curvature[i] * scale_[i] * scale_[i]);
    lambda_.assign(p.m_eq, 0.0);
    mu_.assign(p.m_ineq, 0.0);
    mu_lo_.assign(n_, 0.0);
    mu_hi_.assign(n_, 0.0);
    x_.resize(n_);
    gx_.resize(n_);
    c_eq_.resize(p.m_eq);
    c_in_.resize(p.m_ineq);
    jac_eq_.resize(p.eq_pat.nnz());
    jac_in_.resize(p.ineq_pat.nnz());
    rho_ = o.rho0;
  }

  // Merit value and gradient in scaled coordinates.
  double eval(const std::vector<double>& y, std::vector<double>& grad) {
    ++evals_;
    for (int i = 0; i < n_; ++i) x_[i] = y[i] * scale_[i];

    double m = p_.cost(x_.data(), gx_.data());
    if (!std::isfinite(m)) throw NonFiniteSignal{-1};

    if (p_.m_eq > 0) {
      p_.eq(x_.data(), c_eq_.data(), jac_eq_.data());
      for (int j = 0; j < p_.m_eq; ++j) {
        if (!std::isfinite(c_eq_[j])) throw NonFiniteSignal{j};
        m += lambda_[j] * c_eq_[j] + 0.5 * rho_ * c_eq_[j] * c_eq_[j];
      }
      for (std::size_t k = 0; k < p_.eq_pat.nnz(); ++k) {
        const int r = p_.eq_pat.row[k], c = p_.eq_pat.col[k];
        gx_[c] += jac_eq_[k] * (lambda_[r] + rho_ * c_eq_[r]);
      }
    }
    if (p_.m_ineq > 0) {
      p_.ineq(x_.data(), c_in_.data(), jac_in_.data());
      for (int j = 0; j < p_.m_ineq; ++j) {
        if (!std::isfinite(c_in_[j])) throw NonFiniteSignal{j};
        const double t = mu_[j] + rho_ * c_in_[j];
        m += (t > 0.0 ? t * t - mu_[j] * mu_[j] : -mu_[j] * mu_[j]) / (2.0 * rho_);
      }
      for (std::size_t k = 0; k < p_.ineq_pat.nnz(); ++k) {
        const int r = p_.ineq_pat.row[k], c = p_.ineq_pat.col[k];
        const double t = mu_[r] + rho_ * c_in_[r];
        if (t > 0.0) gx_[c] += jac_in_[k] * t;
      }
    }

    grad.assign(n_, 0.0);
    for (int i = 0; i < n_; ++i) grad[i] = gx_[i] * scale_[i];

    // Variable bounds as scaled hinge terms.
    for (int i = 0; i < n_; ++i) {
      if (hi_[i] < kInf) {
        const double g = y[i] - hi_[i] / scale_[i];
        const double t = mu_hi_[i] + rho_ * g;
        m += (t > 0.0 ? t * t - mu_hi_[i] * mu_hi_[i] : -mu_hi_[i] * mu_hi_[i]) /
             (2.0 * rho_);
        if (t > 0.0) grad[i] += t;
      }
      if (lo_[i] > -kInf) {
        const double g = lo_[i] / scale_[i] - y[i];
        const double t = mu_lo_[i] + rho_ * g;
        m += (t > 0.0 ? t * t - mu_lo_[i] * mu_lo_[i] : -mu_lo_[i] * mu_lo_[i]) /
             (2.0 * rho_);
        if (t > 0.0) grad[i] -= t;
      }
    }
    if (!std::isfinite(m)) throw NonFiniteSignal{-1};
    return m;
  }

  // Constraint violations at the current buffered evaluation point.
  double violation(const std::vector<double>& y) {
    double v = 0.0;
    for (int i = 0; i < n_; ++i) x_[i] = y[i] * scale_[i];
    if (p_.m_eq > 0) {
      p_.eq(x_.data(), c_eq_.data(), nullptr);
      for (double c : c_eq_) v = std::max(v, std::abs(c));
    }
    if (p_.m_ineq > 0) {
      p_.ineq(x_.data(), c_in_.data(), nullptr);
      for (double c : c_in_) v = std::max(v, c);
    }
    for (int i = 0; i < n_; ++i) {
      if (hi_[i] < kInf) v = std::max(v, (y[i] * scale_[i] - hi_[i]) / std::max(1.0, scale_[i]));
      if (lo_[i] > -kInf) v = std::max(v, (lo_[i] - y[i] * scale_[i]) / std::max(1.0, scale_[i]));
    }
    return v;
  }

  // Gauss-Newton curvature of the AL merit at the last evaluated point, in
  // scaled coordinates: D + rho J_eq' J_eq + rho J_act' J_act + active bound
  // hinges. The unit diagonal stands in for the cost curvature and keeps the
  // model SPD. Uses the Jacobian buffers refreshed by the last eval().
  std::vector<double> curvature_diag(const std::vector<double>& y) const {
    std::vector<double> d = base_diag_;
    for (std::size_t k = 0; k < p_.eq_pat.nnz(); ++k) {
      const int c = p_.eq_pat.col[k];
      const double j = jac_eq_[k] * scale_[c];
      d[c] += rho_ * j * j;
    }
    for (std::size_t k = 0; k < p_.ineq_pat.nnz(); ++k) {
      const int r = p_.ineq_pat.row[k], c = p_.ineq_pat.col[k];
      if (mu_[r] + rho_ * c_in_[r] > 0.0) {
        const double j = jac_in_[k] * scale_[c];
        d[c] += rho_ * j * j;
      }
    }
    for (int i = 0; i < n_; ++i) {
      if (hi_[i] < kInf && mu_hi_[i] + rho_ * (y[i] - hi_[i] / scale_[i]) > 0.0)
        d[i] += rho_;
      if (lo_[i] > -kInf && mu_lo_[i] + rho_ * (lo_[i] / scale_[i] - y[i]) > 0.0)
        d[i] += rho_;
    }
    return d;
  }

  // Matrix-free Gauss-Newton Hessian-vector product at the last evaluated
  // point (same model as curvature_diag, off-diagonals included).
  void gn_matvec(const std::vector<double>& y, const std::vector<double>& v,
                 std::vector<double>& out) const {
    out.assign(n_, 0.0);
    for (int i = 0; i < n_; ++i) out[i] = base_diag_[i] * v[i];
    if (p_.m_eq > 0) {
      tmp_eq_.assign(p_.m_eq, 0.0);
      for (std::size_t k = 0; k < p_.eq_pat.nnz(); ++k)
        tmp_eq_[p_.eq_pat.row[k]] += jac_eq_[k] * scale_[p_.eq_pat.col[k]] * v[p_.eq_pat.col[k]];
      for (std::size_t k = 0; k < p_.eq_pat.nnz(); ++k)
        out[p_.eq_pat.col[k]] += rho_ * jac_eq_[k] * scale_[p_.eq_pat.col[k]] * tmp_eq_[p_.eq_pat.row[k]];
    }
    if (p_.m_ineq > 0) {
      tmp_in_.assign(p_.m_ineq, 0.0);
      for (std::size_t k = 0; k < p_.ineq_pat.nnz(); ++k) {
        const int r = p_.ineq_pat.row[k];
        if (mu_[r] + rho_ * c_in_[r] > 0.0)
          tmp_in_[r] += jac_in_[k] * scale_[p_.ineq_pat.col[k]] * v[p_.ineq_pat.col[k]];
      }
      for (std::size_t k = 0; k < p_.ineq_pat.nnz(); ++k) {
        const int r = p_.ineq_pat.row[k];
        if (mu_[r] + rho_ * c_in_[r] > 0.0)
          out[p_.ineq_pat.col[k]] += rho_ * jac_in_[k] * scale_[p_.ineq_pat.col[k]] * tmp_in_[r];
      }
    }
    for (int i = 0; i < n_; ++i) {
      if (hi_[i] < kInf && mu_hi_[i] + rho_ * (y[i] - hi_[i] / scale_[i]) > 0.0)
        out[i] += rho_ * v[i];
      if (lo_[i] > -kInf && mu_lo_[i] + rho_ * (lo_[i] / scale_[i] - y[i]) > 0.0)
        out[i] += rho_ * v[i];
    }
  }

  void update_multipliers() {
    for (int j = 0; j < p_.m_eq; ++j) lambda_[j] += rho_ * c_eq_[j];
    for (int j = 0; j < p_.m_ineq; ++j)
      mu_[j] = std::max(0.0, mu_[j] + rho_ * c_in_[j]);
    // Bound hinges live in scaled coordinates: g = (x - hi)/scale.
    for (int i = 0; i < n_; ++i) {
      if (hi_[i] < kInf)
        mu_hi_[i] = std::max(0.0, mu_hi_[i] + rho_ * (x_[i] - hi_[i]) / scale_[i]);
      if (lo_[i] > -kInf)
        mu_lo_[i] = std::max(0.0, mu_lo_[i] + rho_ * (lo_[i] - x_[i]) / scale_[i]);
    }
  }

  const NlpProblem& p_;
  const NlpOptions& o_;
  int n_ = 0;
  double rho_ = 0.0;
  int evals_ = 0;
  std::vector<double> scale_, lo_, hi_;
  std::vector<double> lambda_, mu_, mu_lo_, mu_hi_;
  std::vector<double> x_, gx_, c_eq_, c_in_, jac_eq_, jac_in_;
  std::vector<double> base_diag_;
  mutable std::vector<double> tmp_eq_, tmp_in_;
};

inline double inf_norm(const std::vector<double>& v) {
  double m = 0.0;
  for (double e : v) m = std::max(m, std::abs(e));
  return m;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Damped (Gauss-)Newton inner solver: the step solves the SPD model
/// B = I + rho J'J (+ active hinges) with diagonal-preconditioned CG, then a
/// strong-Wolfe line search damps it. Falls back to preconditioned steepest
/// descent if the model direction fails to descend.
class InnerSolver {
 public:
  InnerSolver(AugLag& al, const NlpOptions& o) : al_(al), o_(o) {}

  int minimize(std::vector<double>& y, double grad_tol, int max_iter) {
    const int n = static_cast<int>(y.size());
    std::vector<double> g(n), y_new(n), g_new(n), p(n);
    double f = al_.eval(y, g);
    int iter = 0;
    for (; iter < max_iter; ++iter) {
      if (inf_norm(g) <= grad_tol) break;
      const std::vector<double> diag = al_.curvature_diag(y);
      pcg_direction(y, g, diag, p);
      double dphi0 = dot(g, p);
      if (!(dphi0 < 0.0)) {
        for (int i = 0; i < n; ++i) p[i] = -g[i] / diag[i];
        dphi0 = dot(g, p);
        if (!(dphi0 < 0.0)) break;
      }
      double f_new = f;
      double a = line_search(y, p, f, dphi0, 1.0, y_new, g_new, f_new);
      if (a <= 0.0) a = backtrack(y, p, f, dphi0, y_new, g_new, f_new);
      if (a <= 0.0) break;
      y = y_new;
      g = g_new;
      f = f_new;
    }
    return iter;
  }

  // Plain Armijo backtracking as a last resort when the Wolfe search fails
  // (extreme penalty scales can defeat the interpolation-based bracketing).
  double backtrack(const std::vector<double>& y0, const std::vector<double>& p,
                   double phi0, double dphi0, std::vector<double>& y_out,
                   std::vector<double>& g_out, double& f_out) {
    double a = 1.0;
    for (int it = 0; it < 60; ++it) {
      double dphi;
      const double fa = phi(y0, p, a, y_out, g_out, dphi);
      if (fa <= phi0 + o_.wolfe_c1 * a * dphi0) {
        f_out = fa;
        return a;
      }
      a *= 0.5;
    }
    return 0.0;
  }

 private:
  // Preconditioned CG on B p = -g with an Eisenstat-Walker style forcing
  // term; B is SPD by construction so negative curvature cannot occur.
  void pcg_direction(const std::vector<double>& y, const std::vector<double>& g,
                     const std::vector<double>& diag, std::vector<double>& p) {
    const int n = static_cast<int>(g.size());
    p.assign(n, 0.0);
    std::vector<double> r(n), z(n), d(n), bd(n);
    for (int i = 0; i < n; ++i) r[i] = -g[i];
    const double rnorm0 = std::sqrt(dot(r, r));
    if (rnorm0 == 0.0) return;
    const double tol = std::min(0.5, std::sqrt(rnorm0)) * rnorm0 * 0.1;
    for (int i = 0; i < n; ++i) z[i] = r[i] / diag[i];
    d = z;
    double rz = dot(r, z);
    for (int it = 0; it < 200; ++it) {
      al_.gn_matvec(y, d, bd);
      const double dbd = dot(d, bd);
      if (!(dbd > 0.0)) break;
      const double alpha = rz / dbd;
      for (int i = 0; i < n; ++i) {
        p[i] += alpha * d[i];
        r[i] -= alpha * bd[i];
      }
      if (std::sqrt(dot(r, r)) <= tol) break;
      for (int i = 0; i < n; ++i) z[i] = r[i] / diag[i];
      const double rz_new = dot(r, z);
      const double beta = rz_new / rz;
      rz = rz_new;
      for (int i = 0; i < n; ++i) d[i] = z[i] + beta * d[i];
    }
  }

  double phi(const std::vector<double>& y0, const std::vector<double>& p, double a,
             std::vector<double>& y_out, std::vector<double>& g_out, double& dphi) {
    for (std::size_t i = 0; i < y0.size(); ++i) y_out[i] = y0[i] + a * p[i];
    const double f = al_.eval(y_out, g_out);
    dphi = dot(g_out, p);
    return f;
  }

  // Strong Wolfe bracketing + zoom (Nocedal & Wright alg. 3.5/3.6).
  double line_search(const std::vector<double>& y0, const std::vector<double>& p,
                     double phi0, double dphi0, double a1, std::vector<double>& y_out,
                     std::vector<double>& g_out, double& f_out) {
    const double c1 = o_.wolfe_c1, c2 = o_.wolfe_c2;
    double a_prev = 0.0, phi_prev = phi0, dphi_prev = dphi0;
    double a = a1;
    int evals = 0;

    auto zoom = [&](double alo, double philo, double dphilo, double ahi, double phihi) {
      double dphi_hi_unused = 0.0;
      (void)dphi_hi_unused;
      for (int it = 0; it < o_.max_linesearch; ++it) {
        // Quadratic interpolation with bisection fallback.
        double am = 0.5 * (alo + ahi);
        const double denom = philo - phihi + dphilo * (ahi - alo);
        if (std::abs(denom) > 1e-30) {
          const double cand = alo + 0.5 * dphilo * (ahi - alo) * (ahi - alo) /
                                        (philo - phihi + dphilo * (ahi - alo));
          if (std::isfinite(cand) && cand > std::min(alo, ahi) + 1e-12 &&
              cand < std::max(alo, ahi) - 1e-12)
            am = cand;
        }
        double dphim;
        const double phim = phi(y0, p, am, y_out, g_out, dphim);
        if (phim > phi0 + c1 * am * dphi0 || phim >= philo) {
          ahi = am;
          phihi = phim;
        } else {
          if (std::abs(dphim) <= -c2 * dphi0) {
            f_out = phim;
            return am;
          }
          if (dphim * (ahi - alo) >= 0.0) {
            ahi = alo;
            phihi = philo;
          }
          alo = am;
          philo = phim;
          dphilo = dphim;
        }
        if (std::abs(ahi - alo) < 1e-16) break;
      }
      // Fall back to the best sufficient-decrease point found.
      double dphif;
      f_out = phi(y0, p, alo, y_out, g_out, dphif);
      return alo > 0.0 && f_out <= phi0 + c1 * alo * dphi0 ? alo : 0.0;
    };

    while (evals++ < o_.max_linesearch) {
      double dphi_a;
      const double phi_a = phi(y0, p, a, y_out, g_out, dphi_a);
      if (phi_a > phi0 + c1 * a * dphi0 || (evals > 1 && phi_a >= phi_prev))
        return zoom(a_prev, phi_prev, dphi_prev, a, phi_a);
      if (std::abs(dphi_a) <= -c2 * dphi0) {
        f_out = phi_a;
        return a;
      }
      if (dphi_a >= 0.0) return zoom(a, phi_a, dphi_a, a_prev, phi_prev);
      a_prev = a;
      phi_prev = phi_a;
      dphi_prev = dphi_a;
      a *= 2.0;
      if (a > 1e12) break;
    }
    return 0.0;
  }

  AugLag& al_;
  const NlpOptions& o_;
};

}  // namespace detail

/// Recomputes solution residuals from the callbacks (never from loop state).
inline void recompute_residuals(const NlpProblem& p, NlpSolution& sol) {
  const int n = p.n;
  std::vector<double> grad(n, 0.0);
  sol.cost = p.cost(sol.x.data(), grad.data());

  std::vector<double> scale(n, 1.0);
  if (!p.scale.empty()) scale = p.scale;

  sol.eq_inf = 0.0;
  if (p.m_eq > 0) {
    std::vector<double> c(p.m_eq), jac(p.eq_pat.nnz());
    p.eq(sol.x.data(), c.data(), jac.data());
    for (double e : c) sol.eq_inf = std::max(sol.eq_inf, std::abs(e));
    for (std::size_t k = 0; k < p.eq_pat.nnz(); ++k)
      grad[p.eq_pat.col[k]] += jac[k] * sol.lambda_eq[p.eq_pat.row[k]];
  }
  sol.ineq_inf = 0.0;
  if (p.m_ineq > 0) {
    std::vector<double> c(p.m_ineq), jac(p.ineq_pat.nnz());
    p.ineq(sol.x.data(), c.data(), jac.data());
    for (double e : c) sol.ineq_inf = std::max(sol.ineq_inf, e);
    for (std::size_t k = 0; k < p.ineq_pat.nnz(); ++k)
      grad[p.ineq_pat.col[k]] += jac[k] * sol.mu_ineq[p.ineq_pat.row[k]];
  }

  sol.kkt = 0.0;
  for (int i = 0; i < n; ++i) {
    double gi = grad[i] * scale[i];
    // Project out gradient components pointing into active bounds.
    const double lo = p.lo.empty() ? -kInf : p.lo[i];
    const double hi = p.hi.empty() ? kInf : p.hi[i];
    const double tol = 1e-8 * std::max(1.0, std::abs(sol.x[i]));
    if (hi < kInf && sol.x[i] >= hi - tol && gi < 0.0) gi = 0.0;
    if (lo > -kInf && sol.x[i] <= lo + tol && gi > 0.0) gi = 0.0;
    sol.kkt = std::max(sol.kkt, std::abs(gi));
    if (hi < kInf) sol.ineq_inf = std::max(sol.ineq_inf, (sol.x[i] - hi) / std::max(1.0, scale[i]));
    if (lo > -kInf) sol.ineq_inf = std::max(sol.ineq_inf, (lo - sol.x[i]) / std::max(1.0, scale[i]));
  }
}

/// Augmented Lagrangian outer loop: equality multipliers, squared-hinge
/// inequality terms, L-BFGS inner minimization, x10 penalty growth capped at
/// rho_max, and a penalty-escalation fallback when infeasibility stalls.
inline NlpSolution solve(const NlpProblem& p, const std::vector<double>& x0,
                         const NlpOptions& o = {}) {
  if (static_cast<int>(x0.size()) != p.n)
    throw std::invalid_argument("initial guess dimension mismatch");

  detail::AugLag al(p, o);
  detail::InnerSolver inner(al, o);

  std::vector<double> y(p.n);
  for (int i = 0; i < p.n; ++i) y[i] = x0[i] / al.scale_[i];

  NlpSolution sol;
  sol.x.assign(p.n, 0.0);
  sol.lambda_eq.assign(p.m_eq, 0.0);
  sol.mu_ineq.assign(p.m_ineq, 0.0);

  auto finish = [&](NlpStatus st, const std::string& msg) {
    for (int i = 0; i < p.n; ++i) sol.x[i] = y[i] * al.scale_[i];
    sol.lambda_eq = al.lambda_;
    sol.mu_ineq = al.mu_;
    sol.status = st;
    sol.message = msg;
    sol.evals = al.evals_;
    recompute_residuals(p, sol);
    return sol;
  };

  double prev_viol = kInf;
  int stall_count = 0;
  const double tol_viol = std::max(o.tol_eq, o.tol_ineq);

  try {
    for (int outer = 0; outer < o.max_outer; ++outer) {
      sol.outer_iters = outer + 1;
      // Forcing sequence: solve the subproblem only as tightly as the current
      // infeasibility warrants, down to the target stationarity.
      const double omega =
          std::clamp(prev_viol == kInf ? 0.1 : prev_viol, 0.3 * o.tol_kkt, 0.1);
      sol.inner_iters += inner.minimize(y, omega, o.max_inner);

      std::vector<double> g(p.n);
      const double merit_grad = [&] {
        al.eval(y, g);
        return detail::inf_norm(g);
      }();
      const double viol = al.violation(y);
      sol.outer_infeasibility.push_back(viol);

      if (o.verbose)
        std::fprintf(stderr, "AL outer %d: viol %.3e grad %.3e rho %.1e inner %d\n",
                     outer, viol, merit_grad, al.rho_, sol.inner_iters);

      // First-order multiplier update whenever the iterate is in a sane
      // region. Once infeasibility sits far below tolerance the update would
      // only perturb the merit by O(rho c), so hold the multipliers fixed and
      // let the inner solver polish stationarity.
      if (viol <= std::max(1.0, tol_viol) && viol > 0.01 * tol_viol)
        al.update_multipliers();
      if (viol > 0.25 * prev_viol && viol > tol_viol)
        al.rho_ = std::min(al.rho_ * o.rho_growth, o.rho_max);

      const double eq_v = [&] {
        double v = 0.0;
        for (double c : al.c_eq_) v = std::max(v, std::abs(c));
        return v;
      }();
      if (merit_grad <= o.tol_kkt && eq_v <= o.tol_eq && viol <= tol_viol)
        return finish(NlpStatus::success, "converged");

      // Stall: infeasibility reduction below 1% over 3 outer iterations.
      if (viol > 0.99 * prev_viol && viol > tol_viol) {
        if (++stall_count >= 3) {
          std::fill(al.mu_.begin(), al.mu_.end(), 0.0);
          std::fill(al.mu_lo_.begin(), al.mu_lo_.end(), 0.0);
          std::fill(al.mu_hi_.begin(), al.mu_hi_.end(), 0.0);
          al.rho_ = std::min(al.rho_ * 100.0, o.rho_max);
          stall_count = 0;
        }
      } else {
        stall_count = 0;
      }
      prev_viol = viol;
    }
  } catch (const detail::NonFiniteSignal& sig) {
    return finish(NlpStatus::diverged,
                  "non-finite callback value at index " + std::to_string(sig.index));
  }
  return finish(NlpStatus::max_iter, "outer iteration limit reached");
}

/// Central finite-difference check of the cost gradient and constraint
/// Jacobians. Flags entries whose error exceeds tol against a scale-aware
/// denominator.
struct DerivativeReport {
  struct Entry {
    char kind;  // 'c' cost gradient, 'e' equality jac, 'i' inequality jac
    int row, col;
    double analytic, fd;
  };
  std::vector<Entry> flagged;
  bool ok() const { return flagged.empty(); }
};

inline DerivativeReport check_derivatives(const NlpProblem& p,
                                          const std::vector<double>& x,
                                          double tol = 1e-4) {
  DerivativeReport rep;
  const int n = p.n;
  std::vector<double> grad(n);
  p.cost(x.data(), grad.data());

  std::vector<std::vector<double>> eq_dense(p.m_eq, std::vector<double>(n, 0.0));
  std::vector<std::vector<double>> in_dense(p.m_ineq, std::vector<double>(n, 0.0));
  if (p.m_eq > 0) {
    std::vector<double> c(p.m_eq), jac(p.eq_pat.nnz());
    p.eq(x.data(), c.data(), jac.data());
    for (std::size_t k = 0; k < p.eq_pat.nnz(); ++k)
      eq_dense[p.eq_pat.row[k]][p.eq_pat.col[k]] += jac[k];
  }
  if (p.m_ineq > 0) {
    std::vector<double> c(p.m_ineq), jac(p.ineq_pat.nnz());
    p.ineq(x.data(), c.data(), jac.data());
    for (std::size_t k = 0; k < p.ineq_pat.nnz(); ++k)
      in_dense[p.ineq_pat.row[k]][p.ineq_pat.col[k]] += jac[k];
  }

  auto bad = [&](double an, double fd) {
    return std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)}) > tol;
  };

  std::vector<double> xp = x, xm = x;
  std::vector<double> cp_eq(p.m_eq), cm_eq(p.m_eq), cp_in(p.m_ineq), cm_in(p.m_ineq);
  for (int j = 0; j < n; ++j) {
    const double h = 1e-6 * std::max(1.0, std::abs(x[j]));
    xp[j] = x[j] + h;
    xm[j] = x[j] - h;
    const double fp = p.cost(xp.data(), nullptr);
    const double fm = p.cost(xm.data(), nullptr);
    const double fd = (fp - fm) / (2.0 * h);
    if (bad(grad[j], fd)) rep.flagged.push_back({'c', 0, j, grad[j], fd});

    if (p.m_eq > 0) {
      p.eq(xp.data(), cp_eq.data(), nullptr);
      p.eq(xm.data(), cm_eq.data(), nullptr);
      for (int r = 0; r < p.m_eq; ++r) {
        const double jfd = (cp_eq[r] - cm_eq[r]) / (2.0 * h);
        if (bad(eq_dense[r][j], jfd))
          rep.flagged.push_back({'e', r, j, eq_dense[r][j], jfd});
      }
    }
    if (p.m_ineq > 0) {
      p.ineq(xp.data(), cp_in.data(), nullptr);
      p.ineq(xm.data(), cm_in.data(), nullptr);
      for (int r = 0; r < p.m_ineq; ++r) {
        const double jfd = (cp_in[r] - cm_in[r]) / (2.0 * h);
        if (bad(in_dense[r][j], jfd))
          rep.flagged.push_back({'i', r, j, in_dense[r][j], jfd});
      }
    }
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return rep;
}

}  // namespace racestack

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "scatloc/domain.hpp"
#include "scatloc/field.hpp"
#include "scatloc/green.hpp"

namespace scatloc {

struct SolveReport {
  int iterations = 0;
  double relative_residual = 0.0;
  bool converged = false;
};

enum class LsScheme {
  bicgstab,  // default; robust for strong contrast
  richardson // Born series; weak contrast only
};

namespace detail {

inline Complex cdot(const std::vector<Complex>& a, const std::vector<Complex>& b) {
  Complex s{0.0, 0.0};
  for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
  return s;
}

inline double nrm2(const std::vector<Complex>& a) {
  double s = 0.0;
  for (const auto& v : a) s += std::norm(v);
  return std::sqrt(s);
}

} // namespace detail

/// Applies A = I - G diag(f) (forward) or A^H = I - diag(f) G^H (adjoint,
/// real f) to a field on the kernel's grid.
inline void apply_ls_operator(const ScatteringVolume& f, const GreenKernel& kernel,
                              GreenWorkspace& ws, const std::vector<Complex>& in,
                              std::vector<Complex>& out, bool adjoint = false) {
  const std::size_t n = kernel.grid.size();
  static thread_local std::vector<Complex> tmp;
  tmp.resize(n);
  if (!adjoint) {
    for (std::size_t i = 0; i < n; ++i) tmp[i] = f.values[i] * in[i];
    apply_green(kernel, ws, tmp, tmp, false);
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = in[i] - tmp[i];
  } else {
    apply_green(kernel, ws, in, tmp, true);
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = in[i] - f.values[i] * tmp[i];
  }
}

namespace detail {

/// Unpreconditioned complex BiCGSTAB on A x = b, A given as a callback.
template <typename ApplyFn>
inline SolveReport bicgstab(ApplyFn&& apply, const std::vector<Complex>& b, std::vector<Complex>& x,
                            double tol, int max_iter) {
  const std::size_t n = b.size();
  std::vector<Complex> r(n), rhat(n), p(n), v(n), s(n), t(n);
  const double bnorm = nrm2(b);
  SolveReport report;
  if (bnorm == 0.0) {
    std::fill(x.begin(), x.end(), Complex(0, 0));
    report.converged = true;
    return report;
  }
  apply(x, r); // r = b - A x
  for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - r[i];
  rhat = r;
  double resid = nrm2(r) / bnorm;
  if (resid <= tol) {
    report.relative_residual = resid;
    report.converged = true;
    return report;
  }
  Complex rho{1, 0}, alpha{1, 0}, omega{1, 0};
  for (int it = 1; it <= max_iter; ++it) {
    const Complex rho_new = cdot(rhat, r);
    if (std::abs(rho_new) == 0.0) break; // breakdown; return best iterate
    if (it == 1) {
      p = r;
    } else {
      const Complex beta = (rho_new / rho) * (alpha / omega);
      for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * (p[i] - omega * v[i]);
    }
    rho = rho_new;
    apply(p, v);
    alpha = rho / cdot(rhat, v);
    for (std::size_t i = 0; i < n; ++i) s[i] = r[i] - alpha * v[i];
    resid = nrm2(s) / bnorm;
    if (resid <= tol) {
      for (std::size_t i = 0; i < n; ++i) x[i] += alpha * p[i];
      report.iterations = it;
      report.relative_residual = resid;
      report.converged = true;
      return report;
    }
    apply(s, t);
    omega = cdot(t, s) / cdot(t, t);
    for (std::size_t i = 0; i < n; ++i) x[i] += alpha * p[i] + omega * s[i];
    for (std::size_t i = 0; i < n; ++i) r[i] = s[i] - omega * t[i];
    resid = nrm2(r) / bnorm;
    report.iterations = it;
    report.relative_residual = resid;
    if (resid <= tol) {
      report.converged = true;
      return report;
    }
    if (std::abs(omega) == 0.0) break;
  }
  report.converged = resid <= tol;
  report.relative_residual = resid;
  return report;
}

template <typename ApplyFn, typename BornFn>
inline SolveReport richardson(ApplyFn&& /*apply*/, BornFn&& born_step, const std::vector<Complex>& b,
                              std::vector<Complex>& x, double tol, int max_iter) {
  const std::size_t n = b.size();
  const double bnorm = nrm2(b);
  SolveReport report;
  if (bnorm == 0.0) {
    std::fill(x.begin(), x.end(), Complex(0, 0));
    report.converged = true;
    return report;
  }
  std::vector<Complex> next(n);
  for (int it = 1; it <= max_iter; ++it) {
    born_step(x, next); // next = b + G{f x}
    double diff = 0.0;
    for (std::size_t i = 0; i < n; ++i) diff += std::norm(next[i] - x[i]);
    x.swap(next);
    report.iterations = it;
    report.relative_residual = std::sqrt(diff) / bnorm;
    if (report.relative_residual <= tol) {
      report.converged = true;
      return report;
    }
  }
  return report;
}

} // namespace detail

struct LsOptions {
  double tol = 1e-8;
  int max_iter = 200;
  LsScheme scheme = LsScheme::bicgstab;
};

/// Solves the discretized Lippmann-Schwinger system
/// (I - G diag(f)) u_t = u_in. The returned report carries the recursive
/// residual cross-checked against a fresh one; on non-convergence the best
/// iterate is returned with converged = false.
inline std::pair<ComplexField, SolveReport> solve_lippmann_schwinger(
    const ScatteringVolume& f, const ComplexField& u_in, const GreenKernel& kernel,
    GreenWorkspace& ws, const LsOptions& opts = {}, const ComplexField* initial_guess = nullptr) {
  if (!(f.grid == u_in.grid) || !(f.grid == kernel.grid))
    throw std::invalid_argument("solve_lippmann_schwinger: grid mismatch");
  if (!(opts.tol > 0.0)) throw std::invalid_argument("solve_lippmann_schwinger: tol must be > 0");

  ComplexField u(u_in.grid);
  if (initial_guess) {
    if (!(initial_guess->grid == u_in.grid))
      throw std::invalid_argument("solve_lippmann_schwinger: initial guess grid mismatch");
    u.values = initial_guess->values;
  } else {
    u.values = u_in.values; // Born-0 start
  }

  auto apply = [&](const std::vector<Complex>& in, std::vector<Complex>& out) {
    apply_ls_operator(f, kernel, ws, in, out, false);
  };
  SolveReport report;
  if (opts.scheme == LsScheme::bicgstab) {
    report = detail::bicgstab(apply, u_in.values, u.values, opts.tol, opts.max_iter);
  } else {
    auto born_step = [&](const std::vector<Complex>& in, std::vector<Complex>& out) {
      std::vector<Complex> tmp(in.size());
      for (std::size_t i = 0; i < in.size(); ++i) tmp[i] = f.values[i] * in[i];
      apply_green(kernel, ws, tmp, out, false);
      for (std::size_t i = 0; i < in.size(); ++i) out[i] += u_in.values[i];
    };
    report = detail::richardson(apply, born_step, u_in.values, u.values, opts.tol, opts.max_iter);
  }

  // recompute the true residual; restart once if the recursion drifted
  std::vector<Complex> res(u.values.size());
  apply(u.values, res);
  for (std::size_t i = 0; i < res.size(); ++i) res[i] = u_in.values[i] - res[i];
  double true_rel = detail::nrm2(res) / detail::nrm2(u_in.values);
  if (report.converged && true_rel > opts.tol) {
    SolveReport cont = detail::bicgstab(apply, u_in.values, u.values, opts.tol, opts.max_iter);
    report.iterations += cont.iterations;
    apply(u.values, res);
    for (std::size_t i = 0; i < res.size(); ++i) res[i] = u_in.values[i] - res[i];
    true_rel = detail::nrm2(res) / detail::nrm2(u_in.values);
    report.converged = true_rel <= opts.tol;
  }
  report.relative_residual = true_rel;
  return {std::move(u), report};
}

/// Solves the conjugate-transposed system (I - diag(f) G^H) v = rhs used by
/// the adjoint-state gradients.
inline std::pair<ComplexField, SolveReport> solve_adjoint(const ScatteringVolume& f,
                                                          const ComplexField& rhs,
                                                          const GreenKernel& kernel, GreenWorkspace& ws,
                                                          const LsOptions& opts = {},
                                                          const ComplexField* initial_guess = nullptr) {
  if (!(f.grid == rhs.grid) || !(f.grid == kernel.grid))
    throw std::invalid_argument("solve_adjoint: grid mismatch");
  if (!(opts.tol > 0.0)) throw std::invalid_argument("solve_adjoint: tol must be > 0");

  ComplexField v(rhs.grid);
  if (initial_guess)
    v.values = initial_guess->values;
  else
    v.values = rhs.values;

  auto apply = [&](const std::vector<Complex>& in, std::vector<Complex>& out) {
    apply_ls_operator(f, kernel, ws, in, out, true);
  };
  SolveReport report = detail::bicgstab(apply, rhs.values, v.values, opts.tol, opts.max_iter);

  std::vector<Complex> res(v.values.size());
  apply(v.values, res);
  for (std::size_t i = 0; i < res.size(); ++i) res[i] = rhs.values[i] - res[i];
  const double rhs_norm = detail::nrm2(rhs.values);
  report.relative_residual = rhs_norm > 0 ? detail::nrm2(res) / rhs_norm : 0.0;
  report.converged = report.relative_residual <= opts.tol;
  return {std::move(v), report};
}

} // namespace scatloc

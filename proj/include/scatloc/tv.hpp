#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "scatloc/domain.hpp"

namespace scatloc {

namespace detail {

/// Forward differences with replicate boundary (zero difference at the far
/// face). Output is laid out as three contiguous component blocks.
inline void tv_grad(const std::vector<double>& x, const Grid3& g, std::vector<double>& d) {
  const std::size_t nx = g.nx(), ny = g.ny(), nz = g.nz(), n = g.size();
  d.assign(3 * n, 0.0);
  for (std::size_t k = 0; k < nz; ++k)
    for (std::size_t j = 0; j < ny; ++j)
      for (std::size_t i = 0; i < nx; ++i) {
        const std::size_t idx = g.index(i, j, k);
        if (i + 1 < nx) d[idx] = x[g.index(i + 1, j, k)] - x[idx];
        if (j + 1 < ny) d[n + idx] = x[g.index(i, j + 1, k)] - x[idx];
        if (k + 1 < nz) d[2 * n + idx] = x[g.index(i, j, k + 1)] - x[idx];
      }
}

/// Negative adjoint of tv_grad: w = grad^T q.
inline void tv_grad_adjoint(const std::vector<double>& q, const Grid3& g, std::vector<double>& w) {
  const std::size_t nx = g.nx(), ny = g.ny(), nz = g.nz(), n = g.size();
  w.assign(n, 0.0);
  for (std::size_t k = 0; k < nz; ++k)
    for (std::size_t j = 0; j < ny; ++j)
      for (std::size_t i = 0; i < nx; ++i) {
        const std::size_t idx = g.index(i, j, k);
        double acc = 0.0;
        if (i + 1 < nx) acc -= q[idx];
        if (i > 0) acc += q[g.index(i - 1, j, k)];
        if (j + 1 < ny) acc -= q[n + idx];
        if (j > 0) acc += q[n + g.index(i, j - 1, k)];
        if (k + 1 < nz) acc -= q[2 * n + idx];
        if (k > 0) acc += q[2 * n + g.index(i, j, k - 1)];
        w[idx] = acc;
      }
}

} // namespace detail

/// Isotropic total variation sum_i |(grad x)_i|_2.
inline double tv_value(const std::vector<double>& x, const Grid3& g) {
  if (x.size() != g.size()) throw std::invalid_argument("tv_value: size mismatch");
  std::vector<double> d;
  detail::tv_grad(x, g, d);
  const std::size_t n = g.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    acc += std::sqrt(d[i] * d[i] + d[n + i] * d[n + i] + d[2 * n + i] * d[2 * n + i]);
  return acc;
}

/// Gradient of TV where it is differentiable (all local difference norms
/// nonzero); used to cross check finite differences at smooth points.
inline std::vector<double> tv_smooth_gradient(const std::vector<double>& x, const Grid3& g,
                                              double floor_norm = 1e-12) {
  std::vector<double> d;
  detail::tv_grad(x, g, d);
  const std::size_t n = g.size();
  std::vector<double> q(3 * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double norm =
        std::sqrt(d[i] * d[i] + d[n + i] * d[n + i] + d[2 * n + i] * d[2 * n + i]);
    if (norm > floor_norm)
      for (int c = 0; c < 3; ++c) q[std::size_t(c) * n + i] = d[std::size_t(c) * n + i] / norm;
  }
  std::vector<double> grad;
  detail::tv_grad_adjoint(q, g, grad);
  return grad;
}

struct TvProxOptions {
  int max_iter = 30;
  double gap_tol = 0.0; // relative duality gap stop; <= 0 disables
};

struct TvProxResult {
  std::vector<double> x;
  double gap = 0.0;          // absolute duality gap at exit
  double relative_gap = 0.0; // gap / max(primal, eps)
  int iterations = 0;
};

/// prox of lambda TV + nonnegativity: argmin_{x >= 0} 0.5|x - v|^2 + lambda TV(x),
/// solved in the dual with FGP (Lipschitz constant 12 in three dimensions).
inline TvProxResult tv_prox(const std::vector<double>& v, const Grid3& g, double lambda,
                            const TvProxOptions& opts = {}) {
  if (v.size() != g.size()) throw std::invalid_argument("tv_prox: size mismatch");
  if (!(lambda >= 0.0)) throw std::invalid_argument("tv_prox: lambda must be nonnegative");
  TvProxResult out;
  const std::size_t n = g.size();
  if (lambda == 0.0) {
    out.x.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.x[i] = std::max(v[i], 0.0);
    return out;
  }

  std::vector<double> q(3 * n, 0.0), r(3 * n, 0.0), q_prev(3 * n, 0.0);
  std::vector<double> w(n), x(n), d;
  double t = 1.0;
  const double step = 1.0 / (12.0 * lambda);

  auto primal_point = [&](const std::vector<double>& dual) {
    detail::tv_grad_adjoint(dual, g, w);
    for (std::size_t i = 0; i < n; ++i) x[i] = std::max(v[i] - lambda * w[i], 0.0);
  };
  auto gap_at = [&]() {
    // gap = lambda sum_i (|(grad x)_i| - <(grad x)_i, q_i>) with x = x(q)
    detail::tv_grad(x, g, d);
    double gap = 0.0, primal = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double norm =
          std::sqrt(d[i] * d[i] + d[n + i] * d[n + i] + d[2 * n + i] * d[2 * n + i]);
      const double inner =
          d[i] * q[i] + d[n + i] * q[n + i] + d[2 * n + i] * q[2 * n + i];
      gap += norm - inner;
      primal += norm;
    }
    gap *= lambda;
    primal *= lambda;
    for (std::size_t i = 0; i < n; ++i) primal += 0.5 * (x[i] - v[i]) * (x[i] - v[i]);
    out.gap = gap;
    out.relative_gap = gap / std::max(primal, 1e-300);
    return out.relative_gap;
  };

  for (int it = 0; it < opts.max_iter; ++it) {
    q_prev = q;
    primal_point(r);
    detail::tv_grad(x, g, d);
    for (std::size_t i = 0; i < 3 * n; ++i) q[i] = r[i] + step * d[i];
    // project each dual vector onto the unit ball
    for (std::size_t i = 0; i < n; ++i) {
      const double norm =
          std::sqrt(q[i] * q[i] + q[n + i] * q[n + i] + q[2 * n + i] * q[2 * n + i]);
      if (norm > 1.0)
        for (int c = 0; c < 3; ++c) q[std::size_t(c) * n + i] /= norm;
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    const double momentum = (t - 1.0) / t_next;
    for (std::size_t i = 0; i < 3 * n; ++i) r[i] = q[i] + momentum * (q[i] - q_prev[i]);
    t = t_next;
    out.iterations = it + 1;
    if (opts.gap_tol > 0.0) {
      primal_point(q);
      if (gap_at() <= opts.gap_tol) break;
    }
  }
  primal_point(q);
  gap_at();
  out.x = x;
  return out;
}

} // namespace scatloc

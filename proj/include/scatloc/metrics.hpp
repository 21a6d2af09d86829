#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "scatloc/domain.hpp"
#include "scatloc/smoothing.hpp"

namespace scatloc {

/// Mean local SSIM over the volume with a Gaussian window (sigma in voxels).
/// Local moments use renormalized truncated windows, so boundary voxels are
/// proper weighted statistics.
inline double ssim_volume(const ScatteringVolume& a, const ScatteringVolume& b,
                          double window_sigma = 1.5, double dynamic_range = -1.0) {
  if (!(a.grid == b.grid)) throw std::invalid_argument("ssim_volume: grid mismatch");
  const std::size_t n = a.grid.size();
  if (dynamic_range < 0.0) {
    double lo = a.values[0], hi = a.values[0];
    for (double v : a.values) lo = std::min(lo, v), hi = std::max(hi, v);
    dynamic_range = hi - lo;
  }
  if (!(dynamic_range > 0.0)) dynamic_range = 1e-12;
  const double c1 = (0.01 * dynamic_range) * (0.01 * dynamic_range);
  const double c2 = (0.03 * dynamic_range) * (0.03 * dynamic_range);

  const std::size_t nx = a.grid.nx(), ny = a.grid.ny(), nz = a.grid.nz();
  std::vector<double> mu_a = a.values, mu_b = b.values, aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = a.values[i] * a.values[i];
    bb[i] = b.values[i] * b.values[i];
    ab[i] = a.values[i] * b.values[i];
  }
  gaussian_blur_3d(mu_a, nx, ny, nz, window_sigma);
  gaussian_blur_3d(mu_b, nx, ny, nz, window_sigma);
  gaussian_blur_3d(aa, nx, ny, nz, window_sigma);
  gaussian_blur_3d(bb, nx, ny, nz, window_sigma);
  gaussian_blur_3d(ab, nx, ny, nz, window_sigma);

  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double va = std::max(aa[i] - mu_a[i] * mu_a[i], 0.0);
    const double vb = std::max(bb[i] - mu_b[i] * mu_b[i], 0.0);
    const double cov = ab[i] - mu_a[i] * mu_b[i];
    const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
    const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
    acc += num / den;
  }
  return acc / double(n);
}

struct MatchedPair {
  std::size_t estimate_index = 0;
  std::size_t truth_index = 0;
  double distance = 0.0; // um
};

struct MatchResult {
  std::vector<MatchedPair> pairs;
  std::size_t unmatched_estimates = 0;
  std::size_t unmatched_truth = 0;
  bool has_rmse = false;
  double rmse_3d = 0.0; // um, over matched pairs only
};

namespace detail {

/// Hungarian algorithm with potentials; returns col -> row assignment for a
/// square row-major cost matrix.
inline std::vector<std::size_t> solve_assignment(const std::vector<double>& cost, std::size_t n) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  return p; // p[j] = row assigned to column j (1-based), p[0] unused
}

} // namespace detail

/// Optimal one-to-one matching of estimates to truth within the gating
/// radius (um), minimizing total distance; out-of-radius pairings are blocked
/// by a dominating penalty, which makes the solution maximum-cardinality
/// first, minimum total distance second.
inline MatchResult match_and_rmse(const FluorophoreSet& estimates, const FluorophoreSet& truth,
                                  double radius = 0.5) {
  if (!(radius > 0.0)) throw std::invalid_argument("match_and_rmse: radius must be > 0");
  MatchResult result;
  const std::size_t na = estimates.size(), nb = truth.size();
  if (na == 0 || nb == 0) {
    result.unmatched_estimates = na;
    result.unmatched_truth = nb;
    return result;
  }
  const std::size_t n = std::max(na, nb);
  const double big = 1e12;
  std::vector<double> cost(n * n, big);
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < nb; ++j) {
      const double d = norm(estimates[i].position - truth[j].position);
      if (d <= radius) cost[i * n + j] = d;
    }
  const std::vector<std::size_t> p = detail::solve_assignment(cost, n);
  double acc = 0.0;
  std::vector<char> est_used(na, 0), tru_used(nb, 0);
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = p[j];
    if (i == 0 || i > na || j > nb) continue;
    const double c = cost[(i - 1) * n + (j - 1)];
    if (c >= big) continue;
    result.pairs.push_back({i - 1, j - 1, c});
    est_used[i - 1] = 1;
    tru_used[j - 1] = 1;
    acc += c * c;
  }
  for (std::size_t i = 0; i < na; ++i)
    if (!est_used[i]) ++result.unmatched_estimates;
  for (std::size_t j = 0; j < nb; ++j)
    if (!tru_used[j]) ++result.unmatched_truth;
  if (!result.pairs.empty()) {
    result.has_rmse = true;
    result.rmse_3d = std::sqrt(acc / double(result.pairs.size()));
  }
  return result;
}

} // namespace scatloc

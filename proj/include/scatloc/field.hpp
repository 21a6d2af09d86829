#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <vector>

#include "scatloc/domain.hpp"

namespace scatloc {

using Complex = std::complex<double>;

/// Complex scalar field sampled at voxel centers.
struct ComplexField {
  Grid3 grid;
  std::vector<Complex> values;

  ComplexField() = default;
  explicit ComplexField(const Grid3& g, Complex fill = {0.0, 0.0}) : grid(g), values(g.size(), fill) {}

  Complex& operator[](std::size_t i) { return values[i]; }
  Complex operator[](std::size_t i) const { return values[i]; }
};

/// Smoothed spherical wave a exp(j k r_eps) / (4 pi r_eps) with
/// r_eps = sqrt(|x - p|^2 + eps). eps = 0 recovers the exact wave and is
/// singular when an evaluation point coincides with p.
inline Complex spherical_wave_at(const Vec3& x, const Vec3& p, double a, double eps,
                                 const OpticalConstants& constants) {
  const Vec3 d = x - p;
  const double r2 = dot(d, d) + eps;
  if (r2 <= 0.0 || (eps == 0.0 && r2 == 0.0))
    throw std::domain_error("spherical_wave: evaluation at the source singularity");
  const double r = std::sqrt(r2);
  const double k = constants.wavenumber();
  return a / (4.0 * M_PI * r) * std::polar(1.0, k * r);
}

inline ComplexField spherical_wave(const Grid3& grid, const Vec3& p, double a, double eps,
                                   const OpticalConstants& constants) {
  if (!(a > 0.0)) throw std::invalid_argument("spherical_wave: amplitude must be > 0");
  if (eps < 0.0) throw std::invalid_argument("spherical_wave: eps must be >= 0");
  ComplexField field(grid);
  const double k = constants.wavenumber();
  std::size_t idx = 0;
  for (std::size_t kz = 0; kz < grid.nz(); ++kz)
    for (std::size_t jy = 0; jy < grid.ny(); ++jy)
      for (std::size_t ix = 0; ix < grid.nx(); ++ix, ++idx) {
        const Vec3 d = grid.voxel_center(ix, jy, kz) - p;
        const double r2 = dot(d, d) + eps;
        if (r2 == 0.0)
          throw std::domain_error("spherical_wave: grid point coincides with source and eps = 0");
        const double r = std::sqrt(r2);
        field.values[idx] = a / (4.0 * M_PI * r) * std::polar(1.0, k * r);
      }
  return field;
}

/// Analytic derivative of the smoothed wave with respect to the source
/// position: du/dp_a = u (1/r - j k) (x_a - p_a) / r. Requires eps > 0.
inline std::array<ComplexField, 3> spherical_wave_position_gradient(const Grid3& grid, const Vec3& p,
                                                                    double a, double eps,
                                                                    const OpticalConstants& constants) {
  if (!(eps > 0.0))
    throw std::invalid_argument("spherical_wave_position_gradient: eps must be > 0");
  std::array<ComplexField, 3> grad{ComplexField(grid), ComplexField(grid), ComplexField(grid)};
  const double k = constants.wavenumber();
  std::size_t idx = 0;
  for (std::size_t kz = 0; kz < grid.nz(); ++kz)
    for (std::size_t jy = 0; jy < grid.ny(); ++jy)
      for (std::size_t ix = 0; ix < grid.nx(); ++ix, ++idx) {
        const Vec3 d = grid.voxel_center(ix, jy, kz) - p;
        const double r = std::sqrt(dot(d, d) + eps);
        const Complex u = a / (4.0 * M_PI * r) * std::polar(1.0, k * r);
        const Complex factor = u * (1.0 / r - Complex(0.0, k)) / r;
        for (int axis = 0; axis < 3; ++axis) grad[axis].values[idx] = factor * d[axis];
      }
  return grad;
}

inline bool all_finite(const ComplexField& f) {
  for (const auto& v : f.values)
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
  return true;
}

} // namespace scatloc

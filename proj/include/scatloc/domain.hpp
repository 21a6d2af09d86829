#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "scatloc/errors.hpp"

namespace scatloc {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

/// Regular 3-D voxel grid. Voxel centers sit at origin + (i + 1/2) * spacing;
/// the physical extent is counts * spacing. All lengths in micrometers.
struct Grid3 {
  std::array<std::size_t, 3> counts{1, 1, 1};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};

  std::size_t nx() const { return counts[0]; }
  std::size_t ny() const { return counts[1]; }
  std::size_t nz() const { return counts[2]; }
  std::size_t size() const { return counts[0] * counts[1] * counts[2]; }

  Vec3 extent() const {
    return {double(counts[0]) * spacing[0], double(counts[1]) * spacing[1],
            double(counts[2]) * spacing[2]};
  }

  // x fastest
  std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
    return i + counts[0] * (j + counts[1] * k);
  }

  Vec3 voxel_center(std::size_t i, std::size_t j, std::size_t k) const {
    return {origin[0] + (double(i) + 0.5) * spacing[0],
            origin[1] + (double(j) + 0.5) * spacing[1],
            origin[2] + (double(k) + 0.5) * spacing[2]};
  }

  bool contains(const Vec3& p) const {
    const Vec3 e = extent();
    for (int d = 0; d < 3; ++d)
      if (p[d] < origin[d] || p[d] > origin[d] + e[d]) return false;
    return true;
  }

  bool strictly_contains(const Vec3& p) const {
    const Vec3 e = extent();
    for (int d = 0; d < 3; ++d)
      if (p[d] <= origin[d] || p[d] >= origin[d] + e[d]) return false;
    return true;
  }

  /// Componentwise clamp onto the closed physical extent.
  Vec3 clamp(const Vec3& p) const {
    const Vec3 e = extent();
    Vec3 q = p;
    for (int d = 0; d < 3; ++d) {
      if (q[d] < origin[d]) q[d] = origin[d];
      if (q[d] > origin[d] + e[d]) q[d] = origin[d] + e[d];
    }
    return q;
  }

  bool operator==(const Grid3& o) const {
    return counts == o.counts && spacing == o.spacing && origin == o.origin;
  }
};

inline Grid3 make_grid(std::array<std::size_t, 3> counts, Vec3 spacing, Vec3 origin = {0, 0, 0}) {
  for (int d = 0; d < 3; ++d) {
    if (counts[d] < 1) throw std::invalid_argument("make_grid: counts must be >= 1");
    if (!(spacing[d] > 0.0)) throw std::invalid_argument("make_grid: spacing must be > 0");
  }
  return Grid3{counts, spacing, origin};
}

/// Emission wavelength and background medium. The wavenumber is always
/// derived as k_b = 2 pi eta_b / lambda, never stored separately.
struct OpticalConstants {
  double wavelength_um = 0.647;
  double background_ri = 1.333;

  OpticalConstants() = default;
  OpticalConstants(double wavelength, double eta_b)
      : wavelength_um(wavelength), background_ri(eta_b) {
    if (!(wavelength_um > 0.0)) throw std::invalid_argument("wavelength must be > 0");
    if (!(background_ri > 1.0)) throw std::invalid_argument("background RI must be > 1");
  }

  double wavenumber() const { return 2.0 * M_PI * background_ri / wavelength_um; }
  /// Vacuum wavenumber 2 pi / lambda (pupil cutoff scale).
  double vacuum_wavenumber() const { return 2.0 * M_PI / wavelength_um; }
};

/// Sampled scattering potential f (rad^2/um^2) on a regular grid.
struct ScatteringVolume {
  Grid3 grid;
  std::vector<double> values;

  ScatteringVolume() = default;
  explicit ScatteringVolume(const Grid3& g, double fill = 0.0)
      : grid(g), values(g.size(), fill) {}

  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }
};

/// f = k_b^2 (eta^2 / eta_b^2 - 1) per voxel; rejects eta below the
/// background since the optimization constrains f >= 0.
inline ScatteringVolume ri_to_potential(const Grid3& grid, const std::vector<double>& ri_map,
                                        const OpticalConstants& constants) {
  if (ri_map.size() != grid.size())
    throw std::invalid_argument("ri_to_potential: map size does not match grid");
  const double kb2 = constants.wavenumber() * constants.wavenumber();
  const double eta_b = constants.background_ri;
  ScatteringVolume out(grid);
  for (std::size_t i = 0; i < ri_map.size(); ++i) {
    const double eta = ri_map[i];
    if (eta < eta_b)
      throw std::domain_error("ri_to_potential: RI below background at voxel " + std::to_string(i));
    out.values[i] = kb2 * (eta * eta / (eta_b * eta_b) - 1.0);
  }
  return out;
}

/// Exact inverse of ri_to_potential: eta = eta_b sqrt(f / k_b^2 + 1).
inline std::vector<double> potential_to_ri(const ScatteringVolume& volume,
                                           const OpticalConstants& constants) {
  const double kb2 = constants.wavenumber() * constants.wavenumber();
  std::vector<double> ri(volume.values.size());
  for (std::size_t i = 0; i < ri.size(); ++i) {
    const double f = volume.values[i];
    if (f < -kb2) throw std::domain_error("potential_to_ri: potential below -k_b^2");
    ri[i] = constants.background_ri * std::sqrt(f / kb2 + 1.0);
  }
  return ri;
}

/// Point emitter: continuous position inside the domain plus a positive
/// emission amplitude.
struct Fluorophore {
  Vec3 position{0, 0, 0};
  double amplitude = 1.0;
};

struct FluorophoreSet {
  std::vector<Fluorophore> molecules;

  std::size_t size() const { return molecules.size(); }
  bool empty() const { return molecules.empty(); }
  const Fluorophore& operator[](std::size_t i) const { return molecules[i]; }
  Fluorophore& operator[](std::size_t i) { return molecules[i]; }
};

} // namespace scatloc

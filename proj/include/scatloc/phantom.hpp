#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "scatloc/domain.hpp"
#include "scatloc/rng.hpp"

namespace scatloc {

class placement_error : public std::runtime_error {
public:
  explicit placement_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Analytic solid with a constant RI contrast over water. Shapes are
/// rasterized by voxel-center membership; overlaps keep the largest contrast.
struct ContrastShape {
  enum class Kind { ellipsoid, shell };
  Kind kind = Kind::ellipsoid;
  Vec3 center{0, 0, 0};
  Vec3 semi_axes{1, 1, 1};   // ellipsoid only
  double outer_radius = 1.0; // shell only
  double thickness = 0.2;    // shell only
  double delta_ri = 0.05;

  bool contains(const Vec3& p) const {
    const Vec3 d = p - center;
    if (kind == Kind::ellipsoid) {
      double s = 0.0;
      for (int a = 0; a < 3; ++a) s += (d[a] / semi_axes[a]) * (d[a] / semi_axes[a]);
      return s <= 1.0;
    }
    const double r = norm(d);
    return r <= outer_radius && r >= outer_radius - thickness;
  }
};

struct ContrastSpec {
  std::vector<ContrastShape> shapes;
};

enum class MoleculePlacement {
  inside_support, // uniform over voxels where the contrast is positive
  uniform         // uniform over the whole domain
};

inline std::vector<double> rasterize_ri(const Grid3& grid, const ContrastSpec& spec,
                                        const OpticalConstants& constants) {
  std::vector<double> ri(grid.size(), constants.background_ri);
  for (std::size_t k = 0; k < grid.nz(); ++k)
    for (std::size_t j = 0; j < grid.ny(); ++j)
      for (std::size_t i = 0; i < grid.nx(); ++i) {
        const Vec3 p = grid.voxel_center(i, j, k);
        double delta = 0.0;
        for (const auto& shape : spec.shapes)
          if (shape.contains(p)) delta = std::max(delta, shape.delta_ri);
        ri[grid.index(i, j, k)] = constants.background_ri + delta;
      }
  return ri;
}

struct PhantomResult {
  ScatteringVolume potential;
  FluorophoreSet fluorophores;
};

/// Rejection-sampled phantom: contrast solids plus n_molecules emitters with
/// pairwise separation >= min_separation and Poisson amplitudes (zero draws
/// resampled). Deterministic for a fixed seed.
inline PhantomResult generate_phantom(const Grid3& grid, const ContrastSpec& spec,
                                      std::size_t n_molecules, double min_separation,
                                      double mean_amplitude, std::uint64_t seed,
                                      const OpticalConstants& constants = {},
                                      MoleculePlacement placement = MoleculePlacement::inside_support) {
  if (min_separation < 0.0) throw std::invalid_argument("generate_phantom: min_separation < 0");
  if (!(mean_amplitude > 0.0)) throw std::invalid_argument("generate_phantom: mean_amplitude <= 0");
  if (n_molecules < 1) throw std::invalid_argument("generate_phantom: need n_molecules >= 1");

  PhantomResult result;
  result.potential = ri_to_potential(grid, rasterize_ri(grid, spec, constants), constants);

  const bool has_support =
      std::any_of(result.potential.values.begin(), result.potential.values.end(),
                  [](double f) { return f > 0.0; });
  MoleculePlacement mode = placement;
  if (mode == MoleculePlacement::inside_support && !has_support) mode = MoleculePlacement::uniform;

  RandomStream position_rng(seed, stream_id::make(stream_id::phantom_placement));
  const Vec3 ext = grid.extent();
  const std::size_t max_attempts = 10000 * n_molecules;
  std::vector<Vec3> accepted;
  accepted.reserve(n_molecules);
  std::size_t attempts = 0;
  while (accepted.size() < n_molecules) {
    if (++attempts > max_attempts)
      throw placement_error("generate_phantom: could not place " + std::to_string(n_molecules) +
                            " molecules with separation " + std::to_string(min_separation) +
                            " um after " + std::to_string(max_attempts) + " attempts");
    Vec3 p{grid.origin[0] + position_rng.next_double() * ext[0],
           grid.origin[1] + position_rng.next_double() * ext[1],
           grid.origin[2] + position_rng.next_double() * ext[2]};
    if (!grid.strictly_contains(p)) continue;
    if (mode == MoleculePlacement::inside_support) {
      const std::size_t i = std::min(std::size_t((p[0] - grid.origin[0]) / grid.spacing[0]), grid.nx() - 1);
      const std::size_t j = std::min(std::size_t((p[1] - grid.origin[1]) / grid.spacing[1]), grid.ny() - 1);
      const std::size_t k = std::min(std::size_t((p[2] - grid.origin[2]) / grid.spacing[2]), grid.nz() - 1);
      if (!(result.potential.values[grid.index(i, j, k)] > 0.0)) continue;
    }
    bool ok = true;
    for (const auto& q : accepted)
      if (norm(p - q) < min_separation) {
        ok = false;
        break;
      }
    if (ok) accepted.push_back(p);
  }

  RandomStream amplitude_rng(seed, stream_id::make(stream_id::phantom_amplitudes));
  result.fluorophores.molecules.reserve(n_molecules);
  for (const auto& p : accepted) {
    long a = 0;
    while (a <= 0) a = amplitude_rng.poisson(mean_amplitude);
    result.fluorophores.molecules.push_back(Fluorophore{p, double(a)});
  }
  return result;
}

} // namespace scatloc

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "scatloc/domain.hpp"
#include "scatloc/errors.hpp"
#include "scatloc/fft.hpp"
#include "scatloc/field.hpp"
#include "scatloc/rng.hpp"

namespace scatloc {

/// Biplane detection geometry. Both camera planes observe the same exit field,
/// refocused by the signed axial offsets about the nominal focal plane.
struct BiplaneConfig {
  double numerical_aperture = 1.2;
  std::array<double, 2> plane_offsets = {-0.3, 0.3}; // um, about focal plane
  double pixel_pitch = 0.1;                          // um
  std::array<std::size_t, 2> camera_counts = {32, 32};
  double focal_plane_z = 0.0; // um, absolute axial position of nominal focus

  std::size_t pixels_per_plane() const { return camera_counts[0] * camera_counts[1]; }
  std::size_t measurement_count() const { return 2 * pixels_per_plane(); }
};

inline void validate_biplane(const BiplaneConfig& config, const OpticalConstants& constants) {
  if (!(config.numerical_aperture > 0.0) ||
      !(config.numerical_aperture < constants.background_ri))
    throw std::invalid_argument("numerical aperture must lie in (0, background index)");
  if (config.plane_offsets[0] == config.plane_offsets[1])
    throw std::invalid_argument("biplane offsets must be distinct");
  if (!(config.pixel_pitch > 0.0))
    throw std::invalid_argument("pixel pitch must be positive");
  if (config.camera_counts[0] == 0 || config.camera_counts[1] == 0)
    throw std::invalid_argument("camera counts must be positive");
}

/// Non-fatal configuration diagnostics (undersampling etc).
inline std::vector<std::string> biplane_warnings(const BiplaneConfig& config,
                                                 const OpticalConstants& constants) {
  std::vector<std::string> out;
  const double nyquist = constants.wavelength_um / (2.0 * config.numerical_aperture);
  if (config.pixel_pitch > nyquist)
    out.push_back("camera pitch " + std::to_string(config.pixel_pitch) +
                  " um exceeds field Nyquist pitch " + std::to_string(nyquist) + " um");
  return out;
}

using CameraFields = std::array<std::vector<Complex>, 2>;

/// Extract the exit-plane slice (top z layer) of a total field.
inline std::vector<Complex> field_to_exit_plane(const ComplexField& field) {
  const Grid3& g = field.grid;
  const std::size_t n = g.nx() * g.ny();
  std::vector<Complex> out(n);
  const std::size_t base = g.nx() * g.ny() * (g.nz() - 1);
  for (std::size_t i = 0; i < n; ++i) out[i] = field.values[base + i];
  return out;
}

inline double exit_plane_z(const Grid3& grid) {
  return grid.origin[2] + (double(grid.nz()) - 0.5) * grid.spacing[2];
}

/// Band-limited angular-spectrum propagation from the exit plane to the two
/// camera planes, plus bilinear resampling onto the camera pixel lattice.
/// Not thread safe (owns an FFT buffer); use one instance per thread.
class BiplaneOperator {
 public:
  BiplaneOperator(const Grid3& grid, const BiplaneConfig& config,
                  const OpticalConstants& constants)
      : grid_(grid), config_(config), fft_(grid.nx(), grid.ny()) {
    validate_biplane(config, constants);
    const std::size_t nx = grid.nx(), ny = grid.ny();
    const double k0 = constants.vacuum_wavenumber();
    const double kb = constants.wavenumber();
    const double cutoff = config.numerical_aperture * k0;
    const double z_exit = exit_plane_z(grid);
    for (int plane = 0; plane < 2; ++plane) {
      const double dz = config.focal_plane_z + config.plane_offsets[std::size_t(plane)] - z_exit;
      auto& kern = kernels_[std::size_t(plane)];
      kern.resize(nx * ny);
      for (std::size_t j = 0; j < ny; ++j) {
        const double fy = (j < (ny + 1) / 2) ? double(j) : double(j) - double(ny);
        const double ky = 2.0 * M_PI * fy / (double(ny) * grid.spacing[1]);
        for (std::size_t i = 0; i < nx; ++i) {
          const double fx = (i < (nx + 1) / 2) ? double(i) : double(i) - double(nx);
          const double kx = 2.0 * M_PI * fx / (double(nx) * grid.spacing[0]);
          const double kperp2 = kx * kx + ky * ky;
          Complex value(0.0, 0.0);
          if (kperp2 <= cutoff * cutoff) {
            const double kz = std::sqrt(std::max(kb * kb - kperp2, 0.0));
            value = std::polar(1.0, kz * dz);
          }
          kern[i + nx * j] = value;
        }
      }
    }
    build_taps();
  }

  const Grid3& grid() const { return grid_; }
  const BiplaneConfig& config() const { return config_; }
  std::size_t measurement_count() const { return config_.measurement_count(); }

  /// exit (nx*ny) -> two camera fields (camera_counts each).
  void forward(const std::vector<Complex>& exit, CameraFields& cameras) {
    if (exit.size() != grid_.nx() * grid_.ny())
      throw std::invalid_argument("exit field size mismatch");
    const std::size_t n = exit.size();
    const std::size_t np = config_.pixels_per_plane();
    for (int plane = 0; plane < 2; ++plane) {
      Complex* buf = fft_.data();
      for (std::size_t i = 0; i < n; ++i) buf[i] = exit[i];
      fft_.forward();
      const auto& kern = kernels_[std::size_t(plane)];
      for (std::size_t i = 0; i < n; ++i) buf[i] *= kern[i];
      fft_.inverse();
      auto& cam = cameras[std::size_t(plane)];
      cam.assign(np, Complex(0.0, 0.0));
      for (std::size_t m = 0; m < np; ++m) {
        Complex acc(0.0, 0.0);
        for (const Tap& t : taps_[m])
          if (t.weight != 0.0) acc += t.weight * buf[t.index];
        cam[m] = acc;
      }
    }
  }

  /// Exact adjoint of forward: two camera fields -> exit-plane field.
  void adjoint(const CameraFields& cameras, std::vector<Complex>& exit) {
    const std::size_t n = grid_.nx() * grid_.ny();
    const std::size_t np = config_.pixels_per_plane();
    exit.assign(n, Complex(0.0, 0.0));
    for (int plane = 0; plane < 2; ++plane) {
      const auto& cam = cameras[std::size_t(plane)];
      if (cam.size() != np) throw std::invalid_argument("camera field size mismatch");
      Complex* buf = fft_.data();
      for (std::size_t i = 0; i < n; ++i) buf[i] = Complex(0.0, 0.0);
      for (std::size_t m = 0; m < np; ++m)
        for (const Tap& t : taps_[m])
          if (t.weight != 0.0) buf[t.index] += t.weight * cam[m];
      fft_.forward();
      const auto& kern = kernels_[std::size_t(plane)];
      for (std::size_t i = 0; i < n; ++i) buf[i] *= std::conj(kern[i]);
      fft_.inverse();
      for (std::size_t i = 0; i < n; ++i) exit[i] += buf[i];
    }
  }

 private:
  struct Tap {
    std::size_t index = 0;
    double weight = 0.0;
  };

  void build_taps() {
    const std::size_t nx = grid_.nx(), ny = grid_.ny();
    const std::size_t mx = config_.camera_counts[0], my = config_.camera_counts[1];
    const double cx = grid_.origin[0] + 0.5 * double(nx) * grid_.spacing[0];
    const double cy = grid_.origin[1] + 0.5 * double(ny) * grid_.spacing[1];
    taps_.resize(mx * my);
    for (std::size_t q = 0; q < my; ++q)
      for (std::size_t p = 0; p < mx; ++p) {
        const double x = cx + (double(p) - 0.5 * double(mx - 1)) * config_.pixel_pitch;
        const double y = cy + (double(q) - 0.5 * double(my - 1)) * config_.pixel_pitch;
        // grid coordinates in voxel-center units
        const double u = (x - grid_.origin[0]) / grid_.spacing[0] - 0.5;
        const double v = (y - grid_.origin[1]) / grid_.spacing[1] - 0.5;
        auto& taps = taps_[p + mx * q];
        taps = {};
        const long i0 = long(std::floor(u));
        const long j0 = long(std::floor(v));
        const double fu = u - double(i0);
        const double fv = v - double(j0);
        int slot = 0;
        for (int dj = 0; dj < 2; ++dj)
          for (int di = 0; di < 2; ++di) {
            const long ii = i0 + di, jj = j0 + dj;
            double w = (di ? fu : 1.0 - fu) * (dj ? fv : 1.0 - fv);
            if (ii < 0 || ii >= long(nx) || jj < 0 || jj >= long(ny)) w = 0.0;
            if (w != 0.0)
              taps[std::size_t(slot)] = {std::size_t(ii) + nx * std::size_t(jj), w};
            ++slot;
          }
      }
  }

  Grid3 grid_;
  BiplaneConfig config_;
  std::array<std::vector<Complex>, 2> kernels_;
  std::vector<std::array<Tap, 4>> taps_;
  Fft2 fft_;
};

/// Noise-free measurement: concatenated per-plane intensities, plane 0 first,
/// each plane row major (x fastest).
inline std::vector<double> intensity(const CameraFields& cameras) {
  std::vector<double> out;
  out.reserve(cameras[0].size() + cameras[1].size());
  for (const auto& cam : cameras)
    for (const Complex& c : cam) out.push_back(std::norm(c));
  return out;
}

/// One biplane exposure.
struct Frame {
  std::vector<double> values;     // measurement vector, length M
  std::vector<double> background; // same length; may be empty if not modeled
  std::size_t acquisition_index = 0;
  int molecule_count = 1;
};

struct FrameStack {
  BiplaneConfig config;
  std::vector<Frame> frames;
};

/// Poisson counts with the given mean vector. Deterministic per (seed, stream).
inline std::vector<double> add_poisson_noise(const std::vector<double>& mean, std::uint64_t seed,
                                             std::uint64_t stream) {
  RandomStream rng(seed, stream);
  std::vector<double> out(mean.size());
  for (std::size_t i = 0; i < mean.size(); ++i) {
    if (!(mean[i] >= 0.0))
      throw std::invalid_argument("Poisson mean must be nonnegative");
    out[i] = double(rng.poisson(mean[i]));
  }
  return out;
}

} // namespace scatloc

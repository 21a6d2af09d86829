#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "scatloc/domain.hpp"
#include "scatloc/fft.hpp"
#include "scatloc/field.hpp"

namespace scatloc {

/// Spectral representation of the background Green's function
/// g(r) = exp(j k_b r) / (4 pi r) sampled on a zero-padded grid, with the
/// singular voxel replaced by the analytic integral of g over the
/// equivalent-volume sphere. Zero padding by pad_factor >= 2 makes the
/// discrete convolution over the unpadded domain aperiodic (no wrap-around),
/// and the kernel is truncated at the padded-box diagonal, which leaves every
/// offset actually used untouched.
struct GreenKernel {
  Grid3 grid; // unpadded
  std::array<std::size_t, 3> padded_counts{};
  std::vector<Complex> spectrum; // FFT of the sampled kernel, padded layout
  double truncation_radius = 0.0;

  std::size_t padded_size() const { return padded_counts[0] * padded_counts[1] * padded_counts[2]; }
};

inline GreenKernel build_green_kernel(const Grid3& grid, const OpticalConstants& constants,
                                      std::size_t pad_factor = 2) {
  if (pad_factor < 2) throw std::invalid_argument("build_green_kernel: pad_factor must be >= 2");
  GreenKernel kernel;
  kernel.grid = grid;
  for (int d = 0; d < 3; ++d) kernel.padded_counts[d] = grid.counts[d] * pad_factor;
  const auto& np = kernel.padded_counts;
  kernel.truncation_radius = std::sqrt(
      std::pow(double(np[0]) * grid.spacing[0], 2) + std::pow(double(np[1]) * grid.spacing[1], 2) +
      std::pow(double(np[2]) * grid.spacing[2], 2));

  const double k = constants.wavenumber();
  const double dv = grid.spacing[0] * grid.spacing[1] * grid.spacing[2];
  // singular voxel: integral of g over the sphere of volume dv
  const double a = std::cbrt(3.0 * dv / (4.0 * M_PI));
  const Complex self =
      (std::polar(1.0, k * a) * Complex(1.0, -k * a) - 1.0) / (k * k);

  Fft3 fft(np[0], np[1], np[2]);
  Complex* buf = fft.data();
  std::size_t idx = 0;
  for (std::size_t kz = 0; kz < np[2]; ++kz) {
    const double oz = (kz <= np[2] / 2 ? double(kz) : double(kz) - double(np[2])) * grid.spacing[2];
    for (std::size_t jy = 0; jy < np[1]; ++jy) {
      const double oy = (jy <= np[1] / 2 ? double(jy) : double(jy) - double(np[1])) * grid.spacing[1];
      for (std::size_t ix = 0; ix < np[0]; ++ix, ++idx) {
        const double ox = (ix <= np[0] / 2 ? double(ix) : double(ix) - double(np[0])) * grid.spacing[0];
        const double r = std::sqrt(ox * ox + oy * oy + oz * oz);
        if (r == 0.0)
          buf[idx] = self;
        else if (r > kernel.truncation_radius)
          buf[idx] = 0.0;
        else
          buf[idx] = dv / (4.0 * M_PI * r) * std::polar(1.0, k * r);
      }
    }
  }
  fft.forward();
  kernel.spectrum.assign(fft.data(), fft.data() + fft.size());
  return kernel;
}

/// Per-thread FFT scratch for kernel application; the kernel itself stays
/// immutable and shareable.
class GreenWorkspace {
public:
  explicit GreenWorkspace(const GreenKernel& kernel)
      : fft_(kernel.padded_counts[0], kernel.padded_counts[1], kernel.padded_counts[2]) {}

  Fft3& fft() { return fft_; }

private:
  Fft3 fft_;
};

/// out = G{in} (or G^H{in} when adjoint), both sampled on the unpadded grid.
inline void apply_green(const GreenKernel& kernel, GreenWorkspace& ws, const std::vector<Complex>& in,
                        std::vector<Complex>& out, bool adjoint = false) {
  const Grid3& g = kernel.grid;
  if (in.size() != g.size()) throw std::invalid_argument("apply_green: field size mismatch");
  const auto& np = kernel.padded_counts;
  Fft3& fft = ws.fft();
  Complex* buf = fft.data();
  std::fill(buf, buf + fft.size(), Complex(0.0, 0.0));
  for (std::size_t kz = 0; kz < g.nz(); ++kz)
    for (std::size_t jy = 0; jy < g.ny(); ++jy) {
      const Complex* src = in.data() + g.index(0, jy, kz);
      Complex* dst = buf + (kz * np[1] + jy) * np[0];
      for (std::size_t ix = 0; ix < g.nx(); ++ix) dst[ix] = src[ix];
    }
  fft.forward();
  if (adjoint)
    for (std::size_t i = 0; i < fft.size(); ++i) buf[i] *= std::conj(kernel.spectrum[i]);
  else
    for (std::size_t i = 0; i < fft.size(); ++i) buf[i] *= kernel.spectrum[i];
  fft.inverse();
  out.resize(g.size());
  for (std::size_t kz = 0; kz < g.nz(); ++kz)
    for (std::size_t jy = 0; jy < g.ny(); ++jy) {
      const Complex* src = buf + (kz * np[1] + jy) * np[0];
      Complex* dst = out.data() + g.index(0, jy, kz);
      for (std::size_t ix = 0; ix < g.nx(); ++ix) dst[ix] = src[ix];
    }
}

} // namespace scatloc

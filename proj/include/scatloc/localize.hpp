#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "scatloc/domain.hpp"
#include "scatloc/field.hpp"
#include "scatloc/sensor.hpp"
#include "scatloc/smoothing.hpp"

namespace scatloc {

inline double camera_pixel_x(const Grid3& grid, const BiplaneConfig& config, std::size_t px) {
  const double cx = grid.origin[0] + 0.5 * double(grid.nx()) * grid.spacing[0];
  return cx + (double(px) - 0.5 * double(config.camera_counts[0] - 1)) * config.pixel_pitch;
}

inline double camera_pixel_y(const Grid3& grid, const BiplaneConfig& config, std::size_t py) {
  const double cy = grid.origin[1] + 0.5 * double(grid.ny()) * grid.spacing[1];
  return cy + (double(py) - 0.5 * double(config.camera_counts[1] - 1)) * config.pixel_pitch;
}

/// Free-space (f = 0) unit-amplitude camera intensities for a molecule at p.
/// No volume solve is needed: the total field equals the incident wave.
inline std::vector<double> free_space_base(const Grid3& grid, const OpticalConstants& constants,
                                           double smoothing_eps, BiplaneOperator& op,
                                           const Vec3& p) {
  const std::size_t nx = grid.nx(), ny = grid.ny();
  std::vector<Complex> exit(nx * ny);
  const double z = exit_plane_z(grid);
  for (std::size_t j = 0; j < ny; ++j)
    for (std::size_t i = 0; i < nx; ++i) {
      const Vec3 x{grid.origin[0] + (double(i) + 0.5) * grid.spacing[0],
                   grid.origin[1] + (double(j) + 0.5) * grid.spacing[1], z};
      exit[i + nx * j] = spherical_wave_at(x, p, 1.0, smoothing_eps, constants);
    }
  CameraFields cams;
  op.forward(exit, cams);
  return intensity(cams);
}

/// Plane-0 energy fraction as a function of source depth, used to invert the
/// biplane intensity ratio into an axial estimate.
struct AxialCalibration {
  std::vector<double> z;
  std::vector<double> ratio;
  int window_radius_px = 5;
};

namespace detail {

inline double windowed_energy(const std::vector<double>& plane, std::size_t mx, std::size_t my,
                              long cx, long cy, int radius) {
  double acc = 0.0;
  for (long j = cy - radius; j <= cy + radius; ++j)
    for (long i = cx - radius; i <= cx + radius; ++i) {
      if (i < 0 || i >= long(mx) || j < 0 || j >= long(my)) continue;
      acc += plane[std::size_t(i) + mx * std::size_t(j)];
    }
  return acc;
}

} // namespace detail

inline AxialCalibration build_axial_calibration(const Grid3& grid,
                                                const OpticalConstants& constants,
                                                const BiplaneConfig& sensor, double smoothing_eps,
                                                int window_radius_px = 5, std::size_t samples = 65) {
  BiplaneOperator op(grid, sensor, constants);
  AxialCalibration cal;
  cal.window_radius_px = window_radius_px;
  const Vec3 extent = grid.extent();
  const Vec3 center{grid.origin[0] + 0.5 * extent[0], grid.origin[1] + 0.5 * extent[1], 0.0};
  const std::size_t mx = sensor.camera_counts[0], my = sensor.camera_counts[1];
  const std::size_t np = mx * my;
  // camera pixel nearest the transverse center
  long cx = 0, cy = 0;
  double best = 1e300;
  for (std::size_t i = 0; i < mx; ++i) {
    const double d = std::abs(camera_pixel_x(grid, sensor, i) - center[0]);
    if (d < best) best = d, cx = long(i);
  }
  best = 1e300;
  for (std::size_t j = 0; j < my; ++j) {
    const double d = std::abs(camera_pixel_y(grid, sensor, j) - center[1]);
    if (d < best) best = d, cy = long(j);
  }
  const double z0 = grid.origin[2] + 0.5 * grid.spacing[2];
  const double z1 = grid.origin[2] + extent[2] - 0.5 * grid.spacing[2];
  for (std::size_t s = 0; s < samples; ++s) {
    const double z = samples > 1 ? z0 + (z1 - z0) * double(s) / double(samples - 1) : z0;
    const Vec3 p{center[0], center[1], z};
    const std::vector<double> base = free_space_base(grid, constants, smoothing_eps, op, p);
    const std::vector<double> p0(base.begin(), base.begin() + long(np));
    const std::vector<double> p1(base.begin() + long(np), base.end());
    const double e0 = detail::windowed_energy(p0, mx, my, cx, cy, window_radius_px);
    const double e1 = detail::windowed_energy(p1, mx, my, cx, cy, window_radius_px);
    cal.z.push_back(z);
    cal.ratio.push_back(e0 + e1 > 0.0 ? e0 / (e0 + e1) : 0.5);
  }
  return cal;
}

/// Invert the calibration curve; among all crossings prefer the one closest
/// to the focal plane.
inline double lookup_axial(const AxialCalibration& cal, double ratio, double focal_z) {
  if (cal.z.empty()) return focal_z;
  double best_z = cal.z.front();
  double best_score = 1e300;
  auto consider = [&](double z, double mismatch) {
    const double score = mismatch * 1e6 + std::abs(z - focal_z);
    if (score < best_score) {
      best_score = score;
      best_z = z;
    }
  };
  for (std::size_t i = 0; i + 1 < cal.z.size(); ++i) {
    const double r0 = cal.ratio[i], r1 = cal.ratio[i + 1];
    if ((ratio - r0) * (ratio - r1) <= 0.0 && r0 != r1) {
      const double t = (ratio - r0) / (r1 - r0);
      consider(cal.z[i] + t * (cal.z[i + 1] - cal.z[i]), 0.0);
    }
  }
  if (best_score == 1e300)
    for (std::size_t i = 0; i < cal.z.size(); ++i)
      consider(cal.z[i], std::abs(cal.ratio[i] - ratio));
  return best_z;
}

struct InitStrategy {
  double peak_potential = 0.1;   // f0 scaled so its max equals this (um^-2)
  double detection_sigma_px = 1.0;
  double detection_threshold_sigmas = 3.0;
  int energy_window_px = 5;
  std::size_t calibration_samples = 65;
};

struct InitResult {
  ScatteringVolume f0;
  FluorophoreSet fluorophores;
  std::vector<std::size_t> kept_frames; // indices into the input stack
  std::vector<std::string> log;
};

namespace detail {

inline double subpixel_offset(double m, double c, double p) {
  const double denom = m - 2.0 * c + p;
  if (denom >= 0.0) return 0.0; // not a maximum
  double d = 0.5 * (m - p) / denom;
  return std::clamp(d, -0.5, 0.5);
}

} // namespace detail

/// Built-in initialization: widefield volume estimate plus per-frame
/// matched-filter localization with biplane axial lookup and least-squares
/// amplitudes. Frames without a detectable blob are dropped and logged.
inline InitResult initialize(const FrameStack& stack, const Grid3& grid,
                             const OpticalConstants& constants, double smoothing_eps,
                             const InitStrategy& strategy = {}) {
  if (stack.frames.empty()) throw std::invalid_argument("initialize: empty stack");
  const BiplaneConfig& sensor = stack.config;
  const std::size_t mx = sensor.camera_counts[0], my = sensor.camera_counts[1];
  const std::size_t np = mx * my;
  InitResult result;
  result.f0 = ScatteringVolume(grid);

  // widefield volume: background-subtracted mean frame (both planes averaged),
  // resampled to the transverse grid, replicated along z, rescaled to the peak
  std::vector<double> mean_image(np, 0.0);
  for (const Frame& frame : stack.frames) {
    for (std::size_t m = 0; m < np; ++m) {
      const double b0 = frame.background.empty() ? 0.0 : frame.background[m];
      const double b1 = frame.background.empty() ? 0.0 : frame.background[np + m];
      mean_image[m] += 0.5 * ((frame.values[m] - b0) + (frame.values[np + m] - b1));
    }
  }
  for (double& v : mean_image) v = std::max(v / double(stack.frames.size()), 0.0);
  double peak = 0.0;
  for (double v : mean_image) peak = std::max(peak, v);
  if (peak > 0.0) {
    const double scale = strategy.peak_potential / peak;
    for (std::size_t k = 0; k < grid.nz(); ++k)
      for (std::size_t j = 0; j < grid.ny(); ++j)
        for (std::size_t i = 0; i < grid.nx(); ++i) {
          // sample the camera image at the voxel center (bilinear)
          const Vec3 c = grid.voxel_center(i, j, k);
          const double u =
              (c[0] - camera_pixel_x(grid, sensor, 0)) / sensor.pixel_pitch;
          const double v =
              (c[1] - camera_pixel_y(grid, sensor, 0)) / sensor.pixel_pitch;
          const long i0 = long(std::floor(u)), j0 = long(std::floor(v));
          const double fu = u - double(i0), fv = v - double(j0);
          double acc = 0.0;
          for (int dj = 0; dj < 2; ++dj)
            for (int di = 0; di < 2; ++di) {
              const long ii = i0 + di, jj = j0 + dj;
              if (ii < 0 || ii >= long(mx) || jj < 0 || jj >= long(my)) continue;
              acc += (di ? fu : 1.0 - fu) * (dj ? fv : 1.0 - fv) *
                     mean_image[std::size_t(ii) + mx * std::size_t(jj)];
            }
          result.f0[grid.index(i, j, k)] = scale * acc;
        }
  }

  // per-frame localization
  const AxialCalibration cal =
      build_axial_calibration(grid, constants, sensor, smoothing_eps, strategy.energy_window_px,
                              strategy.calibration_samples);
  BiplaneOperator op(grid, sensor, constants);
  for (std::size_t l = 0; l < stack.frames.size(); ++l) {
    const Frame& frame = stack.frames[l];
    std::vector<double> p0(np), p1(np);
    double bg_mean = 0.0;
    for (std::size_t m = 0; m < np; ++m) {
      const double b0 = frame.background.empty() ? 0.0 : frame.background[m];
      const double b1 = frame.background.empty() ? 0.0 : frame.background[np + m];
      p0[m] = frame.values[m] - b0;
      p1[m] = frame.values[np + m] - b1;
      bg_mean += b0 + b1;
    }
    bg_mean /= double(2 * np);

    std::vector<double> detect(np);
    for (std::size_t m = 0; m < np; ++m) detect[m] = p0[m] + p1[m];
    gaussian_blur_2d(detect, mx, my, strategy.detection_sigma_px, strategy.detection_sigma_px);
    std::size_t arg = 0;
    double det_max = detect[0];
    for (std::size_t m = 1; m < np; ++m)
      if (detect[m] > det_max) det_max = detect[m], arg = m;
    const double noise_sigma = std::sqrt(std::max(2.0 * bg_mean, 1.0));
    if (!(det_max > strategy.detection_threshold_sigmas * noise_sigma)) {
      result.log.push_back("frame " + std::to_string(l) +
                           ": no blob above detection threshold, dropped");
      continue;
    }
    const std::size_t bx = arg % mx, by = arg / mx;

    double dx = 0.0, dy = 0.0;
    if (bx > 0 && bx + 1 < mx)
      dx = detail::subpixel_offset(detect[arg - 1], detect[arg], detect[arg + 1]);
    if (by > 0 && by + 1 < my)
      dy = detail::subpixel_offset(detect[arg - mx], detect[arg], detect[arg + mx]);
    Vec3 p{camera_pixel_x(grid, sensor, bx) + dx * sensor.pixel_pitch,
           camera_pixel_y(grid, sensor, by) + dy * sensor.pixel_pitch, 0.0};

    const double e0 = detail::windowed_energy(p0, mx, my, long(bx), long(by),
                                              strategy.energy_window_px);
    const double e1 = detail::windowed_energy(p1, mx, my, long(bx), long(by),
                                              strategy.energy_window_px);
    const double ratio = e0 + e1 > 0.0 ? e0 / (e0 + e1) : 0.5;
    p[2] = lookup_axial(cal, ratio, sensor.focal_plane_z);
    p = grid.clamp(p);

    // least-squares amplitude against the free-space template
    const std::vector<double> h = free_space_base(grid, constants, smoothing_eps, op, p);
    double num = 0.0, den = 0.0;
    for (std::size_t m = 0; m < np; ++m) {
      num += h[m] * p0[m] + h[np + m] * p1[m];
      den += h[m] * h[m] + h[np + m] * h[np + m];
    }
    const double a2 = den > 0.0 ? std::max(num / den, 0.0) : 0.0;
    const double a = std::max(std::sqrt(a2), 1e-3);

    result.fluorophores.molecules.push_back({p, a});
    result.kept_frames.push_back(l);
  }
  return result;
}

} // namespace scatloc

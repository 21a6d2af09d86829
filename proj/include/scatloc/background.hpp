#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

#include "scatloc/rng.hpp"
#include "scatloc/sensor.hpp"
#include "scatloc/smoothing.hpp"

namespace scatloc {

struct BackgroundModel {
  double level = 10.0;          // mean photons per pixel
  double spatial_scale = 1.0;   // um, correlation length of the structure
  double temporal_scale = 10.0; // frames between keyframes
  double relative_variation = 0.3;
};

/// Smooth, slowly drifting nonnegative background stacks. Keyframes are
/// Gaussian-blurred white noise, normalized to unit variance, scaled about the
/// level, and linearly interpolated in time.
inline std::vector<std::vector<double>> synthesize_background(const BiplaneConfig& config,
                                                              std::size_t frame_count,
                                                              const BackgroundModel& model,
                                                              std::uint64_t seed) {
  if (frame_count == 0) return {};
  if (!(model.level >= 0.0)) throw std::invalid_argument("background level must be nonnegative");
  if (!(model.temporal_scale >= 1.0))
    throw std::invalid_argument("background temporal scale must be >= 1 frame");
  const std::size_t mx = config.camera_counts[0], my = config.camera_counts[1];
  const std::size_t np = mx * my;
  const double sigma_px = model.spatial_scale / config.pixel_pitch;

  const std::size_t keyframes =
      std::size_t(std::floor(double(frame_count - 1) / model.temporal_scale)) + 2;
  std::vector<std::vector<double>> keys(keyframes);
  for (std::size_t k = 0; k < keyframes; ++k) {
    RandomStream rng(seed, stream_id::make(stream_id::background_keyframe, k));
    std::vector<double> field(2 * np);
    for (double& v : field) v = rng.normal();
    for (int plane = 0; plane < 2; ++plane) {
      std::vector<double> img(field.begin() + long(plane * np),
                              field.begin() + long((plane + 1) * np));
      gaussian_blur_2d(img, mx, my, sigma_px, sigma_px);
      double mean = 0.0;
      for (double v : img) mean += v;
      mean /= double(np);
      double var = 0.0;
      for (double v : img) var += (v - mean) * (v - mean);
      var = np > 1 ? var / double(np - 1) : 1.0;
      const double scale = var > 0.0 ? 1.0 / std::sqrt(var) : 0.0;
      for (std::size_t i = 0; i < np; ++i)
        field[std::size_t(plane) * np + i] =
            std::max(0.0, model.level * (1.0 + model.relative_variation * scale * (img[i] - mean)));
    }
    keys[k] = std::move(field);
  }

  std::vector<std::vector<double>> out(frame_count);
  for (std::size_t l = 0; l < frame_count; ++l) {
    const double t = double(l) / model.temporal_scale;
    const std::size_t k0 = std::min(std::size_t(std::floor(t)), keyframes - 2);
    const double a = t - double(k0);
    std::vector<double> frame(2 * np);
    for (std::size_t i = 0; i < 2 * np; ++i)
      frame[i] = (1.0 - a) * keys[k0][i] + a * keys[k0 + 1][i];
    out[l] = std::move(frame);
  }
  return out;
}

struct BackgroundEstimate {
  std::vector<std::vector<double>> frames;
  std::vector<std::string> warnings;
};

/// Per-pixel temporal running minimum (sliding window) followed by a spatial
/// Gaussian blur. Window sizes larger than the stack are clamped.
inline BackgroundEstimate estimate_background(const FrameStack& stack, double spatial_sigma,
                                              std::size_t temporal_window) {
  BackgroundEstimate result;
  const std::size_t L = stack.frames.size();
  if (L == 0) return result;
  const std::size_t np = stack.config.pixels_per_plane();
  const std::size_t M = 2 * np;
  if (temporal_window == 0) throw std::invalid_argument("temporal window must be positive");
  if (temporal_window > L) {
    result.warnings.push_back("background window " + std::to_string(temporal_window) +
                              " clamped to stack length " + std::to_string(L));
    temporal_window = L;
  }
  const std::size_t half = temporal_window / 2;

  result.frames.assign(L, std::vector<double>(M, 0.0));
  // sliding minimum per pixel with a monotonic deque
  std::vector<double> series(L);
  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t l = 0; l < L; ++l) {
      if (stack.frames[l].values.size() != M)
        throw std::invalid_argument("frame size mismatch in background estimation");
      series[l] = stack.frames[l].values[m];
    }
    std::deque<std::size_t> dq;
    std::size_t right = 0;
    for (std::size_t l = 0; l < L; ++l) {
      const std::size_t lo = l >= half ? l - half : 0;
      const std::size_t hi = std::min(l + (temporal_window - 1 - half), L - 1);
      while (right <= hi) {
        while (!dq.empty() && series[dq.back()] >= series[right]) dq.pop_back();
        dq.push_back(right);
        ++right;
      }
      while (dq.front() < lo) dq.pop_front();
      result.frames[l][m] = series[dq.front()];
    }
  }

  const double sigma_px = spatial_sigma / stack.config.pixel_pitch;
  if (sigma_px > 0.0) {
    const std::size_t mx = stack.config.camera_counts[0], my = stack.config.camera_counts[1];
    for (std::size_t l = 0; l < L; ++l)
      for (int plane = 0; plane < 2; ++plane) {
        std::vector<double> img(result.frames[l].begin() + long(plane * np),
                                result.frames[l].begin() + long((plane + 1) * np));
        gaussian_blur_2d(img, mx, my, sigma_px, sigma_px);
        std::copy(img.begin(), img.end(), result.frames[l].begin() + long(plane * np));
      }
  }
  return result;
}

} // namespace scatloc

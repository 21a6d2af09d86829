#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace scatloc {

/// Truncated Gaussian taps (radius ceil(3.5 sigma)), unnormalized; passes
/// renormalize per position so constants are preserved at boundaries.
inline std::vector<double> gaussian_taps(double sigma) {
  if (!(sigma > 0.0)) return {1.0};
  const int radius = int(std::ceil(3.5 * sigma));
  std::vector<double> taps(2 * radius + 1);
  for (int t = -radius; t <= radius; ++t)
    taps[std::size_t(t + radius)] = std::exp(-0.5 * double(t) * double(t) / (sigma * sigma));
  return taps;
}

/// One renormalized 1-D pass along a strided axis.
inline void gaussian_pass_1d(std::vector<double>& data, std::size_t n, std::size_t stride,
                             std::size_t lines, std::size_t line_stride,
                             const std::vector<double>& taps) {
  const int radius = int(taps.size() / 2);
  std::vector<double> line(n);
  for (std::size_t l = 0; l < lines; ++l) {
    double* base = data.data() + l * line_stride;
    for (std::size_t i = 0; i < n; ++i) line[i] = base[i * stride];
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0, wsum = 0.0;
      for (int t = -radius; t <= radius; ++t) {
        const long j = long(i) + t;
        if (j < 0 || j >= long(n)) continue;
        const double w = taps[std::size_t(t + radius)];
        acc += w * line[std::size_t(j)];
        wsum += w;
      }
      base[i * stride] = acc / wsum;
    }
  }
}

/// Separable renormalized Gaussian blur of a row-major nx*ny image.
inline void gaussian_blur_2d(std::vector<double>& img, std::size_t nx, std::size_t ny,
                             double sigma_x, double sigma_y) {
  if (sigma_x > 0.0) {
    const auto taps = gaussian_taps(sigma_x);
    gaussian_pass_1d(img, nx, 1, ny, nx, taps);
  }
  if (sigma_y > 0.0) {
    const auto taps = gaussian_taps(sigma_y);
    // iterate columns: n = ny with stride nx, one line per x
    std::vector<double> col(ny);
    const int radius = int(taps.size() / 2);
    for (std::size_t x = 0; x < nx; ++x) {
      for (std::size_t y = 0; y < ny; ++y) col[y] = img[y * nx + x];
      for (std::size_t y = 0; y < ny; ++y) {
        double acc = 0.0, wsum = 0.0;
        for (int t = -radius; t <= radius; ++t) {
          const long j = long(y) + t;
          if (j < 0 || j >= long(ny)) continue;
          const double w = taps[std::size_t(t + radius)];
          acc += w * col[std::size_t(j)];
          wsum += w;
        }
        img[y * nx + x] = acc / wsum;
      }
    }
  }
}

/// Separable renormalized Gaussian blur of a row-major (x fastest) volume.
inline void gaussian_blur_3d(std::vector<double>& vol, std::size_t nx, std::size_t ny, std::size_t nz,
                             double sigma) {
  if (!(sigma > 0.0)) return;
  const auto taps = gaussian_taps(sigma);
  const int radius = int(taps.size() / 2);
  auto pass = [&](int axis) {
    const std::size_t n = axis == 0 ? nx : axis == 1 ? ny : nz;
    if (n == 1) return;
    std::vector<double> line(n);
    for (std::size_t a = 0; a < (axis == 0 ? ny : nx); ++a)
      for (std::size_t b = 0; b < (axis == 2 ? ny : nz); ++b) {
        auto at = [&](std::size_t i) -> std::size_t {
          if (axis == 0) return i + nx * (a + ny * b);
          if (axis == 1) return a + nx * (i + ny * b);
          return a + nx * (b + ny * i);
        };
        for (std::size_t i = 0; i < n; ++i) line[i] = vol[at(i)];
        for (std::size_t i = 0; i < n; ++i) {
          double acc = 0.0, wsum = 0.0;
          for (int t = -radius; t <= radius; ++t) {
            const long j = long(i) + t;
            if (j < 0 || j >= long(n)) continue;
            const double w = taps[std::size_t(t + radius)];
            acc += w * line[std::size_t(j)];
            wsum += w;
          }
          vol[at(i)] = acc / wsum;
        }
      }
  };
  pass(0);
  pass(1);
  pass(2);
}

} // namespace scatloc

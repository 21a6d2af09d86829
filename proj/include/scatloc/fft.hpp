#pragma once

#include <complex>
#include <cstddef>
#include <mutex>

#include <fftw3.h>

namespace scatloc {

namespace detail {
// FFTW's planner is not thread-safe; executing distinct plans is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}
} // namespace detail

/// In-place 3-D complex FFT on an owned, aligned buffer. Layout matches the
/// volume containers: x fastest. inverse() is normalized by 1/N.
class Fft3 {
public:
  Fft3(std::size_t nx, std::size_t ny, std::size_t nz) : nx_(nx), ny_(ny), nz_(nz), n_(nx * ny * nz) {
    buffer_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n_));
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    forward_ = fftw_plan_dft_3d(int(nz), int(ny), int(nx), buffer_, buffer_, FFTW_FORWARD, FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_3d(int(nz), int(ny), int(nx), buffer_, buffer_, FFTW_BACKWARD, FFTW_ESTIMATE);
  }

  Fft3(const Fft3&) = delete;
  Fft3& operator=(const Fft3&) = delete;

  ~Fft3() {
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
    fftw_free(buffer_);
  }

  std::complex<double>* data() { return reinterpret_cast<std::complex<double>*>(buffer_); }
  const std::complex<double>* data() const { return reinterpret_cast<const std::complex<double>*>(buffer_); }
  std::size_t size() const { return n_; }
  std::size_t nx() const { return nx_; }
  std::size_t ny() const { return ny_; }
  std::size_t nz() const { return nz_; }

  void forward() { fftw_execute(forward_); }

  void inverse() {
    fftw_execute(inverse_);
    const double scale = 1.0 / double(n_);
    auto* d = data();
    for (std::size_t i = 0; i < n_; ++i) d[i] *= scale;
  }

private:
  std::size_t nx_, ny_, nz_, n_;
  fftw_complex* buffer_;
  fftw_plan forward_;
  fftw_plan inverse_;
};

/// 2-D companion used for camera-plane propagation.
class Fft2 {
public:
  Fft2(std::size_t nx, std::size_t ny) : nx_(nx), ny_(ny), n_(nx * ny) {
    buffer_ = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n_));
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    forward_ = fftw_plan_dft_2d(int(ny), int(nx), buffer_, buffer_, FFTW_FORWARD, FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_2d(int(ny), int(nx), buffer_, buffer_, FFTW_BACKWARD, FFTW_ESTIMATE);
  }

  Fft2(const Fft2&) = delete;
  Fft2& operator=(const Fft2&) = delete;

  ~Fft2() {
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
    fftw_free(buffer_);
  }

  std::complex<double>* data() { return reinterpret_cast<std::complex<double>*>(buffer_); }
  std::size_t size() const { return n_; }
  std::size_t nx() const { return nx_; }
  std::size_t ny() const { return ny_; }

  void forward() { fftw_execute(forward_); }

  void inverse() {
    fftw_execute(inverse_);
    const double scale = 1.0 / double(n_);
    auto* d = data();
    for (std::size_t i = 0; i < n_; ++i) d[i] *= scale;
  }

private:
  std::size_t nx_, ny_, n_;
  fftw_complex* buffer_;
  fftw_plan forward_;
  fftw_plan inverse_;
};

} // namespace scatloc

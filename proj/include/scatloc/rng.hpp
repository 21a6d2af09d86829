#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace scatloc {

/// Philox4x32-10 counter-based generator. The 64-bit seed is the key; the
/// 128-bit counter is split into a 64-bit stream id (high half) and a 64-bit
/// block index (low half), so independent substreams are cheap to derive
/// from one recorded seed.
struct Philox4x32 {
  static constexpr std::uint32_t kMult0 = 0xD2511F53u;
  static constexpr std::uint32_t kMult1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr,
                                            std::array<std::uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t(kMult0) * ctr[0];
      const std::uint64_t p1 = std::uint64_t(kMult1) * ctr[2];
      ctr = {std::uint32_t(p1 >> 32) ^ ctr[1] ^ key[0], std::uint32_t(p1),
             std::uint32_t(p0 >> 32) ^ ctr[3] ^ key[1], std::uint32_t(p0)};
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    return ctr;
  }

  static std::array<std::uint32_t, 4> block(std::uint64_t seed, std::uint64_t stream,
                                            std::uint64_t index) {
    return block({std::uint32_t(index), std::uint32_t(index >> 32),
                  std::uint32_t(stream), std::uint32_t(stream >> 32)},
                 {std::uint32_t(seed), std::uint32_t(seed >> 32)});
  }
};

inline double log_factorial(long k) {
  static const std::vector<double> table = [] {
    std::vector<double> t(64, 0.0);
    for (std::size_t i = 1; i < t.size(); ++i) t[i] = t[i - 1] + std::log(double(i));
    return t;
  }();
  if (k < 0) throw std::invalid_argument("log_factorial: negative argument");
  if (std::size_t(k) < table.size()) return table[std::size_t(k)];
  // Stirling series, accurate to ~1e-12 for k >= 64
  const double x = double(k);
  return (x + 0.5) * std::log(x) - x + 0.91893853320467274178 + 1.0 / (12.0 * x) -
         1.0 / (360.0 * x * x * x);
}

/// Stateful convenience wrapper over Philox. Draws are a pure function of
/// (seed, stream, draw index), so a given stream replays identically.
class RandomStream {
public:
  explicit RandomStream(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream) {}

  std::uint32_t next_u32() {
    if (have_ == 0) {
      buffer_ = Philox4x32::block(seed_, stream_, index_++);
      have_ = 4;
    }
    return buffer_[4 - have_--];
  }

  std::uint64_t next_u64() {
    const std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  /// Uniform in [0, 1) with 53 random bits.
  double next_double() { return double(next_u64() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller.
  double normal() {
    if (has_cached_normal_) {
      has_cached_normal_ = false;
      return cached_normal_;
    }
    double u1 = next_double();
    while (u1 <= 0.0) u1 = next_double();
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    cached_normal_ = r * std::sin(theta);
    has_cached_normal_ = true;
    return r * std::cos(theta);
  }

  /// Poisson counts: Knuth inversion below mean 30, PTRS rejection above.
  long poisson(double mean) {
    if (mean < 0.0 || !std::isfinite(mean))
      throw std::invalid_argument("poisson: mean must be finite and >= 0");
    if (mean == 0.0) return 0;
    if (mean < 30.0) return poisson_inversion(mean);
    return poisson_ptrs(mean);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

private:
  long poisson_inversion(double mean) {
    const double limit = std::exp(-mean);
    long k = 0;
    double p = 1.0;
    do {
      ++k;
      p *= next_double();
    } while (p > limit);
    return k - 1;
  }

  // Hormann's transformed rejection sampler (PTRS).
  long poisson_ptrs(double mean) {
    const double smu = std::sqrt(mean);
    const double b = 0.931 + 2.53 * smu;
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double v_r = 0.9277 - 3.6224 / (b - 2.0);
    const double log_mean = std::log(mean);
    for (;;) {
      const double u = next_double() - 0.5;
      const double v = next_double();
      const double us = 0.5 - std::fabs(u);
      const long k = long(std::floor((2.0 * a / us + b) * u + mean + 0.43));
      if (us >= 0.07 && v <= v_r) return k;
      if (k < 0 || (us < 0.013 && v > us)) continue;
      if (std::log(v) + std::log(inv_alpha) - std::log(a / (us * us) + b) <=
          double(k) * log_mean - mean - log_factorial(k))
        return k;
    }
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t index_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int have_ = 0;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

/// Stream id layout used across the tools: purpose tag in the high bits,
/// per-item index in the low bits.
namespace stream_id {
inline constexpr std::uint64_t make(std::uint32_t purpose, std::uint32_t item = 0) {
  return (std::uint64_t(purpose) << 32) | item;
}
inline constexpr std::uint32_t phantom_placement = 1;
inline constexpr std::uint32_t phantom_amplitudes = 2;
inline constexpr std::uint32_t frame_noise = 3;       // item = frame index
inline constexpr std::uint32_t background_keyframe = 4; // item = keyframe index
} // namespace stream_id

} // namespace scatloc

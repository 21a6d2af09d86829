#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

#include "scatloc/errors.hpp"
#include "scatloc/io.hpp"

namespace scatloc {

namespace detail {

inline void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v >> 24));
  out.push_back(std::uint8_t(v >> 16));
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v));
}

inline void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
                      const std::vector<std::uint8_t>& data) {
  put_u32_be(out, std::uint32_t(data.size()));
  const std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const uLong crc =
      crc32(0L, out.data() + crc_start, uInt(out.size() - crc_start));
  put_u32_be(out, std::uint32_t(crc));
}

} // namespace detail

/// 8-bit grayscale PNG, row major top to bottom.
inline void write_png_gray8(const std::string& path, const std::vector<std::uint8_t>& pixels,
                            std::size_t width, std::size_t height) {
  if (pixels.size() != width * height)
    throw std::invalid_argument("write_png_gray8: pixel buffer size mismatch");
  if (width == 0 || height == 0)
    throw std::invalid_argument("write_png_gray8: empty image");

  std::vector<std::uint8_t> raw;
  raw.reserve(height * (width + 1));
  for (std::size_t y = 0; y < height; ++y) {
    raw.push_back(0); // filter: none
    raw.insert(raw.end(), pixels.begin() + long(y * width),
               pixels.begin() + long((y + 1) * width));
  }
  uLongf bound = compressBound(uLong(raw.size()));
  std::vector<std::uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), uLong(raw.size()), 9) != Z_OK)
    throw io_error("write_png_gray8: deflate failed for " + path);
  compressed.resize(bound);

  std::vector<std::uint8_t> out = {137, 80, 78, 71, 13, 10, 26, 10};
  std::vector<std::uint8_t> ihdr;
  detail::put_u32_be(ihdr, std::uint32_t(width));
  detail::put_u32_be(ihdr, std::uint32_t(height));
  ihdr.push_back(8); // bit depth
  ihdr.push_back(0); // grayscale
  ihdr.push_back(0); // deflate
  ihdr.push_back(0); // adaptive filtering
  ihdr.push_back(0); // no interlace
  detail::put_chunk(out, "IHDR", ihdr);
  detail::put_chunk(out, "IDAT", compressed);
  detail::put_chunk(out, "IEND", {});
  detail::write_file_atomic(path, out);
}

/// Maximum-intensity projections of a volume along z, y and x, linearly
/// scaled to [0, 255] with the given range (lo == hi collapses to zero).
struct SliceRenders {
  std::vector<std::uint8_t> xy, xz, yz;
  std::size_t nx = 0, ny = 0, nz = 0;
  double lo = 0.0, hi = 1.0;
};

inline SliceRenders render_orthogonal_projections(const ScatteringVolume& volume, double lo,
                                                  double hi) {
  const Grid3& g = volume.grid;
  SliceRenders r;
  r.nx = g.nx();
  r.ny = g.ny();
  r.nz = g.nz();
  r.lo = lo;
  r.hi = hi;
  const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
  auto to_byte = [&](double v) {
    const double s = (v - lo) * scale;
    return std::uint8_t(s <= 0.0 ? 0.0 : (s >= 255.0 ? 255.0 : s + 0.5));
  };
  r.xy.assign(r.nx * r.ny, 0);
  r.xz.assign(r.nx * r.nz, 0);
  r.yz.assign(r.ny * r.nz, 0);
  for (std::size_t k = 0; k < r.nz; ++k)
    for (std::size_t j = 0; j < r.ny; ++j)
      for (std::size_t i = 0; i < r.nx; ++i) {
        const double v = volume.values[g.index(i, j, k)];
        auto& xy = r.xy[i + r.nx * j];
        auto& xz = r.xz[i + r.nx * k];
        auto& yz = r.yz[j + r.ny * k];
        const std::uint8_t b = to_byte(v);
        if (b > xy) xy = b;
        if (b > xz) xz = b;
        if (b > yz) yz = b;
      }
  return r;
}

} // namespace scatloc

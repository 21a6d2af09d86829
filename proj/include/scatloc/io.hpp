#pragma once

#include <array>
#include <bit>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "scatloc/domain.hpp"
#include "scatloc/errors.hpp"
#include "scatloc/field.hpp"
#include "scatloc/optimize.hpp"
#include "scatloc/sensor.hpp"

namespace scatloc {

static_assert(std::endian::native == std::endian::little,
              "file containers assume a little-endian host");

namespace detail {

inline void put_bytes(std::vector<std::uint8_t>& out, const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  put_bytes(out, &v, sizeof(T));
}

struct Cursor {
  const std::vector<std::uint8_t>& data;
  std::size_t pos = 0;
  std::string path;

  void need(std::size_t n, const char* what) const {
    if (pos + n > data.size())
      throw io_error(path + ": truncated " + what + " at byte offset " + std::to_string(pos));
  }
  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, data.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  void get_bytes(void* p, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(p, data.data() + pos, n);
    pos += n;
  }
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open " + path + " for reading");
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (in.bad()) throw io_error("read failure on " + path);
  return data;
}

inline void write_file_atomic(const std::string& path, const void* data, std::size_t size) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open " + tmp + " for writing");
    out.write(static_cast<const char*>(data), std::streamsize(size));
    if (!out) throw io_error("write failure on " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw io_error("cannot move " + tmp + " to " + path + ": " + ec.message());
}

inline void write_file_atomic(const std::string& path, const std::vector<std::uint8_t>& data) {
  write_file_atomic(path, data.data(), data.size());
}

inline void write_file_atomic(const std::string& path, const std::string& data) {
  write_file_atomic(path, data.data(), data.size());
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

} // namespace detail

// ---------------------------------------------------------------------------
// volume container

inline constexpr char volume_magic[8] = {'S', 'C', 'L', 'V', 'O', 'L', '1', '\0'};
inline constexpr std::uint32_t container_version = 1;

enum class VolumeKind : std::uint8_t { real64 = 0, complex128 = 1 };

namespace detail {

inline std::vector<std::uint8_t> encode_volume_header(const Grid3& grid, VolumeKind kind) {
  std::vector<std::uint8_t> out;
  put_bytes(out, volume_magic, 8);
  put<std::uint32_t>(out, container_version);
  put<std::uint32_t>(out, 0); // reserved, keeps the magic/version header at 16 bytes
  for (int d = 0; d < 3; ++d) put<std::uint64_t>(out, grid.counts[std::size_t(d)]);
  for (int d = 0; d < 3; ++d) put<double>(out, grid.spacing[d]);
  for (int d = 0; d < 3; ++d) put<double>(out, grid.origin[d]);
  put<std::uint8_t>(out, std::uint8_t(kind));
  return out;
}

inline Grid3 decode_volume_header(Cursor& c, VolumeKind& kind) {
  char magic[8];
  c.get_bytes(magic, 8, "magic");
  if (std::memcmp(magic, volume_magic, 8) != 0)
    throw io_error(c.path + ": bad volume magic at byte offset 0");
  const auto version = c.get<std::uint32_t>("version");
  if (version != container_version)
    throw io_error(c.path + ": unsupported volume container version " + std::to_string(version));
  c.get<std::uint32_t>("reserved");
  std::array<std::size_t, 3> counts;
  for (int d = 0; d < 3; ++d) counts[std::size_t(d)] = std::size_t(c.get<std::uint64_t>("counts"));
  Vec3 spacing, origin;
  for (int d = 0; d < 3; ++d) spacing[d] = c.get<double>("spacing");
  for (int d = 0; d < 3; ++d) origin[d] = c.get<double>("origin");
  const auto k = c.get<std::uint8_t>("kind");
  if (k > 1) throw io_error(c.path + ": unknown volume kind tag " + std::to_string(k));
  kind = VolumeKind(k);
  return make_grid(counts, spacing, origin);
}

} // namespace detail

inline void write_volume(const std::string& path, const ScatteringVolume& volume) {
  std::vector<std::uint8_t> out = detail::encode_volume_header(volume.grid, VolumeKind::real64);
  detail::put_bytes(out, volume.values.data(), volume.values.size() * sizeof(double));
  detail::write_file_atomic(path, out);
}

inline void write_complex_volume(const std::string& path, const ComplexField& field) {
  std::vector<std::uint8_t> out = detail::encode_volume_header(field.grid, VolumeKind::complex128);
  detail::put_bytes(out, field.values.data(), field.values.size() * sizeof(Complex));
  detail::write_file_atomic(path, out);
}

inline ScatteringVolume read_volume(const std::string& path) {
  const std::vector<std::uint8_t> data = detail::read_file(path);
  detail::Cursor c{data, 0, path};
  VolumeKind kind;
  const Grid3 grid = detail::decode_volume_header(c, kind);
  if (kind != VolumeKind::real64)
    throw io_error(path + ": expected a real-valued volume");
  ScatteringVolume out(grid);
  c.get_bytes(out.values.data(), grid.size() * sizeof(double), "voxel data");
  if (c.pos != data.size())
    throw io_error(path + ": trailing bytes at offset " + std::to_string(c.pos));
  return out;
}

inline ComplexField read_complex_volume(const std::string& path) {
  const std::vector<std::uint8_t> data = detail::read_file(path);
  detail::Cursor c{data, 0, path};
  VolumeKind kind;
  const Grid3 grid = detail::decode_volume_header(c, kind);
  if (kind != VolumeKind::complex128)
    throw io_error(path + ": expected a complex-valued volume");
  ComplexField out(grid);
  c.get_bytes(out.values.data(), grid.size() * sizeof(Complex), "voxel data");
  if (c.pos != data.size())
    throw io_error(path + ": trailing bytes at offset " + std::to_string(c.pos));
  return out;
}

// ---------------------------------------------------------------------------
// frame stack container

inline constexpr char framestack_magic[8] = {'S', 'C', 'L', 'F', 'R', 'M', '1', '\0'};

enum class FrameDtype : std::uint32_t { f64 = 0, u32 = 1 };

namespace detail {

inline std::string encode_biplane_kv(const BiplaneConfig& c) {
  std::string out;
  out += "numerical_aperture=" + format_double(c.numerical_aperture) + "\n";
  out += "plane_offset_0_um=" + format_double(c.plane_offsets[0]) + "\n";
  out += "plane_offset_1_um=" + format_double(c.plane_offsets[1]) + "\n";
  out += "pixel_pitch_um=" + format_double(c.pixel_pitch) + "\n";
  out += "camera_nx=" + std::to_string(c.camera_counts[0]) + "\n";
  out += "camera_ny=" + std::to_string(c.camera_counts[1]) + "\n";
  out += "focal_plane_z_um=" + format_double(c.focal_plane_z) + "\n";
  return out;
}

inline BiplaneConfig decode_biplane_kv(const std::string& text, const std::string& path) {
  BiplaneConfig c;
  std::size_t start = 0;
  bool saw[7] = {};
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw io_error(path + ": malformed sensor key-value line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    try {
      if (key == "numerical_aperture") c.numerical_aperture = std::stod(value), saw[0] = true;
      else if (key == "plane_offset_0_um") c.plane_offsets[0] = std::stod(value), saw[1] = true;
      else if (key == "plane_offset_1_um") c.plane_offsets[1] = std::stod(value), saw[2] = true;
      else if (key == "pixel_pitch_um") c.pixel_pitch = std::stod(value), saw[3] = true;
      else if (key == "camera_nx") c.camera_counts[0] = std::size_t(std::stoull(value)), saw[4] = true;
      else if (key == "camera_ny") c.camera_counts[1] = std::size_t(std::stoull(value)), saw[5] = true;
      else if (key == "focal_plane_z_um") c.focal_plane_z = std::stod(value), saw[6] = true;
      else throw io_error(path + ": unknown sensor key '" + key + "'");
    } catch (const io_error&) {
      throw;
    } catch (const std::exception&) {
      throw io_error(path + ": cannot parse sensor value '" + line + "'");
    }
  }
  for (bool s : saw)
    if (!s) throw io_error(path + ": incomplete sensor key-value block");
  return c;
}

} // namespace detail

inline void write_frame_stack(const std::string& path, const FrameStack& stack,
                              FrameDtype dtype = FrameDtype::f64) {
  const std::size_t M = stack.config.measurement_count();
  std::vector<std::uint8_t> out;
  detail::put_bytes(out, framestack_magic, 8);
  detail::put<std::uint32_t>(out, container_version);
  detail::put<std::uint32_t>(out, std::uint32_t(dtype));
  detail::put<std::uint64_t>(out, stack.frames.size());
  detail::put<std::uint64_t>(out, M);
  const std::string kv = detail::encode_biplane_kv(stack.config);
  detail::put<std::uint32_t>(out, std::uint32_t(kv.size()));
  detail::put_bytes(out, kv.data(), kv.size());
  for (const Frame& frame : stack.frames) {
    if (frame.values.size() != M)
      throw io_error(path + ": frame value length does not match the sensor layout");
    detail::put<std::uint64_t>(out, frame.acquisition_index);
    detail::put<std::int32_t>(out, frame.molecule_count);
    detail::put<std::uint8_t>(out, frame.background.empty() ? 0 : 1);
    if (dtype == FrameDtype::f64) {
      detail::put_bytes(out, frame.values.data(), M * sizeof(double));
    } else {
      for (double v : frame.values) {
        if (!(v >= 0.0) || v > double(UINT32_MAX) || v != std::floor(v))
          throw io_error(path + ": frame values are not u32 counts; use the f64 dtype");
        detail::put<std::uint32_t>(out, std::uint32_t(v));
      }
    }
    if (!frame.background.empty()) {
      if (frame.background.size() != M)
        throw io_error(path + ": background length does not match the sensor layout");
      detail::put_bytes(out, frame.background.data(), M * sizeof(double));
    }
  }
  detail::write_file_atomic(path, out);
}

inline FrameStack read_frame_stack(const std::string& path) {
  const std::vector<std::uint8_t> data = detail::read_file(path);
  detail::Cursor c{data, 0, path};
  char magic[8];
  c.get_bytes(magic, 8, "magic");
  if (std::memcmp(magic, framestack_magic, 8) != 0)
    throw io_error(path + ": bad frame stack magic at byte offset 0");
  const auto version = c.get<std::uint32_t>("version");
  if (version != container_version)
    throw io_error(path + ": unsupported frame stack version " + std::to_string(version));
  const auto dtype_raw = c.get<std::uint32_t>("dtype");
  if (dtype_raw > 1) throw io_error(path + ": unknown frame dtype " + std::to_string(dtype_raw));
  const FrameDtype dtype = FrameDtype(dtype_raw);
  const auto L = std::size_t(c.get<std::uint64_t>("frame count"));
  const auto M = std::size_t(c.get<std::uint64_t>("measurement count"));
  const auto kv_len = c.get<std::uint32_t>("sensor block length");
  std::string kv(kv_len, '\0');
  c.get_bytes(kv.data(), kv_len, "sensor block");
  FrameStack stack;
  stack.config = detail::decode_biplane_kv(kv, path);
  if (stack.config.measurement_count() != M)
    throw io_error(path + ": measurement count " + std::to_string(M) +
                   " does not match the sensor block layout");
  stack.frames.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    Frame& frame = stack.frames[l];
    frame.acquisition_index = std::size_t(c.get<std::uint64_t>("acquisition index"));
    frame.molecule_count = c.get<std::int32_t>("molecule count");
    const auto has_bg = c.get<std::uint8_t>("background flag");
    frame.values.resize(M);
    if (dtype == FrameDtype::f64) {
      c.get_bytes(frame.values.data(), M * sizeof(double), "frame values");
    } else {
      for (std::size_t m = 0; m < M; ++m)
        frame.values[m] = double(c.get<std::uint32_t>("frame values"));
    }
    if (has_bg) {
      frame.background.resize(M);
      c.get_bytes(frame.background.data(), M * sizeof(double), "frame background");
    }
  }
  if (c.pos != data.size())
    throw io_error(path + ": trailing bytes at offset " + std::to_string(c.pos));
  return stack;
}

// ---------------------------------------------------------------------------
// fluorophore CSV

inline std::string encode_fluorophores_csv(const FluorophoreSet& set) {
  std::string out = "id,x_um,y_um,z_um,amplitude\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Fluorophore& m = set[i];
    out += std::to_string(i) + "," + detail::format_double(m.position[0]) + "," +
           detail::format_double(m.position[1]) + "," + detail::format_double(m.position[2]) +
           "," + detail::format_double(m.amplitude) + "\n";
  }
  return out;
}

inline void write_fluorophores_csv(const std::string& path, const FluorophoreSet& set) {
  detail::write_file_atomic(path, encode_fluorophores_csv(set));
}

inline FluorophoreSet parse_fluorophores_csv(const std::string& text, const std::string& path) {
  FluorophoreSet set;
  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != "id,x_um,y_um,z_um,amplitude")
        throw io_error(path + ": unexpected CSV header '" + line + "'");
      continue;
    }
    std::array<std::string, 5> fields;
    std::size_t field = 0, pos = 0;
    while (field < 5) {
      const std::size_t comma = line.find(',', pos);
      if (comma == std::string::npos) {
        fields[field++] = line.substr(pos);
        pos = line.size();
        break;
      }
      fields[field++] = line.substr(pos, comma - pos);
      pos = comma + 1;
    }
    if (field != 5 || pos != line.size())
      throw io_error(path + ": line " + std::to_string(line_no) + " does not have 5 fields");
    try {
      Fluorophore m;
      m.position = {std::stod(fields[1]), std::stod(fields[2]), std::stod(fields[3])};
      m.amplitude = std::stod(fields[4]);
      set.molecules.push_back(m);
    } catch (const std::exception&) {
      throw io_error(path + ": cannot parse line " + std::to_string(line_no) + ": '" + line + "'");
    }
  }
  return set;
}

inline FluorophoreSet read_fluorophores_csv(const std::string& path) {
  const std::vector<std::uint8_t> data = detail::read_file(path);
  return parse_fluorophores_csv(std::string(data.begin(), data.end()), path);
}

// ---------------------------------------------------------------------------
// objective trace CSV

/// Timing is deliberately left out so the trace re-hashes identically across
/// runs; per-block seconds go to the progress sidecar instead.
inline std::string encode_history_csv(const std::vector<BlockRecord>& history) {
  std::string out = "outer,block,objective,data_term,tv_term\n";
  for (const BlockRecord& r : history)
    out += std::to_string(r.outer) + "," + r.block + "," + detail::format_double(r.objective) +
           "," + detail::format_double(r.data_term) + "," + detail::format_double(r.tv_term) +
           "\n";
  return out;
}

inline void write_history_csv(const std::string& path, const std::vector<BlockRecord>& history) {
  detail::write_file_atomic(path, encode_history_csv(history));
}

} // namespace scatloc

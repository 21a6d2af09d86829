#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "scatloc/errors.hpp"
#include "scatloc/experiment.hpp"

namespace scatloc {

/// Flat-sectioned key-value configuration text:
///   [section]
///   key = value   # trailing comments allowed
/// Every key belongs to the fixed schema; unknown keys are hard errors so
/// typos cannot silently fall back to defaults.
class ConfigMap {
 public:
  struct Entry {
    std::string value;
    int line = 0;
    mutable bool consumed = false;
  };

  static ConfigMap parse(const std::string& text, const std::string& path) {
    ConfigMap map;
    map.path_ = path;
    std::string section;
    int line_no = 0;
    std::size_t start = 0;
    std::vector<std::string> errors;
    while (start <= text.size()) {
      std::size_t end = text.find('\n', start);
      if (end == std::string::npos) end = text.size();
      std::string line = text.substr(start, end - start);
      start = end + 1;
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) {
        if (end == text.size()) break;
        continue;
      }
      if (line.front() == '[') {
        if (line.back() != ']') {
          errors.push_back(path + ":" + std::to_string(line_no) + ": malformed section header");
          continue;
        }
        section = trim(line.substr(1, line.size() - 2));
        if (section.empty())
          errors.push_back(path + ":" + std::to_string(line_no) + ": empty section name");
        continue;
      }
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos) {
        errors.push_back(path + ":" + std::to_string(line_no) + ": expected key = value");
        continue;
      }
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (key.empty()) {
        errors.push_back(path + ":" + std::to_string(line_no) + ": empty key");
        continue;
      }
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
        value = value.substr(1, value.size() - 2);
      const std::string full = section.empty() ? key : section + "." + key;
      if (map.entries_.count(full))
        errors.push_back(path + ":" + std::to_string(line_no) + ": duplicate key '" + full + "'");
      else
        map.entries_[full] = Entry{value, line_no, false};
      if (end == text.size()) break;
    }
    if (!errors.empty()) throw config_error(join(errors));
    return map;
  }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    it->second.consumed = true;
    return it->second.value;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    it->second.consumed = true;
    try {
      std::size_t used = 0;
      const double v = std::stod(it->second.value, &used);
      if (used != it->second.value.size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw config_error(where(it) + ": cannot parse '" + it->second.value + "' as a number");
    }
  }

  long long get_int(const std::string& key, long long fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    it->second.consumed = true;
    try {
      std::size_t used = 0;
      const long long v = std::stoll(it->second.value, &used);
      if (used != it->second.value.size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw config_error(where(it) + ": cannot parse '" + it->second.value + "' as an integer");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    it->second.consumed = true;
    if (it->second.value == "true") return true;
    if (it->second.value == "false") return false;
    throw config_error(where(it) + ": expected true or false, got '" + it->second.value + "'");
  }

  std::vector<std::string> get_list(const std::string& key,
                                    const std::vector<std::string>& fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    it->second.consumed = true;
    std::vector<std::string> out;
    std::size_t start = 0;
    const std::string& v = it->second.value;
    while (start <= v.size()) {
      std::size_t comma = v.find(',', start);
      if (comma == std::string::npos) comma = v.size();
      const std::string item = trim(v.substr(start, comma - start));
      if (!item.empty()) out.push_back(item);
      if (comma == v.size()) break;
      start = comma + 1;
    }
    return out;
  }

  /// Every key must have been consumed by the schema; leftovers are typos.
  void reject_unknown() const {
    std::vector<std::string> errors;
    for (const auto& [key, entry] : entries_)
      if (!entry.consumed)
        errors.push_back(path_ + ":" + std::to_string(entry.line) + ": unknown key '" + key + "'");
    if (!errors.empty()) throw config_error(join(errors));
  }

 private:
  static std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && (s[a] == ' ' || s[a] == '\t')) ++a;
    while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t')) --b;
    return s.substr(a, b - a);
  }
  static std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (i) out += "\n";
      out += parts[i];
    }
    return out;
  }
  std::string where(std::map<std::string, Entry>::const_iterator it) const {
    return path_ + ":" + std::to_string(it->second.line);
  }

  std::map<std::string, Entry> entries_;
  std::string path_;
};

/// Full protocol schema shared by all commands; each command uses the parts
/// it needs, so one file can drive the whole pipeline.
inline ProtocolConfig load_protocol(const ConfigMap& cfg) {
  ProtocolConfig p;

  const auto nx = std::size_t(cfg.get_int("grid.nx", 32));
  const auto ny = std::size_t(cfg.get_int("grid.ny", 32));
  const auto nz = std::size_t(cfg.get_int("grid.nz", 16));
  const double spacing = cfg.get_double("grid.spacing_um", 0.1);
  Vec3 sp{cfg.get_double("grid.spacing_x_um", spacing),
          cfg.get_double("grid.spacing_y_um", spacing),
          cfg.get_double("grid.spacing_z_um", spacing)};
  Vec3 origin{cfg.get_double("grid.origin_x_um", -0.5 * double(nx) * sp[0]),
              cfg.get_double("grid.origin_y_um", -0.5 * double(ny) * sp[1]),
              cfg.get_double("grid.origin_z_um", 0.0)};
  p.grid = make_grid({nx, ny, nz}, sp, origin);

  p.constants = OpticalConstants(cfg.get_double("optics.wavelength_um", 0.647),
                                 cfg.get_double("optics.background_ri", 1.333));

  p.sensor.numerical_aperture = cfg.get_double("sensor.numerical_aperture", 1.2);
  p.sensor.plane_offsets[0] = cfg.get_double("sensor.plane_offset_0_um", -0.3);
  p.sensor.plane_offsets[1] = cfg.get_double("sensor.plane_offset_1_um", 0.3);
  p.sensor.pixel_pitch = cfg.get_double("sensor.pixel_pitch_um", 0.1);
  p.sensor.camera_counts[0] = std::size_t(cfg.get_int("sensor.camera_nx", static_cast<long long>(nx)));
  p.sensor.camera_counts[1] = std::size_t(cfg.get_int("sensor.camera_ny", static_cast<long long>(ny)));
  p.sensor.focal_plane_z = cfg.get_double(
      "sensor.focal_plane_z_um", origin[2] + 0.5 * double(nz) * sp[2]);

  p.smoothing_eps = cfg.get_double("model.smoothing_eps_um2", 1e-4);
  p.solver.tol = cfg.get_double("model.solver_tol", 1e-8);
  p.solver.max_iter = int(cfg.get_int("model.solver_max_iter", 200));
  const std::string scheme = cfg.get_string("model.solver_scheme", "bicgstab");
  if (scheme == "bicgstab")
    p.solver.scheme = LsScheme::bicgstab;
  else if (scheme == "richardson")
    p.solver.scheme = LsScheme::richardson;
  else
    throw config_error("model.solver_scheme must be bicgstab or richardson, got '" + scheme + "'");
  p.pad_factor = unsigned(cfg.get_int("model.pad_factor", 2));

  ContrastShape shape;
  const std::string kind = cfg.get_string("phantom.shape", "ellipsoid");
  if (kind == "ellipsoid")
    shape.kind = ContrastShape::Kind::ellipsoid;
  else if (kind == "shell")
    shape.kind = ContrastShape::Kind::shell;
  else
    throw config_error("phantom.shape must be ellipsoid or shell, got '" + kind + "'");
  const Vec3 ext = p.grid.extent();
  shape.center = {cfg.get_double("phantom.center_x_um", p.grid.origin[0] + 0.5 * ext[0]),
                  cfg.get_double("phantom.center_y_um", p.grid.origin[1] + 0.5 * ext[1]),
                  cfg.get_double("phantom.center_z_um", p.grid.origin[2] + 0.5 * ext[2])};
  shape.semi_axes = {cfg.get_double("phantom.semi_axis_x_um", 0.3 * ext[0]),
                     cfg.get_double("phantom.semi_axis_y_um", 0.3 * ext[1]),
                     cfg.get_double("phantom.semi_axis_z_um", 0.3 * ext[2])};
  shape.outer_radius = cfg.get_double("phantom.outer_radius_um", 0.25 * ext[0]);
  shape.thickness = cfg.get_double("phantom.thickness_um", 0.2);
  shape.delta_ri = cfg.get_double("phantom.delta_ri", 0.05);
  p.contrast.shapes = {shape};

  p.frames = std::size_t(cfg.get_int("phantom.frames", 50));
  p.mean_amplitude = cfg.get_double("phantom.mean_amplitude", 1000.0);
  p.min_separation = cfg.get_double("phantom.min_separation_um", 0.0);
  const std::string placement = cfg.get_string("phantom.placement", "inside-support");
  if (placement == "inside-support")
    p.placement = MoleculePlacement::inside_support;
  else if (placement == "uniform")
    p.placement = MoleculePlacement::uniform;
  else
    throw config_error("phantom.placement must be inside-support or uniform, got '" + placement +
                       "'");

  p.background.level = cfg.get_double("background.level", 10.0);
  p.background.spatial_scale = cfg.get_double("background.spatial_scale_um", 1.0);
  p.background.temporal_scale = cfg.get_double("background.temporal_scale_frames", 10.0);
  p.background.relative_variation = cfg.get_double("background.relative_variation", 0.3);
  p.apply_noise = cfg.get_bool("background.apply_noise", true);

  p.estimate_backgrounds = cfg.get_bool("preprocess.estimate_background", true);
  p.background_sigma = cfg.get_double("preprocess.background_sigma_um", 1.0);
  p.background_window = std::size_t(cfg.get_int("preprocess.background_window_frames", 51));

  p.init.peak_potential = cfg.get_double("init.peak_potential", 0.1);
  p.init.detection_sigma_px = cfg.get_double("init.detection_sigma_px", 1.0);
  p.init.detection_threshold_sigmas = cfg.get_double("init.detection_threshold_sigmas", 3.0);
  p.init.energy_window_px = int(cfg.get_int("init.energy_window_px", 5));
  p.init.calibration_samples = std::size_t(cfg.get_int("init.calibration_samples", 65));

  p.optimizer.tv_weight = cfg.get_double("optimizer.tv_weight", 1e-3);
  p.optimizer.kl_beta = cfg.get_double("optimizer.kl_beta", 1e-8);
  p.optimizer.outer_iterations = int(cfg.get_int("optimizer.outer_iterations", 20));
  p.optimizer.objective_tolerance = cfg.get_double("optimizer.objective_tolerance", 1e-5);
  p.optimizer.newton_steps = int(cfg.get_int("optimizer.newton_steps", 3));
  p.optimizer.position_steps = int(cfg.get_int("optimizer.position_steps", 5));
  p.optimizer.fista_steps = int(cfg.get_int("optimizer.fista_steps", 10));
  p.optimizer.tv_prox.max_iter = int(cfg.get_int("optimizer.tv_inner_iterations", 30));
  p.optimizer.tv_prox.gap_tol = cfg.get_double("optimizer.tv_gap_tol", 0.0);
  p.optimizer.position_step = cfg.get_double("optimizer.position_step_um", 0.05);
  p.optimizer.relaxation = cfg.get_double("optimizer.relaxation", 1.3);
  p.optimizer.amplitude_floor = cfg.get_double("optimizer.amplitude_floor", 1e-6);
  p.optimizer.checkpoint_every = int(cfg.get_int("optimizer.checkpoint_every", 0));

  p.match_radius = cfg.get_double("metrics.match_radius_um", 0.5);
  p.ssim_sigma = cfg.get_double("metrics.ssim_sigma_voxels", 1.5);

  p.arms = cfg.get_list("experiment.arms", {"init-only", "joint", "true-pos-amp"});

  validate_protocol(p);
  return p;
}

inline std::uint64_t protocol_seed(const ConfigMap& cfg, std::uint64_t fallback = 1) {
  return std::uint64_t(cfg.get_int("experiment.seed", static_cast<long long>(fallback)));
}

} // namespace scatloc

#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scatloc/config.hpp"
#include "scatloc/errors.hpp"
#include "scatloc/experiment.hpp"
#include "scatloc/io.hpp"
#include "scatloc/manifest.hpp"
#include "scatloc/png.hpp"

namespace scatloc {

inline void log_line(const char* level, const char* module, const std::string& message,
                     const std::vector<std::pair<std::string, std::string>>& kv = {}) {
  std::string out = std::string("level=") + level + " module=" + module + " msg=\"" + message +
                    "\"";
  for (const auto& [k, v] : kv) out += " " + k + "=" + v;
  std::fprintf(stderr, "%s\n", out.c_str());
}

namespace detail {

/// Removes this run's outputs if the command throws midway.
class OutputTracker {
 public:
  explicit OutputTracker(std::string dir) : dir_(std::move(dir)) {}

  std::string path(const std::string& name) {
    const std::string full = (std::filesystem::path(dir_) / name).string();
    written_.push_back(full);
    return full;
  }

  void keep() { written_.clear(); }

  ~OutputTracker() {
    for (const std::string& p : written_) {
      std::error_code ec;
      std::filesystem::remove(p, ec);
      std::filesystem::remove(p + ".tmp", ec);
    }
  }

 private:
  std::string dir_;
  std::vector<std::string> written_;
};

inline std::string read_text_file(const std::string& path) {
  const std::vector<std::uint8_t> data = read_file(path);
  return std::string(data.begin(), data.end());
}

inline void ensure_directory(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw io_error("cannot create directory " + dir + ": " + ec.message());
}

inline ManifestEntry hashed_entry(const std::string& dir, const std::string& name) {
  return {name, hash_file((std::filesystem::path(dir) / name).string())};
}

class ProgressWriter {
 public:
  explicit ProgressWriter(const std::string& path) : out_(path, std::ios::trunc) {}
  void event(const nlohmann::json& j) {
    if (!out_) return;
    out_ << j.dump() << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

} // namespace detail

// ---------------------------------------------------------------------------
// simulate

inline RunManifest cmd_simulate(const std::string& config_text, const std::string& config_name,
                                const std::string& out_dir, std::uint64_t seed, unsigned threads,
                                FrameDtype dtype = FrameDtype::f64) {
  const ConfigMap cfg = ConfigMap::parse(config_text, config_name);
  const ProtocolConfig protocol = load_protocol(cfg);
  (void)protocol_seed(cfg, seed); // marks experiment.seed consumed; the caller resolved it
  cfg.reject_unknown();

  detail::ensure_directory(out_dir);
  detail::OutputTracker outputs(out_dir);

  log_line("info", "simulate", "building forward model",
           {{"frames", std::to_string(protocol.frames)}, {"seed", std::to_string(seed)}});
  ForwardModel model = make_forward_model(protocol.grid, protocol.constants, protocol.sensor,
                                          protocol.smoothing_eps, protocol.solver,
                                          protocol.pad_factor);
  for (const std::string& w : biplane_warnings(protocol.sensor, protocol.constants))
    log_line("warn", "simulate", w);
  auto contexts = make_contexts(model, threads);

  PhantomResult phantom =
      generate_phantom(protocol.grid, protocol.contrast, protocol.frames,
                       protocol.min_separation, protocol.mean_amplitude, seed,
                       protocol.constants, protocol.placement);
  const std::vector<std::vector<double>> backgrounds =
      synthesize_background(protocol.sensor, protocol.frames, protocol.background, seed);
  SimulationResult sim = simulate_stack(model, contexts, phantom.potential, phantom.fluorophores,
                                        backgrounds, seed, protocol.apply_noise);

  bool solver_trouble = false;
  for (const SolveReport& r : sim.reports) solver_trouble = solver_trouble || !r.converged;

  write_volume(outputs.path("truth_potential.vol"), phantom.potential);
  write_fluorophores_csv(outputs.path("truth_fluorophores.csv"), phantom.fluorophores);
  write_frame_stack(outputs.path("frames.stack"), sim.stack, dtype);
  FrameStack bg_stack;
  bg_stack.config = protocol.sensor;
  bg_stack.frames.resize(backgrounds.size());
  for (std::size_t l = 0; l < backgrounds.size(); ++l) {
    bg_stack.frames[l].values = backgrounds[l];
    bg_stack.frames[l].acquisition_index = l;
    bg_stack.frames[l].molecule_count = 0;
  }
  write_frame_stack(outputs.path("backgrounds.stack"), bg_stack, FrameDtype::f64);

  RunManifest manifest;
  manifest.command = "simulate";
  manifest.seed = seed;
  manifest.threads = threads;
  manifest.config_text = config_text;
  manifest.created_utc = utc_timestamp();
  manifest.status = solver_trouble ? "solver-failure" : "ok";
  if (solver_trouble)
    manifest.notes.push_back("one or more forward solves did not reach the requested tolerance");
  for (const char* name :
       {"truth_potential.vol", "truth_fluorophores.csv", "frames.stack", "backgrounds.stack"})
    manifest.outputs.push_back(detail::hashed_entry(out_dir, name));
  write_manifest(outputs.path("manifest.json"), manifest);
  outputs.keep();
  log_line("info", "simulate", "done",
           {{"out", out_dir}, {"status", manifest.status}});
  return manifest;
}

// ---------------------------------------------------------------------------
// reconstruct

struct ReconstructOptions {
  std::string positions_csv; // bypass the localizer when set
  bool frozen_positions = false;
  bool frozen_amplitudes = false;
};

inline RunManifest cmd_reconstruct(const std::string& config_text, const std::string& config_name,
                                   const std::string& frames_path, const std::string& out_dir,
                                   std::uint64_t seed, unsigned threads,
                                   const ReconstructOptions& options = {}) {
  const ConfigMap cfg = ConfigMap::parse(config_text, config_name);
  ProtocolConfig protocol = load_protocol(cfg);
  (void)protocol_seed(cfg, seed);
  cfg.reject_unknown();

  FrameStack stack = read_frame_stack(frames_path);
  const bool sensor_in_config =
      cfg.has("sensor.numerical_aperture") || cfg.has("sensor.plane_offset_0_um") ||
      cfg.has("sensor.plane_offset_1_um") || cfg.has("sensor.pixel_pitch_um") ||
      cfg.has("sensor.camera_nx") || cfg.has("sensor.camera_ny") ||
      cfg.has("sensor.focal_plane_z_um");
  if (sensor_in_config) {
    const BiplaneConfig& a = protocol.sensor;
    const BiplaneConfig& b = stack.config;
    if (a.numerical_aperture != b.numerical_aperture || a.plane_offsets != b.plane_offsets ||
        a.pixel_pitch != b.pixel_pitch || a.camera_counts != b.camera_counts ||
        a.focal_plane_z != b.focal_plane_z)
      throw config_error(config_name +
                         ": [sensor] section conflicts with the sensor block in " + frames_path);
  }
  protocol.sensor = stack.config;

  FluorophoreSet csv_positions;
  if (!options.positions_csv.empty()) {
    csv_positions = read_fluorophores_csv(options.positions_csv);
    if (csv_positions.size() != stack.frames.size())
      throw config_error(options.positions_csv + ": expected one row per frame (" +
                         std::to_string(stack.frames.size()) + "), got " +
                         std::to_string(csv_positions.size()));
  }

  detail::ensure_directory(out_dir);
  detail::OutputTracker outputs(out_dir);
  detail::ProgressWriter progress(outputs.path("progress.jsonl"));

  if (protocol.estimate_backgrounds) {
    BackgroundEstimate est =
        estimate_background(stack, protocol.background_sigma, protocol.background_window);
    for (const std::string& w : est.warnings) log_line("warn", "reconstruct", w);
    for (std::size_t l = 0; l < stack.frames.size(); ++l)
      stack.frames[l].background = est.frames[l];
  }

  ForwardModel model = make_forward_model(protocol.grid, protocol.constants, protocol.sensor,
                                          protocol.smoothing_eps, protocol.solver,
                                          protocol.pad_factor);
  for (const std::string& w : biplane_warnings(protocol.sensor, protocol.constants))
    log_line("warn", "reconstruct", w);

  InitResult init = initialize(stack, protocol.grid, protocol.constants, protocol.smoothing_eps,
                               protocol.init);
  for (const std::string& line : init.log) log_line("info", "localizer", line);

  FluorophoreSet start;
  std::vector<std::size_t> kept;
  if (!options.positions_csv.empty()) {
    start = csv_positions;
    kept.resize(stack.frames.size());
    for (std::size_t l = 0; l < kept.size(); ++l) kept[l] = l;
  } else {
    start = init.fluorophores;
    kept = init.kept_frames;
  }
  if (start.empty()) throw solver_error("initialization kept no frames; nothing to reconstruct");

  FrameStack work;
  work.config = stack.config;
  for (std::size_t idx : kept) work.frames.push_back(stack.frames[idx]);

  OptimConfig opt = protocol.optimizer;
  opt.threads = threads;
  opt.update_positions = !options.frozen_positions;
  opt.update_amplitudes = !options.frozen_amplitudes;

  JointOptimizer optimizer(model, work, opt, init.f0, start);
  const std::string checkpoint_dir = (std::filesystem::path(out_dir) / "checkpoints").string();
  if (opt.checkpoint_every > 0) detail::ensure_directory(checkpoint_dir);
  OptimResult result = optimizer.run([&](int outer, const JointOptimizer& state) {
    char tag[32];
    std::snprintf(tag, sizeof tag, "iter_%04d", outer + 1);
    const std::string base = (std::filesystem::path(checkpoint_dir) / tag).string();
    write_volume(base + ".vol", state.volume());
    write_fluorophores_csv(base + ".csv", state.fluorophores());
    nlohmann::json j;
    j["outer"] = outer + 1;
    j["objective"] = state.history().empty() ? 0.0 : state.history().back().objective;
    j["events"] = state.events();
    detail::write_file_atomic(base + ".json", j.dump(2) + "\n");
    progress.event({{"event", "checkpoint"},
                    {"outer", outer + 1},
                    {"objective", state.history().back().objective}});
  });

  // fluorophore ids refer to the original acquisition indices
  FluorophoreSet out_fluors = result.fluorophores;
  write_volume(outputs.path("volume.vol"), result.f);
  {
    std::string csv = "id,x_um,y_um,z_um,amplitude\n";
    for (std::size_t i = 0; i < out_fluors.size(); ++i) {
      const Fluorophore& m = out_fluors[i];
      csv += std::to_string(work.frames[i].acquisition_index) + "," +
             detail::format_double(m.position[0]) + "," + detail::format_double(m.position[1]) +
             "," + detail::format_double(m.position[2]) + "," +
             detail::format_double(m.amplitude) + "\n";
    }
    detail::write_file_atomic(outputs.path("fluorophores.csv"), csv);
  }
  write_history_csv(outputs.path("history.csv"), result.history);

  nlohmann::json report;
  report["kept_frames"] = kept;
  report["outer_iterations"] = result.outer_iterations_run;
  report["converged"] = result.converged;
  report["final_objective"] = result.final_objective;
  report["events"] = result.events;
  report["initializer_log"] = init.log;
  detail::write_file_atomic(outputs.path("reconstruction.json"), report.dump(2) + "\n");

  const bool solver_trouble = !result.events.empty();
  RunManifest manifest;
  manifest.command = "reconstruct";
  manifest.seed = seed;
  manifest.threads = threads;
  manifest.config_text = config_text;
  manifest.created_utc = utc_timestamp();
  manifest.args["frames"] = frames_path;
  if (!options.positions_csv.empty()) manifest.args["positions"] = options.positions_csv;
  if (options.frozen_positions) manifest.args["frozen-positions"] = "true";
  if (options.frozen_amplitudes) manifest.args["frozen-amplitudes"] = "true";
  manifest.inputs.push_back({frames_path, hash_file(frames_path)});
  if (!options.positions_csv.empty())
    manifest.inputs.push_back({options.positions_csv, hash_file(options.positions_csv)});
  for (const char* name : {"volume.vol", "fluorophores.csv", "history.csv", "reconstruction.json"})
    manifest.outputs.push_back(detail::hashed_entry(out_dir, name));
  manifest.status = solver_trouble ? "solver-failure" : "ok";
  for (const std::string& e : result.events) manifest.notes.push_back(e);
  write_manifest(outputs.path("manifest.json"), manifest);
  outputs.keep();
  log_line("info", "reconstruct", "done",
           {{"out", out_dir},
            {"objective", std::to_string(result.final_objective)},
            {"status", manifest.status}});
  return manifest;
}

// ---------------------------------------------------------------------------
// evaluate

inline RunManifest cmd_evaluate(const std::string& truth_dir, const std::string& recon_dir,
                                const std::string& out_path, const std::string& config_text = "",
                                const std::string& config_name = "<none>") {
  double match_radius = 0.5, ssim_sigma = 1.5;
  if (!config_text.empty()) {
    const ConfigMap cfg = ConfigMap::parse(config_text, config_name);
    const ProtocolConfig protocol = load_protocol(cfg); // full schema; only metrics used here
    (void)protocol_seed(cfg, 1);
    cfg.reject_unknown();
    match_radius = protocol.match_radius;
    ssim_sigma = protocol.ssim_sigma;
  }

  const auto truth_vol =
      read_volume((std::filesystem::path(truth_dir) / "truth_potential.vol").string());
  const auto truth_fluors =
      read_fluorophores_csv((std::filesystem::path(truth_dir) / "truth_fluorophores.csv").string());
  const auto recon_vol = read_volume((std::filesystem::path(recon_dir) / "volume.vol").string());
  const auto recon_fluors =
      read_fluorophores_csv((std::filesystem::path(recon_dir) / "fluorophores.csv").string());

  if (!(truth_vol.grid == recon_vol.grid))
    throw std::invalid_argument("truth and reconstruction grids do not match");

  const double ssim = ssim_volume(truth_vol, recon_vol, ssim_sigma);
  const MatchResult match = match_and_rmse(recon_fluors, truth_fluors, match_radius);

  nlohmann::json j;
  j["ssim"] = ssim;
  j["match_radius_um"] = match_radius;
  j["matched"] = match.pairs.size();
  j["unmatched_estimates"] = match.unmatched_estimates;
  j["unmatched_truth"] = match.unmatched_truth;
  j["has_rmse"] = match.has_rmse;
  if (match.has_rmse) j["rmse_3d_um"] = match.rmse_3d;
  detail::write_file_atomic(out_path, j.dump(2) + "\n");

  RunManifest manifest;
  manifest.command = "evaluate";
  manifest.config_text = config_text;
  manifest.created_utc = utc_timestamp();
  manifest.args["truth"] = truth_dir;
  manifest.args["recon"] = recon_dir;
  manifest.args["report"] = out_path;
  for (const char* name : {"truth_potential.vol", "truth_fluorophores.csv"}) {
    const std::string p = (std::filesystem::path(truth_dir) / name).string();
    manifest.inputs.push_back({p, hash_file(p)});
  }
  for (const char* name : {"volume.vol", "fluorophores.csv"}) {
    const std::string p = (std::filesystem::path(recon_dir) / name).string();
    manifest.inputs.push_back({p, hash_file(p)});
  }
  manifest.outputs.push_back({out_path, hash_file(out_path)});
  write_manifest(out_path + ".manifest.json", manifest);
  log_line("info", "evaluate", "done",
           {{"ssim", std::to_string(ssim)},
            {"rmse_um", match.has_rmse ? std::to_string(match.rmse_3d) : "n/a"}});
  return manifest;
}

// ---------------------------------------------------------------------------
// bench

inline RunManifest cmd_bench(const std::string& config_text, const std::string& config_name,
                             const std::string& out_dir, std::uint64_t seed, unsigned threads) {
  const ConfigMap cfg = ConfigMap::parse(config_text, config_name);
  const ProtocolConfig protocol = load_protocol(cfg);
  (void)protocol_seed(cfg, seed);
  cfg.reject_unknown();

  detail::ensure_directory(out_dir);
  detail::OutputTracker outputs(out_dir);

  log_line("info", "bench", "running experiment",
           {{"seed", std::to_string(seed)}, {"arms", std::to_string(protocol.arms.size())}});
  detail::ProgressWriter progress(outputs.path("progress.jsonl"));
  const ExperimentReport report =
      run_experiment(protocol, seed, threads, [&](const ArmReport& arm) {
        nlohmann::json e{{"event", "arm-finished"},
                         {"arm", arm.name},
                         {"completed", arm.completed},
                         {"seconds", arm.seconds}};
        if (arm.has_ssim) e["ssim"] = arm.ssim;
        if (arm.has_rmse) e["rmse_3d_um"] = arm.rmse_3d;
        progress.event(e);
        log_line("info", "bench", "arm finished",
                 {{"arm", arm.name}, {"completed", arm.completed ? "yes" : "no"}});
      });

  // render truth + per-arm volumes with one shared linear scale
  double lo = report.truth_volume.values[0], hi = lo;
  for (double v : report.truth_volume.values) lo = std::min(lo, v), hi = std::max(hi, v);

  std::vector<std::string> render_names;
  auto render = [&](const std::string& stem, const ScatteringVolume& volume) {
    const SliceRenders r = render_orthogonal_projections(volume, lo, hi);
    write_png_gray8(outputs.path(stem + "_xy.png"), r.xy, r.nx, r.ny);
    write_png_gray8(outputs.path(stem + "_xz.png"), r.xz, r.nx, r.nz);
    write_png_gray8(outputs.path(stem + "_yz.png"), r.yz, r.ny, r.nz);
    render_names.push_back(stem + "_xy.png");
    render_names.push_back(stem + "_xz.png");
    render_names.push_back(stem + "_yz.png");
  };
  render("truth", report.truth_volume);
  for (const ArmReport& arm : report.arms)
    if (arm.completed) render(arm.name, arm.volume);

  // report.json holds only run-deterministic values; wall-clock numbers stay
  // in progress.jsonl and the stderr log so re-runs hash identically
  nlohmann::json j;
  j["seed"] = report.seed;
  j["all_completed"] = report.all_completed;
  j["kept_frames"] = report.kept_frames;
  j["init_log"] = report.init_log;
  j["render_scale"] = {{"lo", lo}, {"hi", hi}};
  j["arms"] = nlohmann::json::array();
  for (const ArmReport& arm : report.arms) {
    nlohmann::json a;
    a["name"] = arm.name;
    a["completed"] = arm.completed;
    if (!arm.error.empty()) a["error"] = arm.error;
    if (arm.has_ssim) a["ssim"] = arm.ssim;
    if (arm.has_rmse) a["rmse_3d_um"] = arm.rmse_3d;
    a["matched"] = arm.matched;
    a["unmatched_estimates"] = arm.unmatched_estimates;
    a["unmatched_truth"] = arm.unmatched_truth;
    a["events"] = arm.events;
    nlohmann::json trace = nlohmann::json::array();
    for (const BlockRecord& r : arm.history)
      trace.push_back({{"outer", r.outer}, {"block", r.block}, {"objective", r.objective}});
    a["objective_trace"] = trace;
    j["arms"].push_back(std::move(a));
  }
  detail::write_file_atomic(outputs.path("report.json"), j.dump(2) + "\n");

  RunManifest manifest;
  manifest.command = "bench";
  manifest.seed = seed;
  manifest.threads = threads;
  manifest.config_text = config_text;
  manifest.created_utc = utc_timestamp();
  manifest.status = report.all_completed ? "ok" : "arm-failure";
  manifest.outputs.push_back(detail::hashed_entry(out_dir, "report.json"));
  for (const std::string& name : render_names)
    manifest.outputs.push_back(detail::hashed_entry(out_dir, name));
  write_manifest(outputs.path("manifest.json"), manifest);
  outputs.keep();
  log_line("info", "bench", "done",
           {{"out", out_dir},
            {"status", manifest.status},
            {"seconds", std::to_string(report.seconds)}});
  return manifest;
}

// ---------------------------------------------------------------------------
// manifest re-run

inline RunManifest run_from_manifest(const std::string& manifest_path, const std::string& out_dir,
                                     unsigned threads_override = 0) {
  const RunManifest m = read_manifest(manifest_path);
  const unsigned threads = threads_override ? threads_override : m.threads;
  const std::string config_name = manifest_path + " (embedded config)";
  if (m.command == "simulate")
    return cmd_simulate(m.config_text, config_name, out_dir, m.seed, threads);
  if (m.command == "reconstruct") {
    auto it = m.args.find("frames");
    if (it == m.args.end())
      throw io_error(manifest_path + ": reconstruct manifest lacks a frames argument");
    ReconstructOptions options;
    if (auto p = m.args.find("positions"); p != m.args.end()) options.positions_csv = p->second;
    options.frozen_positions = m.args.count("frozen-positions") != 0;
    options.frozen_amplitudes = m.args.count("frozen-amplitudes") != 0;
    return cmd_reconstruct(m.config_text, config_name, it->second, out_dir, m.seed, threads,
                           options);
  }
  if (m.command == "evaluate") {
    auto truth = m.args.find("truth");
    auto recon = m.args.find("recon");
    if (truth == m.args.end() || recon == m.args.end())
      throw io_error(manifest_path + ": evaluate manifest lacks truth/recon directories");
    const std::string out_path =
        (std::filesystem::path(out_dir) / "evaluation.json").string();
    detail::ensure_directory(out_dir);
    return cmd_evaluate(truth->second, recon->second, out_path, m.config_text, config_name);
  }
  if (m.command == "bench")
    return cmd_bench(m.config_text, config_name, out_dir, m.seed, threads);
  throw io_error(manifest_path + ": unknown command '" + m.command + "'");
}

} // namespace scatloc

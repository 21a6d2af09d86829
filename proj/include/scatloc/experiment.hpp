#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "scatloc/background.hpp"
#include "scatloc/forward.hpp"
#include "scatloc/localize.hpp"
#include "scatloc/metrics.hpp"
#include "scatloc/optimize.hpp"
#include "scatloc/phantom.hpp"

namespace scatloc {

/// Everything needed to reproduce one simulated comparison run.
struct ProtocolConfig {
  Grid3 grid;
  OpticalConstants constants;
  BiplaneConfig sensor;
  double smoothing_eps = 1e-4;
  LsOptions solver;
  unsigned pad_factor = 2;

  ContrastSpec contrast;
  std::size_t frames = 50;
  double mean_amplitude = 1000.0;
  double min_separation = 0.0;
  MoleculePlacement placement = MoleculePlacement::inside_support;

  BackgroundModel background;
  bool apply_noise = true;
  bool estimate_backgrounds = true; // otherwise the simulated truth is reused
  double background_sigma = 1.0;    // um, estimator blur
  std::size_t background_window = 51;

  InitStrategy init;
  OptimConfig optimizer;

  double match_radius = 0.5;
  double ssim_sigma = 1.5;

  std::vector<std::string> arms = {"init-only", "joint", "true-pos-amp"};
};

struct ArmReport {
  std::string name;
  bool completed = false;
  std::string error;
  bool has_ssim = false;
  double ssim = 0.0;
  bool has_rmse = false;
  double rmse_3d = 0.0;
  std::size_t matched = 0;
  std::size_t unmatched_estimates = 0;
  std::size_t unmatched_truth = 0;
  double seconds = 0.0;
  std::vector<BlockRecord> history;
  std::vector<std::string> events;
  ScatteringVolume volume;
  FluorophoreSet fluorophores;
};

struct ExperimentReport {
  std::uint64_t seed = 0;
  ScatteringVolume truth_volume;
  FluorophoreSet truth_fluorophores;
  std::vector<std::size_t> kept_frames;
  std::vector<std::string> init_log;
  std::vector<ArmReport> arms;
  double seconds = 0.0;
  bool all_completed = true;
};

inline void validate_protocol(const ProtocolConfig& protocol) {
  if (protocol.frames == 0) throw std::invalid_argument("protocol: frames must be >= 1");
  validate_biplane(protocol.sensor, protocol.constants);
  for (const std::string& arm : protocol.arms)
    if (arm != "init-only" && arm != "joint" && arm != "true-pos-amp")
      throw std::invalid_argument("protocol: unknown arm '" + arm + "'");
  if (protocol.arms.empty()) throw std::invalid_argument("protocol: at least one arm required");
}

/// Simulate one dataset, initialize once, then run the requested arms on the
/// shared data. Arm failures are recorded per arm; the report is always
/// produced.
inline ExperimentReport run_experiment(const ProtocolConfig& protocol, std::uint64_t seed,
                                       unsigned threads = 1,
                                       const std::function<void(const ArmReport&)>& arm_done = {}) {
  validate_protocol(protocol);
  const auto t_start = std::chrono::steady_clock::now();

  ExperimentReport report;
  report.seed = seed;

  ForwardModel model = make_forward_model(protocol.grid, protocol.constants, protocol.sensor,
                                          protocol.smoothing_eps, protocol.solver,
                                          protocol.pad_factor);
  auto contexts = make_contexts(model, threads);

  PhantomResult phantom =
      generate_phantom(protocol.grid, protocol.contrast, protocol.frames,
                       protocol.min_separation, protocol.mean_amplitude, seed,
                       protocol.constants, protocol.placement);
  report.truth_volume = phantom.potential;
  report.truth_fluorophores = phantom.fluorophores;

  const std::vector<std::vector<double>> true_bg =
      synthesize_background(protocol.sensor, protocol.frames, protocol.background, seed);
  SimulationResult sim = simulate_stack(model, contexts, phantom.potential, phantom.fluorophores,
                                        true_bg, seed, protocol.apply_noise);

  FrameStack work = sim.stack;
  if (protocol.estimate_backgrounds) {
    BackgroundEstimate est =
        estimate_background(work, protocol.background_sigma, protocol.background_window);
    for (std::size_t l = 0; l < work.frames.size(); ++l)
      work.frames[l].background = est.frames[l];
    for (const std::string& w : est.warnings) report.init_log.push_back(w);
  }

  InitResult init = initialize(work, protocol.grid, protocol.constants, protocol.smoothing_eps,
                               protocol.init);
  report.kept_frames = init.kept_frames;
  for (const std::string& line : init.log) report.init_log.push_back(line);
  if (init.fluorophores.empty())
    throw std::runtime_error("initialization found no usable frames");

  // frames the localizer kept, plus their truth molecules
  FrameStack kept;
  kept.config = work.config;
  FluorophoreSet truth_kept;
  for (std::size_t idx : init.kept_frames) {
    kept.frames.push_back(work.frames[idx]);
    truth_kept.molecules.push_back(phantom.fluorophores[idx]);
  }

  const double dynamic_range = [&] {
    double lo = report.truth_volume.values[0], hi = lo;
    for (double v : report.truth_volume.values) lo = std::min(lo, v), hi = std::max(hi, v);
    return hi - lo;
  }();

  auto evaluate_arm = [&](ArmReport& arm) {
    arm.has_ssim = true;
    arm.ssim = ssim_volume(report.truth_volume, arm.volume, protocol.ssim_sigma, dynamic_range);
    const MatchResult match =
        match_and_rmse(arm.fluorophores, report.truth_fluorophores, protocol.match_radius);
    arm.matched = match.pairs.size();
    arm.unmatched_estimates = match.unmatched_estimates;
    arm.unmatched_truth = match.unmatched_truth;
    arm.has_rmse = match.has_rmse;
    arm.rmse_3d = match.rmse_3d;
  };

  for (const std::string& arm_name : protocol.arms) {
    ArmReport arm;
    arm.name = arm_name;
    const auto t_arm = std::chrono::steady_clock::now();
    try {
      if (arm_name == "init-only") {
        arm.volume = init.f0;
        arm.fluorophores = init.fluorophores;
      } else if (arm_name == "joint") {
        OptimConfig cfg = protocol.optimizer;
        cfg.threads = threads;
        JointOptimizer opt(model, kept, cfg, init.f0, init.fluorophores);
        OptimResult res = opt.run();
        arm.volume = res.f;
        arm.fluorophores = res.fluorophores;
        arm.history = res.history;
        arm.events = res.events;
      } else { // true-pos-amp
        OptimConfig cfg = protocol.optimizer;
        cfg.threads = threads;
        cfg.update_positions = false;
        cfg.update_amplitudes = false;
        JointOptimizer opt(model, kept, cfg, init.f0, truth_kept);
        OptimResult res = opt.run();
        arm.volume = res.f;
        arm.fluorophores = res.fluorophores;
        arm.history = res.history;
        arm.events = res.events;
      }
      evaluate_arm(arm);
      arm.completed = true;
    } catch (const std::exception& e) {
      arm.error = e.what();
      report.all_completed = false;
    }
    arm.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_arm).count();
    if (arm_done) arm_done(arm);
    report.arms.push_back(std::move(arm));
  }

  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return report;
}

} // namespace scatloc

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "scatloc/background.hpp"
#include "scatloc/domain.hpp"
#include "scatloc/field.hpp"
#include "scatloc/green.hpp"
#include "scatloc/lippmann.hpp"
#include "scatloc/parallel.hpp"
#include "scatloc/sensor.hpp"

namespace scatloc {

/// Immutable description of the imaging pipeline: scattering geometry, optics
/// and solver policy. Shared read-only across worker threads.
struct ForwardModel {
  Grid3 grid;
  OpticalConstants constants;
  BiplaneConfig sensor;
  double smoothing_eps = 1e-4; // um^2, source smoothing
  LsOptions solver;
  GreenKernel kernel;
};

inline ForwardModel make_forward_model(const Grid3& grid, const OpticalConstants& constants,
                                       const BiplaneConfig& sensor, double smoothing_eps = 1e-4,
                                       const LsOptions& solver = {}, unsigned pad_factor = 2) {
  if (!(smoothing_eps >= 0.0))
    throw std::invalid_argument("smoothing eps must be nonnegative");
  validate_biplane(sensor, constants);
  ForwardModel model;
  model.grid = grid;
  model.constants = constants;
  model.sensor = sensor;
  model.smoothing_eps = smoothing_eps;
  model.solver = solver;
  model.kernel = build_green_kernel(grid, constants, pad_factor);
  return model;
}

/// Mutable per-thread scratch (FFT plans and buffers).
struct ForwardContext {
  GreenWorkspace green;
  BiplaneOperator biplane;

  explicit ForwardContext(const ForwardModel& model)
      : green(model.kernel), biplane(model.grid, model.sensor, model.constants) {}
};

inline std::vector<std::unique_ptr<ForwardContext>> make_contexts(const ForwardModel& model,
                                                                  unsigned threads) {
  std::vector<std::unique_ptr<ForwardContext>> out;
  out.reserve(threads);
  for (unsigned i = 0; i < threads; ++i) out.push_back(std::make_unique<ForwardContext>(model));
  return out;
}

/// Unit-amplitude per-frame forward state. Amplitude enters the measurement
/// only as a^2 scaling of `base`, so one solve serves all amplitude values.
struct FrameForward {
  ComplexField u_t;         // total field for a = 1
  CameraFields cameras;     // camera-plane fields for a = 1
  std::vector<double> base; // |camera|^2, concatenated planes, length M
  SolveReport report;
};

inline FrameForward forward_frame(const ForwardModel& model, ForwardContext& ctx,
                                  const ScatteringVolume& f, const Vec3& position,
                                  const ComplexField* warm_start = nullptr,
                                  const LsOptions* solver_override = nullptr) {
  const ComplexField u_in =
      spherical_wave(model.grid, position, 1.0, model.smoothing_eps, model.constants);
  const LsOptions& opts = solver_override ? *solver_override : model.solver;
  auto [u_t, report] = solve_lippmann_schwinger(f, u_in, model.kernel, ctx.green, opts, warm_start);
  FrameForward out;
  out.u_t = std::move(u_t);
  out.report = report;
  const std::vector<Complex> exit = field_to_exit_plane(out.u_t);
  ctx.biplane.forward(exit, out.cameras);
  out.base = intensity(out.cameras);
  return out;
}

/// Mean measurement a^2 base + background (empty background = zero).
inline std::vector<double> mean_measurement(const std::vector<double>& base, double amplitude,
                                            const std::vector<double>& background) {
  std::vector<double> z(base.size());
  const double a2 = amplitude * amplitude;
  if (!background.empty() && background.size() != base.size())
    throw std::invalid_argument("background length mismatch");
  for (std::size_t m = 0; m < base.size(); ++m)
    z[m] = a2 * base[m] + (background.empty() ? 0.0 : background[m]);
  return z;
}

/// Generalized Kullback-Leibler data discrepancy sum(z) - sum(y log(z + beta)).
inline double kl_divergence(const std::vector<double>& z, const std::vector<double>& y,
                            double beta) {
  if (z.size() != y.size()) throw std::invalid_argument("kl_divergence: length mismatch");
  if (!(beta > 0.0)) throw std::invalid_argument("kl_divergence: beta must be > 0");
  double acc = 0.0;
  for (std::size_t m = 0; m < z.size(); ++m) {
    if (!(y[m] >= 0.0)) throw std::domain_error("kl_divergence: counts must be nonnegative");
    const double zb = z[m] + beta;
    if (!(zb > 0.0)) throw std::domain_error("kl_divergence: nonpositive shifted mean");
    acc += z[m] - y[m] * std::log(zb);
  }
  return acc;
}

/// w_m = 1 - y_m / (z_m + beta), the per-measurement KL derivative dD/dz_m.
inline std::vector<double> kl_weights(const std::vector<double>& z, const std::vector<double>& y,
                                      double beta) {
  if (z.size() != y.size()) throw std::invalid_argument("kl_weights: length mismatch");
  std::vector<double> w(z.size());
  for (std::size_t m = 0; m < z.size(); ++m) {
    const double zb = z[m] + beta;
    if (!(zb > 0.0)) throw std::domain_error("kl_weights: nonpositive shifted mean");
    w[m] = 1.0 - y[m] / zb;
  }
  return w;
}

/// Adjoint field v solving (I - diag(f) G^H) v = g_u, where g_u is the data
/// gradient with respect to the total field for the current frame.
struct FrameAdjoint {
  ComplexField v;
  SolveReport report;
};

inline FrameAdjoint frame_adjoint(const ForwardModel& model, ForwardContext& ctx,
                                  const ScatteringVolume& f, const CameraFields& cameras,
                                  const std::vector<double>& base, const std::vector<double>& y,
                                  const std::vector<double>& background, double amplitude,
                                  double beta, const ComplexField* warm_start = nullptr,
                                  const LsOptions* solver_override = nullptr) {
  const std::vector<double> z = mean_measurement(base, amplitude, background);
  const std::vector<double> w = kl_weights(z, y, beta);
  const double a2 = amplitude * amplitude;
  const std::size_t np = model.sensor.pixels_per_plane();

  CameraFields g_c;
  for (int plane = 0; plane < 2; ++plane) {
    const auto& cam = cameras[std::size_t(plane)];
    auto& g = g_c[std::size_t(plane)];
    g.resize(np);
    for (std::size_t m = 0; m < np; ++m)
      g[m] = 2.0 * a2 * w[std::size_t(plane) * np + m] * cam[m];
  }

  std::vector<Complex> g_exit;
  ctx.biplane.adjoint(g_c, g_exit);

  ComplexField g_u(model.grid);
  const std::size_t top = model.grid.nx() * model.grid.ny() * (model.grid.nz() - 1);
  for (std::size_t i = 0; i < g_exit.size(); ++i) g_u.values[top + i] = g_exit[i];

  const LsOptions& opts = solver_override ? *solver_override : model.solver;
  auto [v, report] = solve_adjoint(f, g_u, model.kernel, ctx.green, opts, warm_start);
  FrameAdjoint out;
  out.v = std::move(v);
  out.report = report;
  return out;
}

inline FrameAdjoint frame_adjoint(const ForwardModel& model, ForwardContext& ctx,
                                  const ScatteringVolume& f, const FrameForward& fwd,
                                  const std::vector<double>& y,
                                  const std::vector<double>& background, double amplitude,
                                  double beta, const ComplexField* warm_start = nullptr,
                                  const LsOptions* solver_override = nullptr) {
  return frame_adjoint(model, ctx, f, fwd.cameras, fwd.base, y, background, amplitude, beta,
                       warm_start, solver_override);
}

/// dD/dp via the adjoint field: Re<v, du_in/dp_axis>, evaluated with the
/// analytic smoothed-wave derivative fused over the grid.
inline Vec3 position_gradient_from_adjoint(const ForwardModel& model, const ComplexField& v,
                                           const Vec3& position) {
  if (!(model.smoothing_eps > 0.0))
    throw std::invalid_argument("position gradient requires smoothing eps > 0");
  const Grid3& g = model.grid;
  const double k = model.constants.wavenumber();
  Vec3 out{0.0, 0.0, 0.0};
  std::size_t idx = 0;
  for (std::size_t kz = 0; kz < g.nz(); ++kz)
    for (std::size_t jy = 0; jy < g.ny(); ++jy)
      for (std::size_t ix = 0; ix < g.nx(); ++ix, ++idx) {
        const Vec3 d = g.voxel_center(ix, jy, kz) - position;
        const double r = std::sqrt(dot(d, d) + model.smoothing_eps);
        const Complex u = 1.0 / (4.0 * M_PI * r) * std::polar(1.0, k * r);
        const Complex factor = std::conj(v.values[idx]) * u * (1.0 / r - Complex(0.0, k)) / r;
        for (int axis = 0; axis < 3; ++axis) out[axis] += factor.real() * d[axis];
      }
  return out;
}

/// dD/df_i = Re(conj(G^H v)_i u_t,i) for one frame.
inline std::vector<double> volume_gradient_from_adjoint(const ForwardModel& model,
                                                        ForwardContext& ctx, const ComplexField& v,
                                                        const ComplexField& u_t) {
  std::vector<Complex> gh;
  apply_green(model.kernel, ctx.green, v.values, gh, /*adjoint=*/true);
  std::vector<double> out(gh.size());
  for (std::size_t i = 0; i < gh.size(); ++i)
    out[i] = (std::conj(gh[i]) * u_t.values[i]).real();
  return out;
}

/// Newton data for the amplitude block of one frame:
/// phi'(a)  = sum 2 a h w
/// phi''(a) = sum 2 h w + 4 a^2 h^2 y / (z + beta)^2
struct AmplitudeDerivatives {
  double first = 0.0;
  double second = 0.0;
};

inline AmplitudeDerivatives amplitude_derivatives(const std::vector<double>& base,
                                                  const std::vector<double>& y,
                                                  const std::vector<double>& background,
                                                  double amplitude, double beta) {
  const std::vector<double> z = mean_measurement(base, amplitude, background);
  AmplitudeDerivatives d;
  for (std::size_t m = 0; m < base.size(); ++m) {
    const double zb = z[m] + beta;
    const double w = 1.0 - y[m] / zb;
    d.first += 2.0 * amplitude * base[m] * w;
    d.second += 2.0 * base[m] * w +
                4.0 * amplitude * amplitude * base[m] * base[m] * y[m] / (zb * zb);
  }
  return d;
}

/// Full data objective over a stack (fresh solves, no caching); gradient-free
/// reference used by tests and line searches.
struct DataObjective {
  double value = 0.0;
  bool all_converged = true;
  int worst_iterations = 0;
  double worst_residual = 0.0;
};

inline DataObjective evaluate_data_objective(const ForwardModel& model,
                                             std::vector<std::unique_ptr<ForwardContext>>& contexts,
                                             const ScatteringVolume& f, const FluorophoreSet& fluors,
                                             const FrameStack& stack, double beta) {
  if (fluors.molecules.size() != stack.frames.size())
    throw std::invalid_argument("one molecule per frame is required");
  const std::size_t L = stack.frames.size();
  std::vector<double> values(L, 0.0);
  std::vector<SolveReport> reports(L);
  parallel_for(L, unsigned(contexts.size()), [&](std::size_t l, unsigned worker) {
    ForwardContext& ctx = *contexts[worker];
    const Fluorophore& mol = fluors.molecules[l];
    FrameForward fwd = forward_frame(model, ctx, f, mol.position);
    const std::vector<double> z =
        mean_measurement(fwd.base, mol.amplitude, stack.frames[l].background);
    values[l] = kl_divergence(z, stack.frames[l].values, beta);
    reports[l] = fwd.report;
  });
  DataObjective out;
  for (std::size_t l = 0; l < L; ++l) {
    out.value += values[l];
    out.all_converged = out.all_converged && reports[l].converged;
    out.worst_iterations = std::max(out.worst_iterations, reports[l].iterations);
    out.worst_residual = std::max(out.worst_residual, reports[l].relative_residual);
  }
  return out;
}

/// Noise-free frame with several simultaneously active molecules. Emissions
/// are mutually incoherent, so plane intensities add.
inline std::vector<double> incoherent_frame(const ForwardModel& model, ForwardContext& ctx,
                                            const ScatteringVolume& f,
                                            const std::vector<Fluorophore>& molecules,
                                            const std::vector<double>& background = {}) {
  std::vector<double> z(model.sensor.measurement_count(), 0.0);
  if (!background.empty()) {
    if (background.size() != z.size())
      throw std::invalid_argument("background length mismatch");
    z = background;
  }
  for (const Fluorophore& mol : molecules) {
    const FrameForward fwd = forward_frame(model, ctx, f, mol.position);
    const double a2 = mol.amplitude * mol.amplitude;
    for (std::size_t m = 0; m < z.size(); ++m) z[m] += a2 * fwd.base[m];
  }
  return z;
}

/// Simulate a stack: frame l images molecule l with Poisson noise about
/// a_l^2 base_l + b_l. Noise streams are indexed by frame, so the result is
/// independent of the thread count.
struct SimulationResult {
  FrameStack stack;
  std::vector<SolveReport> reports;
};

inline SimulationResult simulate_stack(const ForwardModel& model,
                                       std::vector<std::unique_ptr<ForwardContext>>& contexts,
                                       const ScatteringVolume& f, const FluorophoreSet& fluors,
                                       const std::vector<std::vector<double>>& backgrounds,
                                       std::uint64_t seed, bool apply_noise = true) {
  const std::size_t L = fluors.molecules.size();
  if (!backgrounds.empty() && backgrounds.size() != L)
    throw std::invalid_argument("background stack length mismatch");
  SimulationResult result;
  result.stack.config = model.sensor;
  result.stack.frames.resize(L);
  result.reports.resize(L);
  parallel_for(L, unsigned(contexts.size()), [&](std::size_t l, unsigned worker) {
    ForwardContext& ctx = *contexts[worker];
    const Fluorophore& mol = fluors.molecules[l];
    FrameForward fwd = forward_frame(model, ctx, f, mol.position);
    Frame& frame = result.stack.frames[l];
    frame.background = backgrounds.empty() ? std::vector<double>(fwd.base.size(), 0.0)
                                           : backgrounds[l];
    std::vector<double> z = mean_measurement(fwd.base, mol.amplitude, frame.background);
    if (apply_noise)
      frame.values = add_poisson_noise(z, seed, stream_id::make(stream_id::frame_noise, l));
    else
      frame.values = std::move(z);
    frame.acquisition_index = l;
    frame.molecule_count = 1;
    result.reports[l] = fwd.report;
  });
  return result;
}

} // namespace scatloc

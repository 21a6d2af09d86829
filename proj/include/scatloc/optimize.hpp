#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "scatloc/forward.hpp"
#include "scatloc/tv.hpp"

namespace scatloc {

struct OptimConfig {
  double tv_weight = 1e-3;  // tau
  double kl_beta = 1e-8;
  int outer_iterations = 20;
  double objective_tolerance = 1e-5; // outer relative change stop
  int newton_steps = 3;
  int position_steps = 5;
  int fista_steps = 10;
  TvProxOptions tv_prox; // 30 inner iterations by default
  double position_step = 0.05; // um, initial backtracking displacement
  double relaxation = 1.3;     // momentum over-relaxation
  double amplitude_floor = 1e-6;
  bool update_amplitudes = true;
  bool update_positions = true;
  bool update_volume = true;
  unsigned threads = 1;
  int checkpoint_every = 0; // outer iterations between checkpoints; 0 = off
};

struct BlockRecord {
  int outer = 0;
  std::string block;
  double objective = 0.0;
  double data_term = 0.0;
  double tv_term = 0.0;
  double seconds = 0.0;
};

struct OptimResult {
  ScatteringVolume f;
  FluorophoreSet fluorophores;
  std::vector<BlockRecord> history;
  std::vector<std::string> events;
  double final_objective = 0.0;
  int outer_iterations_run = 0;
  bool converged = false;
};

/// Alternating minimization of
///   F(f, {p}, {a}) = sum_l D(a_l^2 H(f, p_l) + b_l ; y_l) + tau TV(f),  f >= 0,
/// with Newton amplitude steps, backtracked projected-gradient position steps
/// and a relaxed monotone FISTA volume block. All accepted updates decrease
/// the internally evaluated objective, so the recorded history is
/// non-increasing across blocks.
class JointOptimizer {
 public:
  JointOptimizer(const ForwardModel& model, const FrameStack& stack, const OptimConfig& config,
                 ScatteringVolume f0, FluorophoreSet init)
      : model_(model),
        stack_(stack),
        cfg_(config),
        f_(std::move(f0)),
        fluors_(std::move(init)) {
    if (!(f_.grid == model.grid))
      throw std::invalid_argument("initial volume grid does not match the model");
    if (fluors_.size() != stack_.frames.size())
      throw std::invalid_argument("one molecule per frame is required");
    if (cfg_.threads == 0) cfg_.threads = 1;
    contexts_ = make_contexts(model_, cfg_.threads);
    caches_.resize(stack_.frames.size());
    for (auto& mol : fluors_.molecules) {
      if (!model_.grid.contains(mol.position))
        throw std::invalid_argument("initial molecule position lies outside the domain");
      mol.amplitude = std::max(mol.amplitude, cfg_.amplitude_floor);
    }
    for (double v : f_.values)
      if (!(v >= 0.0)) throw std::invalid_argument("initial volume must be nonnegative");
    refresh_all_frames();
  }

  const ScatteringVolume& volume() const { return f_; }
  const FluorophoreSet& fluorophores() const { return fluors_; }
  const std::vector<BlockRecord>& history() const { return history_; }
  const std::vector<std::string>& events() const { return events_; }

  double data_total() const {
    double acc = 0.0;
    for (const FrameCache& c : caches_) acc += c.data;
    return acc;
  }

  double objective() const {
    return data_total() + cfg_.tv_weight * tv_value(f_.values, model_.grid);
  }

  void amplitude_block() {
    parallel_for(caches_.size(), cfg_.threads, [&](std::size_t l, unsigned worker) {
      FrameCache& cache = caches_[l];
      if (!cache.field_ok) refresh_frame(l, worker);
      const Frame& frame = stack_.frames[l];
      double a = fluors_[l].amplitude;
      for (int step = 0; step < cfg_.newton_steps; ++step) {
        const AmplitudeDerivatives d =
            amplitude_derivatives(cache.base, frame.values, frame.background, a, cfg_.kl_beta);
        double delta;
        if (d.second > 0.0)
          delta = d.first / d.second;
        else if (d.first != 0.0)
          delta = (d.first > 0.0 ? 0.1 : -0.1) * std::max(a, cfg_.amplitude_floor);
        else
          break;
        bool accepted = false;
        for (int bt = 0; bt < 40; ++bt) {
          const double cand = std::max(a - delta, cfg_.amplitude_floor);
          if (cand == a) break;
          const double value = kl_divergence(
              mean_measurement(cache.base, cand, frame.background), frame.values, cfg_.kl_beta);
          if (value <= cache.data) {
            a = cand;
            cache.data = value;
            accepted = true;
            break;
          }
          delta *= 0.5;
        }
        if (!accepted) break;
      }
      fluors_[l].amplitude = a;
    });
  }

  void position_block() {
    parallel_for(caches_.size(), cfg_.threads, [&](std::size_t l, unsigned worker) {
      FrameCache& cache = caches_[l];
      ForwardContext& ctx = *contexts_[worker];
      if (!cache.field_ok) refresh_frame(l, worker);
      const Frame& frame = stack_.frames[l];
      const double a = fluors_[l].amplitude;
      Vec3 p = fluors_[l].position;
      for (int step = 0; step < cfg_.position_steps; ++step) {
        FrameAdjoint adj =
            frame_adjoint(model_, ctx, f_, cache.cameras, cache.base, frame.values,
                          frame.background, a, cfg_.kl_beta, cache.v_ok ? &cache.v : nullptr);
        if (!adj.report.converged) note_solver_failure(l, "adjoint", adj.report);
        cache.v = std::move(adj.v);
        cache.v_ok = true;
        const Vec3 g = position_gradient_from_adjoint(model_, cache.v, p);
        const double gn = norm(g);
        if (!(gn > 0.0)) break;
        const Vec3 dir{-g[0] / gn, -g[1] / gn, -g[2] / gn};
        double s = cfg_.position_step;
        bool accepted = false;
        for (int bt = 0; bt < 10; ++bt, s *= 0.5) {
          const Vec3 cand = model_.grid.clamp(Vec3{p[0] + s * dir[0], p[1] + s * dir[1],
                                                   p[2] + s * dir[2]});
          if (cand[0] == p[0] && cand[1] == p[1] && cand[2] == p[2]) continue;
          FrameForward trial = solve_frame(l, ctx, cand, &cache.u_t);
          const double value = kl_divergence(
              mean_measurement(trial.base, a, frame.background), frame.values, cfg_.kl_beta);
          if (value <= cache.data) {
            p = cand;
            cache.u_t = std::move(trial.u_t);
            cache.cameras = std::move(trial.cameras);
            cache.base = std::move(trial.base);
            cache.data = value;
            accepted = true;
            break;
          }
        }
        if (!accepted) break;
      }
      fluors_[l].position = p;
    });
  }

  void volume_block() {
    const std::size_t n = model_.grid.size();
    std::vector<double> x = f_.values;
    std::vector<double> x_prev = x;
    std::vector<double> y = x;
    std::vector<double> grad(n), candidate, diff(n);
    double t = 1.0;
    double F_x = data_total() + cfg_.tv_weight * tv_value(x, model_.grid);
    if (lipschitz_ <= 0.0) lipschitz_ = 1.0;
    // re-probe a larger step each block; backtracking restores it if needed
    lipschitz_ = std::max(0.5 * lipschitz_, 1e-12);

    for (int k = 0; k < cfg_.fista_steps; ++k) {
      double Dy = eval_data_and_gradient(y, grad);
      double Dc = 0.0;
      bool stepped = false;
      for (int bt = 0; bt < 60; ++bt) {
        candidate = y;
        for (std::size_t i = 0; i < n; ++i) candidate[i] = y[i] - grad[i] / lipschitz_;
        TvProxResult prox =
            tv_prox(candidate, model_.grid, cfg_.tv_weight / lipschitz_, cfg_.tv_prox);
        candidate = std::move(prox.x);
        Dc = eval_data(candidate);
        double inner = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          diff[i] = candidate[i] - y[i];
          inner += grad[i] * diff[i];
          sq += diff[i] * diff[i];
        }
        if (Dc <= Dy + inner + 0.5 * lipschitz_ * sq + 1e-12 * std::abs(Dy)) {
          stepped = true;
          break;
        }
        lipschitz_ *= 2.0;
        if (lipschitz_ > 1e18) break;
      }
      if (!stepped) {
        events_.push_back("volume block: backtracking failed, keeping current iterate");
        break;
      }
      double F_c = Dc + cfg_.tv_weight * tv_value(candidate, model_.grid);
      if (F_c > F_x * (1.0 + 1e-12) + 1e-12) {
        // momentum overshoot: restart from the accepted iterate
        t = 1.0;
        if (!(y == x)) {
          y = x;
          Dy = eval_data_and_gradient(y, grad);
          bool ok = false;
          for (int bt = 0; bt < 60; ++bt) {
            candidate = y;
            for (std::size_t i = 0; i < n; ++i) candidate[i] = y[i] - grad[i] / lipschitz_;
            TvProxResult prox =
                tv_prox(candidate, model_.grid, cfg_.tv_weight / lipschitz_, cfg_.tv_prox);
            candidate = std::move(prox.x);
            Dc = eval_data(candidate);
            double inner = 0.0, sq = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
              diff[i] = candidate[i] - y[i];
              inner += grad[i] * diff[i];
              sq += diff[i] * diff[i];
            }
            if (Dc <= Dy + inner + 0.5 * lipschitz_ * sq + 1e-12 * std::abs(Dy)) {
              ok = true;
              break;
            }
            lipschitz_ *= 2.0;
            if (lipschitz_ > 1e18) break;
          }
          F_c = ok ? Dc + cfg_.tv_weight * tv_value(candidate, model_.grid) : F_x + 1.0;
        }
        if (F_c > F_x * (1.0 + 1e-12) + 1e-12) {
          events_.push_back("volume block: prox step did not decrease, stopping block");
          break;
        }
      }
      x_prev = std::move(x);
      x = candidate;
      F_x = F_c;
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      const double momentum = cfg_.relaxation * (t - 1.0) / t_next;
      y = x;
      for (std::size_t i = 0; i < n; ++i) y[i] += momentum * (x[i] - x_prev[i]);
      t = t_next;
    }

    f_.values = std::move(x);
    commit_frames();
  }

  OptimResult run(const std::function<void(int, const JointOptimizer&)>& checkpoint = {}) {
    double previous = objective();
    record(-1, "initial", previous, 0.0);
    bool converged = false;
    int outer = 0;
    for (; outer < cfg_.outer_iterations; ++outer) {
      if (cfg_.update_amplitudes) timed_block(outer, "amplitudes", [&] { amplitude_block(); });
      if (cfg_.update_positions) timed_block(outer, "positions", [&] { position_block(); });
      if (cfg_.update_volume) timed_block(outer, "volume", [&] { volume_block(); });
      const double current = history_.back().objective;
      if (checkpoint && cfg_.checkpoint_every > 0 && (outer + 1) % cfg_.checkpoint_every == 0)
        checkpoint(outer, *this);
      const double scale = std::max({1.0, std::abs(previous), std::abs(current)});
      if (std::abs(previous - current) <= cfg_.objective_tolerance * scale) {
        converged = true;
        ++outer;
        break;
      }
      previous = current;
    }
    OptimResult result;
    result.f = f_;
    result.fluorophores = fluors_;
    result.history = history_;
    result.events = events_;
    result.final_objective = history_.back().objective;
    result.outer_iterations_run = outer;
    result.converged = converged;
    return result;
  }

 private:
  struct FrameCache {
    ComplexField u_t; // current or warm-start field (amplitude 1)
    CameraFields cameras;
    std::vector<double> base;
    bool field_ok = false;
    ComplexField v; // adjoint warm start
    bool v_ok = false;
    double data = 0.0; // D_l at the current state
  };

  template <typename Fn>
  void timed_block(int outer, const char* name, Fn&& fn) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    record(outer, name, objective(), seconds);
  }

  void record(int outer, const char* name, double objective_value, double seconds) {
    BlockRecord rec;
    rec.outer = outer;
    rec.block = name;
    rec.objective = objective_value;
    rec.data_term = data_total();
    rec.tv_term = objective_value - rec.data_term;
    rec.seconds = seconds;
    history_.push_back(std::move(rec));
  }

  FrameForward solve_frame(std::size_t l, ForwardContext& ctx, const Vec3& position,
                           const ComplexField* warm) {
    FrameForward fwd = forward_frame(model_, ctx, f_, position, warm);
    if (!fwd.report.converged) {
      LsOptions boosted = model_.solver;
      boosted.max_iter *= 4;
      fwd = forward_frame(model_, ctx, f_, position, &fwd.u_t, &boosted);
      if (!fwd.report.converged) note_solver_failure(l, "forward", fwd.report);
    }
    return fwd;
  }

  void note_solver_failure(std::size_t l, const char* where, const SolveReport& report) {
    std::lock_guard<std::mutex> lock(events_mutex_);
    events_.push_back(std::string(where) + " solve for frame " + std::to_string(l) +
                      " did not converge (residual " + std::to_string(report.relative_residual) +
                      "), continuing with best iterate");
  }

  void refresh_frame(std::size_t l, unsigned worker) {
    FrameCache& cache = caches_[l];
    FrameForward fwd = solve_frame(l, *contexts_[worker], fluors_[l].position,
                                   cache.u_t.values.empty() ? nullptr : &cache.u_t);
    cache.u_t = std::move(fwd.u_t);
    cache.cameras = std::move(fwd.cameras);
    cache.base = std::move(fwd.base);
    cache.field_ok = true;
    cache.data = kl_divergence(
        mean_measurement(cache.base, fluors_[l].amplitude, stack_.frames[l].background),
        stack_.frames[l].values, cfg_.kl_beta);
  }

  void refresh_all_frames() {
    parallel_for(caches_.size(), cfg_.threads,
                 [&](std::size_t l, unsigned worker) { refresh_frame(l, worker); });
  }

  /// Data term at a trial volume; caches keep the solves as warm starts.
  double eval_data(const std::vector<double>& volume_values) {
    ScatteringVolume trial(model_.grid);
    trial.values = volume_values;
    std::vector<double> per_frame(caches_.size(), 0.0);
    parallel_for(caches_.size(), cfg_.threads, [&](std::size_t l, unsigned worker) {
      FrameCache& cache = caches_[l];
      FrameForward fwd = forward_frame(model_, *contexts_[worker], trial, fluors_[l].position,
                                       cache.u_t.values.empty() ? nullptr : &cache.u_t);
      if (!fwd.report.converged) {
        LsOptions boosted = model_.solver;
        boosted.max_iter *= 4;
        fwd = forward_frame(model_, *contexts_[worker], trial, fluors_[l].position, &fwd.u_t,
                            &boosted);
        if (!fwd.report.converged) note_solver_failure(l, "forward", fwd.report);
      }
      cache.u_t = std::move(fwd.u_t);
      cache.cameras = std::move(fwd.cameras);
      cache.base = std::move(fwd.base);
      cache.field_ok = false; // belongs to the trial volume, not f_
      per_frame[l] = kl_divergence(
          mean_measurement(cache.base, fluors_[l].amplitude, stack_.frames[l].background),
          stack_.frames[l].values, cfg_.kl_beta);
    });
    double acc = 0.0;
    for (double v : per_frame) acc += v;
    return acc;
  }

  /// Data term and its gradient in f at a trial volume. Per-frame
  /// contributions are reduced in fixed frame order (chunks of 64) so the
  /// result does not depend on the thread schedule.
  double eval_data_and_gradient(const std::vector<double>& volume_values,
                                std::vector<double>& grad) {
    ScatteringVolume trial(model_.grid);
    trial.values = volume_values;
    const std::size_t L = caches_.size();
    const std::size_t n = model_.grid.size();
    grad.assign(n, 0.0);
    std::vector<double> per_frame(L, 0.0);
    const std::size_t chunk = 64;
    std::vector<std::vector<double>> slots(std::min(chunk, L));
    for (std::size_t start = 0; start < L; start += chunk) {
      const std::size_t count = std::min(chunk, L - start);
      parallel_for(count, cfg_.threads, [&](std::size_t i, unsigned worker) {
        const std::size_t l = start + i;
        FrameCache& cache = caches_[l];
        ForwardContext& ctx = *contexts_[worker];
        FrameForward fwd = forward_frame(model_, ctx, trial, fluors_[l].position,
                                         cache.u_t.values.empty() ? nullptr : &cache.u_t);
        if (!fwd.report.converged) {
          LsOptions boosted = model_.solver;
          boosted.max_iter *= 4;
          fwd = forward_frame(model_, ctx, trial, fluors_[l].position, &fwd.u_t, &boosted);
          if (!fwd.report.converged) note_solver_failure(l, "forward", fwd.report);
        }
        FrameAdjoint adj = frame_adjoint(model_, ctx, trial, fwd, stack_.frames[l].values,
                                         stack_.frames[l].background, fluors_[l].amplitude,
                                         cfg_.kl_beta, cache.v_ok ? &cache.v : nullptr);
        if (!adj.report.converged) note_solver_failure(l, "adjoint", adj.report);
        slots[i] = volume_gradient_from_adjoint(model_, ctx, adj.v, fwd.u_t);
        per_frame[l] = kl_divergence(
            mean_measurement(fwd.base, fluors_[l].amplitude, stack_.frames[l].background),
            stack_.frames[l].values, cfg_.kl_beta);
        cache.u_t = std::move(fwd.u_t);
        cache.cameras = std::move(fwd.cameras);
        cache.base = std::move(fwd.base);
        cache.field_ok = false;
        cache.v = std::move(adj.v);
        cache.v_ok = true;
      });
      for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < n; ++j) grad[j] += slots[i][j];
    }
    double acc = 0.0;
    for (double v : per_frame) acc += v;
    return acc;
  }

  /// Re-evaluate every frame at the committed volume and store consistent
  /// caches. Warm starts usually make these solves trivial.
  void commit_frames() { refresh_all_frames(); }

  ForwardModel model_;
  FrameStack stack_;
  OptimConfig cfg_;
  ScatteringVolume f_;
  FluorophoreSet fluors_;
  std::vector<std::unique_ptr<ForwardContext>> contexts_;
  std::vector<FrameCache> caches_;
  std::vector<BlockRecord> history_;
  std::vector<std::string> events_;
  std::mutex events_mutex_;
  double lipschitz_ = 0.0;
};

} // namespace scatloc

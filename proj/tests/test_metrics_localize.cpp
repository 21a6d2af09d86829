#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "scatloc/experiment.hpp"
#include "scatloc/localize.hpp"
#include "scatloc/metrics.hpp"
#include "scatloc/rng.hpp"

using namespace scatloc;

namespace {

ScatteringVolume random_volume(const Grid3& g, std::uint64_t seed, double lo = 0.0,
                               double hi = 1.0) {
  RandomStream rng(seed, 0);
  ScatteringVolume v(g);
  for (double& x : v.values) x = lo + (hi - lo) * rng.next_double();
  return v;
}

// direct per-voxel SSIM: joint 3-D Gaussian window, renormalized in-bounds
double ssim_reference(const ScatteringVolume& a, const ScatteringVolume& b, double sigma,
                      double dynamic_range) {
  const Grid3& g = a.grid;
  const long nx = long(g.nx()), ny = long(g.ny()), nz = long(g.nz());
  const long radius = long(std::ceil(3.5 * sigma));
  const double c1 = (0.01 * dynamic_range) * (0.01 * dynamic_range);
  const double c2 = (0.03 * dynamic_range) * (0.03 * dynamic_range);
  auto at = [&](const ScatteringVolume& v, long i, long j, long k) {
    return v.values[std::size_t(i) + g.nx() * (std::size_t(j) + g.ny() * std::size_t(k))];
  };
  double acc = 0.0;
  for (long k = 0; k < nz; ++k)
    for (long j = 0; j < ny; ++j)
      for (long i = 0; i < nx; ++i) {
        double wsum = 0.0, ma = 0.0, mb = 0.0, maa = 0.0, mbb = 0.0, mab = 0.0;
        for (long dk = -radius; dk <= radius; ++dk)
          for (long dj = -radius; dj <= radius; ++dj)
            for (long di = -radius; di <= radius; ++di) {
              const long ii = i + di, jj = j + dj, kk = k + dk;
              if (ii < 0 || ii >= nx || jj < 0 || jj >= ny || kk < 0 || kk >= nz) continue;
              const double w =
                  std::exp(-double(di * di + dj * dj + dk * dk) / (2.0 * sigma * sigma));
              const double va = at(a, ii, jj, kk), vb = at(b, ii, jj, kk);
              wsum += w;
              ma += w * va;
              mb += w * vb;
              maa += w * va * va;
              mbb += w * vb * vb;
              mab += w * va * vb;
            }
        ma /= wsum;
        mb /= wsum;
        const double var_a = maa / wsum - ma * ma;
        const double var_b = mbb / wsum - mb * mb;
        const double cov = mab / wsum - ma * mb;
        acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
      }
  return acc / double(nx * ny * nz);
}

FluorophoreSet points(const std::vector<Vec3>& ps) {
  FluorophoreSet out;
  for (const Vec3& p : ps) out.molecules.push_back({p, 1.0});
  return out;
}

// exhaustive assignment oracle: all injections of estimates into truths
struct BruteMatch {
  std::size_t matched = 0;
  double total = 0.0;
};

BruteMatch brute_force_match(const FluorophoreSet& est, const FluorophoreSet& truth,
                             double radius) {
  const std::size_t na = est.size(), nb = truth.size();
  std::vector<std::size_t> idx(nb);
  std::iota(idx.begin(), idx.end(), 0);
  const double big = 1e12;
  BruteMatch best;
  double best_cost = std::numeric_limits<double>::infinity();
  std::sort(idx.begin(), idx.end());
  do {
    double cost = 0.0, total = 0.0;
    std::size_t matched = 0;
    for (std::size_t i = 0; i < na && i < nb; ++i) {
      const double d = norm(est[i].position - truth[idx[i]].position);
      if (d <= radius) {
        cost += d;
        total += d;
        ++matched;
      } else {
        cost += big;
      }
    }
    cost += big * double(na > nb ? na - nb : 0);
    if (cost < best_cost) {
      best_cost = cost;
      best.matched = matched;
      best.total = total;
    }
  } while (std::next_permutation(idx.begin(), idx.end()));
  return best;
}

} // namespace

TEST_CASE("ssim of identical volumes is one", "[metrics]") {
  const Grid3 g = make_grid({8, 8, 8}, {0.1, 0.1, 0.1});
  const ScatteringVolume v = random_volume(g, 1);
  CHECK(ssim_volume(v, v) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("ssim is symmetric with an explicit range", "[metrics]") {
  const Grid3 g = make_grid({8, 8, 8}, {0.1, 0.1, 0.1});
  const ScatteringVolume a = random_volume(g, 2), b = random_volume(g, 3);
  const double ab = ssim_volume(a, b, 1.5, 1.0);
  const double ba = ssim_volume(b, a, 1.5, 1.0);
  CHECK(ab == Catch::Approx(ba).epsilon(1e-12));
  CHECK(ab < 1.0);
  CHECK(ab > -1.0);
}

TEST_CASE("ssim agrees with the direct windowed formula", "[metrics]") {
  const Grid3 g = make_grid({8, 8, 8}, {0.1, 0.1, 0.1});
  const ScatteringVolume a = random_volume(g, 4), b = random_volume(g, 5);
  const double fast = ssim_volume(a, b, 1.5, 1.0);
  const double slow = ssim_reference(a, b, 1.5, 1.0);
  CHECK(fast == Catch::Approx(slow).epsilon(1e-10));

  // structural differences register as a drop
  CHECK(fast < 0.999);

  ScatteringVolume wrong(make_grid({4, 4, 4}, {0.1, 0.1, 0.1}));
  CHECK_THROWS_AS(ssim_volume(a, wrong), std::invalid_argument);
}

TEST_CASE("matching recovers exact correspondences", "[metrics]") {
  const FluorophoreSet truth =
      points({{0.1, 0.2, 0.3}, {1.0, 1.1, 0.5}, {2.0, 0.4, 0.9}});
  FluorophoreSet est = truth;
  std::swap(est.molecules[0], est.molecules[2]); // order must not matter
  const MatchResult m = match_and_rmse(est, truth, 0.5);
  CHECK(m.pairs.size() == 3);
  CHECK(m.unmatched_estimates == 0);
  CHECK(m.unmatched_truth == 0);
  REQUIRE(m.has_rmse);
  CHECK(m.rmse_3d == 0.0);

  CHECK_THROWS_AS(match_and_rmse(est, truth, 0.0), std::invalid_argument);
}

TEST_CASE("matching respects the gating radius", "[metrics]") {
  const FluorophoreSet truth = points({{0.0, 0.0, 0.0}, {2.0, 0.0, 0.0}});
  const FluorophoreSet est = points({{0.1, 0.0, 0.0}, {2.0, 0.9, 0.0}});
  const MatchResult m = match_and_rmse(est, truth, 0.5);
  REQUIRE(m.pairs.size() == 1);
  CHECK(m.pairs[0].estimate_index == 0);
  CHECK(m.pairs[0].truth_index == 0);
  CHECK(m.pairs[0].distance == Catch::Approx(0.1).epsilon(1e-12));
  CHECK(m.unmatched_estimates == 1);
  CHECK(m.unmatched_truth == 1);
  CHECK(m.rmse_3d == Catch::Approx(0.1).epsilon(1e-12));

  const MatchResult none = match_and_rmse(points({}), truth, 0.5);
  CHECK(none.pairs.empty());
  CHECK_FALSE(none.has_rmse);
  CHECK(none.unmatched_truth == 2);
}

TEST_CASE("assignment matches exhaustive enumeration", "[metrics]") {
  RandomStream rng(77, 0);
  auto random_point = [&]() {
    return Vec3{2.0 * rng.next_double(), 2.0 * rng.next_double(), rng.next_double()};
  };
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vec3> t(5), e(5);
    for (auto& p : t) p = random_point();
    for (std::size_t i = 0; i < 5; ++i) {
      // cluster some estimates near truths, leave others stray
      if (i % 2 == 0) {
        e[i] = t[(i + trial) % 5];
        e[i][0] += 0.3 * (rng.next_double() - 0.5);
        e[i][1] += 0.3 * (rng.next_double() - 0.5);
      } else {
        e[i] = random_point();
      }
    }
    const FluorophoreSet truth = points(t), est = points(e);
    const MatchResult m = match_and_rmse(est, truth, 0.5);
    const BruteMatch oracle = brute_force_match(est, truth, 0.5);
    REQUIRE(m.pairs.size() == oracle.matched);
    double total = 0.0, sq = 0.0;
    for (const MatchedPair& pair : m.pairs) {
      total += pair.distance;
      sq += pair.distance * pair.distance;
    }
    CHECK(total == Catch::Approx(oracle.total).margin(1e-9));
    if (m.has_rmse)
      CHECK(m.rmse_3d == Catch::Approx(std::sqrt(sq / double(m.pairs.size()))).epsilon(1e-12));
  }
}

TEST_CASE("rectangular matching agrees with enumeration", "[metrics]") {
  RandomStream rng(78, 0);
  for (int trial = 0; trial < 8; ++trial) {
    std::vector<Vec3> t(5), e(3);
    for (auto& p : t) p = Vec3{rng.next_double(), rng.next_double(), rng.next_double()};
    for (auto& p : e) p = Vec3{rng.next_double(), rng.next_double(), rng.next_double()};
    const FluorophoreSet truth = points(t), est = points(e);
    const MatchResult m = match_and_rmse(est, truth, 0.4);
    const BruteMatch oracle = brute_force_match(est, truth, 0.4);
    CHECK(m.pairs.size() == oracle.matched);
    double total = 0.0;
    for (const MatchedPair& pair : m.pairs) total += pair.distance;
    CHECK(total == Catch::Approx(oracle.total).margin(1e-9));
    CHECK(m.unmatched_estimates == 3 - oracle.matched);
    CHECK(m.unmatched_truth == 5 - oracle.matched);
  }
}

// ---------------------------------------------------------------------------
// initialization

namespace {

struct LocBench {
  ForwardModel model;
  FluorophoreSet truth;
  FrameStack stack;

  LocBench(std::size_t L, double amplitude, double bg_level, std::uint64_t seed) {
    const double pitch = 0.1;
    const Grid3 g = make_grid({16, 16, 8}, {pitch, pitch, pitch});
    OpticalConstants constants;
    BiplaneConfig sensor;
    sensor.camera_counts = {16, 16};
    sensor.pixel_pitch = pitch;
    sensor.focal_plane_z = g.origin[2] + 0.5 * double(g.nz()) * pitch;
    LsOptions solver;
    solver.tol = 1e-8;
    model = make_forward_model(g, constants, sensor, 1e-4, solver);

    RandomStream rng(seed, 100);
    const Vec3 ext = g.extent();
    for (std::size_t l = 0; l < L; ++l)
      truth.molecules.push_back({{(0.25 + 0.5 * rng.next_double()) * ext[0],
                                  (0.25 + 0.5 * rng.next_double()) * ext[1],
                                  (0.3 + 0.4 * rng.next_double()) * ext[2]},
                                 amplitude});

    auto contexts = make_contexts(model, 1);
    std::vector<std::vector<double>> bgs(
        L, std::vector<double>(model.sensor.measurement_count(), bg_level));
    ScatteringVolume free_space(g);
    stack = simulate_stack(model, contexts, free_space, truth, bgs, seed).stack;
  }
};

} // namespace

TEST_CASE("localizer finds free space emitters within a pixel", "[localize]") {
  LocBench bench(12, 500.0, 5.0, 21);
  const InitResult init = initialize(bench.stack, bench.model.grid, bench.model.constants, 1e-4);
  REQUIRE(init.kept_frames.size() >= 10);

  double sq = 0.0;
  for (std::size_t i = 0; i < init.kept_frames.size(); ++i) {
    const Vec3& p = init.fluorophores[i].position;
    const Vec3& q = bench.truth[init.kept_frames[i]].position;
    const double dx = p[0] - q[0], dy = p[1] - q[1];
    sq += dx * dx + dy * dy;
    CHECK(bench.model.grid.contains(p));
    CHECK(init.fluorophores[i].amplitude > 0.0);
  }
  CHECK(std::sqrt(sq / double(init.kept_frames.size())) < bench.model.sensor.pixel_pitch);
}

TEST_CASE("widefield volume peaks at the configured potential", "[localize]") {
  LocBench bench(8, 400.0, 4.0, 22);
  InitStrategy strategy;
  strategy.peak_potential = 0.23;
  const InitResult init =
      initialize(bench.stack, bench.model.grid, bench.model.constants, 1e-4, strategy);
  double peak = 0.0;
  for (double v : init.f0.values) {
    CHECK(v >= 0.0);
    peak = std::max(peak, v);
  }
  CHECK(peak == Catch::Approx(0.23).epsilon(1e-12));
}

TEST_CASE("axial calibration inverts its own curve", "[localize]") {
  LocBench bench(1, 300.0, 2.0, 23);
  const AxialCalibration cal = build_axial_calibration(
      bench.model.grid, bench.model.constants, bench.model.sensor, 1e-4, 5, 33);
  REQUIRE(cal.z.size() == 33);
  const double dz = cal.z[1] - cal.z[0];
  for (std::size_t k = 11; k < 22; ++k) {
    const double z = lookup_axial(cal, cal.ratio[k], bench.model.sensor.focal_plane_z);
    CHECK(std::abs(z - cal.z[k]) < 2.0 * dz);
  }
}

TEST_CASE("quadratic subpixel interpolation is exact on parabolas", "[localize]") {
  auto parabola = [](double x) { return -(x - 0.2) * (x - 0.2); };
  CHECK(detail::subpixel_offset(parabola(-1.0), parabola(0.0), parabola(1.0)) ==
        Catch::Approx(0.2).epsilon(1e-12));
  CHECK(detail::subpixel_offset(1.0, 2.0, 1.0) == 0.0);
  CHECK(detail::subpixel_offset(1.0, 1.0, 1.0) == 0.0); // flat: not a maximum
}

TEST_CASE("signal free frames are dropped and logged", "[localize]") {
  LocBench bench(3, 400.0, 6.0, 24);
  // replace frame 1 with pure background counts
  for (double& v : bench.stack.frames[1].values) v = 6.0;
  const InitResult init = initialize(bench.stack, bench.model.grid, bench.model.constants, 1e-4);
  CHECK(std::find(init.kept_frames.begin(), init.kept_frames.end(), 1) == init.kept_frames.end());
  bool logged = false;
  for (const std::string& line : init.log)
    if (line.find("dropped") != std::string::npos) logged = true;
  CHECK(logged);

  CHECK_THROWS_AS(initialize(FrameStack{}, bench.model.grid, bench.model.constants, 1e-4),
                  std::invalid_argument);
}

// ---------------------------------------------------------------------------
// experiment driver

TEST_CASE("experiment protocol runs all arms deterministically", "[experiment]") {
  ProtocolConfig protocol;
  protocol.grid = make_grid({12, 12, 8}, {0.1, 0.1, 0.1});
  BiplaneConfig sensor;
  sensor.camera_counts = {12, 12};
  sensor.pixel_pitch = 0.1;
  sensor.focal_plane_z = 0.4;
  protocol.sensor = sensor;
  protocol.solver.tol = 1e-7;
  protocol.frames = 6;
  protocol.mean_amplitude = 400.0;
  ContrastShape shape;
  shape.kind = ContrastShape::Kind::ellipsoid;
  shape.center = {0.6, 0.6, 0.4};
  shape.semi_axes = {0.35, 0.35, 0.2};
  shape.delta_ri = 0.03;
  protocol.contrast.shapes.push_back(shape);
  protocol.background.level = 4.0;
  protocol.background_window = 5;
  protocol.optimizer.outer_iterations = 1;
  protocol.optimizer.objective_tolerance = 0.0;
  protocol.optimizer.newton_steps = 1;
  protocol.optimizer.position_steps = 1;
  protocol.optimizer.fista_steps = 2;

  std::vector<std::string> seen;
  const ExperimentReport a = run_experiment(protocol, 3, 2, [&](const ArmReport& arm) {
    seen.push_back(arm.name);
  });
  REQUIRE(a.arms.size() == 3);
  CHECK(seen == std::vector<std::string>{"init-only", "joint", "true-pos-amp"});
  for (const ArmReport& arm : a.arms) {
    CHECK(arm.completed);
    CHECK(arm.has_ssim);
    CHECK(arm.volume.values.size() == protocol.grid.size());
  }
  CHECK(a.all_completed);
  CHECK(a.arms[1].history.size() >= 2);
  CHECK_FALSE(a.truth_fluorophores.empty());

  const ExperimentReport b = run_experiment(protocol, 3, 1);
  CHECK(a.truth_volume.values == b.truth_volume.values);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.arms[i].ssim == Catch::Approx(b.arms[i].ssim).margin(1e-12));
    CHECK(a.arms[i].has_rmse == b.arms[i].has_rmse);
  }

  ProtocolConfig bad = protocol;
  bad.arms = {"joint", "warp"};
  CHECK_THROWS_AS(validate_protocol(bad), std::invalid_argument);
  bad = protocol;
  bad.frames = 0;
  CHECK_THROWS_AS(validate_protocol(bad), std::invalid_argument);
}

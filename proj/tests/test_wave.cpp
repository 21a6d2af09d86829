#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <vector>

#include "scatloc/field.hpp"
#include "scatloc/green.hpp"
#include "scatloc/lippmann.hpp"
#include "scatloc/rng.hpp"

using namespace scatloc;

namespace {

Complex cdot(const std::vector<Complex>& a, const std::vector<Complex>& b) {
  Complex s{0, 0};
  for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
  return s;
}

double rel_l2(const std::vector<Complex>& a, const std::vector<Complex>& ref) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += std::norm(a[i] - ref[i]);
    den += std::norm(ref[i]);
  }
  return std::sqrt(num / den);
}

std::vector<Complex> random_field(const Grid3& g, std::uint64_t seed, std::uint64_t stream) {
  RandomStream rng(seed, stream);
  std::vector<Complex> v(g.size());
  for (auto& c : v) c = Complex(rng.next_double() - 0.5, rng.next_double() - 0.5);
  return v;
}

} // namespace

// ---------------------------------------------------------------------------
// incident wave

TEST_CASE("spherical wave matches scalar arithmetic at r = 1", "[wave]") {
  OpticalConstants constants; // k_b = 2 pi 1.333 / 0.647
  const Complex u = spherical_wave_at({1.0, 0.0, 0.0}, {0.0, 0.0, 0.0}, 1.0, 0.0, constants);
  CHECK(u.real() == Catch::Approx(0.073937941401345644).epsilon(1e-14));
  CHECK(u.imag() == Catch::Approx(0.02942371150921123).epsilon(1e-14));
}

TEST_CASE("spherical wave is linear in amplitude", "[wave]") {
  OpticalConstants constants;
  const Grid3 g = make_grid({6, 6, 4}, {0.12, 0.1, 0.15});
  const Vec3 p{0.31, 0.22, 0.17};
  const ComplexField one = spherical_wave(g, p, 1.0, 1e-4, constants);
  const ComplexField three = spherical_wave(g, p, 3.0, 1e-4, constants);
  for (std::size_t i = 0; i < one.values.size(); ++i)
    CHECK(std::abs(three.values[i] - 3.0 * one.values[i]) <= 1e-15 * std::abs(three.values[i]));
}

TEST_CASE("smoothing vanishes as eps goes to zero", "[wave]") {
  OpticalConstants constants;
  const Vec3 x{0.4, -0.2, 0.3}, p{0.05, 0.1, -0.1};
  const Complex exact = spherical_wave_at(x, p, 1.0, 0.0, constants);
  double prev = 1e9;
  for (double eps : {1e-2, 1e-4, 1e-6}) {
    const double err = std::abs(spherical_wave_at(x, p, 1.0, eps, constants) - exact);
    CHECK(err < prev / 10.0); // first order in eps: each step shrinks ~100x
    prev = err;
  }
  // k eps / 2r bounds the phase error; at eps 1e-6 and r ~ 0.5 that is ~2e-5
  CHECK(prev / std::abs(exact) < 5e-5);
}

TEST_CASE("singular evaluation is rejected", "[wave]") {
  OpticalConstants constants;
  CHECK_THROWS_AS(spherical_wave_at({0.5, 0.5, 0.5}, {0.5, 0.5, 0.5}, 1.0, 0.0, constants),
                  std::domain_error);
  const Grid3 g = make_grid({2, 2, 2}, {1.0, 1.0, 1.0});
  CHECK_THROWS_AS(spherical_wave(g, g.voxel_center(0, 0, 0), 1.0, 0.0, constants),
                  std::domain_error);
  CHECK_THROWS_AS(spherical_wave_position_gradient(g, {0.1, 0.1, 0.1}, 1.0, 0.0, constants),
                  std::invalid_argument);
}

TEST_CASE("position gradient matches finite differences", "[wave]") {
  OpticalConstants constants;
  const double eps = 1e-4, h = 1e-5;
  RandomStream rng(13, 0);
  const Grid3 probe = make_grid({1, 1, 1}, {1.0, 1.0, 1.0}); // single evaluation point holder
  for (int trial = 0; trial < 100; ++trial) {
    const Vec3 x{rng.next_double() * 2 - 1, rng.next_double() * 2 - 1, rng.next_double() * 2 - 1};
    const Vec3 p{rng.next_double() * 0.4, rng.next_double() * 0.4, rng.next_double() * 0.4};
    Grid3 g = probe;
    g.origin = {x[0] - 0.5, x[1] - 0.5, x[2] - 0.5}; // voxel center lands on x
    const auto grad = spherical_wave_position_gradient(g, p, 1.0, eps, constants);
    for (int axis = 0; axis < 3; ++axis) {
      Vec3 pp = p, pm = p;
      pp[axis] += h;
      pm[axis] -= h;
      const Complex fd = (spherical_wave_at(x, pp, 1.0, eps, constants) -
                          spherical_wave_at(x, pm, 1.0, eps, constants)) /
                         (2.0 * h);
      REQUIRE(std::abs(grad[axis].values[0] - fd) < 1e-5 * std::max(1e-12, std::abs(fd)));
    }
  }
}

TEST_CASE("gradient symmetry properties", "[wave]") {
  OpticalConstants constants;
  const double eps = 1e-4, h = 1e-6;
  const Vec3 x{0.7, 0.1, -0.3}, p{0.2, -0.1, 0.4};
  Grid3 g = make_grid({1, 1, 1}, {1.0, 1.0, 1.0});
  g.origin = {x[0] - 0.5, x[1] - 0.5, x[2] - 0.5};
  const auto grad = spherical_wave_position_gradient(g, p, 1.0, eps, constants);

  // du/dp = -du/dx for a function of x - p
  for (int axis = 0; axis < 3; ++axis) {
    Vec3 xp = x, xm = x;
    xp[axis] += h;
    xm[axis] -= h;
    const Complex ddx = (spherical_wave_at(xp, p, 1.0, eps, constants) -
                         spherical_wave_at(xm, p, 1.0, eps, constants)) /
                        (2.0 * h);
    CHECK(std::abs(grad[axis].values[0] + ddx) < 1e-6 * std::abs(ddx));
  }

  // z component vanishes in the source plane
  Grid3 gz = g;
  gz.origin = {x[0] - 0.5, x[1] - 0.5, p[2] - 0.5};
  const auto flat = spherical_wave_position_gradient(gz, p, 1.0, eps, constants);
  CHECK(std::abs(flat[2].values[0]) == 0.0);
}

// ---------------------------------------------------------------------------
// Green kernel

TEST_CASE("green kernel reproduces the sampled kernel on a delta", "[wave]") {
  OpticalConstants constants;
  const Grid3 g = make_grid({12, 12, 12}, {0.1, 0.1, 0.1});
  const GreenKernel kernel = build_green_kernel(g, constants);
  GreenWorkspace ws(kernel);

  std::vector<Complex> delta(g.size(), Complex(0, 0)), out;
  delta[g.index(6, 6, 6)] = 1.0;
  apply_green(kernel, ws, delta, out);

  const double k = constants.wavenumber();
  const double dv = g.spacing[0] * g.spacing[1] * g.spacing[2];
  const Vec3 c = g.voxel_center(6, 6, 6);
  for (std::size_t kz = 0; kz < 12; ++kz)
    for (std::size_t jy = 0; jy < 12; ++jy)
      for (std::size_t ix = 0; ix < 12; ++ix) {
        const double r = norm(g.voxel_center(ix, jy, kz) - c);
        if (r < 3.0 * g.spacing[0]) continue;
        const Complex ref = dv / (4.0 * M_PI * r) * std::polar(1.0, k * r);
        REQUIRE(std::abs(out[g.index(ix, jy, kz)] - ref) < 1e-3 * std::abs(ref));
      }
}

TEST_CASE("green apply is linear", "[wave]") {
  OpticalConstants constants;
  const Grid3 g = make_grid({8, 8, 8}, {0.1, 0.1, 0.1});
  const GreenKernel kernel = build_green_kernel(g, constants);
  GreenWorkspace ws(kernel);

  const auto u = random_field(g, 1, 1), v = random_field(g, 1, 2);
  const Complex alpha{0.7, -0.4}, beta{-1.2, 0.3};
  std::vector<Complex> mix(g.size());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = alpha * u[i] + beta * v[i];

  std::vector<Complex> gu, gv, gmix;
  apply_green(kernel, ws, u, gu);
  apply_green(kernel, ws, v, gv);
  apply_green(kernel, ws, mix, gmix);
  double err = 0.0, den = 0.0;
  for (std::size_t i = 0; i < mix.size(); ++i) {
    err += std::norm(gmix[i] - alpha * gu[i] - beta * gv[i]);
    den += std::norm(gmix[i]);
  }
  CHECK(std::sqrt(err / den) < 1e-13);
}

TEST_CASE("pad factor beyond 2 changes nothing", "[wave]") {
  OpticalConstants constants;
  const Grid3 g = make_grid({10, 8, 6}, {0.1, 0.12, 0.15});
  const GreenKernel k2 = build_green_kernel(g, constants, 2);
  const GreenKernel k4 = build_green_kernel(g, constants, 4);
  GreenWorkspace w2(k2), w4(k4);

  const auto u = random_field(g, 3, 1);
  std::vector<Complex> o2, o4;
  apply_green(k2, w2, u, o2);
  apply_green(k4, w4, u, o4);
  CHECK(rel_l2(o2, o4) < 1e-10);
}

TEST_CASE("green adjoint passes the inner product test", "[wave]") {
  OpticalConstants constants;
  const Grid3 g = make_grid({16, 16, 16}, {0.1, 0.1, 0.1});
  const GreenKernel kernel = build_green_kernel(g, constants);
  GreenWorkspace ws(kernel);

  const auto u = random_field(g, 5, 1), v = random_field(g, 5, 2);
  std::vector<Complex> gu, ghv;
  apply_green(kernel, ws, u, gu);
  apply_green(kernel, ws, v, ghv, true);
  const Complex lhs = cdot(gu, v), rhs = cdot(u, ghv);
  CHECK(std::abs(lhs - rhs) < 1e-10 * std::abs(lhs));
}

// ---------------------------------------------------------------------------
// Lippmann-Schwinger solves

namespace {

ScatteringVolume blob_potential(const Grid3& g, double peak) {
  ScatteringVolume f;
  f.grid = g;
  f.values.assign(g.size(), 0.0);
  const Vec3 ext = g.extent();
  const Vec3 c{g.origin[0] + 0.5 * ext[0], g.origin[1] + 0.5 * ext[1], g.origin[2] + 0.5 * ext[2]};
  for (std::size_t kz = 0; kz < g.nz(); ++kz)
    for (std::size_t jy = 0; jy < g.ny(); ++jy)
      for (std::size_t ix = 0; ix < g.nx(); ++ix) {
        const double r = norm(g.voxel_center(ix, jy, kz) - c);
        if (r < 0.3 * ext[0]) f.values[g.index(ix, jy, kz)] = peak;
      }
  return f;
}

ComplexField emitter_field(const Grid3& g, const OpticalConstants& constants) {
  const Vec3 ext = g.extent();
  const Vec3 p{g.origin[0] + 0.4 * ext[0], g.origin[1] + 0.55 * ext[1], g.origin[2] + 0.3 * ext[2]};
  return spherical_wave(g, p, 1.0, 1e-4, constants);
}

} // namespace

TEST_CASE("zero potential returns the incident field untouched", "[wave]") {
  OpticalConstants constants;
  const Grid3 g = make_grid({12, 12, 8}, {0.1, 0.1, 0.1});
  const GreenKernel kernel = build_green_kernel(g, constants);
  GreenWorkspace ws(kernel);
  ScatteringVolume f;
  f.grid = g;
  f.values.assign(g.size(), 0.0);
  const ComplexField u_in = emitter_field(g, constants);

  auto [u_t, report] = solve_lippmann_schwinger(f, u_in, kernel, ws);
  CHECK(report.converged);
  CHECK(report.iterations <= 1);
  CHECK(rel_l2(u_t.values, u_in.values) < 1e-12);

  auto [v, vreport] = solve_adjoint(f, u_in, kernel, ws);
  CHECK(vreport.converged);
  CHECK(rel_l2(v.values, u_in.values) < 1e-12);
}

TEST_CASE("weak contrast stays within the Born quadratic bound", "[wave]") {
  OpticalConstants constants;
  const Grid3 g = make_grid({12, 12, 10}, {0.1, 0.1, 0.1});
  const GreenKernel kernel = build_green_kernel(g, constants);
  GreenWorkspace ws(kernel);
  const ComplexField u_in = emitter_field(g, constants);

  double previous_dev = 0.0;
  for (int doubling = 0; doubling < 2; ++doubling) {
    const double peak = 0.5 * (doubling + 1); // f in rad^2/um^2
    const ScatteringVolume f = blob_potential(g, peak);
    const double strength = peak * g.spacing[0] * g.spacing[0];

    LsOptions opts;
    opts.tol = 1e-12;
    auto [u_t, report] = solve_lippmann_schwinger(f, u_in, kernel, ws, opts);
    REQUIRE(report.converged);

    std::vector<Complex> fu(g.size()), born;
    for (std::size_t i = 0; i < fu.size(); ++i) fu[i] = f.values[i] * u_in.values[i];
    apply_green(kernel, ws, fu, born);
    for (std::size_t i = 0; i < born.size(); ++i) born[i] += u_in.values[i];

    const double deviation = rel_l2(u_t.values, born) * // vs u_in scale
                             std::sqrt(cdot(born, born).real() / cdot(u_in.values, u_in.values).real());
    CHECK(deviation < 5.0 * strength * strength);
    if (doubling == 1) { // quadratic scaling: doubling the contrast ~4x deviation
      CHECK(deviation / previous_dev > 2.0);
      CHECK(deviation / previous_dev < 8.0);
    }
    previous_dev = deviation;
  }
}

TEST_CASE("returned residual is a true residual", "[wave]") {
  OpticalConstants constants;
  const Grid3 g = make_grid({10, 10, 8}, {0.1, 0.1, 0.1});
  const GreenKernel kernel = build_green_kernel(g, constants);
  GreenWorkspace ws(kernel);
  const ScatteringVolume f = blob_potential(g, 8.0);
  const ComplexField u_in = emitter_field(g, constants);

  LsOptions opts;
  opts.tol = 1e-9;
  auto [u_t, report] = solve_lippmann_schwinger(f, u_in, kernel, ws, opts);
  REQUIRE(report.converged);

  std::vector<Complex> au;
  apply_ls_operator(f, kernel, ws, u_t.values, au);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < au.size(); ++i) {
    num += std::norm(u_in.values[i] - au[i]);
    den += std::norm(u_in.values[i]);
  }
  CHECK(std::sqrt(num / den) <= opts.tol);
  CHECK(all_finite(u_t));
  INFO("field amplification C = bounded growth check");
  double umax = 0.0, imax = 0.0;
  for (std::size_t i = 0; i < au.size(); ++i) {
    umax = std::max(umax, std::abs(u_t.values[i]));
    imax = std::max(imax, std::abs(u_in.values[i]));
  }
  CHECK(umax < 50.0 * imax); // no blow-up on the test phantom
}

TEST_CASE("ls operator adjoint identity", "[wave]") {
  OpticalConstants constants;
  const Grid3 g = make_grid({16, 16, 16}, {0.1, 0.1, 0.1});
  const GreenKernel kernel = build_green_kernel(g, constants);
  GreenWorkspace ws(kernel);
  const ScatteringVolume f = blob_potential(g, 6.0);

  const auto u = random_field(g, 9, 1), v = random_field(g, 9, 2);
  std::vector<Complex> au, ahv;
  apply_ls_operator(f, kernel, ws, u, au, false);
  apply_ls_operator(f, kernel, ws, v, ahv, true);
  const Complex lhs = cdot(au, v), rhs = cdot(u, ahv);
  CHECK(std::abs(lhs - rhs) < 1e-10 * std::abs(lhs));
}

TEST_CASE("adjoint solve solves the conjugated forward system", "[wave]") {
  OpticalConstants constants;
  const Grid3 g = make_grid({10, 10, 8}, {0.1, 0.1, 0.1});
  const GreenKernel kernel = build_green_kernel(g, constants);
  GreenWorkspace ws(kernel);
  const ScatteringVolume f = blob_potential(g, 5.0);
  const ComplexField rhs = emitter_field(g, constants);

  LsOptions opts;
  opts.tol = 1e-10;
  auto [v, report] = solve_adjoint(f, rhs, kernel, ws, opts);
  REQUIRE(report.converged);

  // real f: conj(v) solves (I - diag(f) G) w = conj(rhs)
  std::vector<Complex> w(g.size()), gw, lhs(g.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::conj(v.values[i]);
  apply_green(kernel, ws, w, gw, false);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const Complex li = w[i] - f.values[i] * gw[i];
    num += std::norm(li - std::conj(rhs.values[i]));
    den += std::norm(rhs.values[i]);
  }
  CHECK(std::sqrt(num / den) < 100.0 * opts.tol);
}

TEST_CASE("bicgstab and richardson agree at weak contrast", "[wave]") {
  OpticalConstants constants;
  const Grid3 g = make_grid({10, 10, 8}, {0.1, 0.1, 0.1});
  const GreenKernel kernel = build_green_kernel(g, constants);
  GreenWorkspace ws(kernel);
  const ScatteringVolume f = blob_potential(g, 1.0);
  const ComplexField u_in = emitter_field(g, constants);

  LsOptions krylov, born;
  krylov.tol = born.tol = 1e-10;
  born.scheme = LsScheme::richardson;
  born.max_iter = 500;
  auto [ua, ra] = solve_lippmann_schwinger(f, u_in, kernel, ws, krylov);
  auto [ub, rb] = solve_lippmann_schwinger(f, u_in, kernel, ws, born);
  REQUIRE(ra.converged);
  REQUIRE(rb.converged);
  CHECK(rel_l2(ua.values, ub.values) < 1e-8);
}

TEST_CASE("non-convergence is reported, best iterate returned", "[wave]") {
  OpticalConstants constants;
  const Grid3 g = make_grid({10, 10, 8}, {0.1, 0.1, 0.1});
  const GreenKernel kernel = build_green_kernel(g, constants);
  GreenWorkspace ws(kernel);
  const ScatteringVolume f = blob_potential(g, 40.0);
  const ComplexField u_in = emitter_field(g, constants);

  LsOptions opts;
  opts.tol = 1e-14;
  opts.max_iter = 2;
  auto [u_t, report] = solve_lippmann_schwinger(f, u_in, kernel, ws, opts);
  CHECK_FALSE(report.converged);
  CHECK(report.relative_residual > 0.0);
  CHECK(all_finite(u_t));
}

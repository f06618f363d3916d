#include "doctest.h"

#include <cmath>
#include <random>

#include "kefam/error.hpp"
#include "kefam/family_geom.hpp"
#include "kefam/linalg.hpp"

using namespace kefam;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::InvalidArgument;
}

Eigen::VectorXcd random_vector(std::mt19937_64& rng, int m) {
  std::normal_distribution<double> N;
  Eigen::VectorXcd v(m);
  for (int i = 0; i < m; ++i) v(i) = cplx(N(rng), N(rng));
  return v;
}

// Hermitian (n+1)x(n+1) matrix with a positive definite slice block.
Eigen::MatrixXcd random_form(std::mt19937_64& rng, int n) {
  Eigen::MatrixXcd X(n + 1, n + 1);
  for (int j = 0; j <= n; ++j) X.col(j) = random_vector(rng, n + 1);
  Eigen::MatrixXcd M = 0.5 * (X + X.adjoint());
  Eigen::MatrixXcd Y(n, n);
  for (int j = 0; j < n; ++j) Y.col(j) = random_vector(rng, n);
  M.topLeftCorner(n, n) = Y * Y.adjoint() + 0.1 * Eigen::MatrixXcd::Identity(n, n);
  return M;
}

double ball_c(double r2, int n) { return 1.0 / (1.0 - r2) - 1.0 / (n + 1.0); }

}  // namespace

TEST_CASE("horizontal lift is orthogonal to every slice vector") {
  std::mt19937_64 rng(7);
  for (int n = 1; n <= 3; ++n)
    for (int k = 0; k < 20; ++k) {
      const Eigen::MatrixXcd M = random_form(rng, n);
      const Eigen::VectorXcd v = horizontal_lift(M);
      CHECK(v(n) == cplx(1.0));
      for (int t = 0; t < 20; ++t) {
        Eigen::VectorXcd w = Eigen::VectorXcd::Zero(n + 1);
        w.head(n) = random_vector(rng, n).normalized();
        CHECK(std::abs(form_inner(M, v, w)) <= 1e-10 * (1.0 + M.norm()));
      }
      CHECK(std::abs(geodesic_curvature(M) - form_inner(M, v, v).real()) <= 1e-10 * (1.0 + M.norm()));
    }

  // Closed-form potentials g, w and h at random interior points.
  const auto F = catalog_instantiate("perturbed_ball", {{"n", 2}});
  const auto B = background_pair(F, 0.1, 3);
  const auto ball = catalog_instantiate("ball_family", {{"n", 2}});
  const std::vector<std::pair<FieldPtr, const FamilyDefinition*>> forms{
      {g_potential(F), &F}, {B.w, &F}, {ball.oracle_h, &ball}};
  for (const auto& [pot, fam] : forms) {
    const PotentialForm T(pot);
    double worst = 0.0;
    for (const auto& p : interior_samples(*fam, 0.1, 20, 3)) {
      const Eigen::MatrixXcd M = T.matrix(p);
      const Eigen::VectorXcd v = horizontal_lift(T, p);
      for (int t = 0; t < 20; ++t) {
        Eigen::VectorXcd w = Eigen::VectorXcd::Zero(3);
        w.head(2) = random_vector(rng, 2).normalized();
        worst = std::max(worst, std::abs(form_inner(M, v, w)) / (1.0 + M.norm()));
      }
    }
    CHECK(worst <= 1e-10);
  }
}

TEST_CASE("lift and curvature examples") {
  Eigen::MatrixXcd D = Eigen::MatrixXcd::Zero(3, 3);
  D(0, 0) = 2.0;
  D(1, 1) = 3.0;
  D(2, 2) = 0.7;
  const Eigen::VectorXcd v = horizontal_lift(ConstantForm(D), CPoint{{0.0, 0.0}, 0.0});
  CHECK(v.head(2).norm() == 0.0);
  CHECK(geodesic_curvature(D) == doctest::Approx(0.7).epsilon(1e-15));

  const auto ball = catalog_instantiate("ball_family", {{"n", 2}});
  const PotentialForm H(ball.oracle_h);
  const auto vb = horizontal_lift(H, CPoint{{cplx(0.3, 0.1), cplx(-0.2, 0.4)}, 0.0});
  CHECK(vb.head(2).norm() <= 1e-14);

  // h_0(z - c(s) e_1) with c = s/2: v_H = d/ds + (1/2) d/dz_1 everywhere.
  const auto tr = catalog_instantiate("translated_ball", {{"n", 2}});
  const PotentialForm T(tr.oracle_h);
  for (const auto& p : interior_samples(tr, cplx(0.2, -0.1), 10, 4)) {
    const auto vt = horizontal_lift(T, p);
    CHECK(std::abs(vt(0) - 0.5) <= 1e-12);
    CHECK(std::abs(vt(1)) <= 1e-12);
  }

  Eigen::MatrixXcd S = Eigen::MatrixXcd::Zero(2, 2);
  S(1, 1) = 1.0;
  CHECK(kind_of([&] { geodesic_curvature(S); }) == ErrorKind::SingularSliceBlock);
}

TEST_CASE("wedge identity") {
  std::mt19937_64 rng(11);
  double worst = 0.0, worst_degenerate = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const int n = 1 + k % 4;
    Eigen::MatrixXcd M = random_form(rng, n);
    worst = std::max(worst, wedge_identity_residual(M));
    // Force c = 0.
    const Eigen::MatrixXcd S = M.topLeftCorner(n, n);
    M(n, n) = (M.block(n, 0, 1, n) * S.inverse() * M.block(0, n, n, 1))(0, 0).real();
    CHECK(std::abs(geodesic_curvature(M)) <= 1e-12 * (1.0 + M.norm() * M.norm()));
    worst_degenerate = std::max(worst_degenerate, std::abs(M.determinant()));
  }
  CHECK(worst <= 1e-12);
  CHECK(worst_degenerate <= 1e-12 * 1e3);

  for (int n = 1; n <= 3; ++n) {
    const auto ball = catalog_instantiate("ball_family", {{"n", n}});
    const PotentialForm H(ball.oracle_h);
    for (const auto& p : interior_samples(ball, cplx(0.1, 0.2), 25, 9)) CHECK(wedge_identity_residual(H, p) <= 1e-10);
  }
}

TEST_CASE("closed-form h: curvature, dbar norm and plurisubharmonicity") {
  for (int n = 1; n <= 3; ++n) {
    const auto ball = catalog_instantiate("ball_family", {{"n", n}});
    const OracleH H(ball.oracle_h);
    const CPoint o{std::vector<cplx>(static_cast<std::size_t>(n), 0.0), 0.0};
    CHECK(std::abs(c_of_H(H, o).value - n / (n + 1.0)) <= 1e-8);
    for (double r : {0.1, 0.4, 0.6, 0.8}) {
      CPoint p = o;
      p.z[0] = std::polar(r, 0.3 * n);
      if (n > 1) p.z[1] = 0.0;
      CHECK(std::abs(c_of_H(H, p).value - ball_c(r * r, n)) <= 1e-8);
    }
    const auto ps = psh_min_eigen_scan(H, {o});
    CHECK(std::abs(ps.min_eigen - n / (n + 1.0)) <= 1e-12);
    const Eigen::MatrixXcd M = H.at(o).M;
    Eigen::MatrixXcd expect = Eigen::MatrixXcd::Identity(n + 1, n + 1);
    expect(n, n) = n / (n + 1.0);
    CHECK((M - expect).norm() <= 1e-12);
  }
  for (const char* name : {"translated_ball", "hartogs_radius"}) {
    const auto F = catalog_instantiate(name, {{"n", 2}});
    const OracleH H(F.oracle_h);
    const auto samples = interior_samples(F, cplx(0.2, 0.1), 30, 5);
    double cmax = 0.0, dmax = 0.0;
    for (const auto& p : samples) {
      cmax = std::max(cmax, std::abs(c_of_H(H, p).value));
      dmax = std::max(dmax, dbar_vH_norm(H, p));
    }
    MESSAGE(std::string(name) << ": |c| " << cmax << ", |dbar v|^2 " << dmax);
    CHECK(cmax <= 1e-8);
    CHECK(dmax <= 1e-8);
    CHECK(std::abs(psh_min_eigen_scan(H, samples).min_eigen) <= 1e-8);
  }
}

TEST_CASE("Schumacher identity on closed-form potentials") {
  for (int n = 1; n <= 3; ++n) {
    const auto ball = catalog_instantiate("ball_family", {{"n", n}});
    const OracleH H(ball.oracle_h);
    // Two independent evaluations at the centre: the dbar norm against -Delta c + (n+1) c.
    const CPoint o{std::vector<cplx>(static_cast<std::size_t>(n), 0.0), 0.0};
    const auto t0 = schumacher_residual(H, o);
    CHECK(t0.dbar_norm >= 0.0);
    CHECK(std::abs(t0.dbar_norm - (-t0.laplacian_c + n)) <= 1e-6);
    double worst = 0.0;
    for (cplx s : {cplx(0.0), cplx(0.2, -0.1)})
      for (int k = 0; k < 8; ++k) {
        CPoint p = o;
        p.z[0] = std::polar(0.5, 0.785 * k);
        p.s = s;
        const auto t = schumacher_residual(H, p);
        CHECK(t.dbar_norm >= -1e-14);
        worst = std::max(worst, std::abs(t.normalized));
      }
    CHECK(worst <= 1e-8);
  }
  const auto tr = catalog_instantiate("translated_ball", {{"n", 1}});
  const auto t = schumacher_residual(OracleH(tr.oracle_h), CPoint{{cplx(0.3, 0.2)}, 0.1});
  CHECK(std::abs(t.residual) <= 1e-8);
}

TEST_CASE("c(W): Levi decomposition and boundary blow-up") {
  for (const char* name : {"perturbed_ball", "real_ellipsoid"}) {
    const auto F = catalog_instantiate(name, {{"n", 1}});
    const auto B = background_pair(F, cplx(0.15, 0.1), 2);
    for (const auto& p : interior_samples(F, cplx(0.15, 0.1), 40, 2)) {
      const auto d = c_of_W(F, B, p);
      CHECK(std::abs(d.levi + d.gradient - d.c) <= 1e-9 * std::abs(d.c));
    }
    const auto ray = boundary_ray(F, 0.0, boundary_point(F, 0.0, {cplx(1.0)}), 10, -0.512, 0.5);
    std::vector<double> ax, inv;
    for (std::size_t k = 0; k < ray.size(); ++k) {
      ax.push_back(-ray.phi[k]);
      inv.push_back(1.0 / c_of_W(F, B, ray.points[k]).c);
    }
    // c(W) ~ |phi|^{-order}.
    const auto fit = fit_power_law(ax, inv);
    MESSAGE(std::string(name) << ": blow-up order " << fit.order);
    CHECK(fit.order >= 0.9);
  }
  const auto ball = catalog_instantiate("ball_family", {{"n", 2}});
  CHECK(std::abs(c_of_G(ball, CPoint{{0.0, 0.0}, 0.0}) - 1.0) <= 1e-14);

  // Trivialising direction: c(W) stays bounded.
  const auto hg = catalog_instantiate("hartogs_radius", {{"n", 1}});
  const auto Bh = background_pair(hg, 0.0, 2);
  const auto ray = boundary_ray(hg, 0.0, boundary_point(hg, 0.0, {cplx(1.0)}), 10, -0.512, 0.5);
  for (const auto& p : ray.points) CHECK(std::abs(c_of_W(hg, Bh, p).c) <= 1e-6);
}

TEST_CASE("boundary ratio scans") {
  const auto ball = catalog_instantiate("ball_family", {{"n", 1}});
  const auto B = background_pair(ball, 0.0, 2);
  const OracleH H(ball.oracle_h);
  const auto ray = boundary_ray(ball, 0.0, boundary_point(ball, 0.0, {cplx(1.0)}), 7, -0.064, 0.5);
  const auto scan = boundary_ratio_scan(ball, B, H, ray);
  CHECK(scan.monotone_tail);
  CHECK(scan.final_defect <= 0.05);
  REQUIRE(scan.rows.size() == 7);
  CHECK(std::abs(scan.rows.back().phi + 1e-3) <= 1e-9);

  // Against c(G): ratio 1 - |phi|/(n+1) on the s = 0 slice.
  const auto Bg = background_from_fields(1, g_potential(ball), g_potential(ball));
  const auto sg = boundary_ratio_scan(ball, Bg, H, ray);
  for (const auto& r : sg.rows) CHECK(std::abs(std::abs(r.ratio - 1.0) + r.phi / 2.0) <= 1e-10);
  CHECK(sg.longest_decreasing == 7);
  CHECK(sg.monotone_tail);

  // Identical potentials.
  const auto same = boundary_ratio_scan(ball, B, OracleH(B.w), ray);
  for (const auto& r : same.rows) CHECK(std::abs(r.ratio - 1.0) <= 1e-12);

  const auto hg = catalog_instantiate("hartogs_radius", {{"n", 1}});
  const auto Bh = background_pair(hg, 0.0, 2);
  const auto rh = boundary_ray(hg, 0.0, boundary_point(hg, 0.0, {cplx(1.0)}), 7, -0.064, 0.5);
  CHECK(kind_of([&] { boundary_ratio_scan(hg, Bh, OracleH(hg.oracle_h), rh); }) ==
        ErrorKind::NotStronglyPseudoconvexPoint);
}

TEST_CASE("numeric h from slice stacks") {
  const auto ball = catalog_instantiate("ball_family", {{"n", 1}});
  const auto Bb = background_pair(ball, 0.0, 2);
  const NumericH Hb(solve_slice_stack(ball, Bb, 0.0, 65, 2e-2, SolveOptions{1e-12}));
  const auto c0 = c_of_H(Hb, CPoint{{0.0}, 0.0});
  CHECK(!c0.closure);
  CHECK(std::abs(c0.value - 0.5) <= 1e-2);
  const auto c3 = c_of_H(Hb, CPoint{{cplx(0.3, 0.0)}, 0.0});
  CHECK(std::abs(c3.value - c_of_H(OracleH(ball.oracle_h), CPoint{{cplx(0.3, 0.0)}, 0.0}).value) <= 1e-2);
  // Off-lattice point.
  const auto co = c_of_H(Hb, CPoint{{cplx(0.2137, -0.1111)}, 0.0});
  CHECK(!co.closure);
  CHECK(std::abs(co.value - ball_c(std::norm(cplx(0.2137, -0.1111)), 1)) <= 1e-2);
  CHECK(kind_of([&] { Hb.at(CPoint{{0.0}, 0.1}); }) == ErrorKind::InvalidArgument);

  const auto tr = catalog_instantiate("translated_ball", {{"n", 1}});
  const cplx s = cplx(0.2, 0.0);
  const auto Bt = background_pair(tr, s, 2);
  const NumericH Ht(solve_slice_stack(tr, Bt, s, 65, 2e-2, SolveOptions{1e-12}));
  for (const auto& p : interior_samples(tr, s, 10, 5)) {
    CHECK(std::abs(c_of_H(Ht, p).value) <= 5e-3);
    CHECK(dbar_vH_norm(Ht, p) <= 5e-3);
  }

  // Stacks on mismatched footprints.
  auto st = solve_slice_stack(tr, Bt, s, 33, 2e-2);
  auto other = build_slice_grid(tr, s, 33, 0.3);
  st.slices[4].grid = other;
  CHECK(kind_of([&] { NumericH bad(st); }) == ErrorKind::StencilInconsistent);

  const auto el = catalog_instantiate("real_ellipsoid", {{"n", 1}});
  SolveOptions opt;
  opt.max_iterations = 0;
  CHECK(kind_of([&] { solve_slice_stack(el, background_pair(el, 0.2, 2), 0.2, 33, 2e-2, opt); }) ==
        ErrorKind::SliceSolveFailed);
}

TEST_CASE("numeric Schumacher residual and nonnegativity on a real ellipsoid") {
  const auto F = catalog_instantiate("real_ellipsoid", {{"n", 1}});
  const cplx s = 0.2;
  const auto B = background_pair(F, s, 2);
  const std::vector<cplx> pts{0.0, 0.25, cplx(0.0, 0.25), cplx(-0.25, 0.25)};
  std::vector<double> worst;
  for (int res : {33, 65}) {
    const NumericH H(solve_slice_stack(F, B, s, res, 2e-2, SolveOptions{1e-12}));
    double w = 0.0;
    for (auto z : pts) w = std::max(w, std::abs(schumacher_residual(H, CPoint{{z}, s}).residual));
    worst.push_back(w);
    for (const auto& p : interior_samples(F, s, 30, 8)) CHECK(c_of_H(H, p).value >= -5e-3);
  }
  MESSAGE("Schumacher residual " << worst[0] << " -> " << worst[1]);
  CHECK(worst[1] <= worst[0] / std::pow(2.0, 1.5));
}

#include "doctest.h"

#include <chrono>
#include <cmath>
#include <random>

#include "kefam/error.hpp"
#include "kefam/fefferman.hpp"
#include "kefam/linalg.hpp"

using namespace kefam;
using nlohmann::json;

namespace {

FieldPtr field(int n, ClosedFormField::Generator g, int loss = 0) {
  return std::make_shared<ClosedFormField>(n, std::move(g), loss);
}

FieldPtr j_defect(const FieldPtr& zeta) {
  const auto jr = j_field(zeta);
  return field(zeta->dim(), [gen = jr->generator()](const Coords& c) { return 1.0 - gen(c); }, jr->loss());
}

std::vector<CPoint> ball_points(int n, int count, double radius, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<CPoint> out;
  for (int k = 0; k < count; ++k) {
    std::vector<cplx> z(static_cast<std::size_t>(n));
    double norm = 0.0;
    for (auto& v : z) {
      v = {nd(rng), nd(rng)};
      norm += std::norm(v);
    }
    const double r = radius * std::pow(u(rng), 1.0 / (2 * n));
    for (auto& v : z) v *= r / std::sqrt(norm);
    out.push_back(CPoint{z, 0.0});
  }
  return out;
}

}  // namespace

TEST_CASE("J of the ball and homogeneity") {
  for (int n : {1, 2, 3}) {
    auto zeta = field(n, [](const Coords& c) { return 1.0 - c.norm2(); });
    auto scaled = field(n, [](const Coords& c) { return 2.5 * (1.0 - c.norm2()); });
    for (const auto& p : ball_points(n, 100, 0.95, 17 + static_cast<std::uint64_t>(n))) {
      CHECK(std::abs(j_functional(*zeta, p) - 1.0) <= 1e-10);
      CHECK(std::abs(j_functional(*scaled, p) - std::pow(2.5, n + 1)) <= 1e-10 * std::pow(2.5, n + 1));
    }
  }
}

TEST_CASE("J at the centre of an ellipsoid") {
  // diag(1, -1, -2) bordered matrix: determinant 2.
  auto zeta = field(2, [](const Coords& c) { return 1.0 - c.abs2(0) - 2.0 * c.abs2(1); });
  CHECK(std::abs(j_functional(*zeta, CPoint{{0.0, 0.0}, 0.0}) - 2.0) < 1e-15);
}

TEST_CASE("J agrees with exp(-(n+1) g) det(g_{a bbar}) for g = -log zeta") {
  auto zeta = field(2, [](const Coords& c) {
    const Series x = c.re(0), y = c.im(1);
    return 1.0 - x * x - 3.0 * y * y - 0.5 * c.abs2(1) + 0.1 * x * c.re(1);
  });
  auto g = field(2, [zeta](const Coords& c) { return -log(zeta->generator()(c)); });
  for (const auto& p : ball_points(2, 20, 0.4, 3)) {
    const auto jg = slice_jet(*g, p, 2);
    const double rhs = std::exp(-3.0 * jg.value.real()) * jg.hess_zzbar.determinant().real();
    CHECK(std::abs(j_functional(*zeta, p) - rhs) < 1e-12);
  }
}

TEST_CASE("Fefferman recursion on the unit ball is a fixed point") {
  for (int n : {1, 2}) {
    auto rho = field(n, [](const Coords& c) { return c.norm2() - 1.0; });
    const auto seq = fefferman_sequence(n, rho, n + 1);
    for (const auto& p : ball_points(n, 20, 0.9, 5))
      for (const auto& r : seq.rho_l) CHECK(std::abs(field_value(*r, p) - (1.0 - std::norm(p.z[0]) -
                                                                             (n > 1 ? std::norm(p.z[1]) : 0.0))) < 1e-10);
  }
}

TEST_CASE("scaling the defining function leaves rho^1 unchanged") {
  auto rho = field(2, [](const Coords& c) { return c.abs2(0) + 2.0 * c.abs2(1) + 0.3 * c.re(0) * c.re(1) - 1.0; });
  auto scaled = field(2, [rho](const Coords& c) { return 3.0 * rho->generator()(c); });
  const auto a = fefferman_sequence(2, rho, 1), b = fefferman_sequence(2, scaled, 1);
  for (const auto& p : ball_points(2, 10, 0.5, 8))
    CHECK(std::abs(field_value(*a.top(), p) - field_value(*b.top(), p)) < 1e-13);
}

TEST_CASE("ellipsoid rho^1 at the centre") {
  auto rho = field(2, [](const Coords& c) { return c.abs2(0) + 2.0 * c.abs2(1) - 1.0; });
  const auto seq = fefferman_sequence(2, rho, 1);
  CHECK(std::abs(field_value(*seq.top(), CPoint{{0.0, 0.0}, 0.0}).real() - std::pow(2.0, -1.0 / 3.0)) < 1e-14);
}

TEST_CASE("-rho^l = eta rho pointwise and level range") {
  const auto F = catalog_instantiate("real_ellipsoid", {{"n", 2}});
  const auto seq = fefferman_sequence(F, 0.1, 3);
  for (const auto& p : interior_samples(F, 0.1, 10, 2)) {
    const double lhs = -field_value(*seq.top(), p).real();
    const double rhs = field_value(*seq.eta, p).real() * F.phi_value(p);
    CHECK(std::abs(lhs - rhs) <= 1e-12);
  }
  try {
    fefferman_sequence(F, 0.0, 4);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::LevelOutOfRange);
  }
}

TEST_CASE("power-law fitter") {
  const auto F = catalog_instantiate("ball_family", {{"n", 1}});
  const auto ray = boundary_ray(F, 0.0, CPoint{{1.0}, 0.0}, 9, -0.1, 0.5);
  auto sq = field(1, [&](const Coords& c) {
    const Series phi = F.phi->generator()(c);
    return phi * phi;
  });
  const auto fit = vanishing_order_fit(*sq, ray);
  CHECK(std::abs(fit.order - 2.0) < 1e-6);

  auto rho = field(1, [](const Coords& c) { return c.abs2(0) - 1.0; });
  const auto seq = fefferman_sequence(1, rho, 1);
  const auto defect = j_defect(seq.top());
  const auto zero = vanishing_order_fit(*defect, ray);
  CHECK(zero.vanishing);
  CHECK(std::isinf(zero.order));

  const auto short_ray = boundary_ray(F, 0.0, CPoint{{1.0}, 0.0}, 3, -0.1, 0.5);
  try {
    vanishing_order_fit(*sq, short_ray);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateRay);
  }
}

TEST_CASE("recursion consistency: J(rho^l) - 1 vanishes to order l") {
  for (std::string name : {"real_ellipsoid", "perturbed_ball", "ellipsoid_family", "ball_family"}) {
    for (int n : {1, 2}) {
      const auto F = catalog_instantiate(name, {{"n", n}});
      const cplx s = 0.1;
      const auto p = boundary_point(F, s, std::vector<cplx>(static_cast<std::size_t>(n), 1.0 / std::sqrt(n)));
      const auto ray = boundary_ray(F, s, p, 8, -0.05, 0.5);
      const auto seq = fefferman_sequence(F, s, n + 1);
      for (int l = 1; l <= n + 1; ++l) {
        const auto defect = j_defect(seq.rho_l[static_cast<std::size_t>(l - 1)]);
        const auto fit = vanishing_order_fit(*defect, ray);
        MESSAGE(name << " n=" << n << " l=" << l << " order " << fit.order << " rms " << fit.residual);
        CHECK(fit.order >= l - 0.3);
      }
    }
  }
}

TEST_CASE("background pair") {
  const auto ball = catalog_instantiate("ball_family", {{"n", 2}});
  const auto B = background_pair(ball, 0.2, 3, 0.0, BlendMode::Auto, 100);
  CHECK_FALSE(B.blended);
  for (const auto& p : interior_samples(ball, 0.2, 10, 4)) CHECK(std::abs(field_value(*B.F, p)) < 1e-12);

  // The bump makes the unblended w fail to be psh in the middle of the slice;
  // blending repairs it without touching the boundary band.
  for (int n : {1, 2}) {
    const auto F = catalog_instantiate("perturbed_ball", {{"n", n}});
    try {
      background_pair(F, 0.1, n + 1, 0.0, BlendMode::Never, 200);
      CHECK(false);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::BlendFailed);
    }
    const auto P = background_pair(F, 0.1, n + 1, 0.0, BlendMode::Auto, 200);
    CHECK(P.blended);
    CHECK(P.min_net_eigen > 0.0);
    for (const auto& p : interior_samples(F, 0.1, 20, 6)) {
      const auto jw = slice_jet(*P.w, p, 2);
      const double lhs = jw.hess_zzbar.determinant().real() * std::exp(-(n + 1.0) * jw.value.real()) *
                         std::exp(field_value(*P.F, p).real());
      CHECK(std::abs(lhs - 1.0) < 1e-10);
    }
    const auto seq = fefferman_sequence(F, 0.1, n + 1);
    for (const auto& p : interior_samples(F, 0.1, 40, 8)) {
      const double phi = F.phi_value(p);
      const double w = field_value(*P.w, p).real();
      if (phi > -0.5 * P.delta0) CHECK(std::abs(w + std::log(-field_value(*seq.eta, p).real() * phi)) < 1e-13);
      if (phi < -P.delta0) CHECK(std::abs(w + std::log(-phi)) < 1e-13);
    }
  }

  // eta drops to about 1/2 in the middle of this slice, so pulling it to 1 over
  // the band breaks positivity; auto mode keeps the unblended background.
  const auto R = catalog_instantiate("real_ellipsoid", {{"n", 1}});
  try {
    background_pair(R, 0.1, 2, 0.0, BlendMode::Always, 200);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::BlendFailed);
  }
  CHECK_FALSE(background_pair(R, 0.1, 2, 0.0, BlendMode::Auto, 200).blended);
}

TEST_CASE("F vanishes to order n+1 at level n+1") {
  for (int n : {1, 2}) {
    for (std::string name : {"ellipsoid_family", "real_ellipsoid"}) {
      const auto F = catalog_instantiate(name, {{"n", n}});
      const auto t0 = std::chrono::steady_clock::now();
      const auto B = background_pair(F, 0.0, n + 1, 0.0, BlendMode::Auto, 200);
      const auto t1 = std::chrono::steady_clock::now();
      const auto p = boundary_point(F, 0.0, std::vector<cplx>(static_cast<std::size_t>(n), cplx(0.6, 0.8) / std::sqrt(n)));
      const auto ray = boundary_ray(F, 0.0, p, 8, -0.05, 0.5);
      const auto fit = vanishing_order_fit(*B.F, ray, 1e-10);
      MESSAGE(name << " n=" << n << " F order " << fit.order << " background "
                   << std::chrono::duration<double>(t1 - t0).count() << " s");
      CHECK(fit.order >= n + 0.7);
    }
  }
}

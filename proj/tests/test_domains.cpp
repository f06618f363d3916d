#include "doctest.h"

#include <cmath>
#include <random>

#include "kefam/domains.hpp"
#include "kefam/error.hpp"
#include "kefam/linalg.hpp"

using namespace kefam;
using nlohmann::json;

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

}  // namespace

TEST_CASE("polynomial expressions in s") {
  auto c = parse_polynomial("s/2");
  REQUIRE(c.size() == 2);
  CHECK(std::abs(c[1] - 0.5) < 1e-15);
  c = parse_polynomial("0.3*s^2 - 0.1i*s + (1+2i)");
  REQUIRE(c.size() == 3);
  CHECK(std::abs(c[0] - cplx(1, 2)) < 1e-15);
  CHECK(std::abs(c[1] - cplx(0, -0.1)) < 1e-15);
  CHECK(std::abs(c[2] - 0.3) < 1e-15);
  CHECK(kind_of([] { parse_polynomial("s+"); }) == ErrorKind::ConfigInvalid);
  CHECK(kind_of([] { parse_polynomial("1/s"); }) == ErrorKind::ConfigInvalid);
}

TEST_CASE("catalog fixtures") {
  const auto ball = catalog_instantiate("ball_family", {{"n", 2}});
  CHECK(ball.n == 2);
  CHECK(ball.oracle_h);
  CHECK(std::abs(ball.phi_value(CPoint{{0.0, 0.0}, 0.0}) + 1.0) < 1e-15);
  CHECK(std::abs(ball.phi_value(CPoint{{0.6, 0.0}, 0.8})) < 1e-15);

  const auto tr = catalog_instantiate("translated_ball", {{"c", "s/2"}});
  REQUIRE(tr.oracle_transport);
  const auto z = tr.oracle_transport({0.0}, 0.0, 0.4);
  CHECK(std::abs(z[0] - 0.2) < 1e-15);

  const auto el = catalog_instantiate("ellipsoid_family", {{"n", 2}, {"a", {1.0, 2.0}}});
  const auto j = el.phi->jet(CPoint{{0.0, 0.0}, 0.0}, 2);
  CHECK(std::abs(j.value + 1.0) < 1e-15);
  CHECK(std::abs(j.hess_zzbar(0, 0) - 1.0) < 1e-15);
  CHECK(std::abs(j.hess_zzbar(1, 1) - 2.0) < 1e-15);
  CHECK(std::abs(j.hess_zzbar(0, 1)) < 1e-15);

  for (const auto& name : catalog_names()) {
    for (int n : {1, 2}) {
      const auto F = catalog_instantiate(name, {{"n", n}});
      const auto audit = audit_conditions(F, 100, 3);
      CHECK_MESSAGE(audit.ok, name << " n=" << n << " " << audit.failed);
      CHECK(audit.min_slice_eigen > 0.0);
      CHECK(audit.max_interior_phi < 0.0);
    }
  }
  CHECK(kind_of([] { catalog_instantiate("torus", {}); }) == ErrorKind::UnknownFamily);
  CHECK(kind_of([] { catalog_instantiate("perturbed_ball", {{"eps", 0.2}}); }) == ErrorKind::ConfigInvalid);
}

TEST_CASE("audit flags a slice Hessian of the wrong sign") {
  // Annulus {(|z|^2 - 1/2)^2 < 1/5}: psh fails for |z|^2 < 1/4.
  FamilyDefinition F;
  F.name = "annulus";
  F.n = 1;
  F.phi = std::make_shared<ClosedFormField>(1, [](const Coords& c) {
    const Series t = c.abs2(0) - 0.5;
    return t * t - 0.2 + c.s_abs2();
  });
  F.slice_center = [](cplx) { return std::vector<cplx>{std::sqrt(0.5)}; };
  F.slice_box = [](cplx) { return Box{{-1.0, -1.0}, {1.0, 1.0}}; };
  const auto audit = audit_conditions(F, 100, 3);
  CHECK_FALSE(audit.ok);
  CHECK(audit.failed.rfind("(iii)", 0) == 0);
  REQUIRE(audit.where);
  CHECK(std::norm(audit.where->z[0]) < 0.25 + 1e-9);
}

TEST_CASE("strong pseudoconvexity margin") {
  const auto ball = catalog_instantiate("ball_family", {{"n", 2}});
  for (const auto& p : boundary_samples(ball, cplx(0.1, 0.2), 10, 4))
    CHECK(std::abs(strong_pseudoconvexity_margin(ball, p) - 1.0) < 1e-12);

  // phi = |z|^2 e^{-2 Re s} - 1 at (1, 0): tangent vector (1, 1), Levi form
  // [[1, -1], [-1, 1]] on it gives 0.
  const auto hart = catalog_instantiate("hartogs_radius", {});
  CHECK(std::abs(strong_pseudoconvexity_margin(hart, CPoint{{1.0}, 0.0})) < 1e-12);

  const auto el = catalog_instantiate("ellipsoid_family", {{"n", 2}, {"a", {1.0, 2.0}}});
  CHECK(strong_pseudoconvexity_margin(el, CPoint{{0.0, 1.0 / std::sqrt(2.0)}, 0.0}) >= 1.0 - 1e-12);

  CHECK(kind_of([&] { strong_pseudoconvexity_margin(ball, CPoint{{0.5, 0.0}, 0.0}); }) == ErrorKind::NotOnBoundary);
}

TEST_CASE("boundary rays") {
  const auto ball = catalog_instantiate("ball_family", {{"n", 2}});
  const auto ray = boundary_ray(ball, 0.0, CPoint{{1.0, 0.0}, 0.0}, 5);
  REQUIRE(ray.size() == 5);
  for (std::size_t k = 0; k < ray.size(); ++k) {
    CHECK(ray.phi[k] < 0.0);
    if (k > 0) {
      CHECK(ray.phi[k] > ray.phi[k - 1]);
      CHECK(std::abs(ray.phi[k] / ray.phi[k - 1] - 0.5) < 1e-6);
    }
  }
  const auto tr = catalog_instantiate("translated_ball", {{"c", "s/2"}});
  const cplx s = 0.3;
  const auto p = boundary_point(tr, s, {cplx(0.0, 1.0)});
  CHECK(std::abs(std::abs(p.z[0] - 0.15) - 1.0) < 1e-12);
  const auto r2 = boundary_ray(tr, s, p, 6, -0.2, 0.25);
  for (const auto& q : r2.points) CHECK(std::abs(q.z[0].real() - 0.15) < 1e-12);
  CHECK(kind_of([&] { boundary_ray(ball, 0.0, CPoint{{0.9, 0.0}, 0.0}, 5); }) == ErrorKind::NotOnBoundary);
}

TEST_CASE("g = -log(-phi): gradient bound and closed-form inverse") {
  for (const auto& name : catalog_names()) {
    const auto F = catalog_instantiate(name, {{"n", 2}});
    for (cplx s : {cplx(0.0), cplx(0.2, -0.1)}) {
      for (const auto& p : interior_samples(F, s, 20, 9)) {
        CHECK(g_gradient_norm(F, p) <= 1.0 + 1e-9);
        const auto inv = g_inverse_closed_form(F, p);
        const auto G = g_potential(F)->jet(p, 2).hess_zzbar;
        const Eigen::MatrixXcd direct = G.inverse();
        CHECK((inv - direct).norm() <= 1e-10 * direct.norm());
      }
    }
  }
}

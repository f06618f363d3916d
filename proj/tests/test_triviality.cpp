#include "doctest.h"

#include <cmath>

#include "kefam/error.hpp"
#include "kefam/triviality.hpp"

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

LiftField oracle_lift(const FamilyDefinition& F) { return lift_of(std::make_shared<OracleH>(F.oracle_h)); }

}  // namespace

TEST_CASE("flows on trivial families follow the closed-form transport") {
  const auto tr = catalog_instantiate("translated_ball", {{"n", 1}});
  const auto P = integrate_flow(tr, oracle_lift(tr), CPoint{{0.0}, 0.0}, 0.4);
  CHECK(std::abs(P.end().z[0] - 0.2) <= 1e-7);
  CHECK(std::abs(P.end().s - cplx(0.4)) <= 1e-10);
  CHECK(P.points.size() >= 10);

  const auto hg = catalog_instantiate("hartogs_radius", {{"n", 1}});
  const auto Lh = oracle_lift(hg);
  const auto Q = integrate_flow(hg, Lh, CPoint{{0.3}, 0.0}, 0.2);
  CHECK(std::abs(Q.end().z[0] - 0.3 * std::exp(0.2)) <= 1e-6);

  // Other directions and n = 2 against the family's own transport map.
  const auto tr2 = catalog_instantiate("translated_ball", {{"n", 2}, {"c", "0.3*s^2 - 0.1i*s"}});
  const CPoint p{{cplx(0.1, -0.2), cplx(0.3, 0.1)}, cplx(0.05, 0.0)};
  const cplx target(-0.1, 0.25);
  const auto R = integrate_flow(tr2, oracle_lift(tr2), p, target);
  const auto expect = tr2.oracle_transport(p.z, p.s, target);
  for (std::size_t a = 0; a < 2; ++a) CHECK(std::abs(R.end().z[a] - expect[a]) <= 1e-7);
  for (const auto& q : R.points) CHECK(std::abs(q.s - p.s) <= std::abs(target - p.s) + 1e-12);
}

TEST_CASE("ball flow stays on the axis") {
  const auto ball = catalog_instantiate("ball_family", {{"n", 2}});
  const auto P = integrate_flow(ball, oracle_lift(ball), CPoint{{0.0, 0.0}, 0.0}, cplx(0.3, 0.2));
  CHECK(std::abs(P.end().z[0]) + std::abs(P.end().z[1]) <= 1e-12);
  CHECK(std::abs(P.end().s - cplx(0.3, 0.2)) <= 1e-10);
}

TEST_CASE("reversibility") {
  const auto hg = catalog_instantiate("hartogs_radius", {{"n", 2}, {"kappa", {0.5, 1.0}}});
  const auto L = oracle_lift(hg);
  const CPoint p{{cplx(0.2, 0.1), cplx(-0.3, 0.2)}, cplx(0.1, -0.1)};
  const auto there = integrate_flow(hg, L, p, cplx(-0.2, 0.3));
  const auto back = integrate_flow(hg, L, there.end(), p.s);
  for (std::size_t a = 0; a < 2; ++a) CHECK(std::abs(back.end().z[a] - p.z[a]) <= 1e-6);
  CHECK(std::abs(back.end().s - p.s) <= 1e-10);

  const auto ball = catalog_instantiate("ball_family", {{"n", 1}});
  const auto Lb = oracle_lift(ball);
  const CPoint q{{cplx(0.4, 0.2)}, 0.0};
  const auto out = integrate_flow(ball, Lb, q, cplx(0.0, 0.3));
  CHECK(std::abs(out.end().z[0] - q.z[0]) > 1e-3);
  CHECK(std::abs(integrate_flow(ball, Lb, out.end(), 0.0).end().z[0] - q.z[0]) <= 1e-6);
}

TEST_CASE("envelope check") {
  const auto tr = catalog_instantiate("translated_ball", {{"n", 1}});
  const auto P = integrate_flow(tr, oracle_lift(tr), CPoint{{cplx(0.2, 0.3)}, 0.0}, 0.4);
  const auto v = envelope_check(P, 1e-6);
  CHECK(v.holds);
  CHECK(v.min_c <= 1e-10);

  const auto hg = catalog_instantiate("hartogs_radius", {{"n", 1}});
  const auto Q = integrate_flow(hg, oracle_lift(hg), CPoint{{0.3}, 0.0}, 0.2);
  CHECK(envelope_check(Q, 2.0 + 0.01).holds);
  const auto fit = envelope_check(Q, 1.0);
  CHECK(envelope_check(Q, fit.min_c * 1.01 + 1e-12).holds);

  // Strongly pseudoconvex, nontrivial: the fitted constant is the sharp one.
  const auto ball = catalog_instantiate("ball_family", {{"n", 1}});
  const auto B = integrate_flow(ball, oracle_lift(ball), CPoint{{cplx(0.5, 0.0)}, 0.0}, cplx(0.0, 0.4));
  const auto vb = envelope_check(B, 100.0);
  CHECK(vb.min_c > 1e-3);
  CHECK(envelope_check(B, vb.min_c * 1.01).holds);
  CHECK(!envelope_check(B, vb.min_c * 0.5).holds);

  FlowPath syn;
  for (int k = 0; k <= 12; ++k) {
    syn.t.push_back(0.05 * k);
    syn.phi.push_back(-0.5 * std::exp(3.0 * 0.05 * k));
  }
  const auto vs = envelope_check(syn, 2.0);
  CHECK(!vs.holds);
  CHECK(vs.min_c == doctest::Approx(3.0).epsilon(1e-12));
  syn.phi.resize(5);
  syn.t.resize(5);
  CHECK(kind_of([&] { envelope_check(syn, 2.0); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("leaving the domain") {
  const auto ball = catalog_instantiate("ball_family", {{"n", 1}});
  const LiftField push = [](const CPoint&) { return Eigen::VectorXcd::Constant(1, cplx(-10.0)); };
  CHECK(kind_of([&] { integrate_flow(ball, push, CPoint{{0.0}, 0.0}, 0.4); }) == ErrorKind::LeftDomain);
  CHECK(kind_of([&] { integrate_flow(ball, push, CPoint{{1.2}, 0.0}, 0.4); }) == ErrorKind::LeftDomain);
}

TEST_CASE("holomorphy defect of the flow map") {
  const std::vector<CPoint> starts{{{0.0}, 0.0}, {{cplx(0.3, 0.1)}, 0.0}, {{cplx(-0.2, 0.4)}, 0.0}};
  const std::vector<cplx> base{0.1, cplx(0.0, 0.15), cplx(-0.1, 0.1)};
  for (const char* name : {"translated_ball", "hartogs_radius"}) {
    const auto F = catalog_instantiate(name, {{"n", 1}});
    const auto r = trivialization_residual(F, oracle_lift(F), starts, base);
    MESSAGE(std::string(name) << ": defect " << r.defect);
    CHECK(r.defect <= 1e-6);
    CHECK(r.per_pair.size() == 9);
  }
  const auto ball = catalog_instantiate("ball_family", {{"n", 1}});
  const auto rb = trivialization_residual(ball, oracle_lift(ball), starts, base);
  MESSAGE("ball_family: defect " << rb.defect);
  CHECK(rb.defect >= 1e-2);
}

TEST_CASE("numeric station lift") {
  const auto hg = catalog_instantiate("hartogs_radius", {{"n", 1}});
  const auto L = station_lift(hg, 0.0, 0.1, StationOptions{0.02, 33});
  const auto P = integrate_flow(hg, L, CPoint{{0.3}, 0.0}, 0.1);
  CHECK(std::abs(P.end().z[0] - 0.3 * std::exp(0.1)) <= 1e-6);
}

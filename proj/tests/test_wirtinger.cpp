#include "doctest.h"

#include <cmath>
#include <random>

#include "kefam/error.hpp"
#include "kefam/wirtinger.hpp"

using namespace kefam;

namespace {

constexpr cplx I{0.0, 1.0};

CPoint pt(std::vector<cplx> z, cplx s = {}) { return CPoint{std::move(z), s}; }

FieldPtr field(int n, ClosedFormField::Generator g) { return std::make_shared<ClosedFormField>(n, std::move(g)); }

}  // namespace

TEST_CASE("series arithmetic against direct expansions") {
  // exp(x) log(1+x) (1+x)^{1/2} in one variable, coefficients by hand.
  const Series x = Series::variable(1, 6, 0, 0.0);
  const Series e = exp(x);
  double fact = 1.0;
  for (int k = 0; k <= 6; ++k) {
    if (k > 0) fact *= k;
    CHECK(std::abs(e[static_cast<std::size_t>(k)] - 1.0 / fact) < 1e-15);
  }
  const Series l = log(1.0 + x);
  for (int k = 1; k <= 6; ++k)
    CHECK(std::abs(l[static_cast<std::size_t>(k)] - ((k % 2) ? 1.0 : -1.0) / k) < 1e-15);
  const Series r = sqrt(1.0 + x);
  CHECK(std::abs(r[2] + 0.125) < 1e-15);
  CHECK(std::abs(r[3] - 0.0625) < 1e-15);
  const Series q = (1.0 + x) / (1.0 - x);
  for (int k = 1; k <= 6; ++k) CHECK(std::abs(q[static_cast<std::size_t>(k)] - 2.0) < 1e-14);
}

TEST_CASE("series chain of elementary functions round-trips") {
  const Series x = Series::variable(4, 8, 0, 1.3) + Series::variable(4, 8, 2, 0.2) * 0.5;
  const Series back = log(exp(x));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(back[i] - x[i]) < 1e-13);
  const Series p = pow(x, 2.5) / pow(x, 1.5);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(p[i] - x[i]) < 1e-13);
}

TEST_CASE("jet of |z|^2 at z = 1") {
  auto f = field(1, [](const Coords& c) { return c.abs2(0); });
  const auto j = f->jet(pt({1.0}), 2);
  CHECK(std::abs(j.grad_z(0) - 1.0) < 1e-15);
  CHECK(std::abs(j.hess_zzbar(0, 0) - 1.0) < 1e-15);
  CHECK(std::abs(j.hess_zz(0, 0)) < 1e-15);
}

TEST_CASE("holomorphic z^3 has no antiholomorphic derivatives") {
  auto f = field(1, [](const Coords& c) { return c.z(0) * c.z(0) * c.z(0); });
  const auto j = f->jet(pt({cplx(0.3, -0.7)}), 2);
  CHECK(std::abs(j.grad_zbar(0)) == 0.0);
  CHECK(std::abs(j.hess_zzbar(0, 0)) == 0.0);
  CHECK(std::abs(j.hess_zz(0, 0) - 6.0 * cplx(0.3, -0.7)) < 1e-14);
}

TEST_CASE("-log(1-|z|^2) has identity Hessian at the origin") {
  auto f = field(2, [](const Coords& c) { return -log(1.0 - c.norm2()); });
  const auto H = slice_hessian(*f, pt({0.0, 0.0}));
  CHECK((H - Eigen::MatrixXcd::Identity(2, 2)).norm() < 1e-15);
}

TEST_CASE("Levi form examples") {
  auto f = field(2, [](const Coords& c) { return c.norm2() + c.s_abs2(); });
  std::vector<cplx> v{1.0, 0.0, 0.0};
  CHECK(std::abs(levi_form(*f, pt({0.2, 0.1}), v) - 1.0) < 1e-15);

  auto re = field(2, [](const Coords& c) { return c.re(0); });
  std::vector<cplx> w{cplx(0.3, 1.0), cplx(-2.0, 0.5), cplx(0.7, 0.7)};
  CHECK(std::abs(levi_form(*re, pt({0.4, cplx(0.1, 0.2)}, 0.1), w)) < 1e-15);

  auto g = field(2, [](const Coords& c) { return -log(1.0 - c.norm2() - c.s_abs2()); });
  std::vector<cplx> es{0.0, 0.0, 1.0};
  CHECK(std::abs(levi_form(*g, pt({0.0, 0.0}), es) - 1.0) < 1e-15);
}

TEST_CASE("hessian blocks") {
  auto plus = field(2, [](const Coords& c) { return c.norm2() + c.s_abs2(); });
  CHECK((hessian_blocks(*plus, pt({0.3, 0.1}, 0.2)) - Eigen::MatrixXcd::Identity(3, 3)).norm() < 1e-15);
  auto minus = field(2, [](const Coords& c) { return c.norm2() - c.s_abs2(); });
  Eigen::MatrixXcd D = Eigen::MatrixXcd::Identity(3, 3);
  D(2, 2) = -1.0;
  CHECK((hessian_blocks(*minus, pt({0.3, 0.1}, 0.2)) - D).norm() < 1e-15);

  // Ball potential: (1/3) log(1-|s|^2) - log(1-|s|^2-|z|^2). By hand at the
  // origin: h_{a bbar} = delta, h_{s sbar} = 1 - 1/3, mixed terms vanish.
  auto h = field(2, [](const Coords& c) {
    const Series r2 = 1.0 - c.s_abs2();
    return log(r2) / 3.0 - log(r2 - c.norm2());
  });
  Eigen::MatrixXcd E = Eigen::MatrixXcd::Identity(3, 3);
  E(2, 2) = 2.0 / 3.0;
  CHECK((hessian_blocks(*h, pt({0.0, 0.0})) - E).norm() < 1e-15);
}

TEST_CASE("conjugate symmetry of real fields is exact") {
  auto f = field(2, [](const Coords& c) {
    return exp(c.re(0) * c.im(1)) + log(2.0 + c.norm2() * c.s_abs2()) + c.re(1) * c.s_abs2();
  });
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  for (int k = 0; k < 20; ++k) {
    const CPoint p = pt({cplx(u(rng), u(rng)), cplx(u(rng), u(rng))}, cplx(u(rng), u(rng)));
    const auto j = f->jet(p, 2);
    for (int a = 0; a < 2; ++a) CHECK(std::abs(j.grad_zbar(a) - std::conj(j.grad_z(a))) < 1e-15);
    CHECK(std::abs(j.grad_sbar - std::conj(j.grad_s)) < 1e-15);
    CHECK((j.hess_zzbar - j.hess_zzbar.adjoint()).norm() < 1e-15);
    CHECK(std::abs(j.hess_ssbar.imag()) < 1e-15);
    for (int a = 0; a < 2; ++a) CHECK(std::abs(j.hess_szbar(a) - std::conj(j.hess_zsbar(a))) < 1e-15);
  }
}

TEST_CASE("linearity of jets") {
  auto f = field(1, [](const Coords& c) { return exp(c.re(0)) * c.s_abs2(); });
  auto g = field(1, [](const Coords& c) { return log(3.0 + c.abs2(0)); });
  const double a = 1.7, b = -0.4;
  auto h = field(1, [&](const Coords& c) { return a * f->generator()(c) + b * g->generator()(c); });
  const CPoint p = pt({cplx(0.2, -0.3)}, cplx(0.1, 0.05));
  const auto jf = f->jet(p, 2), jg = g->jet(p, 2), jh = h->jet(p, 2);
  auto close = [](cplx x, cplx y) { return std::abs(x - y) <= 1e-12 * std::max(1.0, std::abs(y)); };
  CHECK(close(jh.value, a * jf.value + b * jg.value));
  CHECK(close(jh.grad_z(0), a * jf.grad_z(0) + b * jg.grad_z(0)));
  CHECK(close(jh.hess_zzbar(0, 0), a * jf.hess_zzbar(0, 0) + b * jg.hess_zzbar(0, 0)));
  CHECK(close(jh.hess_ssbar, a * jf.hess_ssbar + b * jg.hess_ssbar));
  CHECK(close(jh.hess_szbar(0), a * jf.hess_szbar(0) + b * jg.hess_szbar(0)));
}

namespace {

// Lattice of (2 half + 1)^{2n} nodes centred on p.
GridField sample(const ClosedFormField& f, const CPoint& p, double h, int half) {
  const int n = p.dim();
  std::vector<double> lo, sp(static_cast<std::size_t>(2 * n), h);
  for (auto z : p.z) {
    lo.push_back(z.real() - half * h);
    lo.push_back(z.imag() - half * h);
  }
  std::vector<int> counts(static_cast<std::size_t>(2 * n), 2 * half + 1);
  Lattice L(n, lo, sp, counts);
  std::vector<cplx> v(L.size());
  for (std::size_t i = 0; i < L.size(); ++i) v[i] = f.expand(CPoint{L.position(i), p.s}, 0, false).value();
  return GridField(L, v, std::vector<char>(L.size(), 1), p.s);
}

double jet_error(const WirtingerJet& a, const WirtingerJet& b) {
  double e = (a.grad_z - b.grad_z).cwiseAbs().maxCoeff();
  e = std::max(e, (a.grad_zbar - b.grad_zbar).cwiseAbs().maxCoeff());
  e = std::max(e, (a.hess_zzbar - b.hess_zzbar).cwiseAbs().maxCoeff());
  e = std::max(e, (a.hess_zz - b.hess_zz).cwiseAbs().maxCoeff());
  return e;
}

}  // namespace

TEST_CASE("grid jets converge at fourth order") {
  auto f = field(2, [](const Coords& c) {
    return exp(0.5 * c.re(0) - c.im(1)) * log(2.0 + c.abs2(0)) + c.re(1) * c.re(1) * c.im(0);
  });
  const CPoint p = pt({cplx(0.25, 0.125), cplx(-0.125, 0.25)});
  const auto exact = slice_jet(*f, p, 2);
  std::vector<double> err;
  for (double h : {0.2, 0.1, 0.05}) {
    const GridField g = sample(*f, p, h, 3);
    const auto j = g.jet(p, 2);
    CHECK(j.stencil_order == 4);
    err.push_back(jet_error(j, exact));
  }
  for (std::size_t k = 1; k < err.size(); ++k) {
    const double slope = std::log2(err[k - 1] / err[k]);
    MESSAGE("grid jet error " << err[k] << " slope " << slope);
    CHECK(slope >= 3.5);
  }
}

TEST_CASE("grid jets fall back near the mask edge and refuse order 3") {
  auto f = field(1, [](const Coords& c) { return c.abs2(0) * c.re(0); });
  const CPoint p = pt({cplx(0.1, 0.2)});
  GridField g = sample(*f, p, 0.05, 3);
  auto mask = std::vector<char>(g.mask().begin(), g.mask().end());
  // Remove the node two steps left of p: forces a lower-order x rule.
  std::array<int, kMaxAxes> off{};
  off[0] = -2;
  const auto centre = *g.lattice().node_at(p.z);
  mask[*g.lattice().shifted(centre, off)] = 0;
  GridField cut(g.lattice(), std::vector<cplx>(g.values().begin(), g.values().end()), mask, p.s);
  const auto j = cut.jet(p, 2);
  CHECK(j.stencil_order == 2);
  const auto exact = slice_jet(*f, p, 2);
  CHECK(jet_error(j, exact) < 1e-2);
  CHECK_THROWS_AS(cut.jet(p, 3), Error);
  try {
    cut.jet(p, 3);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::OrderUnsupported);
  }
  std::vector<char> none(g.lattice().size(), 0);
  none[centre] = 1;
  GridField lone(g.lattice(), std::vector<cplx>(g.values().begin(), g.values().end()), none, p.s);
  try {
    lone.jet(p, 1);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::StencilOutOfDomain);
  }
}

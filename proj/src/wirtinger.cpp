#include "kefam/wirtinger.hpp"

#include <array>
#include <cmath>

#include "kefam/error.hpp"

namespace kefam {

namespace {
constexpr cplx I{0.0, 1.0};
}

Coords::Coords(const CPoint& p, int order, VarLayout layout) : layout_(layout), order_(order) {
  const int nv = layout_.nvars();
  if (p.dim() != layout_.n) throw Error(ErrorKind::InvalidArgument, "point dimension mismatch");
  for (int a = 0; a < layout_.n; ++a) {
    const cplx za = p.z[static_cast<std::size_t>(a)];
    z_.push_back(Series::variable(nv, order, layout_.z(a), za));
    zbar_.push_back(Series::variable(nv, order, layout_.zbar(a), std::conj(za)));
  }
  if (layout_.with_base) {
    s_ = Series::variable(nv, order, layout_.s(), p.s);
    sbar_ = Series::variable(nv, order, layout_.sbar(), std::conj(p.s));
  } else {
    s_ = Series::constant(nv, order, p.s);
    sbar_ = Series::constant(nv, order, std::conj(p.s));
  }
}

Series Coords::re(int a) const { return (z(a) + zbar(a)) * 0.5; }
Series Coords::im(int a) const { return (z(a) - zbar(a)) * (-0.5 * I); }
Series Coords::abs2(int a) const { return z(a) * zbar(a); }

Series Coords::norm2() const {
  Series acc = constant(0.0);
  for (int a = 0; a < n(); ++a) acc += abs2(a);
  return acc;
}

Series Coords::d_s(const Series& f) const {
  if (!layout_.with_base) return Series(layout_.nvars(), f.order() - 1);
  return f.derivative(layout_.s());
}

Series Coords::d_sbar(const Series& f) const {
  if (!layout_.with_base) return Series(layout_.nvars(), f.order() - 1);
  return f.derivative(layout_.sbar());
}

WirtingerJet jet_from_series(const Series& f, const VarLayout& layout, int order) {
  if (f.order() < order) throw Error(ErrorKind::OrderUnsupported, "series order below requested jet order");
  const int n = layout.n;
  const int nv = layout.nvars();
  WirtingerJet j;
  j.n = n;
  j.order = order;
  j.has_base = layout.with_base;
  j.value = f.value();
  j.grad_z = Eigen::VectorXcd::Zero(n);
  j.grad_zbar = Eigen::VectorXcd::Zero(n);
  j.hess_zzbar = Eigen::MatrixXcd::Zero(n, n);
  j.hess_zz = Eigen::MatrixXcd::Zero(n, n);
  j.hess_szbar = Eigen::VectorXcd::Zero(n);
  j.hess_zsbar = Eigen::VectorXcd::Zero(n);
  if (order < 1) return j;

  std::vector<int> e(static_cast<std::size_t>(nv), 0);
  auto d1 = [&](int v) {
    std::fill(e.begin(), e.end(), 0);
    e[static_cast<std::size_t>(v)] = 1;
    return f.derivative_at(e);
  };
  auto d2 = [&](int v, int w) {
    std::fill(e.begin(), e.end(), 0);
    ++e[static_cast<std::size_t>(v)];
    ++e[static_cast<std::size_t>(w)];
    return f.derivative_at(e);
  };
  for (int a = 0; a < n; ++a) {
    j.grad_z(a) = d1(layout.z(a));
    j.grad_zbar(a) = d1(layout.zbar(a));
  }
  if (layout.with_base) {
    j.grad_s = d1(layout.s());
    j.grad_sbar = d1(layout.sbar());
  }
  if (order < 2) return j;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      j.hess_zzbar(a, b) = d2(layout.z(a), layout.zbar(b));
      j.hess_zz(a, b) = d2(layout.z(a), layout.z(b));
    }
  if (layout.with_base) {
    for (int a = 0; a < n; ++a) {
      j.hess_szbar(a) = d2(layout.s(), layout.zbar(a));
      j.hess_zsbar(a) = d2(layout.z(a), layout.sbar());
    }
    j.hess_ssbar = d2(layout.s(), layout.sbar());
    j.hess_ss = d2(layout.s(), layout.s());
  }
  return j;
}

ClosedFormField::ClosedFormField(int n, Generator gen, int loss, Predicate valid)
    : n_(n), gen_(std::move(gen)), loss_(loss), valid_(std::move(valid)) {}

Series ClosedFormField::expand(const CPoint& p, int order, bool with_base) const {
  const VarLayout layout{n_, with_base};
  const int total = order + loss_;
  if (total > MonomialBasis::max_degree_for(layout.nvars()))
    throw Error(ErrorKind::OrderUnsupported, "closed-form expansion order exceeds the series basis");
  Coords c(p, total, layout);
  return gen_(c).truncated(order);
}

WirtingerJet ClosedFormField::jet(const CPoint& p, int order) const {
  return jet_from_series(expand(p, order, true), VarLayout{n_, true}, order);
}

GridField::GridField(Lattice lattice, std::vector<cplx> values, std::vector<char> mask, cplx s)
    : lattice_(std::move(lattice)), values_(std::move(values)), mask_(std::move(mask)), s_(s) {
  if (values_.size() != lattice_.size() || mask_.size() != lattice_.size())
    throw Error(ErrorKind::InvalidArgument, "grid field size mismatch");
}

bool GridField::contains(const CPoint& p) const {
  auto node = lattice_.node_at(p.z);
  return node && mask_[*node];
}

namespace {

bool taps_in_mask(const Lattice& L, std::size_t node, int axis, std::span<const int> offsets,
                  std::span<const char> mask) {
  std::array<int, kMaxAxes> off{};
  for (int o : offsets) {
    off[static_cast<std::size_t>(axis)] = o;
    auto j = L.shifted(node, off);
    if (!j || !mask[*j]) return false;
  }
  return true;
}

AxisRule best_rule(const Lattice& L, std::size_t node, int axis, std::span<const char> mask) {
  static constexpr std::array<int, 4> c4{-2, -1, 1, 2};
  static constexpr std::array<int, 2> c2{-1, 1};
  static constexpr std::array<int, 3> fw{1, 2, 3};
  static constexpr std::array<int, 3> bw{-1, -2, -3};
  if (taps_in_mask(L, node, axis, c4, mask)) return AxisRule::Central4;
  if (taps_in_mask(L, node, axis, c2, mask)) return AxisRule::Central2;
  if (taps_in_mask(L, node, axis, fw, mask)) return AxisRule::Forward2;
  if (taps_in_mask(L, node, axis, bw, mask)) return AxisRule::Backward2;
  throw Error(ErrorKind::StencilOutOfDomain, "no admissible stencil along an axis");
}

}  // namespace

WirtingerJet GridField::jet(const CPoint& p, int order) const {
  auto node = lattice_.node_at(p.z);
  if (!node) throw Error(ErrorKind::StencilOutOfDomain, "grid jets are evaluated at lattice nodes");
  return jet_at(*node, order);
}

WirtingerJet GridField::jet_at(std::size_t node, int order) const {
  if (order > 2) throw Error(ErrorKind::OrderUnsupported, "grid jets support order <= 2");
  if (!mask_[node]) throw Error(ErrorKind::StencilOutOfDomain, "node outside the grid mask");
  const int n = lattice_.dim();
  const auto axes = static_cast<std::size_t>(lattice_.axes());
  WirtingerJet j;
  j.n = n;
  j.order = order;
  j.has_base = false;
  j.stencil_order = 4;
  j.value = values_[node];
  j.grad_z = Eigen::VectorXcd::Zero(n);
  j.grad_zbar = Eigen::VectorXcd::Zero(n);
  j.hess_zzbar = Eigen::MatrixXcd::Zero(n, n);
  j.hess_zz = Eigen::MatrixXcd::Zero(n, n);
  j.hess_szbar = Eigen::VectorXcd::Zero(n);
  j.hess_zsbar = Eigen::VectorXcd::Zero(n);
  if (order < 1) return j;

  std::vector<AxisRule> fallback(axes);
  for (std::size_t a = 0; a < axes; ++a) fallback[a] = best_rule(lattice_, node, static_cast<int>(a), mask_);
  const std::array<std::vector<AxisRule>, 3> candidates{
      std::vector<AxisRule>(axes, AxisRule::Central4), std::vector<AxisRule>(axes, AxisRule::Central2),
      fallback};

  auto eval = [&](auto make) -> cplx {
    for (const auto& rules : candidates) {
      const Stencil st = make(rules);
      if (auto v = apply_stencil(lattice_, st, node, values_, mask_)) {
        j.stencil_order = std::min(j.stencil_order, st.accuracy);
        return *v;
      }
    }
    throw Error(ErrorKind::StencilOutOfDomain, "stencil crosses the grid mask");
  };

  for (int a = 0; a < n; ++a) {
    const auto ax = static_cast<std::size_t>(2 * a);
    j.grad_z(a) = eval([&](const auto& r) { return wirtinger_first(lattice_, a, false, r[ax], r[ax + 1]); });
    j.grad_zbar(a) = eval([&](const auto& r) { return wirtinger_first(lattice_, a, true, r[ax], r[ax + 1]); });
  }
  if (order < 2) return j;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) {
      j.hess_zzbar(a, b) = eval([&](const auto& r) { return wirtinger_mixed(lattice_, a, b, r); });
      j.hess_zz(a, b) = eval([&](const auto& r) { return wirtinger_holomorphic(lattice_, a, b, r); });
    }
  return j;
}

WirtingerJet jet(const ScalarField& f, const CPoint& p, int order) { return f.jet(p, order); }

WirtingerJet slice_jet(const ScalarField& f, const CPoint& p, int order) {
  if (const auto* cf = dynamic_cast<const ClosedFormField*>(&f))
    return jet_from_series(cf->expand(p, order, false), VarLayout{cf->dim(), false}, order);
  return f.jet(p, order);
}

cplx field_value(const ScalarField& f, const CPoint& p) {
  if (const auto* cf = dynamic_cast<const ClosedFormField*>(&f)) return cf->expand(p, 0, false).value();
  return f.jet(p, 0).value;
}

Eigen::MatrixXcd hessian_blocks(const WirtingerJet& j) {
  if (!j.has_base) throw Error(ErrorKind::InvalidArgument, "jet carries no base derivatives");
  const int n = j.n;
  Eigen::MatrixXcd H(n + 1, n + 1);
  H.topLeftCorner(n, n) = j.hess_zzbar;
  H.block(0, n, n, 1) = j.hess_zsbar;
  H.block(n, 0, 1, n) = j.hess_szbar.transpose();
  H(n, n) = j.hess_ssbar;
  return H;
}

Eigen::MatrixXcd hessian_blocks(const ScalarField& f, const CPoint& p) {
  return hessian_blocks(f.jet(p, 2));
}

Eigen::MatrixXcd slice_hessian(const ScalarField& f, const CPoint& p) { return f.jet(p, 2).hess_zzbar; }

double levi_form(const ScalarField& f, const CPoint& p, std::span<const cplx> v) {
  const WirtingerJet j = f.jet(p, 2);
  const int n = j.n;
  Eigen::MatrixXcd H;
  if (static_cast<int>(v.size()) == n + 1) {
    H = hessian_blocks(j);
  } else if (static_cast<int>(v.size()) == n) {
    H = j.hess_zzbar;
  } else {
    throw Error(ErrorKind::InvalidArgument, "Levi form vector has the wrong length");
  }
  Eigen::Map<const Eigen::VectorXcd> vv(v.data(), static_cast<Eigen::Index>(v.size()));
  return (vv.transpose() * H * vv.conjugate())(0, 0).real();
}

}  // namespace kefam

#include "kefam/lattice.hpp"

#include <cmath>
#include <map>

#include "kefam/error.hpp"

namespace kefam {

Lattice::Lattice(int n, std::vector<double> lo, std::vector<double> spacing, std::vector<int> counts)
    : n_(n), lo_(std::move(lo)), spacing_(std::move(spacing)), counts_(std::move(counts)) {
  const auto axes = static_cast<std::size_t>(2 * n);
  if (n < 1 || 2 * n > kMaxAxes || lo_.size() != axes || spacing_.size() != axes ||
      counts_.size() != axes)
    throw Error(ErrorKind::InvalidArgument, "lattice axis data inconsistent");
  strides_.assign(axes, 1);
  size_ = 1;
  for (std::size_t a = axes; a-- > 0;) {
    if (counts_[a] < 1 || !(spacing_[a] > 0.0))
      throw Error(ErrorKind::InvalidArgument, "lattice needs positive counts and spacing");
    strides_[a] = size_;
    size_ *= static_cast<std::size_t>(counts_[a]);
  }
}

std::size_t Lattice::index(std::span<const int> ijk) const {
  std::size_t idx = 0;
  for (int a = 0; a < axes(); ++a) idx += static_cast<std::size_t>(ijk[static_cast<std::size_t>(a)]) * stride(a);
  return idx;
}

void Lattice::unravel(std::size_t idx, std::span<int> ijk) const {
  for (int a = 0; a < axes(); ++a) {
    ijk[static_cast<std::size_t>(a)] = static_cast<int>(idx / stride(a));
    idx %= stride(a);
  }
}

std::vector<cplx> Lattice::position(std::size_t idx) const {
  std::array<int, kMaxAxes> ijk{};
  unravel(idx, ijk);
  std::vector<cplx> z(static_cast<std::size_t>(n_));
  for (int a = 0; a < n_; ++a)
    z[static_cast<std::size_t>(a)] = {coordinate(2 * a, ijk[static_cast<std::size_t>(2 * a)]),
                                      coordinate(2 * a + 1, ijk[static_cast<std::size_t>(2 * a + 1)])};
  return z;
}

std::optional<std::size_t> Lattice::shifted(std::size_t idx, std::span<const int> offset) const {
  std::array<int, kMaxAxes> ijk{};
  unravel(idx, ijk);
  for (int a = 0; a < axes(); ++a) {
    const int v = ijk[static_cast<std::size_t>(a)] + offset[static_cast<std::size_t>(a)];
    if (v < 0 || v >= count(a)) return std::nullopt;
    ijk[static_cast<std::size_t>(a)] = v;
  }
  return index(ijk);
}

std::optional<std::size_t> Lattice::node_at(std::span<const cplx> z, double tol) const {
  std::array<int, kMaxAxes> ijk{};
  for (int a = 0; a < axes(); ++a) {
    const cplx za = z[static_cast<std::size_t>(a / 2)];
    const double x = (a % 2 == 0) ? za.real() : za.imag();
    const double t = (x - lo(a)) / spacing(a);
    const double r = std::round(t);
    if (std::abs(t - r) > tol || r < 0 || r >= count(a)) return std::nullopt;
    ijk[static_cast<std::size_t>(a)] = static_cast<int>(r);
  }
  return index(ijk);
}

bool Lattice::same_layout(const Lattice& o, double tol) const {
  if (n_ != o.n_ || counts_ != o.counts_) return false;
  for (int a = 0; a < axes(); ++a)
    if (std::abs(lo(a) - o.lo(a)) > tol || std::abs(spacing(a) - o.spacing(a)) > tol) return false;
  return true;
}

namespace {

using Taps1D = std::vector<std::pair<int, double>>;

Taps1D first_rule(AxisRule r, double h) {
  switch (r) {
    case AxisRule::Central4:
      return {{-2, 1.0 / (12 * h)}, {-1, -8.0 / (12 * h)}, {1, 8.0 / (12 * h)}, {2, -1.0 / (12 * h)}};
    case AxisRule::Central2: return {{-1, -0.5 / h}, {1, 0.5 / h}};
    case AxisRule::Forward2: return {{0, -1.5 / h}, {1, 2.0 / h}, {2, -0.5 / h}};
    case AxisRule::Backward2: return {{0, 1.5 / h}, {-1, -2.0 / h}, {-2, 0.5 / h}};
  }
  return {};
}

Taps1D second_rule(AxisRule r, double h) {
  const double h2 = h * h;
  switch (r) {
    case AxisRule::Central4:
      return {{-2, -1.0 / (12 * h2)}, {-1, 16.0 / (12 * h2)}, {0, -30.0 / (12 * h2)},
              {1, 16.0 / (12 * h2)}, {2, -1.0 / (12 * h2)}};
    case AxisRule::Central2: return {{-1, 1.0 / h2}, {0, -2.0 / h2}, {1, 1.0 / h2}};
    case AxisRule::Forward2: return {{0, 2.0 / h2}, {1, -5.0 / h2}, {2, 4.0 / h2}, {3, -1.0 / h2}};
    case AxisRule::Backward2: return {{0, 2.0 / h2}, {-1, -5.0 / h2}, {-2, 4.0 / h2}, {-3, -1.0 / h2}};
  }
  return {};
}

int rule_accuracy(AxisRule r) { return r == AxisRule::Central4 ? 4 : 2; }

class TapAccumulator {
 public:
  void add_axis(int axis, const Taps1D& t, cplx scale) {
    for (auto [o, w] : t) {
      std::array<int, kMaxAxes> off{};
      off[static_cast<std::size_t>(axis)] = o;
      acc_[off] += scale * w;
    }
  }
  void add_pair(int ax, const Taps1D& tx, int ay, const Taps1D& ty, cplx scale) {
    for (auto [ox, wx] : tx)
      for (auto [oy, wy] : ty) {
        std::array<int, kMaxAxes> off{};
        off[static_cast<std::size_t>(ax)] = ox;
        off[static_cast<std::size_t>(ay)] = oy;
        acc_[off] += scale * wx * wy;
      }
  }
  Stencil finish(int accuracy) const {
    Stencil s;
    s.accuracy = accuracy;
    for (const auto& [off, w] : acc_)
      if (w != cplx{}) s.taps.push_back({off, w});
    return s;
  }

 private:
  std::map<std::array<int, kMaxAxes>, cplx> acc_;
};

constexpr cplx I{0.0, 1.0};

}  // namespace

Stencil wirtinger_first(const Lattice& L, int a, bool conj, AxisRule rule_x, AxisRule rule_y) {
  TapAccumulator acc;
  const int ax = 2 * a, ay = 2 * a + 1;
  acc.add_axis(ax, first_rule(rule_x, L.spacing(ax)), 0.5);
  acc.add_axis(ay, first_rule(rule_y, L.spacing(ay)), conj ? 0.5 * I : -0.5 * I);
  return acc.finish(std::min(rule_accuracy(rule_x), rule_accuracy(rule_y)));
}

Stencil wirtinger_mixed(const Lattice& L, int a, int b, std::span<const AxisRule> rules) {
  TapAccumulator acc;
  const int xa = 2 * a, ya = 2 * a + 1, xb = 2 * b, yb = 2 * b + 1;
  auto rule = [&](int axis) { return rules[static_cast<std::size_t>(axis)]; };
  if (a == b) {
    acc.add_axis(xa, second_rule(rule(xa), L.spacing(xa)), 0.25);
    acc.add_axis(ya, second_rule(rule(ya), L.spacing(ya)), 0.25);
    return acc.finish(std::min(rule_accuracy(rule(xa)), rule_accuracy(rule(ya))));
  }
  auto f = [&](int axis) { return first_rule(rule(axis), L.spacing(axis)); };
  acc.add_pair(xa, f(xa), xb, f(xb), 0.25);
  acc.add_pair(ya, f(ya), yb, f(yb), 0.25);
  acc.add_pair(xa, f(xa), yb, f(yb), 0.25 * I);
  acc.add_pair(ya, f(ya), xb, f(xb), -0.25 * I);
  int accuracy = 4;
  for (int axis : {xa, ya, xb, yb}) accuracy = std::min(accuracy, rule_accuracy(rule(axis)));
  return acc.finish(accuracy);
}

Stencil wirtinger_holomorphic(const Lattice& L, int a, int b, std::span<const AxisRule> rules) {
  TapAccumulator acc;
  const int xa = 2 * a, ya = 2 * a + 1, xb = 2 * b, yb = 2 * b + 1;
  auto rule = [&](int axis) { return rules[static_cast<std::size_t>(axis)]; };
  auto f = [&](int axis) { return first_rule(rule(axis), L.spacing(axis)); };
  int accuracy = 4;
  for (int axis : {xa, ya, xb, yb}) accuracy = std::min(accuracy, rule_accuracy(rule(axis)));
  if (a == b) {
    acc.add_axis(xa, second_rule(rule(xa), L.spacing(xa)), 0.25);
    acc.add_axis(ya, second_rule(rule(ya), L.spacing(ya)), -0.25);
    acc.add_pair(xa, f(xa), ya, f(ya), -0.5 * I);
    return acc.finish(accuracy);
  }
  acc.add_pair(xa, f(xa), xb, f(xb), 0.25);
  acc.add_pair(ya, f(ya), yb, f(yb), -0.25);
  acc.add_pair(xa, f(xa), yb, f(yb), -0.25 * I);
  acc.add_pair(ya, f(ya), xb, f(xb), -0.25 * I);
  return acc.finish(accuracy);
}

std::optional<cplx> apply_stencil(const Lattice& L, const Stencil& S, std::size_t idx,
                                  std::span<const cplx> values, std::span<const char> mask) {
  cplx acc{};
  for (const auto& tap : S.taps) {
    auto j = L.shifted(idx, tap.offset);
    if (!j) return std::nullopt;
    if (!mask.empty() && !mask[*j]) return std::nullopt;
    acc += tap.weight * values[*j];
  }
  return acc;
}

std::optional<std::vector<std::pair<std::size_t, double>>> cubic_support(const Lattice& L,
                                                                        std::span<const cplx> z) {
  const int axes = L.axes();
  std::array<int, kMaxAxes> base{};
  std::array<std::array<double, 4>, kMaxAxes> w{};
  for (int a = 0; a < axes; ++a) {
    if (L.count(a) < 4) return std::nullopt;
    const cplx za = z[static_cast<std::size_t>(a / 2)];
    const double x = (a % 2 == 0) ? za.real() : za.imag();
    const double t = (x - L.lo(a)) / L.spacing(a);
    const int i0 = static_cast<int>(std::floor(t)) - 1;
    if (i0 < 0 || i0 + 3 >= L.count(a)) return std::nullopt;
    base[static_cast<std::size_t>(a)] = i0;
    const double u = t - i0;  // nodes at 0,1,2,3
    auto& wa = w[static_cast<std::size_t>(a)];
    wa[0] = -(u - 1) * (u - 2) * (u - 3) / 6.0;
    wa[1] = u * (u - 2) * (u - 3) / 2.0;
    wa[2] = -u * (u - 1) * (u - 3) / 2.0;
    wa[3] = u * (u - 1) * (u - 2) / 6.0;
  }
  std::size_t combos = 1;
  for (int a = 0; a < axes; ++a) combos *= 4;
  std::vector<std::pair<std::size_t, double>> out;
  out.reserve(combos);
  std::array<int, kMaxAxes> ijk{};
  for (std::size_t c = 0; c < combos; ++c) {
    std::size_t r = c;
    double weight = 1.0;
    for (int a = 0; a < axes; ++a) {
      const int k = static_cast<int>(r % 4);
      r /= 4;
      ijk[static_cast<std::size_t>(a)] = base[static_cast<std::size_t>(a)] + k;
      weight *= w[static_cast<std::size_t>(a)][static_cast<std::size_t>(k)];
    }
    out.emplace_back(L.index(std::span<const int>(ijk.data(), static_cast<std::size_t>(axes))), weight);
  }
  return out;
}

std::optional<cplx> interpolate_cubic(const Lattice& L, std::span<const cplx> z,
                                      std::span<const cplx> values, std::span<const char> mask) {
  const auto support = cubic_support(L, z);
  if (!support) return std::nullopt;
  cplx acc{};
  for (auto [idx, weight] : *support) {
    if (!mask.empty() && !mask[idx]) return std::nullopt;
    acc += weight * values[idx];
  }
  return acc;
}

}  // namespace kefam

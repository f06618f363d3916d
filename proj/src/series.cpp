#include "kefam/series.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <mutex>
#include <unordered_map>

#include "kefam/error.hpp"

namespace kefam {

namespace {

constexpr int kMaxVars = 12;

std::uint64_t pack(std::span<const std::uint8_t> e) {
  std::uint64_t key = 0;
  for (auto v : e) key = (key << 5) | v;
  return key;
}

void enumerate_degree(int nvars, int degree, std::vector<std::uint8_t>& out) {
  std::vector<std::uint8_t> cur(static_cast<std::size_t>(nvars), 0);
  // Lexicographically decreasing compositions of `degree` into nvars parts.
  auto rec = [&](auto&& self, int var, int remaining) -> void {
    if (var == nvars - 1) {
      cur[static_cast<std::size_t>(var)] = static_cast<std::uint8_t>(remaining);
      out.insert(out.end(), cur.begin(), cur.end());
      return;
    }
    for (int k = remaining; k >= 0; --k) {
      cur[static_cast<std::size_t>(var)] = static_cast<std::uint8_t>(k);
      self(self, var + 1, remaining - k);
    }
  };
  rec(rec, 0, degree);
}

}  // namespace

int MonomialBasis::max_degree_for(int nvars) {
  if (nvars <= 2) return 16;
  if (nvars <= 4) return 12;
  if (nvars <= 6) return 10;
  if (nvars <= 8) return 6;
  return 4;
}

MonomialBasis::MonomialBasis(int nvars) : nvars_(nvars), max_degree_(max_degree_for(nvars)) {
  const auto nv = static_cast<std::size_t>(nvars);
  degree_start_.push_back(0);
  for (int d = 0; d <= max_degree_; ++d) {
    enumerate_degree(nvars, d, exps_);
    degree_start_.push_back(exps_.size() / nv);
  }
  const std::size_t total = degree_start_.back();
  degree_of_.resize(total);
  for (int d = 0; d <= max_degree_; ++d)
    for (std::size_t i = degree_begin(d); i < count(d); ++i) degree_of_[i] = d;

  std::unordered_map<std::uint64_t, std::uint32_t> lookup;
  lookup.reserve(total * 2);
  for (std::size_t i = 0; i < total; ++i)
    lookup.emplace(pack(exponents(i)), static_cast<std::uint32_t>(i));

  lowered_.assign(total * nv, -1);
  std::vector<std::uint8_t> tmp(nv);
  for (std::size_t i = 0; i < total; ++i) {
    auto e = exponents(i);
    for (std::size_t v = 0; v < nv; ++v) {
      if (e[v] == 0) continue;
      std::copy(e.begin(), e.end(), tmp.begin());
      --tmp[v];
      lowered_[i * nv + v] = static_cast<std::int32_t>(lookup.at(pack(tmp)));
    }
  }

  std::vector<std::vector<Triple>> by_degree(static_cast<std::size_t>(max_degree_) + 1);
  for (std::size_t a = 0; a < total; ++a) {
    const int da = degree_of_[a];
    auto ea = exponents(a);
    for (std::size_t b = 0; b < count(max_degree_ - da); ++b) {
      auto eb = exponents(b);
      for (std::size_t v = 0; v < nv; ++v) tmp[v] = static_cast<std::uint8_t>(ea[v] + eb[v]);
      by_degree[static_cast<std::size_t>(da + degree_of_[b])].push_back(
          {static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), lookup.at(pack(tmp))});
    }
  }
  triple_start_.push_back(0);
  for (auto& block : by_degree) {
    triples_.insert(triples_.end(), block.begin(), block.end());
    triple_start_.push_back(triples_.size());
  }
}

const MonomialBasis& MonomialBasis::get(int nvars) {
  if (nvars < 1 || nvars > kMaxVars)
    throw Error(ErrorKind::InvalidArgument, "series width out of range");
  static std::array<std::once_flag, kMaxVars + 1> flags;
  static std::array<std::unique_ptr<MonomialBasis>, kMaxVars + 1> bases;
  const auto k = static_cast<std::size_t>(nvars);
  std::call_once(flags[k], [&] { bases[k].reset(new MonomialBasis(nvars)); });
  return *bases[k];
}

std::size_t MonomialBasis::index(std::span<const int> exps) const {
  if (static_cast<int>(exps.size()) != nvars_)
    throw Error(ErrorKind::InvalidArgument, "multi-index width mismatch");
  int deg = 0;
  for (int e : exps) {
    if (e < 0) throw Error(ErrorKind::InvalidArgument, "negative exponent");
    deg += e;
  }
  if (deg > max_degree_) throw Error(ErrorKind::InvalidArgument, "multi-index beyond basis");
  for (std::size_t i = degree_begin(deg); i < count(deg); ++i) {
    auto e = exponents(i);
    if (std::equal(e.begin(), e.end(), exps.begin(), [](std::uint8_t x, int y) { return x == y; }))
      return i;
  }
  throw Error(ErrorKind::InvalidArgument, "multi-index not found");
}

Series::Series(const MonomialBasis* basis, int order)
    : basis_(basis), order_(order), c_(basis->count(order), cplx{}) {}

Series::Series(int nvars, int order) : Series(&MonomialBasis::get(nvars), order) {
  if (order < 0 || order > basis_->max_degree())
    throw Error(ErrorKind::OrderUnsupported, "series order beyond basis");
}

Series Series::constant(int nvars, int order, cplx value) {
  Series s(nvars, order);
  s.c_[0] = value;
  return s;
}

Series Series::variable(int nvars, int order, int var, cplx at) {
  Series s(nvars, order);
  s.c_[0] = at;
  if (order >= 1) s.c_[1 + static_cast<std::size_t>(var)] = 1.0;
  return s;
}

cplx Series::coeff(std::span<const int> exps) const {
  int deg = 0;
  for (int e : exps) deg += e;
  if (deg > order_) return {};
  return c_[basis_->index(exps)];
}

cplx Series::derivative_at(std::span<const int> exps) const {
  double fact = 1.0;
  for (int e : exps)
    for (int k = 2; k <= e; ++k) fact *= k;
  return coeff(exps) * fact;
}

Series Series::truncated(int order) const {
  if (order >= order_) return *this;
  Series r(basis_, order);
  std::copy_n(c_.begin(), r.c_.size(), r.c_.begin());
  return r;
}

Series Series::derivative(int var) const {
  if (order_ == 0) throw Error(ErrorKind::OrderUnsupported, "derivative of an order-0 series");
  Series r(basis_, order_ - 1);
  const auto n = c_.size();
  for (std::size_t i = 1; i < n; ++i) {
    const auto lo = basis_->lowered(i, var);
    if (lo < 0) continue;
    const auto k = static_cast<std::size_t>(lo);
    if (k >= r.c_.size()) continue;
    r.c_[k] += c_[i] * static_cast<double>(basis_->exponents(i)[static_cast<std::size_t>(var)]);
  }
  return r;
}

Series Series::conj_swap(std::span<const int> partner) const {
  Series r(basis_, order_);
  std::vector<int> e(static_cast<std::size_t>(basis_->nvars()));
  for (std::size_t i = 0; i < c_.size(); ++i) {
    auto src = basis_->exponents(i);
    for (std::size_t v = 0; v < e.size(); ++v)
      e[static_cast<std::size_t>(partner[v])] = src[v];
    r.c_[basis_->index(e)] = std::conj(c_[i]);
  }
  return r;
}

Series& Series::operator+=(const Series& o) {
  if (o.order_ < order_) *this = truncated(o.order_);
  for (std::size_t i = 0; i < c_.size(); ++i) c_[i] += o.c_[i];
  return *this;
}

Series& Series::operator-=(const Series& o) {
  if (o.order_ < order_) *this = truncated(o.order_);
  for (std::size_t i = 0; i < c_.size(); ++i) c_[i] -= o.c_[i];
  return *this;
}

Series& Series::operator*=(const Series& o) { return *this = *this * o; }

Series& Series::operator*=(cplx v) {
  for (auto& x : c_) x *= v;
  return *this;
}

Series operator-(const Series& a) {
  Series r = a;
  for (auto& x : r.c_) x = -x;
  return r;
}

Series operator+(const Series& a, const Series& b) {
  Series r = a;
  r += b;
  return r;
}

Series operator-(const Series& a, const Series& b) {
  Series r = a;
  r -= b;
  return r;
}

Series operator*(const Series& a, const Series& b) {
  const int order = std::min(a.order_, b.order_);
  Series r(a.basis_, order);
  for (int d = 0; d <= order; ++d)
    for (const auto& t : a.basis_->products(d)) r.c_[t.out] += a.c_[t.a] * b.c_[t.b];
  return r;
}

Series operator/(const Series& f, const Series& g) {
  const int order = std::min(f.order_, g.order_);
  Series h(f.basis_, order);
  const cplx g0 = g.c_[0];
  h.c_[0] = f.c_[0] / g0;
  for (int d = 1; d <= order; ++d) {
    const auto lo = f.basis_->degree_begin(d), hi = f.basis_->count(d);
    for (std::size_t k = lo; k < hi; ++k) h.c_[k] = f.c_[k];
    for (const auto& t : f.basis_->products(d))
      if (t.b != 0) h.c_[t.out] -= h.c_[t.a] * g.c_[t.b];
    for (std::size_t k = lo; k < hi; ++k) h.c_[k] /= g0;
  }
  return h;
}

Series operator/(cplx v, const Series& a) { return Series::constant(a.nvars(), a.order_, v) / a; }

// The elementary functions use the Euler-operator recurrences
// E h = g'(f) E f, solved degree by degree; E multiplies a degree-d part by d.
Series exp(const Series& f) {
  Series h(f.basis_, f.order_);
  h.c_[0] = std::exp(f.c_[0]);
  const auto& B = *f.basis_;
  for (int d = 1; d <= f.order_; ++d) {
    for (const auto& t : B.products(d))
      if (t.b != 0) h.c_[t.out] += static_cast<double>(B.degree(t.b)) * f.c_[t.b] * h.c_[t.a];
    for (std::size_t k = B.degree_begin(d); k < B.count(d); ++k) h.c_[k] /= static_cast<double>(d);
  }
  return h;
}

Series log(const Series& f) {
  Series h(f.basis_, f.order_);
  const cplx f0 = f.c_[0];
  h.c_[0] = std::log(f0);
  const auto& B = *f.basis_;
  for (int d = 1; d <= f.order_; ++d) {
    const auto lo = B.degree_begin(d), hi = B.count(d);
    for (std::size_t k = lo; k < hi; ++k) h.c_[k] = static_cast<double>(d) * f.c_[k];
    for (const auto& t : B.products(d))
      if (t.b != 0 && t.a != 0)
        h.c_[t.out] -= static_cast<double>(B.degree(t.a)) * h.c_[t.a] * f.c_[t.b];
    for (std::size_t k = lo; k < hi; ++k) h.c_[k] /= static_cast<double>(d) * f0;
  }
  return h;
}

Series pow(const Series& f, double p) {
  Series h(f.basis_, f.order_);
  const cplx f0 = f.c_[0];
  h.c_[0] = (f0.imag() == 0.0 && f0.real() > 0.0) ? cplx(std::pow(f0.real(), p)) : std::pow(f0, p);
  const auto& B = *f.basis_;
  for (int d = 1; d <= f.order_; ++d) {
    for (const auto& t : B.products(d))
      if (t.b != 0)
        h.c_[t.out] += (p * B.degree(t.b) - B.degree(t.a)) * f.c_[t.b] * h.c_[t.a];
    for (std::size_t k = B.degree_begin(d); k < B.count(d); ++k)
      h.c_[k] /= static_cast<double>(d) * f0;
  }
  return h;
}

Series polyval(std::span<const double> coeffs, const Series& x) {
  Series r = Series::constant(x.nvars(), x.order_, 0.0);
  for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) {
    r = r * x;
    r += cplx(*it);
  }
  return r;
}

}  // namespace kefam

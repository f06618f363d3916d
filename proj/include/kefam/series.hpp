#pragma once

// Truncated multivariate Taylor arithmetic.
//
// A Series holds the Taylor coefficients of a function of `nvars` independent
// variables up to a fixed total degree (its order). The variables used by the
// Wirtinger engine are the holomorphic coordinates and their conjugates, taken
// as independent, so that d/dz and d/dzbar are plain index shifts.
//
// Arithmetic is closed: every operation returns a series truncated at the
// smaller order of its operands, and differentiation lowers the order by one.
// This is the compressed form of arbitrarily nested forward-mode dual numbers.

#include <complex>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace kefam {

using cplx = std::complex<double>;

class MonomialBasis {
 public:
  struct Triple {
    std::uint32_t a;
    std::uint32_t b;
    std::uint32_t out;
  };

  // Shared basis for `nvars` variables; lazily built once per width.
  static const MonomialBasis& get(int nvars);

  int nvars() const { return nvars_; }
  int max_degree() const { return max_degree_; }

  // Number of monomials of total degree <= d (the coefficient count of an
  // order-d series; graded ordering makes lower orders a prefix).
  std::size_t count(int d) const { return degree_start_[static_cast<std::size_t>(d) + 1]; }
  std::size_t degree_begin(int d) const { return degree_start_[static_cast<std::size_t>(d)]; }

  int degree(std::size_t idx) const { return degree_of_[idx]; }
  std::span<const std::uint8_t> exponents(std::size_t idx) const {
    return {exps_.data() + idx * static_cast<std::size_t>(nvars_),
            static_cast<std::size_t>(nvars_)};
  }
  // Index of m - e_var, or -1 when the exponent of var is zero.
  std::int32_t lowered(std::size_t idx, int var) const {
    return lowered_[idx * static_cast<std::size_t>(nvars_) + static_cast<std::size_t>(var)];
  }
  // Throws InvalidArgument if the multi-index exceeds the basis.
  std::size_t index(std::span<const int> exps) const;

  // All ordered pairs (a, b) whose product lands in degree d.
  std::span<const Triple> products(int d) const {
    return {triples_.data() + triple_start_[static_cast<std::size_t>(d)],
            triple_start_[static_cast<std::size_t>(d) + 1] -
                triple_start_[static_cast<std::size_t>(d)]};
  }

  static int max_degree_for(int nvars);

 private:
  explicit MonomialBasis(int nvars);

  int nvars_;
  int max_degree_;
  std::vector<std::uint8_t> exps_;
  std::vector<int> degree_of_;
  std::vector<std::size_t> degree_start_;
  std::vector<std::int32_t> lowered_;
  std::vector<Triple> triples_;
  std::vector<std::size_t> triple_start_;
};

class Series {
 public:
  Series() = default;
  Series(int nvars, int order);

  static Series constant(int nvars, int order, cplx value);
  static Series variable(int nvars, int order, int var, cplx at);

  int nvars() const { return basis_ ? basis_->nvars() : 0; }
  int order() const { return order_; }
  const MonomialBasis& basis() const { return *basis_; }
  std::size_t size() const { return c_.size(); }

  cplx value() const { return c_[0]; }
  cplx operator[](std::size_t i) const { return c_[i]; }
  cplx& operator[](std::size_t i) { return c_[i]; }
  std::span<const cplx> coefficients() const { return c_; }

  // Taylor coefficient of the monomial with the given exponents (zero when the
  // monomial lies beyond the order).
  cplx coeff(std::span<const int> exps) const;
  // Partial derivative at the expansion point: coeff * prod(exps!).
  cplx derivative_at(std::span<const int> exps) const;

  Series truncated(int order) const;
  Series derivative(int var) const;
  Series conj_swap(std::span<const int> partner) const;

  Series& operator+=(const Series& o);
  Series& operator-=(const Series& o);
  Series& operator*=(const Series& o);
  Series& operator+=(cplx v) { c_[0] += v; return *this; }
  Series& operator-=(cplx v) { c_[0] -= v; return *this; }
  Series& operator*=(cplx v);

  friend Series operator-(const Series& a);
  friend Series operator+(const Series& a, const Series& b);
  friend Series operator-(const Series& a, const Series& b);
  friend Series operator*(const Series& a, const Series& b);
  friend Series operator/(const Series& a, const Series& b);
  friend Series operator+(const Series& a, cplx v) { Series r = a; r += v; return r; }
  friend Series operator+(cplx v, const Series& a) { return a + v; }
  friend Series operator-(const Series& a, cplx v) { Series r = a; r -= v; return r; }
  friend Series operator-(cplx v, const Series& a) { return (-a) + v; }
  friend Series operator*(const Series& a, cplx v) { Series r = a; r *= v; return r; }
  friend Series operator*(cplx v, const Series& a) { return a * v; }
  friend Series operator/(const Series& a, cplx v) { return a * (1.0 / v); }
  friend Series operator/(cplx v, const Series& a);
  friend Series operator+(const Series& a, double v) { return a + cplx(v); }
  friend Series operator+(double v, const Series& a) { return a + cplx(v); }
  friend Series operator-(const Series& a, double v) { return a - cplx(v); }
  friend Series operator-(double v, const Series& a) { return cplx(v) - a; }
  friend Series operator*(const Series& a, double v) { return a * cplx(v); }
  friend Series operator*(double v, const Series& a) { return a * cplx(v); }
  friend Series operator/(const Series& a, double v) { return a * cplx(1.0 / v); }
  friend Series operator/(double v, const Series& a) { return cplx(v) / a; }

  friend Series exp(const Series& f);
  friend Series log(const Series& f);
  friend Series pow(const Series& f, double p);
  friend Series sqrt(const Series& f) { return pow(f, 0.5); }
  // Composition with a polynomial given by its coefficients in ascending powers.
  friend Series polyval(std::span<const double> coeffs, const Series& x);

 private:
  Series(const MonomialBasis* basis, int order);

  const MonomialBasis* basis_ = nullptr;
  int order_ = 0;
  std::vector<cplx> c_;
};

}  // namespace kefam

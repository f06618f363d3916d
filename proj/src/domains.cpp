#include "kefam/domains.hpp"

#include <algorithm>
#include <boost/math/tools/roots.hpp>
#include <cctype>
#include <cmath>
#include <fmt/format.h>
#include <numbers>

#include "kefam/error.hpp"
#include "kefam/linalg.hpp"

namespace kefam {

namespace {

using Poly = std::vector<cplx>;

Poly poly_mul(const Poly& a, const Poly& b) {
  Poly r(a.size() + b.size() - 1, cplx{});
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) r[i + j] += a[i] * b[j];
  return r;
}

Poly poly_add(Poly a, const Poly& b, double sign) {
  if (a.size() < b.size()) a.resize(b.size(), cplx{});
  for (std::size_t i = 0; i < b.size(); ++i) a[i] += sign * b[i];
  return a;
}

class PolyParser {
 public:
  explicit PolyParser(const std::string& text) {
    for (char ch : text)
      if (!std::isspace(static_cast<unsigned char>(ch))) src_.push_back(ch);
  }

  Poly parse() {
    if (src_.empty()) fail("empty expression");
    Poly p = expr();
    if (pos_ != src_.size()) fail("unexpected character");
    return p;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorKind::ConfigInvalid, "polynomial '" + src_ + "': " + what);
  }
  bool peek(char c) const { return pos_ < src_.size() && src_[pos_] == c; }

  Poly expr() {
    Poly acc;
    double sign = 1.0;
    if (peek('-') || peek('+')) sign = src_[pos_++] == '-' ? -1.0 : 1.0;
    acc = poly_add({}, term(), sign);
    while (peek('+') || peek('-')) {
      sign = src_[pos_++] == '-' ? -1.0 : 1.0;
      acc = poly_add(acc, term(), sign);
    }
    return acc;
  }

  Poly term() {
    Poly acc = factor();
    while (peek('*') || peek('/')) {
      const char op = src_[pos_++];
      Poly rhs = factor();
      if (op == '*') {
        acc = poly_mul(acc, rhs);
      } else {
        if (rhs.size() != 1 || rhs[0] == cplx{}) fail("division only by nonzero constants");
        for (auto& c : acc) c /= rhs[0];
      }
    }
    return acc;
  }

  Poly factor() {
    Poly base;
    if (peek('(')) {
      ++pos_;
      base = expr();
      if (!peek(')')) fail("missing ')'");
      ++pos_;
    } else if (peek('s')) {
      ++pos_;
      base = {cplx{}, cplx{1.0}};
    } else if (peek('i')) {
      ++pos_;
      base = {cplx{0.0, 1.0}};
    } else {
      const std::size_t start = pos_;
      while (pos_ < src_.size() && (std::isdigit(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '.' ||
                                    ((src_[pos_] == 'e' || src_[pos_] == 'E') && pos_ + 1 < src_.size())))
        ++pos_;
      if (start == pos_) fail("expected a number, 's', 'i' or '('");
      double v = 0.0;
      try {
        v = std::stod(src_.substr(start, pos_ - start));
      } catch (const std::exception&) {
        fail("bad number");
      }
      base = {cplx{v}};
      if (peek('i')) {
        ++pos_;
        base = {cplx{0.0, v}};
      }
    }
    if (peek('^')) {
      ++pos_;
      const std::size_t start = pos_;
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) ++pos_;
      if (start == pos_) fail("expected an integer exponent");
      const int k = std::stoi(src_.substr(start, pos_ - start));
      Poly r{cplx{1.0}};
      for (int i = 0; i < k; ++i) r = poly_mul(r, base);
      base = r;
    }
    return base;
  }

  std::string src_;
  std::size_t pos_ = 0;
};

Series poly_series(const Poly& c, const Series& x, bool conjugate) {
  Series acc = x * 0.0;
  for (auto it = c.rbegin(); it != c.rend(); ++it) acc = acc * x + (conjugate ? std::conj(*it) : *it);
  return acc;
}

cplx poly_eval(const Poly& c, cplx x) {
  cplx acc{};
  for (auto it = c.rbegin(); it != c.rend(); ++it) acc = acc * x + *it;
  return acc;
}

int get_n(const nlohmann::json& p) {
  const int n = p.value("n", 1);
  if (n < 1 || n > 4) throw Error(ErrorKind::ConfigInvalid, "params.n must be in [1, 4]");
  return n;
}

double get_positive(const nlohmann::json& p, const char* key, double dflt) {
  const double v = p.value(key, dflt);
  if (!(v > 0.0)) throw Error(ErrorKind::ConfigInvalid, std::string("params.") + key + " must be positive");
  return v;
}

std::vector<double> get_vector(const nlohmann::json& p, const char* key, int n, double dflt) {
  std::vector<double> v(static_cast<std::size_t>(n), dflt);
  if (!p.contains(key)) return v;
  const auto& j = p.at(key);
  if (j.is_number()) {
    std::fill(v.begin(), v.end(), j.get<double>());
  } else if (j.is_array() && static_cast<int>(j.size()) == n) {
    for (int a = 0; a < n; ++a) v[static_cast<std::size_t>(a)] = j.at(static_cast<std::size_t>(a)).get<double>();
  } else {
    throw Error(ErrorKind::ConfigInvalid, std::string("params.") + key + " must be a number or an array of length n");
  }
  return v;
}

cplx get_complex(const nlohmann::json& p, const char* key, cplx dflt) {
  if (!p.contains(key)) return dflt;
  const auto& j = p.at(key);
  if (j.is_number()) return {j.get<double>(), 0.0};
  if (j.is_array() && j.size() == 2) return {j.at(0).get<double>(), j.at(1).get<double>()};
  throw Error(ErrorKind::ConfigInvalid, std::string("params.") + key + " must be a number or [re, im]");
}

Box centered_box(const std::vector<cplx>& c, const std::vector<double>& half) {
  Box b;
  for (std::size_t a = 0; a < c.size(); ++a) {
    b.lo.push_back(c[a].real() - half[2 * a]);
    b.hi.push_back(c[a].real() + half[2 * a]);
    b.lo.push_back(c[a].imag() - half[2 * a + 1]);
    b.hi.push_back(c[a].imag() + half[2 * a + 1]);
  }
  return b;
}

std::vector<cplx> zeros(int n) { return std::vector<cplx>(static_cast<std::size_t>(n), cplx{}); }

FamilyDefinition make_ball(const nlohmann::json& p) {
  FamilyDefinition F;
  F.name = "ball_family";
  F.n = get_n(p);
  F.base_radius = get_positive(p, "base_radius", 0.5);
  if (F.base_radius >= 1.0) throw Error(ErrorKind::ConfigInvalid, "params.base_radius must be < 1");
  const int n = F.n;
  F.phi = std::make_shared<ClosedFormField>(n, [](const Coords& c) { return c.norm2() + c.s_abs2() - 1.0; });
  const double k = 1.0 / (n + 1);
  F.oracle_h = std::make_shared<ClosedFormField>(
      n,
      [k](const Coords& c) {
        const Series r2 = 1.0 - c.s_abs2();
        return k * log(r2) - log(r2 - c.norm2());
      },
      0, [](const CPoint& q) {
        double t = std::norm(q.s);
        for (auto z : q.z) t += std::norm(z);
        return t < 1.0;
      });
  F.slice_box = [n](cplx s) {
    const double r = std::sqrt(std::max(0.0, 1.0 - std::norm(s)));
    return centered_box(zeros(n), std::vector<double>(static_cast<std::size_t>(2 * n), r));
  };
  F.slice_center = [n](cplx) { return zeros(n); };
  return F;
}

FamilyDefinition make_translated(const nlohmann::json& p) {
  FamilyDefinition F;
  F.name = "translated_ball";
  F.n = get_n(p);
  F.base_radius = get_positive(p, "base_radius", 0.5);
  const std::string expr = p.value("c", std::string("s/2"));
  const Poly c = parse_polynomial(expr);
  const int n = F.n;
  auto shifted_norm = [c](const Coords& q) {
    const Series cs = poly_series(c, q.s(), false);
    const Series cb = poly_series(c, q.sbar(), true);
    Series acc = (q.z(0) - cs) * (q.zbar(0) - cb);
    for (int a = 1; a < q.n(); ++a) acc += q.abs2(a);
    return acc;
  };
  F.phi = std::make_shared<ClosedFormField>(n, [shifted_norm](const Coords& q) { return shifted_norm(q) - 1.0; });
  F.oracle_h = std::make_shared<ClosedFormField>(
      n, [shifted_norm](const Coords& q) { return -log(1.0 - shifted_norm(q)); }, 0,
      [c](const CPoint& q) {
        double t = std::norm(q.z[0] - poly_eval(c, q.s));
        for (std::size_t a = 1; a < q.z.size(); ++a) t += std::norm(q.z[a]);
        return t < 1.0;
      });
  F.oracle_transport = [c](const std::vector<cplx>& z, cplx s0, cplx s) {
    auto r = z;
    r[0] += poly_eval(c, s) - poly_eval(c, s0);
    return r;
  };
  F.slice_center = [c, n](cplx s) {
    auto z = zeros(n);
    z[0] = poly_eval(c, s);
    return z;
  };
  F.slice_box = [c, n](cplx s) {
    auto z = zeros(n);
    z[0] = poly_eval(c, s);
    return centered_box(z, std::vector<double>(static_cast<std::size_t>(2 * n), 1.0));
  };
  return F;
}

FamilyDefinition make_hartogs(const nlohmann::json& p) {
  FamilyDefinition F;
  F.name = "hartogs_radius";
  F.n = get_n(p);
  F.base_radius = get_positive(p, "base_radius", 0.5);
  const cplx kappa = get_complex(p, "kappa", cplx{1.0});
  const int n = F.n;
  auto weight = [kappa](const Coords& q) { return exp(-(kappa * q.s() + std::conj(kappa) * q.sbar())); };
  F.phi = std::make_shared<ClosedFormField>(n, [weight](const Coords& q) { return q.norm2() * weight(q) - 1.0; });
  const double k = static_cast<double>(n) / (n + 1);
  F.oracle_h = std::make_shared<ClosedFormField>(
      n,
      [weight, kappa, k](const Coords& q) {
        return -log(1.0 - q.norm2() * weight(q)) - k * (kappa * q.s() + std::conj(kappa) * q.sbar());
      },
      0, [kappa](const CPoint& q) {
        double t = 0.0;
        for (auto z : q.z) t += std::norm(z);
        return t * std::exp(-2.0 * (kappa * q.s).real()) < 1.0;
      });
  F.oracle_transport = [kappa](const std::vector<cplx>& z, cplx s0, cplx s) {
    auto r = z;
    const cplx f = std::exp(kappa * (s - s0));
    for (auto& v : r) v *= f;
    return r;
  };
  F.slice_center = [n](cplx) { return zeros(n); };
  F.slice_box = [n, kappa](cplx s) {
    const double r = std::exp((kappa * s).real());
    return centered_box(zeros(n), std::vector<double>(static_cast<std::size_t>(2 * n), r));
  };
  return F;
}

FamilyDefinition make_ellipsoid(const nlohmann::json& p) {
  FamilyDefinition F;
  F.name = "ellipsoid_family";
  F.n = get_n(p);
  const int n = F.n;
  std::vector<double> dflt(static_cast<std::size_t>(n));
  for (int a = 0; a < n; ++a) dflt[static_cast<std::size_t>(a)] = a + 1.0;
  auto a = p.contains("a") ? get_vector(p, "a", n, 1.0) : dflt;
  for (double v : a)
    if (!(v > 0.0)) throw Error(ErrorKind::ConfigInvalid, "params.a entries must be positive");
  const double b = get_positive(p, "b", 1.0);
  F.base_radius = get_positive(p, "base_radius", 0.5);
  if (b * F.base_radius * F.base_radius >= 1.0)
    throw Error(ErrorKind::ConfigInvalid, "params.b * base_radius^2 must be < 1");
  auto weighted = [a](const Coords& q) {
    Series acc = q.constant(0.0);
    for (int k = 0; k < q.n(); ++k) acc += a[static_cast<std::size_t>(k)] * q.abs2(k);
    return acc;
  };
  F.phi = std::make_shared<ClosedFormField>(n, [weighted, b](const Coords& q) { return weighted(q) + b * q.s_abs2() - 1.0; });
  double log_prod = 0.0;
  for (double v : a) log_prod += std::log(v);
  const double k = 1.0 / (n + 1);
  F.oracle_h = std::make_shared<ClosedFormField>(
      n,
      [weighted, b, k, log_prod, n](const Coords& q) {
        const Series r2 = 1.0 - b * q.s_abs2();
        return -log(1.0 - weighted(q) / r2) + k * log_prod - (n * k) * log(r2);
      },
      0, [a, b](const CPoint& q) {
        double t = b * std::norm(q.s);
        for (std::size_t i = 0; i < q.z.size(); ++i) t += a[i] * std::norm(q.z[i]);
        return t < 1.0;
      });
  F.slice_center = [n](cplx) { return zeros(n); };
  F.slice_box = [n, a, b](cplx s) {
    const double r2 = std::max(0.0, 1.0 - b * std::norm(s));
    std::vector<double> half;
    for (int k = 0; k < n; ++k) {
      const double h = std::sqrt(r2 / a[static_cast<std::size_t>(k)]);
      half.push_back(h);
      half.push_back(h);
    }
    return centered_box(zeros(n), half);
  };
  return F;
}

FamilyDefinition make_perturbed(const nlohmann::json& p) {
  FamilyDefinition F;
  F.name = "perturbed_ball";
  F.n = get_n(p);
  const int n = F.n;
  F.base_radius = get_positive(p, "base_radius", 0.5);
  const double eps = p.value("eps", 0.05);
  if (!(std::abs(eps) <= 0.05)) throw Error(ErrorKind::ConfigInvalid, "params.eps must satisfy |eps| <= 0.05");
  const double radius = get_positive(p, "radius", 0.9);
  const int power = p.value("power", 10);
  if (power < 4) throw Error(ErrorKind::ConfigInvalid, "params.power must be >= 4");
  std::vector<cplx> center = zeros(n);
  center[0] = 0.4;
  if (p.contains("center")) {
    const auto& j = p.at("center");
    if (!j.is_array() || static_cast<int>(j.size()) != 2 * n)
      throw Error(ErrorKind::ConfigInvalid, "params.center must list 2n real coordinates");
    for (int a = 0; a < n; ++a)
      center[static_cast<std::size_t>(a)] = {j.at(static_cast<std::size_t>(2 * a)).get<double>(),
                                             j.at(static_cast<std::size_t>(2 * a + 1)).get<double>()};
  }
  const cplx s0 = get_complex(p, "s0", cplx{});
  const double r2 = radius * radius;
  F.phi = std::make_shared<ClosedFormField>(n, [=](const Coords& q) {
    Series t = (q.s() - s0) * (q.sbar() - std::conj(s0));
    for (int a = 0; a < q.n(); ++a) {
      const cplx c = center[static_cast<std::size_t>(a)];
      t += (q.z(a) - c) * (q.zbar(a) - std::conj(c));
    }
    Series base = q.norm2() + q.s_abs2() - 1.0;
    if (t.value().real() >= r2) return base;
    const Series cap = 1.0 - t / r2;
    Series bump = cap;
    for (int k = 1; k < power; ++k) bump = bump * cap;
    return base + eps * bump;
  });
  F.slice_center = [n](cplx) { return zeros(n); };
  F.slice_box = [n](cplx s) {
    const double r = std::sqrt(std::max(0.0, 1.0 - std::norm(s)));
    return centered_box(zeros(n), std::vector<double>(static_cast<std::size_t>(2 * n), r));
  };
  return F;
}

FamilyDefinition make_real_ellipsoid(const nlohmann::json& p) {
  FamilyDefinition F;
  F.name = "real_ellipsoid";
  F.n = get_n(p);
  const int n = F.n;
  const auto ax = get_vector(p, "ax", n, 1.0);
  const auto ay = get_vector(p, "ay", n, 4.0);
  for (std::size_t k = 0; k < ax.size(); ++k)
    if (!(ax[k] > 0.0) || !(ay[k] > 0.0)) throw Error(ErrorKind::ConfigInvalid, "params.ax/ay must be positive");
  const double cs = get_positive(p, "c_s", 1.0);
  F.base_radius = get_positive(p, "base_radius", 0.5);
  if (cs * F.base_radius * F.base_radius >= 1.0)
    throw Error(ErrorKind::ConfigInvalid, "params.c_s * base_radius^2 must be < 1");
  F.phi = std::make_shared<ClosedFormField>(n, [=](const Coords& q) {
    Series acc = cs * q.s_abs2() - 1.0;
    for (int a = 0; a < q.n(); ++a) {
      const Series x = q.re(a), y = q.im(a);
      acc += ax[static_cast<std::size_t>(a)] * x * x + ay[static_cast<std::size_t>(a)] * y * y;
    }
    return acc;
  });
  F.slice_center = [n](cplx) { return zeros(n); };
  F.slice_box = [=](cplx s) {
    const double r2 = std::max(0.0, 1.0 - cs * std::norm(s));
    std::vector<double> half;
    for (int a = 0; a < n; ++a) {
      half.push_back(std::sqrt(r2 / ax[static_cast<std::size_t>(a)]));
      half.push_back(std::sqrt(r2 / ay[static_cast<std::size_t>(a)]));
    }
    return centered_box(zeros(n), half);
  };
  return F;
}

double radical_inverse(std::uint64_t i, std::uint64_t base) {
  double f = 1.0, r = 0.0;
  while (i > 0) {
    f /= static_cast<double>(base);
    r += f * static_cast<double>(i % base);
    i /= base;
  }
  return r;
}

}  // namespace

std::vector<cplx> parse_polynomial(const std::string& expr) { return PolyParser(expr).parse(); }

double FamilyDefinition::phi_value(const CPoint& p) const { return phi->expand(p, 0, false).value().real(); }

std::vector<std::string> catalog_names() {
  return {"ball_family", "translated_ball", "hartogs_radius", "ellipsoid_family", "perturbed_ball", "real_ellipsoid"};
}

FamilyDefinition catalog_instantiate(const std::string& name, const nlohmann::json& params) {
  const nlohmann::json p = params.is_null() ? nlohmann::json::object() : params;
  if (!p.is_object()) throw Error(ErrorKind::ConfigInvalid, "family params must be an object");
  FamilyDefinition F;
  if (name == "ball_family") F = make_ball(p);
  else if (name == "translated_ball") F = make_translated(p);
  else if (name == "hartogs_radius") F = make_hartogs(p);
  else if (name == "ellipsoid_family") F = make_ellipsoid(p);
  else if (name == "perturbed_ball") F = make_perturbed(p);
  else if (name == "real_ellipsoid") F = make_real_ellipsoid(p);
  else throw Error(ErrorKind::UnknownFamily, name);
  F.params = p;
  F.params["n"] = F.n;

  const ConditionAudit audit = audit_conditions(F, 100, 7);
  if (!audit.ok) {
    std::string where;
    if (audit.where) {
      for (auto z : audit.where->z) where += fmt::format("({:.6g},{:.6g}) ", z.real(), z.imag());
      where += fmt::format("s=({:.6g},{:.6g})", audit.where->s.real(), audit.where->s.imag());
    }
    throw Error(ErrorKind::InvariantViolated, F.name + ": condition " + audit.failed + " fails at " + where);
  }
  return F;
}

std::vector<cplx> base_samples(const FamilyDefinition& F, int count, std::uint64_t seed) {
  std::vector<cplx> out;
  for (int k = 0; k < count; ++k) {
    const auto i = static_cast<std::uint64_t>(k) + 1 + seed * 7919;
    const double r = F.base_radius * 0.9 * std::sqrt(radical_inverse(i, 2));
    const double th = 2.0 * std::numbers::pi * radical_inverse(i, 3);
    out.push_back(std::polar(r, th));
  }
  return out;
}

std::vector<CPoint> interior_samples(const FamilyDefinition& F, cplx s, int count, std::uint64_t seed) {
  const Box box = F.slice_box(s);
  static constexpr std::array<std::uint64_t, 8> primes{2, 3, 5, 7, 11, 13, 17, 19};
  std::vector<CPoint> out;
  std::uint64_t i = 1 + seed * 104729;
  const std::uint64_t limit = i + static_cast<std::uint64_t>(count) * 1000;
  while (static_cast<int>(out.size()) < count && i < limit) {
    CPoint p{std::vector<cplx>(static_cast<std::size_t>(F.n)), s};
    for (int a = 0; a < F.n; ++a) {
      const auto ax = static_cast<std::size_t>(2 * a), ay = ax + 1;
      const double x = box.lo[ax] + (box.hi[ax] - box.lo[ax]) * radical_inverse(i, primes[ax]);
      const double y = box.lo[ay] + (box.hi[ay] - box.lo[ay]) * radical_inverse(i, primes[ay]);
      p.z[static_cast<std::size_t>(a)] = {x, y};
    }
    ++i;
    if (F.phi_value(p) < -1e-3) out.push_back(std::move(p));
  }
  if (static_cast<int>(out.size()) < count) throw Error(ErrorKind::EmptyInterior, F.name + ": slice too thin to sample");
  return out;
}

CPoint boundary_point(const FamilyDefinition& F, cplx s, const std::vector<cplx>& dir) {
  const auto c = F.slice_center(s);
  CPoint p{c, s};
  if (!(F.phi_value(p) < 0.0)) throw Error(ErrorKind::InvalidArgument, F.name + ": slice center is not interior");
  auto at = [&](double t) {
    CPoint q{c, s};
    for (std::size_t a = 0; a < c.size(); ++a) q.z[a] += t * dir[a];
    return q;
  };
  double hi = 1.0;
  while (F.phi_value(at(hi)) < 0.0) {
    hi *= 2.0;
    if (hi > 1e6) throw Error(ErrorKind::InvalidArgument, F.name + ": ray does not leave the slice");
  }
  double lo = 0.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (F.phi_value(at(mid)) < 0.0 ? lo : hi) = mid;
  }
  // Finish with a secant step so that |phi| lands well inside the tolerance.
  const double flo = F.phi_value(at(lo)), fhi = F.phi_value(at(hi));
  const double t = (fhi != flo) ? lo - flo * (hi - lo) / (fhi - flo) : lo;
  return at(std::clamp(t, lo, hi));
}

std::vector<CPoint> boundary_samples(const FamilyDefinition& F, cplx s, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::vector<CPoint> out;
  for (int k = 0; k < count; ++k) {
    std::vector<cplx> dir(static_cast<std::size_t>(F.n));
    double norm = 0.0;
    for (auto& d : dir) {
      d = {nd(rng), nd(rng)};
      norm += std::norm(d);
    }
    for (auto& d : dir) d /= std::sqrt(norm);
    out.push_back(boundary_point(F, s, dir));
  }
  return out;
}

ConditionAudit audit_conditions(const FamilyDefinition& F, int count, std::uint64_t seed) {
  ConditionAudit A;
  A.min_slice_eigen = std::numeric_limits<double>::infinity();
  A.min_grad = std::numeric_limits<double>::infinity();
  A.min_grad_z = std::numeric_limits<double>::infinity();
  A.max_interior_phi = -std::numeric_limits<double>::infinity();
  auto fail = [&](const char* tag, const CPoint& p) {
    if (A.ok) {
      A.ok = false;
      A.failed = tag;
      A.where = p;
    }
  };
  const auto bases = base_samples(F, std::max(1, count / 10), seed);
  const int per = std::max(1, count / static_cast<int>(bases.size()));
  for (std::size_t k = 0; k < bases.size(); ++k) {
    const cplx s = bases[k];
    for (const auto& p : interior_samples(F, s, per, seed + k)) {
      const auto j = F.phi->jet(p, 2);
      A.max_interior_phi = std::max(A.max_interior_phi, j.value.real());
      if (!(j.value.real() < 0.0)) fail("(i) phi < 0", p);
      const double ev = min_eigenvalue(j.hess_zzbar);
      A.min_slice_eigen = std::min(A.min_slice_eigen, ev);
      if (!(ev > 0.0)) fail("(iii) slice Hessian > 0", p);
    }
    for (const auto& p : boundary_samples(F, s, per, seed + k)) {
      const auto j = F.phi->jet(p, 2);
      const double gz = j.grad_z.norm();
      const double g = std::sqrt(gz * gz + std::norm(j.grad_s));
      A.min_grad = std::min(A.min_grad, g);
      A.min_grad_z = std::min(A.min_grad_z, gz);
      if (!(g > 1e-8)) fail("(ii) d phi != 0", p);
      if (!(gz > 1e-8)) fail("(iv) d_z phi != 0", p);
      const double ev = min_eigenvalue(j.hess_zzbar);
      A.min_slice_eigen = std::min(A.min_slice_eigen, ev);
      if (!(ev > 0.0)) fail("(iii) slice Hessian > 0", p);
    }
  }
  return A;
}

double strong_pseudoconvexity_margin(const FamilyDefinition& F, const CPoint& p) {
  const auto j = F.phi->jet(p, 2);
  if (std::abs(j.value.real()) > kBoundaryTol)
    throw Error(ErrorKind::NotOnBoundary, "|phi| = " + std::to_string(std::abs(j.value.real())));
  const int n = F.n;
  Eigen::VectorXcd d(n + 1);
  d.head(n) = j.grad_z;
  d(n) = j.grad_s;
  // Orthonormal basis of {v : sum d_j v^j = 0} from the full unitary factor.
  Eigen::MatrixXcd row = d.transpose();
  Eigen::HouseholderQR<Eigen::MatrixXcd> qr(row.adjoint());
  Eigen::MatrixXcd Q = qr.householderQ() * Eigen::MatrixXcd::Identity(n + 1, n + 1);
  Eigen::MatrixXcd basis = Q.rightCols(n);
  const Eigen::MatrixXcd H = hessian_blocks(j);
  const Eigen::MatrixXcd M = basis.transpose() * H * basis.conjugate();
  return min_eigenvalue(M);
}

BoundaryRay boundary_ray(const FamilyDefinition& F, cplx s, const CPoint& p, int count, double phi_start,
                         double ratio) {
  if (std::abs(F.phi_value(p)) > kBoundaryTol) throw Error(ErrorKind::NotOnBoundary, "ray anchor off the boundary");
  if (count < 1 || !(phi_start < 0.0) || !(ratio > 0.0 && ratio < 1.0))
    throw Error(ErrorKind::InvalidArgument, "ray needs count >= 1, phi_start < 0, ratio in (0,1)");
  CPoint anchor = p;
  anchor.s = s;
  const auto j = F.phi->jet(anchor, 1);
  std::vector<cplx> dir(static_cast<std::size_t>(F.n));
  double norm = 0.0;
  for (int a = 0; a < F.n; ++a) {
    dir[static_cast<std::size_t>(a)] = -j.grad_zbar(a);
    norm += std::norm(j.grad_zbar(a));
  }
  norm = std::sqrt(norm);
  for (auto& d : dir) d /= norm;
  auto at = [&](double t) {
    CPoint q = anchor;
    for (std::size_t a = 0; a < dir.size(); ++a) q.z[a] += t * dir[a];
    return q;
  };
  BoundaryRay R;
  R.anchor = anchor;
  R.direction = dir;
  // Distance at which phi first reaches phi_start, bracketing outward from the anchor.
  double t_hi = 1e-3;
  while (F.phi_value(at(t_hi)) > phi_start) {
    t_hi *= 2.0;
    if (t_hi > 1e3) throw Error(ErrorKind::DegenerateRay, "phi_start not reached along the inward normal");
  }
  double target = phi_start;
  double hi = t_hi;
  for (int k = 0; k < count; ++k) {
    auto f = [&](double t) { return F.phi_value(at(t)) - target; };
    boost::math::tools::eps_tolerance<double> tol(50);
    std::uintmax_t iters = 200;
    const auto [a, b] = boost::math::tools::toms748_solve(f, 0.0, hi, -target, f(hi), tol, iters);
    const double t = 0.5 * (a + b);
    R.t.push_back(t);
    R.points.push_back(at(t));
    R.phi.push_back(F.phi_value(R.points.back()));
    hi = t;
    target *= ratio;
  }
  return R;
}

FieldPtr g_potential(const FamilyDefinition& F) {
  const FieldPtr phi = F.phi;
  return std::make_shared<ClosedFormField>(F.n, [phi](const Coords& c) { return -log(-phi->generator()(c)); });
}

double g_gradient_norm(const FamilyDefinition& F, const CPoint& p) {
  const auto j = g_potential(F)->jet(p, 2);
  const Eigen::MatrixXcd inv = j.hess_zzbar.inverse();
  // g^{a bbar} g_a g_bbar with inv(b, a) = g^{bbar a}.
  return (j.grad_zbar.transpose() * inv * j.grad_z)(0, 0).real();
}

Eigen::MatrixXcd g_inverse_closed_form(const FamilyDefinition& F, const CPoint& p) {
  const auto j = F.phi->jet(p, 2);
  const double phi = j.value.real();
  const Eigen::MatrixXcd Ainv = j.hess_zzbar.inverse();
  const Eigen::VectorXcd up = Ainv * j.grad_z;                  // phi^{bbar}
  const Eigen::RowVectorXcd down = j.grad_zbar.transpose() * Ainv;  // phi^{a}
  const double dphi2 = (j.grad_zbar.transpose() * Ainv * j.grad_z)(0, 0).real();
  return (-phi) * (Ainv + up * down / (phi - dphi2));
}

}  // namespace kefam

#include "kefam/fefferman.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kefam/error.hpp"
#include "kefam/linalg.hpp"
#include "kefam/series_matrix.hpp"

namespace kefam {

Series j_series(const Series& zeta, const Coords& c) {
  const auto n = static_cast<std::size_t>(c.n());
  SeriesMatrix m(n + 1, std::vector<Series>(n + 1));
  m[0][0] = zeta;
  std::vector<Series> dz(n), dzb(n);
  for (std::size_t a = 0; a < n; ++a) {
    dz[a] = c.d_z(zeta, static_cast<int>(a));
    dzb[a] = c.d_zbar(zeta, static_cast<int>(a));
  }
  for (std::size_t b = 0; b < n; ++b) {
    m[0][b + 1] = dzb[b];
    m[b + 1][0] = dz[b];
  }
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) m[a + 1][b + 1] = c.d_z(dzb[b], static_cast<int>(a));
  Series d = determinant(m);
  return (n % 2 == 0) ? d : -d;
}

double j_functional(const ScalarField& zeta, const CPoint& p) {
  const WirtingerJet j = slice_jet(zeta, p, 2);
  const int n = j.n;
  Eigen::MatrixXcd m(n + 1, n + 1);
  m(0, 0) = j.value;
  m.block(0, 1, 1, n) = j.grad_zbar.transpose();
  m.block(1, 0, n, 1) = j.grad_z;
  m.bottomRightCorner(n, n) = j.hess_zzbar;
  const cplx d = m.determinant();
  return ((n % 2 == 0) ? d : -d).real();
}

FieldPtr j_field(const FieldPtr& zeta) {
  const auto gen = zeta->generator();
  return std::make_shared<ClosedFormField>(
      zeta->dim(), [gen](const Coords& c) { return j_series(gen(c), c); }, zeta->loss() + 2,
      zeta->predicate());
}

namespace {

// eta^l with -rho^l = eta^l rho, computed along the recursion.
Series eta_chain(const Coords& c, const ClosedFormField::Generator& gen, int n, int level) {
  const Series rho = gen(c);
  const Series j0 = j_series(-rho, c);
  if (!(j0.value().real() > 0.0))
    throw Error(ErrorKind::NonpositiveJ, "J(-rho) = " + std::to_string(j0.value().real()));
  Series eta = pow(j0, -1.0 / (n + 1));
  for (int k = 2; k <= level; ++k) {
    const Series rk = -(eta * rho);
    const Series jk = j_series(rk, c);
    eta = eta * (1.0 + (1.0 - jk) / static_cast<double>((n + 2 - k) * k));
  }
  return eta;
}

}  // namespace

ApproxDefiningSequence fefferman_sequence(int n, const FieldPtr& rho, int level, cplx s) {
  if (level < 1 || level > n + 1)
    throw Error(ErrorKind::LevelOutOfRange, "level " + std::to_string(level) + " outside [1, n+1]");
  ApproxDefiningSequence seq;
  seq.n = n;
  seq.level = level;
  seq.s = s;
  seq.rho = rho;
  const auto gen = rho->generator();
  for (int k = 1; k <= level; ++k) {
    seq.rho_l.push_back(std::make_shared<ClosedFormField>(
        n,
        [gen, n, k](const Coords& c) {
          const Series eta = eta_chain(c, gen, n, k);
          return -(eta * gen(c));
        },
        rho->loss() + 2 * k, rho->predicate()));
  }
  seq.eta = std::make_shared<ClosedFormField>(
      n, [gen, n, level](const Coords& c) { return eta_chain(c, gen, n, level); }, rho->loss() + 2 * level,
      rho->predicate());
  return seq;
}

ApproxDefiningSequence fefferman_sequence(const FamilyDefinition& F, cplx s, int level) {
  if (level < 1 || level > F.n + 1)
    throw Error(ErrorKind::LevelOutOfRange, "level " + std::to_string(level) + " outside [1, n+1]");
  const FieldPtr neg = std::make_shared<ClosedFormField>(
      F.n, [gen = F.phi->generator()](const Coords& c) { return -gen(c); }, F.phi->loss());
  const FieldPtr jneg = j_field(neg);
  auto check = [&](const CPoint& p) {
    const double j = field_value(*jneg, p).real();
    if (!(j > 0.0)) throw Error(ErrorKind::NonpositiveJ, F.name + ": J(-rho) = " + std::to_string(j));
  };
  for (const auto& p : interior_samples(F, s, 50, 11)) check(p);
  for (const auto& p : boundary_samples(F, s, 20, 11)) check(p);
  return fefferman_sequence(F.n, F.phi, level, s);
}

OrderFit fit_power_law(std::span<const double> abs_phi, std::span<const double> values, double floor) {
  if (abs_phi.size() != values.size() || abs_phi.size() < 3)
    throw Error(ErrorKind::DegenerateRay, "need at least three samples");
  const auto [mn, mx] = std::minmax_element(abs_phi.begin(), abs_phi.end());
  if (!(*mn > 0.0) || std::log10(*mx / *mn) < 2.0 - 1e-9)
    throw Error(ErrorKind::DegenerateRay, "|phi| must span at least two decades");
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::abs(values[i]);
    if (v > floor && std::isfinite(v)) {
      xs.push_back(std::log(abs_phi[i]));
      ys.push_back(std::log(v));
    }
  }
  OrderFit fit;
  fit.used = static_cast<int>(xs.size());
  if (xs.empty()) {
    fit.order = std::numeric_limits<double>::infinity();
    fit.vanishing = true;
    return fit;
  }
  if (xs.size() < 3) throw Error(ErrorKind::DegenerateRay, "fewer than three samples above the noise floor");
  const double k = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  const double den = k * sxx - sx * sx;
  fit.order = (k * sxy - sx * sy) / den;
  fit.intercept = (sy - fit.order * sx) / k;
  double rss = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double e = ys[i] - (fit.intercept + fit.order * xs[i]);
    rss += e * e;
  }
  fit.residual = std::sqrt(rss / k);
  return fit;
}

OrderFit vanishing_order_fit(const ScalarField& f, const BoundaryRay& ray, double floor) {
  std::vector<double> ax, v;
  for (std::size_t i = 0; i < ray.size(); ++i) {
    ax.push_back(std::abs(ray.phi[i]));
    v.push_back(std::abs(field_value(f, ray.points[i])));
  }
  return fit_power_law(ax, v, floor);
}

BlendMode parse_blend_mode(const std::string& s) {
  if (s == "auto") return BlendMode::Auto;
  if (s == "always") return BlendMode::Always;
  if (s == "never") return BlendMode::Never;
  throw Error(ErrorKind::ConfigInvalid, "blend must be auto, always or never");
}

double smooth_step(double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double a = std::exp(-1.0 / x), b = std::exp(-1.0 / (1.0 - x));
  return a / (a + b);
}

Series smooth_step(const Series& x) {
  const double x0 = x.value().real();
  if (x0 <= 0.0) return x * 0.0;
  if (x0 >= 1.0) return x * 0.0 + 1.0;
  const Series a = exp(-1.0 / x), b = exp(-1.0 / (1.0 - x));
  return a / (a + b);
}

FieldPtr f_from_w(const FieldPtr& w) {
  const auto gen = w->generator();
  const int n = w->dim();
  return std::make_shared<ClosedFormField>(
      n,
      [gen, n](const Coords& c) {
        const Series wv = gen(c);
        return (n + 1.0) * wv - log(determinant(slice_hessian_series(wv, c)));
      },
      w->loss() + 2, w->predicate());
}

BackgroundPair background_from_fields(int n, FieldPtr w, FieldPtr F) {
  BackgroundPair B;
  B.n = n;
  B.w = std::move(w);
  B.F = std::move(F);
  const auto gen = B.w->generator();
  B.psi = std::make_shared<ClosedFormField>(
      n, [gen](const Coords& c) { return -exp(-gen(c)); }, B.w->loss(), B.w->predicate());
  return B;
}

namespace {

FieldPtr make_w(const FamilyDefinition& F, const ApproxDefiningSequence& seq, double delta0, bool blend) {
  const auto phi_gen = F.phi->generator();
  const auto eta_gen = seq.eta->generator();
  const int loss = seq.eta->loss();
  return std::make_shared<ClosedFormField>(
      F.n,
      [phi_gen, eta_gen, delta0, blend](const Coords& c) {
        const Series phi = phi_gen(c);
        Series eta = eta_gen(c);
        if (blend) {
          const Series chi = smooth_step((phi + delta0) / (0.5 * delta0));
          eta = 1.0 + chi * (eta - 1.0);
        }
        return -log(-(eta * phi));
      },
      loss, F.phi->predicate());
}

// Minimum slice eigenvalue of w over the net, NaN when w is undefined somewhere.
double net_min_eigen(const ClosedFormField& w, const std::vector<CPoint>& net) {
  double lo = std::numeric_limits<double>::infinity();
  for (const auto& p : net) {
    WirtingerJet j;
    try {
      j = slice_jet(w, p, 2);
    } catch (const Error&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
    if (!std::isfinite(j.value.real()) || !j.hess_zzbar.allFinite()) return std::numeric_limits<double>::quiet_NaN();
    lo = std::min(lo, min_eigenvalue(j.hess_zzbar));
  }
  return lo;
}

}  // namespace

BackgroundPair background_pair(const FamilyDefinition& F, cplx s, int level, double delta0, BlendMode mode,
                               int net_points) {
  const ApproxDefiningSequence seq = fefferman_sequence(F, s, level);
  const auto net = interior_samples(F, s, net_points, 3);
  if (!(delta0 > 0.0)) {
    double sup = std::abs(F.phi_value(CPoint{F.slice_center(s), s}));
    for (const auto& p : net) sup = std::max(sup, std::abs(F.phi_value(p)));
    delta0 = 0.3 * sup;
  }
  BackgroundPair B;
  bool blend = mode == BlendMode::Always;
  FieldPtr w = make_w(F, seq, delta0, blend);
  double ev = net_min_eigen(*w, net);
  if (mode == BlendMode::Auto && !(ev > 0.0)) {
    blend = true;
    w = make_w(F, seq, delta0, true);
    ev = net_min_eigen(*w, net);
  }
  if (!(ev > 0.0))
    throw Error(ErrorKind::BlendFailed, F.name + ": slice Hessian of w not positive on the net (min eigenvalue " +
                                            std::to_string(ev) + ")");
  B = background_from_fields(F.n, w, f_from_w(w));
  B.level = level;
  B.s = s;
  B.delta0 = delta0;
  B.blended = blend;
  B.min_net_eigen = ev;
  B.f_from_w = true;
  return B;
}

}  // namespace kefam

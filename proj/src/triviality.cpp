#include "kefam/triviality.hpp"

#include <tbb/parallel_for.h>

#include <boost/numeric/odeint.hpp>
#include <cmath>
#include <limits>

#include "kefam/error.hpp"

namespace kefam {

namespace odeint = boost::numeric::odeint;

namespace {

using State = std::vector<double>;

State pack(const std::vector<cplx>& z) {
  State x;
  for (auto v : z) {
    x.push_back(v.real());
    x.push_back(v.imag());
  }
  return x;
}

std::vector<cplx> unpack(const State& x) {
  std::vector<cplx> z(x.size() / 2);
  for (std::size_t a = 0; a < z.size(); ++a) z[a] = cplx(x[2 * a], x[2 * a + 1]);
  return z;
}

std::string describe(const CPoint& p) {
  std::string s = "(";
  for (auto v : p.z) s += std::to_string(v.real()) + (v.imag() < 0 ? "" : "+") + std::to_string(v.imag()) + "i, ";
  return s + "s = " + std::to_string(p.s.real()) + (p.s.imag() < 0 ? "" : "+") + std::to_string(p.s.imag()) + "i)";
}

}  // namespace

LiftField lift_of(HSourcePtr src) {
  return [src](const CPoint& p) { return lift_coefficients(src->at(p, HSource::kMetric).M); };
}

LiftField station_lift(const FamilyDefinition& F, cplx s0, cplx target, const StationOptions& opt) {
  const double len = std::abs(target - s0);
  if (!(opt.spacing > 0.0)) throw Error(ErrorKind::InvalidArgument, "station spacing must be positive");
  const int k = std::max(1, static_cast<int>(std::ceil(len / opt.spacing - 1e-12)));
  const cplx e = len > 0.0 ? (target - s0) / len : cplx(1.0);
  const double step = len / k;
  const int level = opt.level > 0 ? opt.level : F.n + 1;
  SolveOptions so;
  so.tol = opt.tol;
  std::vector<std::shared_ptr<NumericH>> st;
  for (int i = 0; i <= k; ++i) {
    const cplx s = s0 + (i * step) * e;
    const auto B = background_pair(F, s, level);
    st.push_back(std::make_shared<NumericH>(solve_slice_stack(F, B, s, opt.resolution, opt.delta, so)));
    if (len == 0.0) break;
  }
  return [st, s0, e, step](const CPoint& p) {
    auto at = [&](std::size_t i) {
      CPoint q{p.z, st[i]->stack().s};
      return lift_coefficients(st[i]->at(q).M);
    };
    if (st.size() == 1) return at(0);
    const double t = std::clamp(std::real((p.s - s0) * std::conj(e)), 0.0, step * (st.size() - 1));
    const auto i = std::min(st.size() - 2, static_cast<std::size_t>(t / step));
    const double th = t / step - static_cast<double>(i);
    if (th == 0.0) return at(i);
    return Eigen::VectorXcd((1.0 - th) * at(i) + th * at(i + 1));
  };
}

FlowPath integrate_flow(const FamilyDefinition& F, const LiftField& lift, const CPoint& p, cplx target,
                        const FlowOptions& opt) {
  if (p.dim() != F.n) throw Error(ErrorKind::InvalidArgument, "start point dimension mismatch");
  if (!(opt.tol > 0.0) || opt.samples < 1) throw Error(ErrorKind::InvalidArgument, "flow options out of range");
  FlowPath path;
  path.start = p;
  path.target = target;
  const cplx s0 = p.s;
  const double T = std::abs(target - s0);
  const double phi0 = F.phi_value(p);
  if (!(phi0 < 0.0)) throw Error(ErrorKind::LeftDomain, "flow start " + describe(p) + " is not interior");
  if (T == 0.0) {
    path.t = {0.0};
    path.points = {p};
    path.phi = {phi0};
    return path;
  }
  const cplx e = (target - s0) / T;
  auto point_at = [&](const State& x, double t) {
    // Land exactly on the target at the end of the segment.
    return CPoint{unpack(x), t == T ? target : s0 + t * e};
  };
  auto rhs = [&](const State& x, State& dx, double t) {
    const CPoint q = point_at(x, t);
    if (!(F.phi_value(q) < 0.0))
      throw Error(ErrorKind::LeftDomain, "trajectory reached the boundary at t = " + std::to_string(t) + ", " +
                                             describe(q));
    const Eigen::VectorXcd L = lift(q);
    dx.resize(x.size());
    for (int a = 0; a < F.n; ++a) {
      const cplx v = -e * L(a);
      dx[2 * a] = v.real();
      dx[2 * a + 1] = v.imag();
    }
  };
  std::vector<double> times;
  for (int k = 0; k <= opt.samples; ++k) times.push_back(k == opt.samples ? T : T * k / opt.samples);
  State x = pack(p.z);
  auto observe = [&](const State& xs, double t) {
    const CPoint q = point_at(xs, t);
    const double f = F.phi_value(q);
    if (!(f < 0.0))
      throw Error(ErrorKind::LeftDomain, "trajectory left the domain at t = " + std::to_string(t) + ", " + describe(q));
    path.t.push_back(t);
    path.points.push_back(q);
    path.phi.push_back(f);
  };
  auto stepper = odeint::make_dense_output(opt.tol, opt.tol, odeint::runge_kutta_dopri5<State>());
  odeint::integrate_times(stepper, rhs, x, times.begin(), times.end(), T / opt.samples, observe);
  return path;
}

EnvelopeVerdict envelope_check(const FlowPath& path, double c) {
  if (path.phi.size() < 10 || path.t.size() != path.phi.size())
    throw Error(ErrorKind::InvalidArgument, "envelope check needs at least ten samples");
  const double f0 = path.phi.front();
  if (!(f0 < 0.0)) throw Error(ErrorKind::InvalidArgument, "envelope check needs f(0) < 0");
  EnvelopeVerdict v;
  v.holds = true;
  for (std::size_t k = 0; k < path.phi.size(); ++k) {
    const double t = path.t[k];
    if (!(t > 0.0)) continue;
    const double q = std::abs(path.phi[k] / f0);
    const double lg = q > 0.0 ? std::abs(std::log(q)) : std::numeric_limits<double>::infinity();
    v.min_c = std::max(v.min_c, lg / t);
    if (!(std::exp(-c * t) < q && q < std::exp(c * t))) v.holds = false;
  }
  return v;
}

TrivializationReport trivialization_residual(const FamilyDefinition& F, const LiftField& lift,
                                             const std::vector<CPoint>& starts, const std::vector<cplx>& base,
                                             double h, const FlowOptions& opt) {
  if (!(h > 0.0)) throw Error(ErrorKind::InvalidArgument, "difference step must be positive");
  TrivializationReport rep;
  const std::size_t nb = base.size();
  rep.per_pair.assign(starts.size() * nb, 0.0);
  const cplx I{0.0, 1.0};
  tbb::parallel_for(std::size_t{0}, starts.size() * nb, [&](std::size_t idx) {
    const CPoint& p = starts[idx / nb];
    const cplx s = base[idx % nb];
    auto phi_end = [&](cplx t) { return integrate_flow(F, lift, p, t, opt).end().z; };
    auto d4 = [&](cplx dir) {
      const auto a = phi_end(s + h * dir), b = phi_end(s - h * dir);
      const auto a2 = phi_end(s + 2.0 * h * dir), b2 = phi_end(s - 2.0 * h * dir);
      std::vector<cplx> d(a.size());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = (8.0 * (a[i] - b[i]) - (a2[i] - b2[i])) / (12.0 * h);
      return d;
    };
    const auto ds = d4(1.0), dt = d4(I);
    double m = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) m += std::norm(0.5 * (ds[i] + I * dt[i]));
    rep.per_pair[idx] = std::sqrt(m);
  });
  for (std::size_t idx = 0; idx < rep.per_pair.size(); ++idx)
    if (rep.per_pair[idx] >= rep.defect) {
      rep.defect = rep.per_pair[idx];
      rep.worst_start = starts[idx / nb];
      rep.worst_base = base[idx % nb];
    }
  return rep;
}

}  // namespace kefam

#include "kefam/ma_solver.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <limits>
#include <map>
#include <spdlog/spdlog.h>
#include <tbb/parallel_for.h>

#include "kefam/error.hpp"
#include "kefam/linalg.hpp"

namespace kefam {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
using SpMat = Eigen::SparseMatrix<double>;

// Union of the fourth-order u_{a bbar} stencils, with per-entry weights.
struct MixedOperator {
  int n = 1;
  std::vector<std::array<int, kMaxAxes>> offset;
  std::vector<std::ptrdiff_t> delta;
  std::vector<std::vector<cplx>> weight;  // [tap][a * n + b]

  explicit MixedOperator(const Lattice& L) : n(L.dim()) {
    std::map<std::array<int, kMaxAxes>, std::vector<cplx>> acc;
    const std::vector<AxisRule> rules(static_cast<std::size_t>(L.axes()), AxisRule::Central4);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b)
        for (const auto& tap : wirtinger_mixed(L, a, b, rules).taps) {
          auto& w = acc[tap.offset];
          w.resize(static_cast<std::size_t>(n * n));
          w[static_cast<std::size_t>(a * n + b)] += tap.weight;
        }
    for (auto& [off, w] : acc) {
      std::ptrdiff_t d = 0;
      for (int k = 0; k < L.axes(); ++k)
        d += off[static_cast<std::size_t>(k)] * static_cast<std::ptrdiff_t>(L.stride(k));
      offset.push_back(off);
      delta.push_back(d);
      weight.push_back(std::move(w));
    }
  }

  template <class V>
  Eigen::MatrixXcd hessian(const V& values, std::size_t node) const {
    Eigen::MatrixXcd H = Eigen::MatrixXcd::Zero(n, n);
    for (std::size_t t = 0; t < delta.size(); ++t) {
      const auto v = values[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(node) + delta[t])];
      const auto& w = weight[t];
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) H(a, b) += w[static_cast<std::size_t>(a * n + b)] * v;
    }
    return H;
  }

  // Real coefficient of tap t in h^{b a} u_{a bbar}.
  double laplacian_weight(const Eigen::MatrixXcd& hinv, std::size_t t) const {
    cplx c{};
    const auto& w = weight[t];
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) c += hinv(b, a) * w[static_cast<std::size_t>(a * n + b)];
    return c.real();
  }
};

const MixedOperator& mixed_operator(const SliceGrid& G) {
  // One operator per lattice shape; grids are immutable so caching by spacing is safe.
  thread_local std::map<std::vector<double>, std::shared_ptr<MixedOperator>> cache;
  std::vector<double> key;
  for (int k = 0; k < G.lattice.axes(); ++k) {
    key.push_back(G.lattice.spacing(k));
    key.push_back(static_cast<double>(G.lattice.stride(k)));
  }
  auto& slot = cache[key];
  if (!slot) slot = std::make_shared<MixedOperator>(G.lattice);
  return *slot;
}

struct HermitianFactor {
  bool ok = false;
  double logdet = kNaN;
  Eigen::MatrixXcd inv;
};

HermitianFactor factor(const Eigen::MatrixXcd& H, bool want_inverse) {
  HermitianFactor f;
  Eigen::LLT<Eigen::MatrixXcd> llt(hermitian_part(H));
  if (llt.info() != Eigen::Success) return f;
  double ld = 0.0;
  for (Eigen::Index i = 0; i < H.rows(); ++i) {
    const double d = llt.matrixL()(i, i).real();
    if (!(d > 0.0)) return f;
    ld += 2.0 * std::log(d);
  }
  f.ok = std::isfinite(ld);
  f.logdet = ld;
  if (want_inverse) f.inv = llt.solve(Eigen::MatrixXcd::Identity(H.rows(), H.cols()));
  return f;
}

double sup_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

Eigen::VectorXd solve_linear(const SpMat& A, const Eigen::VectorXd& b, double tol) {
  if (b.size() == 0) return b;
  const double bn = b.norm();
  if (bn == 0.0) return Eigen::VectorXd::Zero(b.size());
  Eigen::BiCGSTAB<SpMat, Eigen::DiagonalPreconditioner<double>> it;
  it.setTolerance(tol);
  it.setMaxIterations(std::max<Eigen::Index>(1000, 4 * b.size()));
  it.compute(A);
  if (it.info() == Eigen::Success) {
    Eigen::VectorXd x = it.solve(b);
    if (it.info() == Eigen::Success && (A * x - b).norm() <= 10.0 * tol * bn) return x;
  }
  spdlog::debug("BiCGSTAB did not reach {:.1e}; falling back to sparse LU", tol);
  Eigen::SparseLU<SpMat> lu;
  lu.compute(A);
  if (lu.info() != Eigen::Success) throw Error(ErrorKind::LinearSolveFailed, "sparse LU factorisation failed");
  Eigen::VectorXd x = lu.solve(b);
  if (lu.info() != Eigen::Success || !x.allFinite())
    throw Error(ErrorKind::LinearSolveFailed, "sparse LU solve failed");
  return x;
}

// State of the nonlinear residual at one iterate.
struct Evaluation {
  bool positive = true;
  std::vector<double> r;
  std::vector<Eigen::MatrixXcd> hinv;
};

Evaluation evaluate(const SliceGrid& G, const NodeBackground& bg, const MixedOperator& op,
                    const std::vector<double>& u, bool want_inverse) {
  const std::size_t m = G.interior.size();
  Evaluation e;
  e.r.assign(m, 0.0);
  if (want_inverse) e.hinv.resize(m);
  std::vector<char> ok(m, 1);
  const double k = G.n + 1.0;
  tbb::parallel_for(std::size_t{0}, m, [&](std::size_t i) {
    const std::size_t node = G.interior[i];
    const auto f = factor(bg.w_hess[i] + op.hessian(u, node), want_inverse);
    if (!f.ok) {
      ok[i] = 0;
      return;
    }
    e.r[i] = f.logdet - bg.logdet_w[i] - k * u[node] - bg.F[i];
    if (want_inverse) e.hinv[i] = f.inv;
  });
  e.positive = std::all_of(ok.begin(), ok.end(), [](char c) { return c != 0; });
  return e;
}

// Matrix of h^{b a} d_a d_bbar - (n+1) on interior unknowns, plus the band
// couplings (slot, node, weight) that move to the right-hand side.
struct Assembly {
  SpMat A;
  std::vector<std::tuple<std::size_t, std::size_t, double>> band;
};

Assembly assemble(const SliceGrid& G, const MixedOperator& op, const std::vector<Eigen::MatrixXcd>& hinv) {
  const std::size_t m = G.interior.size();
  std::vector<std::vector<Eigen::Triplet<double>>> rows(m);
  std::vector<std::vector<std::tuple<std::size_t, std::size_t, double>>> band(m);
  tbb::parallel_for(std::size_t{0}, m, [&](std::size_t i) {
    const std::size_t node = G.interior[i];
    auto& row = rows[i];
    row.emplace_back(static_cast<int>(i), static_cast<int>(i), -(G.n + 1.0));
    for (std::size_t t = 0; t < op.delta.size(); ++t) {
      const double c = op.laplacian_weight(hinv[i], t);
      if (c == 0.0) continue;
      const auto j = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(node) + op.delta[t]);
      const auto sj = G.slot[j];
      if (sj >= 0)
        row.emplace_back(static_cast<int>(i), static_cast<int>(sj), c);
      else
        band[i].emplace_back(i, j, c);
    }
  });
  Assembly out;
  std::vector<Eigen::Triplet<double>> all;
  for (auto& r : rows) all.insert(all.end(), r.begin(), r.end());
  for (auto& b : band) out.band.insert(out.band.end(), b.begin(), b.end());
  out.A.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  out.A.setFromTriplets(all.begin(), all.end());
  return out;
}

std::vector<double> pinch_bounds(const SliceGrid& G, const NodeBackground& bg, const MixedOperator& op,
                                 const std::vector<double>& u) {
  std::vector<double> c(G.interior.size(), 1.0);
  tbb::parallel_for(std::size_t{0}, G.interior.size(), [&](std::size_t i) {
    const Eigen::MatrixXcd H = bg.w_hess[i] + op.hessian(u, G.interior[i]);
    const auto pb = relative_spectrum(H, bg.w_hess[i]);
    c[i] = std::max(pb.hi, 1.0 / pb.lo);
  });
  return c;
}

// Slice expansion of w with the derived background data at a point.
struct PointBackground {
  bool ok = false;
  Eigen::MatrixXcd hess;
  double w = kNaN, logdet = kNaN, F = kNaN;
};

PointBackground point_background(const BackgroundPair& B, const CPoint& p) {
  PointBackground pb;
  const WirtingerJet j = slice_jet(*B.w, p, 2);
  pb.hess = j.hess_zzbar;
  pb.w = j.value.real();
  const auto f = factor(j.hess_zzbar, false);
  pb.logdet = f.logdet;
  const double imag_tol = 1e-12 * (1.0 + std::abs(j.value));
  if (!f.ok || std::abs(j.value.imag()) > imag_tol || !std::isfinite(pb.w)) return pb;
  if (B.f_from_w) {
    pb.F = (B.n + 1.0) * pb.w - pb.logdet;
  } else {
    const cplx F = field_value(*B.F, p);
    if (std::abs(F.imag()) > 1e-12 * (1.0 + std::abs(F))) return pb;
    pb.F = F.real();
  }
  pb.ok = std::isfinite(pb.F);
  return pb;
}

double band_value(const BackgroundPair& B, const SliceGrid& G, std::size_t node) {
  try {
    if (!B.f_from_w) {
      const cplx F = field_value(*B.F, G.point(node));
      if (std::isfinite(F.real()) && std::abs(F.imag()) <= 1e-12 * (1.0 + std::abs(F)))
        return -F.real() / (G.n + 1.0);
      return 0.0;
    }
    // F = (n+1)w - log det w cancels catastrophically where phi is within roundoff of 0.
    if (!(G.phi[node] < -1e-6)) return 0.0;
    const auto pb = point_background(B, G.point(node));
    return pb.ok ? -pb.F / (G.n + 1.0) : 0.0;
  } catch (const Error&) {
    return 0.0;
  }
}

}  // namespace

int min_resolution(int n) { return n == 1 ? 17 : (n == 2 ? 13 : 9); }

std::vector<char> SliceGrid::interior_mask() const {
  std::vector<char> m(size(), 0);
  for (auto i : interior) m[i] = 1;
  return m;
}

std::vector<char> SliceGrid::support_mask() const {
  std::vector<char> m(size(), 0);
  for (std::size_t i = 0; i < size(); ++i) m[i] = cls[i] != NodeClass::Exterior;
  return m;
}

bool SliceGrid::same_footprint(const SliceGrid& o) const {
  return lattice.same_layout(o.lattice) && interior == o.interior;
}

GridPtr build_slice_grid(const FamilyDefinition& F, cplx s, int resolution, double eps_cut,
                         const std::vector<cplx>& footprint) {
  const int n = F.n;
  if (resolution < min_resolution(n))
    throw Error(ErrorKind::InvalidArgument,
                fmt::format("resolution {} below the minimum {} for n = {}", resolution, min_resolution(n), n));
  Box box = F.slice_box(s);
  for (cplx t : footprint) {
    const Box b = F.slice_box(t);
    for (std::size_t k = 0; k < box.lo.size(); ++k) {
      box.lo[k] = std::min(box.lo[k], b.lo[k]);
      box.hi[k] = std::max(box.hi[k], b.hi[k]);
    }
  }
  const auto axes = static_cast<std::size_t>(2 * n);
  std::vector<double> lo(axes), h(axes);
  std::vector<int> counts(axes, resolution + 4);
  double hmax = 0.0;
  for (std::size_t k = 0; k < axes; ++k) {
    h[k] = (box.hi[k] - box.lo[k]) / (resolution - 1);
    if (!(h[k] > 0.0)) throw Error(ErrorKind::InvalidArgument, "degenerate slice box");
    lo[k] = box.lo[k] - 2.0 * h[k];
    hmax = std::max(hmax, h[k]);
  }
  auto G = std::make_shared<SliceGrid>();
  G->n = n;
  G->s = s;
  G->resolution = resolution;
  G->eps_cut = eps_cut > 0.0 ? eps_cut : 2.0 * hmax;
  G->box = box;
  G->lattice = Lattice(n, lo, h, counts);
  const std::size_t N = G->lattice.size();
  G->cls.assign(N, NodeClass::Exterior);
  G->phi.assign(N, 0.0);
  G->slot.assign(N, -1);

  std::vector<char> inside(N, 0);
  tbb::parallel_for(std::size_t{0}, N, [&](std::size_t i) {
    auto z = G->lattice.position(i);
    const double p0 = F.phi_value(CPoint{z, s});
    G->phi[i] = p0;
    bool in = p0 < -G->eps_cut;
    for (cplx t : footprint)
      if (in) in = F.phi_value(CPoint{z, t}) < -G->eps_cut;
    inside[i] = in;
  });
  for (std::size_t i = 0; i < N; ++i)
    if (inside[i]) {
      G->slot[i] = static_cast<std::int64_t>(G->interior.size());
      G->interior.push_back(i);
      G->cls[i] = NodeClass::Interior;
    }
  if (G->interior.empty())
    throw Error(ErrorKind::EmptyInterior, fmt::format("{}: no interior nodes at resolution {}", F.name, resolution));

  const MixedOperator& op = mixed_operator(*G);
  for (auto i : G->interior)
    for (const auto& off : op.offset) {
      auto j = G->lattice.shifted(i, off);
      if (!j) throw Error(ErrorKind::StencilOutOfDomain, "interior stencil leaves the lattice");
      if (G->cls[*j] == NodeClass::Exterior) {
        G->cls[*j] = NodeClass::Band;
        ++G->band_count;
      }
    }
  return G;
}

NodeBackground sample_background(const SliceGrid& G, const BackgroundPair& B) {
  NodeBackground bg;
  const std::size_t m = G.interior.size();
  bg.w_hess.resize(m);
  bg.w.assign(m, kNaN);
  bg.logdet_w.assign(m, kNaN);
  bg.F.assign(m, kNaN);
  bg.boundary.assign(G.size(), 0.0);
  tbb::parallel_for(std::size_t{0}, m, [&](std::size_t i) {
    const auto p = G.point(G.interior[i]);
    const auto pb = point_background(B, p);
    if (!pb.ok)
      throw Error(ErrorKind::PositivityLost,
                  fmt::format("background w is not strictly psh (or F undefined) at interior node {}", G.interior[i]));
    bg.w_hess[i] = pb.hess;
    bg.w[i] = pb.w;
    bg.logdet_w[i] = pb.logdet;
    bg.F[i] = pb.F;
  });
  std::vector<std::size_t> band;
  for (std::size_t i = 0; i < G.size(); ++i)
    if (G.cls[i] == NodeClass::Band) band.push_back(i);
  tbb::parallel_for(std::size_t{0}, band.size(), [&](std::size_t k) {
    bg.boundary[band[k]] = band_value(B, G, band[k]);
  });
  return bg;
}

MASolution solve_slice(const GridPtr& G, const BackgroundPair& B, double tol) {
  SolveOptions opt;
  opt.tol = tol;
  return solve_slice(G, B, opt);
}

MASolution solve_slice(const GridPtr& Gp, const BackgroundPair& B, const SolveOptions& opt) {
  const SliceGrid& G = *Gp;
  if (B.n != G.n) throw Error(ErrorKind::InvalidArgument, "background and grid dimensions differ");
  const MixedOperator& op = mixed_operator(G);
  MASolution U;
  U.grid = Gp;
  U.background = sample_background(G, B);
  const auto& bg = U.background;
  // Start from the same closure as the band, u = -F/(n+1); fall back to 0.
  U.u = bg.boundary;
  for (std::size_t i = 0; i < G.interior.size(); ++i) U.u[G.interior[i]] = -bg.F[i] / (G.n + 1.0);
  Evaluation e;
  bool warm = false;
  if (opt.initial_guess.size() == G.size()) {
    std::vector<double> guess = U.u;
    for (auto node : G.interior) guess[node] = opt.initial_guess[node];
    e = evaluate(G, bg, op, guess, true);
    if ((warm = e.positive)) U.u = std::move(guess);
  }
  if (!warm) e = evaluate(G, bg, op, U.u, true);
  if (!e.positive) {
    for (auto node : G.interior) U.u[node] = 0.0;
    e = evaluate(G, bg, op, U.u, true);
  }
  if (!e.positive) throw Error(ErrorKind::PositivityLost, "initial state is not positive");
  double sup = sup_abs(e.r);
  U.trace.push_back(sup);
  while (!(sup <= opt.tol)) {
    if (U.iterations >= opt.max_iterations) {
      if (!opt.throw_on_failure) break;
      throw Error(ErrorKind::NoConvergence,
                  fmt::format("sup|r| = {:.3e} after {} Newton iterations", sup, U.iterations));
    }
    const Assembly A = assemble(G, op, e.hinv);
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(e.r.size()));
    for (std::size_t i = 0; i < e.r.size(); ++i) rhs(static_cast<Eigen::Index>(i)) = -e.r[i];
    const Eigen::VectorXd delta = solve_linear(A.A, rhs, opt.linear_tol);

    double t = 1.0;
    bool accepted = false, any_positive = false;
    for (int k = 0; k <= opt.max_halvings; ++k, t *= 0.5) {
      std::vector<double> trial = U.u;
      for (std::size_t i = 0; i < G.interior.size(); ++i)
        trial[G.interior[i]] += t * delta(static_cast<Eigen::Index>(i));
      Evaluation et = evaluate(G, bg, op, trial, true);
      if (!et.positive) continue;
      any_positive = true;
      const double st = sup_abs(et.r);
      if (st <= (1.0 - 1e-4 * t) * sup) {
        U.u = std::move(trial);
        e = std::move(et);
        sup = st;
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      if (!any_positive)
        throw Error(ErrorKind::PositivityLost,
                    fmt::format("w + u lost positivity after {} step halvings (iteration {})", opt.max_halvings,
                                U.iterations + 1));
      if (!opt.throw_on_failure) break;
      throw Error(ErrorKind::NoConvergence,
                  fmt::format("line search stalled at sup|r| = {:.3e} (iteration {})", sup, U.iterations + 1));
    }
    ++U.iterations;
    U.trace.push_back(sup);
    spdlog::debug("newton {}: sup|r| = {:.3e} step {}", U.iterations, sup, t);
  }
  U.converged = sup <= opt.tol;
  const auto c = pinch_bounds(G, bg, op, U.u);
  U.pinch = c.empty() ? 1.0 : *std::max_element(c.begin(), c.end());
  return U;
}

Eigen::MatrixXcd u_hessian(const MASolution& U, std::size_t node) {
  if (U.grid->slot[node] < 0) throw Error(ErrorKind::StencilOutOfDomain, "u Hessian requested off the interior");
  return mixed_operator(*U.grid).hessian(U.u, node);
}

double ma_residual(const MASolution& U) {
  const auto e = evaluate(*U.grid, U.background, mixed_operator(*U.grid), U.u, false);
  if (!e.positive) return std::numeric_limits<double>::infinity();
  return sup_abs(e.r);
}

KEMetric ke_metric_field(const BackgroundPair& B, const MASolution& U) {
  (void)B;
  const SliceGrid& G = *U.grid;
  const MixedOperator& op = mixed_operator(G);
  const std::size_t m = G.interior.size();
  KEMetric K;
  K.grid = U.grid;
  K.h.resize(m);
  K.h_inv.resize(m);
  K.logdet.assign(m, kNaN);
  std::vector<double> res(m, 0.0);
  std::vector<char> bad(m, 0);
  tbb::parallel_for(std::size_t{0}, m, [&](std::size_t i) {
    K.h[i] = U.background.w_hess[i] + op.hessian(U.u, G.interior[i]);
    const auto f = factor(K.h[i], true);
    if (!f.ok) {
      bad[i] = 1;
      return;
    }
    K.h_inv[i] = f.inv;
    K.logdet[i] = f.logdet;
    res[i] = (K.h[i] * f.inv - Eigen::MatrixXcd::Identity(G.n, G.n)).norm();
    if (!(res[i] <= 1e-10)) bad[i] = 1;
  });
  std::string nodes;
  int count = 0;
  for (std::size_t i = 0; i < m; ++i)
    if (bad[i] && ++count <= 8) nodes += fmt::format(" {}", G.interior[i]);
  if (count > 0) throw Error(ErrorKind::SingularMetric, fmt::format("{} singular nodes:{}", count, nodes));
  K.max_inverse_residual = res.empty() ? 0.0 : *std::max_element(res.begin(), res.end());
  return K;
}

std::vector<double> einstein_residual(const KEMetric& K) {
  const SliceGrid& G = *K.grid;
  const MixedOperator& op = mixed_operator(G);
  std::vector<double> logdet(G.size(), kNaN), out(G.size(), kNaN);
  for (std::size_t i = 0; i < G.interior.size(); ++i) logdet[G.interior[i]] = K.logdet[i];
  tbb::parallel_for(std::size_t{0}, G.interior.size(), [&](std::size_t i) {
    const std::size_t node = G.interior[i];
    for (auto d : op.delta)
      if (G.slot[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(node) + d)] < 0) return;
    const Eigen::MatrixXcd ric = -op.hessian(logdet, node);
    out[node] = ((G.n + 1.0) * K.h[i] + ric).norm() / K.h[i].norm();
  });
  return out;
}

UsSolution solve_us(const BackgroundPair& B, const MASolution& U, double tol) {
  const SliceGrid& G = *U.grid;
  const MixedOperator& op = mixed_operator(G);
  const KEMetric K = ke_metric_field(B, U);
  const std::size_t m = G.interior.size();
  const int n = G.n;
  const VarLayout layout{n, true};

  // (w_s)_{a bbar} and F_s from full-layout expansions.
  auto s_data = [&](const CPoint& p, Eigen::MatrixXcd& W, Eigen::MatrixXcd& Ws, cplx& Fs) {
    const Series S = B.w->expand(p, 3, true);
    std::vector<int> e(static_cast<std::size_t>(layout.nvars()), 0);
    auto d = [&](std::initializer_list<int> vars) {
      std::fill(e.begin(), e.end(), 0);
      for (int v : vars) ++e[static_cast<std::size_t>(v)];
      return S.derivative_at(e);
    };
    W.resize(n, n);
    Ws.resize(n, n);
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) {
        W(a, b) = d({layout.z(a), layout.zbar(b)});
        Ws(a, b) = d({layout.s(), layout.z(a), layout.zbar(b)});
      }
    if (B.f_from_w) {
      Fs = (n + 1.0) * d({layout.s()}) - (W.inverse() * Ws).trace();
    } else {
      Fs = B.F->jet(p, 1).grad_s;
    }
  };

  UsSolution out;
  out.grid = U.grid;
  out.us.assign(G.size(), cplx{});
  out.Q.assign(G.size(), cplx{});
  tbb::parallel_for(std::size_t{0}, m, [&](std::size_t i) {
    Eigen::MatrixXcd W, Ws;
    cplx Fs;
    s_data(G.point(G.interior[i]), W, Ws, Fs);
    out.Q[G.interior[i]] = -Fs + (K.h_inv[i] * Ws).trace() - (W.inverse() * Ws).trace();
  });
  // Band data: d/ds of -F/(n+1) where u's band data is nonzero.
  std::vector<std::size_t> band;
  for (std::size_t i = 0; i < G.size(); ++i)
    if (G.cls[i] == NodeClass::Band && U.background.boundary[i] != 0.0) band.push_back(i);
  tbb::parallel_for(std::size_t{0}, band.size(), [&](std::size_t k) {
    try {
      Eigen::MatrixXcd W, Ws;
      cplx Fs;
      s_data(G.point(band[k]), W, Ws, Fs);
      if (std::isfinite(Fs.real()) && std::isfinite(Fs.imag())) out.us[band[k]] = -Fs / (n + 1.0);
    } catch (const Error&) {
    }
  });

  const Assembly A = assemble(G, op, K.h_inv);
  Eigen::VectorXd br(static_cast<Eigen::Index>(m)), bi(static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < m; ++i) {
    br(static_cast<Eigen::Index>(i)) = -out.Q[G.interior[i]].real();
    bi(static_cast<Eigen::Index>(i)) = -out.Q[G.interior[i]].imag();
  }
  for (const auto& [i, j, c] : A.band) {
    br(static_cast<Eigen::Index>(i)) -= c * out.us[j].real();
    bi(static_cast<Eigen::Index>(i)) -= c * out.us[j].imag();
  }
  const Eigen::VectorXd xr = solve_linear(A.A, br, std::min(tol, 1e-12));
  const Eigen::VectorXd xi = solve_linear(A.A, bi, std::min(tol, 1e-12));
  const double bn = std::sqrt(br.squaredNorm() + bi.squaredNorm());
  const double rn = std::sqrt((A.A * xr - br).squaredNorm() + (A.A * xi - bi).squaredNorm());
  out.residual = bn > 0.0 ? rn / bn : rn;
  if (!(out.residual <= tol))
    throw Error(ErrorKind::LinearSolveFailed, fmt::format("u_s residual {:.3e} above {:.1e}", out.residual, tol));
  for (std::size_t i = 0; i < m; ++i)
    out.us[G.interior[i]] = {xr(static_cast<Eigen::Index>(i)), xi(static_cast<Eigen::Index>(i))};
  return out;
}

DecayFit boundary_decay_fit(const SliceGrid& G, std::span<const cplx> values, const BoundaryRay& ray,
                            double phi_max, double floor) {
  if (values.size() != G.size()) throw Error(ErrorKind::InvalidArgument, "field does not match the grid");
  const auto mask = G.interior_mask();
  std::vector<double> x, y;
  DecayFit fit;
  for (std::size_t k = 0; k < ray.size(); ++k) {
    const double a = -ray.phi[k];
    if (a > phi_max) continue;
    const auto v = interpolate_cubic(G.lattice, ray.points[k].z, values, mask);
    if (!v) break;
    if (std::abs(*v) < floor) continue;
    x.push_back(std::log(a));
    y.push_back(std::log(std::abs(*v)));
    fit.max_abs_phi = std::max(fit.max_abs_phi, a);
    fit.min_abs_phi = fit.used == 0 ? a : std::min(fit.min_abs_phi, a);
    ++fit.used;
  }
  if (fit.used < 3)
    throw Error(ErrorKind::DegenerateRay,
                fmt::format("{} samples with |phi| <= {} inside the interior (resolution {})", fit.used, phi_max,
                            G.resolution));
  const double m = fit.used;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int k = 0; k < fit.used; ++k) {
    sx += x[k];
    sy += y[k];
    sxx += x[k] * x[k];
    sxy += x[k] * y[k];
  }
  const double den = m * sxx - sx * sx;
  if (!(den > 0.0)) throw Error(ErrorKind::DegenerateRay, "ray samples share one |phi|");
  fit.order = (m * sxy - sx * sy) / den;
  const double b = (sy - fit.order * sx) / m;
  double ss = 0.0;
  for (int k = 0; k < fit.used; ++k) ss += std::pow(y[k] - b - fit.order * x[k], 2);
  fit.rms = std::sqrt(ss / m);
  return fit;
}

FamilyDefinition sublevel_family(const FamilyDefinition& F, double N) {
  FamilyDefinition S = F;
  const double shift = std::exp(-N);
  S.name = fmt::format("{}[psi<{}]", F.name, N);
  S.phi = std::make_shared<ClosedFormField>(
      F.n, [gen = F.phi->generator(), shift](const Coords& c) { return gen(c) + shift; }, F.phi->loss(),
      F.phi->predicate());
  S.oracle_h.reset();
  S.oracle_transport = nullptr;
  S.params["sublevel"] = N;
  return S;
}

ExhaustionResult exhaustion_run(const FamilyDefinition& F, const std::vector<double>& levels, cplx s,
                                int resolution, int fefferman_level, const SolveOptions& opt) {
  ExhaustionResult R;
  std::vector<double> sorted = levels;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    try {
      const FamilyDefinition S = sublevel_family(F, sorted[k]);
      const auto G = build_slice_grid(S, s, resolution);
      const BackgroundPair B = background_pair(S, s, fefferman_level);
      ExhaustionLevel L;
      L.N = sorted[k];
      L.solution = solve_slice(G, B, opt);
      const KEMetric K = ke_metric_field(B, L.solution);
      L.logdet.assign(G->size(), kNaN);
      for (std::size_t i = 0; i < G->interior.size(); ++i) L.logdet[G->interior[i]] = K.logdet[i];
      const auto center = F.slice_center(s);
      if (auto node = G->lattice.node_at(center); node && G->slot[*node] >= 0) {
        L.center_logdet = L.logdet[*node];
      } else {
        std::vector<cplx> vals(L.logdet.begin(), L.logdet.end());
        const auto v = interpolate_cubic(G->lattice, center, vals, G->interior_mask());
        L.center_logdet = v ? v->real() : kNaN;
      }
      R.levels.push_back(std::move(L));
    } catch (const Error& e) {
      throw Error(e.kind(), fmt::format("exhaustion level {} (N = {}): {}", k, sorted[k], e.what()));
    }
  }
  if (R.levels.empty()) return R;
  const auto& first = *R.levels.front().solution.grid;
  for (auto node : first.interior) {
    bool all = true;
    for (const auto& L : R.levels) all = all && L.solution.grid->slot[node] >= 0;
    if (all) R.common.push_back(node);
  }
  R.min_margin = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k + 1 < R.levels.size(); ++k)
    for (auto node : R.common)
      R.min_margin = std::min(R.min_margin, R.levels[k].logdet[node] - R.levels[k + 1].logdet[node]);
  return R;
}

}  // namespace kefam

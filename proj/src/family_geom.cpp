#include "kefam/family_geom.hpp"

#include <tbb/parallel_for.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "kefam/error.hpp"
#include "kefam/linalg.hpp"
#include "kefam/series_matrix.hpp"

namespace kefam {

namespace {

constexpr cplx I{0.0, 1.0};
// Levi margins below this are roundoff of a degenerate direction.
constexpr double kMarginFloor = 1e-10;

Eigen::MatrixXcd slice_inverse(const Eigen::MatrixXcd& S) {
  Eigen::FullPivLU<Eigen::MatrixXcd> lu(S);
  lu.setThreshold(1e-14);
  if (!lu.isInvertible()) throw Error(ErrorKind::SingularSliceBlock, "slice block is singular");
  return lu.inverse();
}

void check_square(const Eigen::MatrixXcd& M) {
  if (M.rows() != M.cols() || M.rows() < 2)
    throw Error(ErrorKind::InvalidArgument, "form matrix must be (n+1)x(n+1) with n >= 1");
}

// Lift row and curvature from the full matrix with a known slice inverse.
struct LiftData {
  Eigen::MatrixXcd T;  // slice inverse
  Eigen::VectorXcd L;
  double c = 0.0;
};

LiftData lift_data(const Eigen::MatrixXcd& M) {
  check_square(M);
  const Eigen::Index n = M.rows() - 1;
  LiftData d;
  d.T = slice_inverse(M.topLeftCorner(n, n));
  d.L = (M.block(n, 0, 1, n) * d.T).transpose();
  d.c = (M(n, n) - (M.block(n, 0, 1, n) * d.T * M.block(0, n, n, 1))(0, 0)).real();
  return d;
}

double laplacian_of(const Eigen::MatrixXcd& T, const Eigen::MatrixXcd& hess) {
  cplx acc{};
  for (Eigen::Index a = 0; a < T.rows(); ++a)
    for (Eigen::Index b = 0; b < T.rows(); ++b) acc += T(b, a) * hess(a, b);
  return acc.real();
}

}  // namespace

Eigen::VectorXcd lift_coefficients(const Eigen::MatrixXcd& M) { return lift_data(M).L; }

Eigen::VectorXcd horizontal_lift(const Eigen::MatrixXcd& M) {
  const Eigen::VectorXcd L = lift_coefficients(M);
  Eigen::VectorXcd v(L.size() + 1);
  v.head(L.size()) = -L;
  v(L.size()) = 1.0;
  return v;
}

Eigen::VectorXcd horizontal_lift(const FormField& T, const CPoint& p) { return horizontal_lift(T.matrix(p)); }

cplx form_inner(const Eigen::MatrixXcd& M, const Eigen::VectorXcd& v, const Eigen::VectorXcd& w) {
  return (v.transpose() * M * w.conjugate())(0, 0);
}

double geodesic_curvature(const Eigen::MatrixXcd& M) { return lift_data(M).c; }

double geodesic_curvature(const FormField& T, const CPoint& p) { return geodesic_curvature(T.matrix(p)); }

double wedge_identity_residual(const Eigen::MatrixXcd& M) {
  check_square(M);
  const Eigen::Index n = M.rows() - 1;
  const cplx full = M.determinant();
  const cplx slice = M.topLeftCorner(n, n).determinant();
  return std::abs(full - geodesic_curvature(M) * slice) / (1.0 + std::abs(full));
}

double wedge_identity_residual(const FormField& T, const CPoint& p) { return wedge_identity_residual(T.matrix(p)); }

CwDecomposition c_of_W(const FamilyDefinition& F, const BackgroundPair& B, const CPoint& p) {
  if (p.dim() != F.n || B.n != F.n) throw Error(ErrorKind::InvalidArgument, "dimension mismatch");
  const WirtingerJet wj = B.w->jet(p, 2);
  const Eigen::MatrixXcd W = hessian_blocks(wj);
  const Eigen::VectorXcd v = horizontal_lift(W);
  const WirtingerJet pj = B.psi->jet(p, 2);
  const Eigen::MatrixXcd Psi = hessian_blocks(pj);
  const int n = F.n;
  Eigen::VectorXcd dpsi(n + 1);
  dpsi.head(n) = pj.grad_z;
  dpsi(n) = pj.grad_s;
  const double psi = pj.value.real();
  CwDecomposition out;
  out.c = geodesic_curvature(W);
  out.levi = form_inner(Psi, v, v).real() / (-psi);
  out.gradient = std::norm(dpsi.dot(v.conjugate())) / (psi * psi);
  return out;
}

double c_of_G(const FamilyDefinition& F, const CPoint& p) {
  return geodesic_curvature(PotentialForm(g_potential(F)), p);
}

HPoint OracleH::at(const CPoint& p, unsigned needs) const {
  const int n = h_->dim();
  HPoint out;
  if (needs == kMetric) {
    out.M = hessian_blocks(*h_, p);
    return out;
  }
  const int order = (needs & kLaplacian) ? 4 : 3;
  const VarLayout lay{n, true};
  const Series h = h_->expand(p, order, true);
  auto var = [&](int j, bool conj) {
    if (j == n) return conj ? lay.sbar() : lay.s();
    return conj ? lay.zbar(j) : lay.z(j);
  };
  SeriesMatrix H(static_cast<std::size_t>(n + 1), std::vector<Series>(static_cast<std::size_t>(n + 1)));
  for (int j = 0; j <= n; ++j) {
    const Series hj = h.derivative(var(j, false));
    for (int k = 0; k <= n; ++k) H[j][k] = hj.derivative(var(k, true));
  }
  out.M.resize(n + 1, n + 1);
  for (int j = 0; j <= n; ++j)
    for (int k = 0; k <= n; ++k) out.M(j, k) = H[j][k].value();

  SeriesMatrix S(static_cast<std::size_t>(n), std::vector<Series>(static_cast<std::size_t>(n)));
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) S[a][b] = H[a][b];
  const SeriesMatrix T = inverse(S);
  std::vector<Series> L;
  for (int a = 0; a < n; ++a) {
    Series acc = H[n][0] * T[0][a];
    for (int g = 1; g < n; ++g) acc += H[n][g] * T[g][a];
    L.push_back(acc);
  }
  out.A.resize(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) out.A(a, b) = -L[a].derivative(lay.zbar(b)).value();
  if (needs & kLaplacian) {
    Series c = H[n][n];
    for (int b = 0; b < n; ++b) c -= L[b] * H[b][n];
    const WirtingerJet cj = jet_from_series(c, lay, 2);
    out.laplacian_c = laplacian_of(slice_inverse(out.M.topLeftCorner(n, n)), cj.hess_zzbar);
  }
  return out;
}

std::vector<cplx> stack_offsets(double delta) {
  const cplx d = delta, e = cplx(0.0, delta);
  return {0.0, d, -d, 2.0 * d, -2.0 * d, e, -e, 2.0 * e, -2.0 * e};
}

SliceStack solve_slice_stack(const FamilyDefinition& F, const BackgroundPair& B, cplx s, int resolution,
                             double delta, const SolveOptions& opt, const SliceSolver& solver) {
  if (!(delta > 0.0)) throw Error(ErrorKind::InvalidArgument, "s-stencil step must be positive");
  SliceStack st;
  st.B = B;
  st.s = s;
  st.delta = delta;
  st.offsets = stack_offsets(delta);
  std::vector<cplx> footprint;
  for (auto o : st.offsets) footprint.push_back(s + o);
  const GridPtr G0 = build_slice_grid(F, s, resolution, 0.0, footprint);
  for (auto o : st.offsets) {
    auto g = std::make_shared<SliceGrid>(*G0);
    g->s = s + o;
    for (std::size_t i = 0; i < g->size(); ++i) g->phi[i] = F.phi_value(g->point(i));
    try {
      st.slices.push_back(solver ? solver(g, B, opt) : solve_slice(g, B, opt));
    } catch (const Error& e) {
      throw Error(ErrorKind::SliceSolveFailed,
                  "slice at s = (" + std::to_string(g->s.real()) + ", " + std::to_string(g->s.imag()) +
                      "): " + e.what());
    }
  }
  return st;
}

struct NumericH::Cache {
  struct Node {
    bool ok = false;
    Eigen::MatrixXcd M, Mu;  // full Hessian of h and its u part
    Eigen::MatrixXcd T;      // slice inverse
    Eigen::VectorXcd L;
    double c = 0.0, c_error = 0.0;
    int lift_state = 0, lap_state = 0;  // 0 unknown, 1 available, -1 unavailable
    Eigen::MatrixXcd A;
    double lap = 0.0;
  };
  std::recursive_mutex mu;
  std::unordered_map<std::size_t, Node> nodes;
  std::vector<Stencil> first_zbar;             // per b
  std::vector<std::vector<Stencil>> mixed;     // [a][b]
};

NumericH::NumericH(SliceStack stack) : stack_(std::move(stack)), cache_(std::make_shared<Cache>()) {
  if (stack_.slices.size() != stack_.offsets.size() || stack_.slices.size() != 9)
    throw Error(ErrorKind::InvalidArgument, "slice stack needs nine slices");
  const SliceGrid& G0 = grid();
  for (const auto& S : stack_.slices) {
    if (!S.grid->same_footprint(G0))
      throw Error(ErrorKind::StencilInconsistent, "slices of the stack do not share a footprint");
    if (std::abs(S.grid->s - stack_.s - stack_.offsets[&S - stack_.slices.data()]) > 1e-12)
      throw Error(ErrorKind::StencilInconsistent, "slice base values do not match the stencil offsets");
  }
  for (const auto& S : stack_.slices) {
    std::vector<cplx> vals(S.u.begin(), S.u.end());
    u_fields_.emplace_back(G0.lattice, std::move(vals), S.grid->support_mask(), S.grid->s);
  }
  const int n = stack_.B.n;
  const auto wgen = stack_.B.w->generator();
  const auto fgen = stack_.B.F->generator();
  closure_ = std::make_shared<OracleH>(std::make_shared<ClosedFormField>(
      n, [wgen, fgen, n](const Coords& c) { return wgen(c) - fgen(c) / (n + 1.0); },
      std::max(stack_.B.w->loss(), stack_.B.F->loss()), stack_.B.w->predicate()));
  const std::vector<AxisRule> rules(static_cast<std::size_t>(2 * n), AxisRule::Central4);
  for (int b = 0; b < n; ++b)
    cache_->first_zbar.push_back(wirtinger_first(G0.lattice, b, true, AxisRule::Central4, AxisRule::Central4));
  cache_->mixed.resize(static_cast<std::size_t>(n));
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b) cache_->mixed[a].push_back(wirtinger_mixed(G0.lattice, a, b, rules));
}

void NumericH::ensure_node(std::size_t node) const {
  auto& C = *cache_;
  if (C.nodes.count(node)) return;
  Cache::Node& N = C.nodes[node];
  const SliceGrid& G = grid();
  if (G.slot[node] < 0) return;
  const int n = stack_.B.n;
  const double d = stack_.delta;
  std::vector<double> u;
  std::vector<Eigen::VectorXcd> gzb;
  for (std::size_t k = 0; k < 9; ++k) {
    u.push_back(stack_.slices[k].u[node]);
    try {
      gzb.push_back(u_fields_[k].jet_at(node, 1).grad_zbar);
    } catch (const Error&) {
      return;
    }
  }
  // Fourth-order first/second differences and their second-order (step d) counterparts.
  auto d1 = [&](std::size_t o, bool fourth) -> Eigen::VectorXcd {
    if (fourth) return (8.0 * (gzb[o] - gzb[o + 1]) - (gzb[o + 2] - gzb[o + 3])) / (12.0 * d);
    return (gzb[o] - gzb[o + 1]) / (2.0 * d);
  };
  auto d2 = [&](std::size_t o, bool fourth) {
    return fourth ? (-u[o + 2] + 16.0 * u[o + 0] - 30.0 * u[0] + 16.0 * u[o + 1] - u[o + 3]) / (12.0 * d * d)
                  : (u[o + 0] - 2.0 * u[0] + u[o + 1]) / (d * d);
  };
  const Eigen::MatrixXcd Mw = hessian_blocks(*stack_.B.w, G.point(node));
  const Eigen::MatrixXcd Uzz = u_hessian(stack_.slices[0], node);
  auto assemble = [&](bool fourth) {
    Eigen::MatrixXcd Mu = Eigen::MatrixXcd::Zero(n + 1, n + 1);
    Mu.topLeftCorner(n, n) = Uzz;
    const Eigen::VectorXcd usb = 0.5 * (d1(1, fourth) - I * d1(5, fourth));
    for (int b = 0; b < n; ++b) {
      Mu(n, b) = usb(b);
      Mu(b, n) = std::conj(usb(b));
    }
    Mu(n, n) = 0.25 * (d2(1, fourth) + d2(5, fourth));
    return Mu;
  };
  N.Mu = assemble(true);
  N.M = Mw + N.Mu;
  LiftData ld;
  try {
    ld = lift_data(N.M);
  } catch (const Error&) {
    return;
  }
  N.T = ld.T;
  N.L = ld.L;
  N.c = ld.c;
  try {
    N.c_error = std::abs(N.c - geodesic_curvature(Eigen::MatrixXcd(Mw + assemble(false))));
  } catch (const Error&) {
    N.c_error = std::numeric_limits<double>::infinity();
  }
  N.ok = true;
}

void NumericH::ensure_lift_derivative(std::size_t node) const {
  auto& C = *cache_;
  ensure_node(node);
  if (!C.nodes[node].ok) return;
  if (C.nodes[node].lift_state != 0) return;
  const Lattice& Lt = grid().lattice;
  const int n = stack_.B.n;
  Eigen::MatrixXcd A = Eigen::MatrixXcd::Zero(n, n);
  for (int b = 0; b < n; ++b) {
    for (const auto& tap : C.first_zbar[b].taps) {
      const auto j = Lt.shifted(node, tap.offset);
      if (!j) {
        C.nodes[node].lift_state = -1;
        return;
      }
      ensure_node(*j);
      const auto& Nj = C.nodes[*j];
      if (!Nj.ok) {
        C.nodes[node].lift_state = -1;
        return;
      }
      A.col(b) -= tap.weight * Nj.L;
    }
  }
  auto& N = C.nodes[node];
  N.A = A;
  N.lift_state = 1;
}

void NumericH::ensure_laplacian(std::size_t node) const {
  auto& C = *cache_;
  ensure_node(node);
  if (!C.nodes[node].ok) return;
  if (C.nodes[node].lap_state != 0) return;
  const Lattice& Lt = grid().lattice;
  const int n = stack_.B.n;
  Eigen::MatrixXcd hess = Eigen::MatrixXcd::Zero(n, n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (const auto& tap : C.mixed[a][b].taps) {
        const auto j = Lt.shifted(node, tap.offset);
        if (!j) {
          C.nodes[node].lap_state = -1;
          return;
        }
        ensure_node(*j);
        if (!C.nodes[*j].ok) {
          C.nodes[node].lap_state = -1;
          return;
        }
        hess(a, b) += tap.weight * C.nodes[*j].c;
      }
  auto& N = C.nodes[node];
  N.lap = laplacian_of(N.T, hess);
  N.lap_state = 1;
}

HPoint NumericH::at(const CPoint& p, unsigned needs) const {
  if (p.dim() != dim() || std::abs(p.s - stack_.s) > 1e-12)
    throw Error(ErrorKind::InvalidArgument, "numeric h is available on the slice of its stack only");
  std::lock_guard<std::recursive_mutex> lock(cache_->mu);
  auto& C = *cache_;
  auto usable = [&](std::size_t node) {
    ensure_node(node);
    if (!C.nodes[node].ok) return false;
    if (needs & kLift) {
      ensure_lift_derivative(node);
      if (C.nodes[node].lift_state != 1) return false;
    }
    if (needs & kLaplacian) {
      ensure_laplacian(node);
      if (C.nodes[node].lap_state != 1) return false;
    }
    return true;
  };
  auto fill = [&](HPoint& out, const Cache::Node& N, double wt) {
    out.c_error += wt * N.c_error;
    if (needs & kLift) out.A += wt * N.A;
    if (needs & kLaplacian) *out.laplacian_c += wt * N.lap;
  };
  const SliceGrid& G = grid();
  const int n = dim();
  HPoint out;
  if (needs & kLift) out.A = Eigen::MatrixXcd::Zero(n, n);
  if (needs & kLaplacian) out.laplacian_c = 0.0;

  if (const auto node = G.lattice.node_at(p.z, 1e-9); node && usable(*node)) {
    const auto& N = C.nodes[*node];
    out.M = N.M;
    fill(out, N, 1.0);
    return out;
  }
  if (const auto sup = cubic_support(G.lattice, p.z)) {
    bool ok = true;
    for (const auto& [node, wt] : *sup) {
      if (!usable(node)) {
        ok = false;
        break;
      }
    }
    if (ok) {
      Eigen::MatrixXcd Mu = Eigen::MatrixXcd::Zero(n + 1, n + 1);
      for (const auto& [node, wt] : *sup) {
        const auto& N = C.nodes[node];
        Mu += wt * N.Mu;
        fill(out, N, wt);
      }
      out.c_error = std::abs(out.c_error);
      out.M = hessian_blocks(*stack_.B.w, p) + Mu;
      return out;
    }
  }
  HPoint cl = closure_->at(p, needs);
  cl.closure = true;
  return cl;
}

CHValue c_of_H(const HSource& src, const CPoint& p) {
  const HPoint hp = src.at(p, HSource::kMetric);
  return CHValue{geodesic_curvature(hp.M), hp.c_error, hp.closure};
}

double dbar_norm(const Eigen::MatrixXcd& M, const Eigen::MatrixXcd& A) {
  const Eigen::Index n = A.rows();
  const Eigen::MatrixXcd S = M.topLeftCorner(n, n);
  const Eigen::MatrixXcd T = slice_inverse(S);
  return (A * T * A.adjoint() * S.transpose()).trace().real();
}

double dbar_vH_norm(const HSource& src, const CPoint& p) {
  const HPoint hp = src.at(p, HSource::kLift);
  return dbar_norm(hp.M, hp.A);
}

SchumacherTerms schumacher_residual(const HSource& src, const CPoint& p) {
  const HPoint hp = src.at(p, HSource::kLift | HSource::kLaplacian);
  SchumacherTerms t;
  t.c = geodesic_curvature(hp.M);
  t.laplacian_c = *hp.laplacian_c;
  t.dbar_norm = dbar_norm(hp.M, hp.A);
  t.residual = -t.laplacian_c + (src.dim() + 1.0) * t.c - t.dbar_norm;
  t.normalized = t.residual / (1.0 + std::abs(t.c));
  return t;
}

RatioScan boundary_ratio_scan(const FamilyDefinition& F, const BackgroundPair& B, const HSource& src,
                              const BoundaryRay& ray, int tail) {
  const double margin = strong_pseudoconvexity_margin(F, ray.anchor);
  if (!(margin > kMarginFloor))
    throw Error(ErrorKind::NotStronglyPseudoconvexPoint,
                F.name + ": Levi margin " + std::to_string(margin) + " at the ray anchor");
  RatioScan scan;
  scan.rows.resize(ray.size());
  tbb::parallel_for(std::size_t{0}, ray.size(), [&](std::size_t k) {
    RatioRow& r = scan.rows[k];
    r.phi = ray.phi[k];
    r.p = ray.points[k];
    r.cW = c_of_W(F, B, r.p).c;
    const CHValue h = c_of_H(src, r.p);
    r.cH = h.value;
    r.closure = h.closure;
    r.ratio = r.cH / r.cW;
  });
  const auto m = scan.rows.size();
  auto defect = [&](std::size_t k) { return std::abs(scan.rows[k].ratio - 1.0); };
  if (m > 0) scan.final_defect = defect(m - 1);
  const std::size_t t = std::min<std::size_t>(m, static_cast<std::size_t>(std::max(tail, 1)));
  scan.monotone_tail = m >= t && t > 0;
  for (std::size_t k = m - t + 1; scan.monotone_tail && k < m; ++k)
    if (!(defect(k) <= defect(k - 1) + 1e-12)) scan.monotone_tail = false;
  int run = 0;
  for (std::size_t k = 0; k < m; ++k) {
    if (scan.rows[k].closure) {
      run = 0;
      continue;
    }
    run = (run > 0 && defect(k) < defect(k - 1)) ? run + 1 : 1;
    scan.longest_decreasing = std::max(scan.longest_decreasing, run);
  }
  return scan;
}

PshScan psh_min_eigen_scan(const HSource& src, const std::vector<CPoint>& samples) {
  PshScan out;
  out.per_sample.resize(samples.size());
  tbb::parallel_for(std::size_t{0}, samples.size(), [&](std::size_t k) {
    out.per_sample[k] = min_eigenvalue(src.at(samples[k], HSource::kMetric).M);
  });
  out.min_eigen = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < samples.size(); ++k)
    if (out.per_sample[k] < out.min_eigen) {
      out.min_eigen = out.per_sample[k];
      out.where = samples[k];
    }
  return out;
}

}  // namespace kefam

#pragma once

// Slicewise complex Monge-Ampere solver on uniform lattices.
//
// For a background pair (w, F) on a slice D_s the unknown u solves
//   det(w + u)_{a bbar} = e^{(n+1)u} e^{F} det(w_{a bbar})
// with u prescribed on a band of lattice nodes next to the boundary. The
// Kahler-Einstein potential is h = w + u.

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "kefam/fefferman.hpp"

namespace kefam {

enum class NodeClass : std::uint8_t { Exterior, Band, Interior };

struct SliceGrid {
  int n = 1;
  cplx s{};
  int resolution = 0;
  double eps_cut = 0.0;
  Box box;
  Lattice lattice;
  std::vector<NodeClass> cls;
  std::vector<double> phi;            // phi at s per node
  std::vector<std::size_t> interior;  // node ids, ascending
  std::vector<std::int64_t> slot;     // node -> index into `interior`, -1 elsewhere
  std::size_t band_count = 0;

  std::size_t size() const { return lattice.size(); }
  CPoint point(std::size_t node) const { return CPoint{lattice.position(node), s}; }
  std::vector<char> interior_mask() const;
  // Interior and band: every node on which u is defined.
  std::vector<char> support_mask() const;
  // Same lattice and same interior nodes.
  bool same_footprint(const SliceGrid& o) const;
};
using GridPtr = std::shared_ptr<const SliceGrid>;

// Lattice over the slice box at s with `resolution` nodes per axis across the
// box plus two ghost layers. Interior nodes have phi < -eps_cut at s and at
// every base value in `footprint`; eps_cut <= 0 selects twice the spacing.
// Throws EmptyInterior, InvalidArgument (resolution too small).
GridPtr build_slice_grid(const FamilyDefinition& F, cplx s, int resolution, double eps_cut = 0.0,
                         const std::vector<cplx>& footprint = {});
int min_resolution(int n);

// Exact background data at the interior nodes of a grid.
// Band nodes carry u = -F/(n+1) where F evaluates to a finite real number, 0
// elsewhere; the Laplacian term is negligible against (n+1)u there.
struct NodeBackground {
  std::vector<Eigen::MatrixXcd> w_hess;  // (w_{a bbar}) per interior slot
  std::vector<double> w, logdet_w, F;    // per interior slot
  std::vector<double> boundary;          // per lattice node; band data
};
NodeBackground sample_background(const SliceGrid& G, const BackgroundPair& B);

struct SolveOptions {
  double tol = 1e-10;
  int max_iterations = 50;
  int max_halvings = 20;
  double linear_tol = 1e-12;
  // Return the unconverged state instead of throwing NoConvergence.
  bool throw_on_failure = true;
  // Interior values to start from (per lattice node); ignored unless sized to the grid.
  std::vector<double> initial_guess;
};

struct MASolution {
  GridPtr grid;
  NodeBackground background;
  std::vector<double> u;      // per lattice node: solution, band data, 0 outside
  std::vector<double> trace;  // sup |r| at the start and after each accepted step
  bool converged = false;
  int iterations = 0;
  double pinch = 1.0;  // c with (1/c) w <= w + u <= c w at every interior node

  double residual() const { return trace.empty() ? 0.0 : trace.back(); }
};

// Damped Newton on r(u) = log det(w+u) - log det w - (n+1)u - F.
// Throws PositivityLost, NoConvergence, LinearSolveFailed.
MASolution solve_slice(const GridPtr& G, const BackgroundPair& B, const SolveOptions& opt = {});
MASolution solve_slice(const GridPtr& G, const BackgroundPair& B, double tol);

// Discrete complex Hessian (u_{a bbar}) at an interior node.
Eigen::MatrixXcd u_hessian(const MASolution& U, std::size_t node);
// sup |r| recomputed from the stored state.
double ma_residual(const MASolution& U);

struct KEMetric {
  GridPtr grid;
  std::vector<Eigen::MatrixXcd> h, h_inv;  // per interior slot
  std::vector<double> logdet;
  double max_inverse_residual = 0.0;
};
// h_{a bbar} = w_{a bbar} + u_{a bbar}. Throws SingularMetric.
KEMetric ke_metric_field(const BackgroundPair& B, const MASolution& U);

// Relative Einstein defect |(n+1) h + Ric|_F / |h|_F with Ric = -ddbar log det h
// by stencil, per lattice node; NaN where the stencil leaves the interior.
std::vector<double> einstein_residual(const KEMetric& K);

struct UsSolution {
  GridPtr grid;
  std::vector<cplx> us;  // per lattice node (band data on the band, 0 outside)
  std::vector<cplx> Q;   // right-hand side per lattice node
  double residual = 0.0; // relative residual of the linear solve
};
// Solves -Delta u_s + (n+1) u_s = Q, Q = -F_s + (Delta - Delta_w) w_s with the
// Laplacian of h; band values are the s-derivative of the band data of u.
// Throws LinearSolveFailed.
UsSolution solve_us(const BackgroundPair& B, const MASolution& U, double tol = 1e-10);

struct DecayFit {
  double order = 0.0;  // slope of log|f| against log|phi|
  double rms = 0.0;
  int used = 0;
  double min_abs_phi = 0.0, max_abs_phi = 0.0;
};
// Boundary decay of a lattice field along a ray: cubic interpolation over
// interior nodes at the ray samples with |phi| <= phi_max, stopping where the
// support leaves the interior. Throws DegenerateRay with fewer than three
// samples (the interior does not reach the window).
DecayFit boundary_decay_fit(const SliceGrid& G, std::span<const cplx> values, const BoundaryRay& ray,
                            double phi_max, double floor = 1e-13);

// Sublevel family {psi < N} with psi = -log(-phi), i.e. phi + e^{-N} < 0.
FamilyDefinition sublevel_family(const FamilyDefinition& F, double N);

struct ExhaustionLevel {
  double N = 0.0;
  MASolution solution;
  std::vector<double> logdet;  // log det h^N per lattice node (NaN off the interior)
  double center_logdet = 0.0;  // at the slice center node
};
struct ExhaustionResult {
  std::vector<ExhaustionLevel> levels;  // increasing N
  std::vector<std::size_t> common;      // nodes interior at every level
  double min_margin = 0.0;              // min over common nodes of logdet^N - logdet^{N'}, N < N'
};
// Solves on sublevel slices {phi < -e^{-N}} at s on one lattice (the box of F).
// Errors from a level are rethrown with the level index.
ExhaustionResult exhaustion_run(const FamilyDefinition& F, const std::vector<double>& levels, cplx s,
                                int resolution, int fefferman_level, const SolveOptions& opt = {});

}  // namespace kefam

#pragma once

// Geometry of a family of (1,1)-forms over the base: horizontal lifts,
// geodesic curvature c(tau) = tau_{s sbar} - tau_{s bbar} tau^{bbar a} tau_{a sbar},
// the Kahler-Einstein potential h (closed form or assembled from slice
// solutions), |dbar v_H|^2 and the identity -Delta c(H) + (n+1) c(H) = |dbar v_H|^2.

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <vector>

#include "kefam/ma_solver.hpp"

namespace kefam {

// A real (1,1)-form; matrix(p)(j, k) = tau_{j kbar} over (z_1..z_n, s).
class FormField {
 public:
  virtual ~FormField() = default;
  virtual int dim() const = 0;
  virtual Eigen::MatrixXcd matrix(const CPoint& p) const = 0;
};

// tau = i ddbar of a closed-form potential (g, w or h).
class PotentialForm final : public FormField {
 public:
  explicit PotentialForm(FieldPtr potential) : f_(std::move(potential)) {}
  int dim() const override { return f_->dim(); }
  Eigen::MatrixXcd matrix(const CPoint& p) const override { return hessian_blocks(*f_, p); }
  const FieldPtr& potential() const { return f_; }

 private:
  FieldPtr f_;
};

// The same matrix at every point.
class ConstantForm final : public FormField {
 public:
  explicit ConstantForm(Eigen::MatrixXcd m) : m_(std::move(m)) {}
  int dim() const override { return static_cast<int>(m_.rows()) - 1; }
  Eigen::MatrixXcd matrix(const CPoint&) const override { return m_; }

 private:
  Eigen::MatrixXcd m_;
};

// Coefficients L^a = tau_{s bbar} tau^{bbar a}; v_tau = d/ds - L^a d/dz^a.
// Throws SingularSliceBlock.
Eigen::VectorXcd lift_coefficients(const Eigen::MatrixXcd& M);
// Components (v^1..v^n, v^s = 1).
Eigen::VectorXcd horizontal_lift(const Eigen::MatrixXcd& M);
Eigen::VectorXcd horizontal_lift(const FormField& T, const CPoint& p);
// <v, w>_tau = tau_{j kbar} v^j conj(w^k).
cplx form_inner(const Eigen::MatrixXcd& M, const Eigen::VectorXcd& v, const Eigen::VectorXcd& w);

double geodesic_curvature(const Eigen::MatrixXcd& M);
double geodesic_curvature(const FormField& T, const CPoint& p);

// |det M - c(M) det(slice block)| / (1 + |det M|).
double wedge_identity_residual(const Eigen::MatrixXcd& M);
double wedge_identity_residual(const FormField& T, const CPoint& p);

// c(W) with its Levi-form decomposition through psi = -e^{-w}:
//   c(W) = L_psi(v, vbar) / (-psi) + |d psi(v)|^2 / psi^2,  v = v_W.
struct CwDecomposition {
  double c = 0.0;         // direct formula
  double levi = 0.0;      // first term
  double gradient = 0.0;  // second term
};
CwDecomposition c_of_W(const FamilyDefinition& F, const BackgroundPair& B, const CPoint& p);
// c(G) for g = -log(-phi).
double c_of_G(const FamilyDefinition& F, const CPoint& p);

// Data of the Kahler-Einstein potential h at a point.
struct HPoint {
  Eigen::MatrixXcd M;                // full complex Hessian of h
  Eigen::MatrixXcd A;                // A(a, b) = A^a_bbar = -d_bbar(h_{s gbar} h^{gbar a}); empty unless asked
  std::optional<double> laplacian_c; // h^{bbar a} d_a d_bbar c(H); unless asked
  double c_error = 0.0;              // s-stencil error estimate of c(H)
  bool closure = false;              // numeric source fell back to the band closure
};

class HSource {
 public:
  enum Need : unsigned { kMetric = 0, kLift = 1, kLaplacian = 2 };
  virtual ~HSource() = default;
  virtual int dim() const = 0;
  virtual HPoint at(const CPoint& p, unsigned needs = kMetric) const = 0;
};
using HSourcePtr = std::shared_ptr<const HSource>;

// Exact jets of a closed-form potential.
class OracleH final : public HSource {
 public:
  explicit OracleH(FieldPtr h) : h_(std::move(h)) {}
  int dim() const override { return h_->dim(); }
  HPoint at(const CPoint& p, unsigned needs = kMetric) const override;
  const FieldPtr& potential() const { return h_; }

 private:
  FieldPtr h_;
};

// Slice solutions at s + {0, +-d, +-2d, +-id, +-2id} on one footprint.
struct SliceStack {
  BackgroundPair B;
  cplx s{};
  double delta = 0.0;
  std::vector<cplx> offsets;
  std::vector<MASolution> slices;  // slices[0] at s
};
std::vector<cplx> stack_offsets(double delta);
using SliceSolver = std::function<MASolution(const GridPtr&, const BackgroundPair&, const SolveOptions&)>;
// Throws SliceSolveFailed (wrapping the solver error). `solver` defaults to solve_slice.
SliceStack solve_slice_stack(const FamilyDefinition& F, const BackgroundPair& B, cplx s, int resolution,
                             double delta, const SolveOptions& opt = {}, const SliceSolver& solver = {});

// h = w + u with u from a slice stack: u_{a bbar} by lattice stencils, u_{s bbar}
// and u_{s sbar} by fourth-order central differences across the stack. Off
// lattice points interpolate the node data (cubic); where the interpolation
// support leaves the interior the band closure u = -F/(n+1) is used exactly.
// Throws StencilInconsistent if the slices do not share a footprint.
class NumericH final : public HSource {
 public:
  explicit NumericH(SliceStack stack);
  int dim() const override { return stack_.B.n; }
  HPoint at(const CPoint& p, unsigned needs = kMetric) const override;
  const SliceStack& stack() const { return stack_; }
  const SliceGrid& grid() const { return *stack_.slices.front().grid; }

 private:
  struct Cache;
  void ensure_node(std::size_t node) const;
  void ensure_lift_derivative(std::size_t node) const;
  void ensure_laplacian(std::size_t node) const;

  SliceStack stack_;
  std::vector<GridField> u_fields_;
  std::shared_ptr<OracleH> closure_;
  std::shared_ptr<Cache> cache_;
};

struct CHValue {
  double value = 0.0;
  double error = 0.0;
  bool closure = false;
};
CHValue c_of_H(const HSource& src, const CPoint& p);

double dbar_vH_norm(const HSource& src, const CPoint& p);
// Norm of A with the metric M: h_{a dbar} h^{bbar e} A^a_bbar conj(A^d_ebar).
double dbar_norm(const Eigen::MatrixXcd& M, const Eigen::MatrixXcd& A);

struct SchumacherTerms {
  double c = 0.0;
  double laplacian_c = 0.0;
  double dbar_norm = 0.0;
  double residual = 0.0;    // -Delta c + (n+1) c - |dbar v_H|^2
  double normalized = 0.0;  // residual / (1 + |c|)
};
SchumacherTerms schumacher_residual(const HSource& src, const CPoint& p);

struct RatioRow {
  double phi = 0.0;
  CPoint p;
  double cW = 0.0, cH = 0.0, ratio = 0.0;
  bool closure = false;
};
struct RatioScan {
  std::vector<RatioRow> rows;  // |phi| decreasing
  bool monotone_tail = false;  // |ratio - 1| non-increasing over the last `tail` rows
  double final_defect = 0.0;   // |ratio - 1| at the last row
  int longest_decreasing = 0;  // longest run of strictly decreasing |ratio - 1| over non-closure rows
};
// Throws NotStronglyPseudoconvexPoint when the Levi margin at the ray's anchor is
// not above 1e-10.
RatioScan boundary_ratio_scan(const FamilyDefinition& F, const BackgroundPair& B, const HSource& src,
                              const BoundaryRay& ray, int tail = 5);

struct PshScan {
  double min_eigen = 0.0;
  CPoint where;
  std::vector<double> per_sample;
};
PshScan psh_min_eigen_scan(const HSource& src, const std::vector<CPoint>& samples);

}  // namespace kefam

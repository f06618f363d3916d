#pragma once

// Wirtinger jets of scalar fields on C^n x C.
//
// Closed-form fields are generators over truncated Taylor series in the
// variables (z, s, zbar, sbar); their jets are exact. Grid fields are sampled
// on a slice lattice and differentiated with finite-difference stencils.

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "kefam/lattice.hpp"
#include "kefam/series.hpp"

namespace kefam {

struct CPoint {
  std::vector<cplx> z;
  cplx s{};

  int dim() const { return static_cast<int>(z.size()); }
};

// Which Taylor variables are live: the slice variables always, the base pair
// (s, sbar) optionally. Inactive variables are frozen at the point.
struct VarLayout {
  int n = 1;
  bool with_base = true;

  int nvars() const { return with_base ? 2 * n + 2 : 2 * n; }
  int z(int a) const { return a; }
  int zbar(int a) const { return with_base ? n + 1 + a : n + a; }
  int s() const { return with_base ? n : -1; }
  int sbar() const { return with_base ? 2 * n + 1 : -1; }
};

// The coordinate series handed to a closed-form generator.
class Coords {
 public:
  Coords(const CPoint& p, int order, VarLayout layout);

  const VarLayout& layout() const { return layout_; }
  int n() const { return layout_.n; }
  int order() const { return order_; }

  const Series& z(int a) const { return z_[static_cast<std::size_t>(a)]; }
  const Series& zbar(int a) const { return zbar_[static_cast<std::size_t>(a)]; }
  const Series& s() const { return s_; }
  const Series& sbar() const { return sbar_; }

  Series constant(cplx v) const { return Series::constant(layout_.nvars(), order_, v); }
  Series re(int a) const;                   // Re z_a
  Series im(int a) const;                   // Im z_a
  Series abs2(int a) const;                 // |z_a|^2
  Series norm2() const;                     // |z|^2
  Series s_abs2() const { return s_ * sbar_; }

  // Derivatives of a series produced from these coordinates; derivatives in
  // frozen base directions are zero.
  Series d_z(const Series& f, int a) const { return f.derivative(layout_.z(a)); }
  Series d_zbar(const Series& f, int a) const { return f.derivative(layout_.zbar(a)); }
  Series d_s(const Series& f) const;
  Series d_sbar(const Series& f) const;

 private:
  VarLayout layout_;
  int order_;
  std::vector<Series> z_, zbar_;
  Series s_, sbar_;
};

struct WirtingerJet {
  int n = 0;
  int order = 0;
  int stencil_order = 0;  // 0 for exact jets, otherwise the stencil accuracy used
  bool has_base = false;

  cplx value{};
  Eigen::VectorXcd grad_z, grad_zbar;
  cplx grad_s{}, grad_sbar{};
  Eigen::MatrixXcd hess_zzbar;  // (a, b) -> f_{a bbar}
  Eigen::MatrixXcd hess_zz;     // (a, b) -> f_{ab}
  Eigen::VectorXcd hess_szbar;  // b -> f_{s bbar}
  Eigen::VectorXcd hess_zsbar;  // a -> f_{a sbar}
  cplx hess_ssbar{}, hess_ss{};
};

// Jet of a truncated series expanded at the point (coefficients times
// factorials); requires series order >= order.
WirtingerJet jet_from_series(const Series& f, const VarLayout& layout, int order);

class ScalarField {
 public:
  virtual ~ScalarField() = default;
  virtual int dim() const = 0;
  virtual bool contains(const CPoint& p) const = 0;
  virtual WirtingerJet jet(const CPoint& p, int order) const = 0;
};

class ClosedFormField final : public ScalarField {
 public:
  using Generator = std::function<Series(const Coords&)>;
  using Predicate = std::function<bool(const CPoint&)>;

  // `loss` is the number of derivative orders the generator consumes
  // internally: asking for order k expands the coordinates to order k + loss.
  ClosedFormField(int n, Generator gen, int loss = 0, Predicate valid = {});

  int dim() const override { return n_; }
  int loss() const { return loss_; }
  bool contains(const CPoint& p) const override { return !valid_ || valid_(p); }
  WirtingerJet jet(const CPoint& p, int order) const override;

  Series expand(const CPoint& p, int order, bool with_base = true) const;
  const Generator& generator() const { return gen_; }
  const Predicate& predicate() const { return valid_; }

 private:
  int n_;
  Generator gen_;
  int loss_;
  Predicate valid_;
};

using FieldPtr = std::shared_ptr<const ClosedFormField>;

// Values on a slice lattice; `mask` marks nodes carrying valid samples.
class GridField final : public ScalarField {
 public:
  GridField(Lattice lattice, std::vector<cplx> values, std::vector<char> mask, cplx s = {});

  int dim() const override { return lattice_.dim(); }
  bool contains(const CPoint& p) const override;
  // Stencil jet at a lattice node (order <= 2, slice derivatives only).
  WirtingerJet jet(const CPoint& p, int order) const override;
  WirtingerJet jet_at(std::size_t node, int order) const;

  const Lattice& lattice() const { return lattice_; }
  std::span<const cplx> values() const { return values_; }
  std::span<const char> mask() const { return mask_; }
  cplx base_point() const { return s_; }

 private:
  Lattice lattice_;
  std::vector<cplx> values_;
  std::vector<char> mask_;
  cplx s_;
};

WirtingerJet jet(const ScalarField& f, const CPoint& p, int order);
// Slice-only jet (no base derivatives); cheaper for closed-form fields.
WirtingerJet slice_jet(const ScalarField& f, const CPoint& p, int order);
cplx field_value(const ScalarField& f, const CPoint& p);

// Full (n+1)x(n+1) complex Hessian ordered (z_1..z_n, s): entry (j, k) is
// f_{j kbar}. Requires base derivatives.
Eigen::MatrixXcd hessian_blocks(const ScalarField& f, const CPoint& p);
Eigen::MatrixXcd hessian_blocks(const WirtingerJet& j);
// Slice block (f_{a bbar}); works for grid fields as well.
Eigen::MatrixXcd slice_hessian(const ScalarField& f, const CPoint& p);

// Levi form sum_{jk} f_{j kbar} v^j conj(v^k) over all n+1 variables.
double levi_form(const ScalarField& f, const CPoint& p, std::span<const cplx> v);

}  // namespace kefam

#pragma once

// The bordered-Hessian functional J, Fefferman's recursive approximate
// solutions of J(zeta) = 1, vanishing-order fits along boundary rays, and the
// background pair (w, F) fed to the slice Monge-Ampere solver.

#include <optional>
#include <string>

#include "kefam/domains.hpp"

namespace kefam {

// J(zeta) = (-1)^n det [[zeta, zeta_bbar], [zeta_a, zeta_{a bbar}]] as a series
// (order of zeta minus two).
Series j_series(const Series& zeta, const Coords& c);
double j_functional(const ScalarField& zeta, const CPoint& p);
// Field whose value is J(zeta); derivative loss grows by two.
FieldPtr j_field(const FieldPtr& zeta);

struct ApproxDefiningSequence {
  int n = 1;
  int level = 1;
  cplx s{};
  FieldPtr rho;                 // input defining function (negative inside)
  std::vector<FieldPtr> rho_l;  // rho^1 .. rho^level (positive inside)
  FieldPtr eta;                 // -rho^level = eta * rho

  const FieldPtr& top() const { return rho_l.back(); }
};

// Recursion from a defining function rho; checks J(-rho) > 0 on a sample net of
// the slice through `s` when `F` is supplied.
ApproxDefiningSequence fefferman_sequence(int n, const FieldPtr& rho, int level, cplx s = {});
ApproxDefiningSequence fefferman_sequence(const FamilyDefinition& F, cplx s, int level);

struct OrderFit {
  double order = 0.0;      // +inf when f vanishes identically on the ray
  double intercept = 0.0;  // log coefficient
  double residual = 0.0;   // rms of the log-log fit
  int used = 0;
  bool vanishing = false;
};

// Least-squares slope of log|f| against log|phi|. Values below `floor` count
// as zero; a ray where every value is zero yields the +inf sentinel.
OrderFit fit_power_law(std::span<const double> abs_phi, std::span<const double> values, double floor = 1e-13);
OrderFit vanishing_order_fit(const ScalarField& f, const BoundaryRay& ray, double floor = 1e-13);

enum class BlendMode { Auto, Always, Never };
BlendMode parse_blend_mode(const std::string& s);

struct BackgroundPair {
  int n = 1;
  int level = 0;
  cplx s{};
  double delta0 = 0.0;
  bool blended = false;
  FieldPtr w;    // -log(-eta_b * phi)
  FieldPtr F;    // (n+1) w - log det(w_{a bbar})
  FieldPtr psi;  // eta_b * phi = -exp(-w)
  double min_net_eigen = 0.0;
  bool f_from_w = false;  // F is exactly (n+1) w - log det(w_{a bbar})
};

// Background from a family (level >= 1) with the cutoff blend of eta toward 1
// on {phi < -delta0}; delta0 <= 0 selects 0.3 sup|phi| over the slice.
BackgroundPair background_pair(const FamilyDefinition& F, cplx s, int level, double delta0 = 0.0,
                               BlendMode mode = BlendMode::Auto, int net_points = 1000);
// Background from explicit fields (w with positive slice Hessian, any F).
BackgroundPair background_from_fields(int n, FieldPtr w, FieldPtr F);
// F recomputed from w.
FieldPtr f_from_w(const FieldPtr& w);

// C^infinity cutoff: 0 for x <= 0, 1 for x >= 1.
Series smooth_step(const Series& x);
double smooth_step(double x);

}  // namespace kefam

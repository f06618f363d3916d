#pragma once

// Families of domains D = {phi(z, s) < 0} in C^n x C, the catalog of test
// families, and boundary geometry queries.

#include <Eigen/Dense>
#include <functional>
#include <nlohmann/json.hpp>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "kefam/wirtinger.hpp"

namespace kefam {

inline constexpr double kBoundaryTol = 1e-9;

// Axis-aligned box over the 2n real slice axes.
struct Box {
  std::vector<double> lo, hi;
};

struct FamilyDefinition {
  std::string name;
  int n = 1;
  FieldPtr phi;
  double base_radius = 0.5;
  nlohmann::json params;  // canonical parameters (cache keys, reports)

  // Closed-form KE potential h = (1/(n+1)) log det(h_{a bbar}), when known.
  FieldPtr oracle_h;
  // Closed-form fibre map carrying z over s0 to the corresponding point over s.
  std::function<std::vector<cplx>(const std::vector<cplx>& z, cplx s0, cplx s)> oracle_transport;

  // Box containing the closure of the slice D_s, and a point inside it.
  std::function<Box(cplx s)> slice_box;
  std::function<std::vector<cplx>(cplx s)> slice_center;

  double phi_value(const CPoint& p) const;
  bool inside(const CPoint& p) const { return phi_value(p) < 0.0; }
};

// Names: ball_family, translated_ball, hartogs_radius, ellipsoid_family,
// perturbed_ball, real_ellipsoid. Parameters (all optional):
//   n                      slice dimension (default 1)
//   base_radius            radius of the base disc
//   c                      translated_ball: polynomial in s, e.g. "s/2" or "0.3*s^2 - 0.1i*s"
//   kappa                  hartogs_radius: number or [re, im]
//   a, b                   ellipsoid_family: slice weights per coordinate, base weight
//   eps, radius, center, s0, power   perturbed_ball bump
//   ax, ay, c_s            real_ellipsoid: weights of x^2, y^2 per coordinate and |s|^2
// Throws UnknownFamily, InvariantViolated, ConfigInvalid.
FamilyDefinition catalog_instantiate(const std::string& name, const nlohmann::json& params = {});
std::vector<std::string> catalog_names();

// Coefficients (ascending powers of s) of a polynomial expression in s.
std::vector<cplx> parse_polynomial(const std::string& expr);

// Quasi-random samples (seeded) of interior points of D_s.
std::vector<CPoint> interior_samples(const FamilyDefinition& F, cplx s, int count, std::uint64_t seed);
// Boundary point of D_s on the ray from the slice center in direction dir.
CPoint boundary_point(const FamilyDefinition& F, cplx s, const std::vector<cplx>& dir);
std::vector<CPoint> boundary_samples(const FamilyDefinition& F, cplx s, int count, std::uint64_t seed);
// Base values sampled in the base disc.
std::vector<cplx> base_samples(const FamilyDefinition& F, int count, std::uint64_t seed);

struct ConditionAudit {
  bool ok = true;
  std::string failed;  // condition tag, empty when ok
  std::optional<CPoint> where;
  double min_slice_eigen = 0.0;
  double min_grad = 0.0;
  double min_grad_z = 0.0;
  double max_interior_phi = 0.0;
};

// Defining-function conditions on a sample net: phi < 0 inside, d phi != 0 and
// d_z phi != 0 on the boundary, slice Hessian positive definite in the closure.
ConditionAudit audit_conditions(const FamilyDefinition& F, int count, std::uint64_t seed);

// Minimum eigenvalue of the Levi form of phi on the complex tangent space
// {v : d phi(v) = 0} at a boundary point. Throws NotOnBoundary.
double strong_pseudoconvexity_margin(const FamilyDefinition& F, const CPoint& p);

struct BoundaryRay {
  CPoint anchor;                  // boundary point
  std::vector<cplx> direction;    // unit inward slice direction
  std::vector<double> t;          // distances from the anchor
  std::vector<double> phi;        // phi at the samples, increasing to 0
  std::vector<CPoint> points;

  std::size_t size() const { return t.size(); }
};

// Samples along the inward normal with phi(t_k) = phi_start * ratio^k.
BoundaryRay boundary_ray(const FamilyDefinition& F, cplx s, const CPoint& p, int count,
                         double phi_start = -0.1, double ratio = 0.5);

// g = -log(-phi) and its slice quantities.
FieldPtr g_potential(const FamilyDefinition& F);
// g^{a bbar} g_a g_bbar at an interior point.
double g_gradient_norm(const FamilyDefinition& F, const CPoint& p);
// Closed-form inverse of (g_{a bbar}) through the Hessian of phi (rank-one update).
Eigen::MatrixXcd g_inverse_closed_form(const FamilyDefinition& F, const CPoint& p);

}  // namespace kefam

#pragma once

// Flow of the horizontal lift v_H over straight base segments, the envelope
// bound on phi along trajectories, and the holomorphy defect of the map
// (p, s) -> flow endpoint.

#include <functional>
#include <vector>

#include "kefam/family_geom.hpp"

namespace kefam {

// Lift coefficients L(p) with v_H = d/ds - L^a d/dz^a.
using LiftField = std::function<Eigen::VectorXcd(const CPoint&)>;

LiftField lift_of(HSourcePtr src);

// Numeric lift along the segment [s0, target]: nine-slice stacks at stations
// spaced at most `spacing` apart, lift coefficients interpolated linearly in s
// between neighbouring stations (by projection of s onto the segment).
struct StationOptions {
  double spacing = 0.02;
  int resolution = 65;
  int level = 0;  // Fefferman level; 0 selects n + 1
  double delta = 2e-2;
  double tol = 1e-12;  // Newton tolerance per slice
};
LiftField station_lift(const FamilyDefinition& F, cplx s0, cplx target, const StationOptions& opt = {});

struct FlowOptions {
  double tol = 1e-8;  // absolute and relative per-step tolerance
  int samples = 32;   // recorded samples after the start
};

struct FlowPath {
  CPoint start;
  cplx target{};
  std::vector<double> t;  // base parameter, |s(t) - s0| = t
  std::vector<CPoint> points;
  std::vector<double> phi;

  const CPoint& end() const { return points.back(); }
};

// Integrates dz/dt = -e L(z, s(t)), s(t) = s0 + t e, e = (target - s0)/|target - s0|
// with an adaptive Dormand-Prince pair. Throws LeftDomain when phi >= 0 is reached.
FlowPath integrate_flow(const FamilyDefinition& F, const LiftField& lift, const CPoint& p, cplx target,
                        const FlowOptions& opt = {});

struct EnvelopeVerdict {
  bool holds = false;
  double min_c = 0.0;  // max over samples of |log|f(t)/f(0)|| / t
};
// e^{-ct} < |f(t)/f(0)| < e^{ct} at every sample t > 0, f = phi along the path.
// Throws InvalidArgument with fewer than ten samples or f(0) >= 0.
EnvelopeVerdict envelope_check(const FlowPath& path, double c);

struct TrivializationReport {
  double defect = 0.0;  // sup |d Phi / d sbar|
  std::vector<double> per_pair;  // starts x base, row-major
  CPoint worst_start;
  cplx worst_base{};
};
// Phi(p, s) = endpoint of the flow from p (over p.s) to s; d/dsbar by fourth-order
// central differences with step h around each base value.
TrivializationReport trivialization_residual(const FamilyDefinition& F, const LiftField& lift,
                                             const std::vector<CPoint>& starts, const std::vector<cplx>& base,
                                             double h = 1e-2, const FlowOptions& opt = {1e-12, 8});

}  // namespace kefam

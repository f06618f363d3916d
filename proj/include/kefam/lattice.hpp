#pragma once

// Uniform lattices over a slice (2n real axes; axis 2a is Re z_a, 2a+1 is
// Im z_a) and the finite-difference stencils for Wirtinger derivatives.

#include <array>
#include <complex>
#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

namespace kefam {

using cplx = std::complex<double>;

class Lattice {
 public:
  Lattice() = default;
  // `lo` and `spacing` per real axis, `counts` nodes per real axis.
  Lattice(int n, std::vector<double> lo, std::vector<double> spacing, std::vector<int> counts);

  int dim() const { return n_; }
  int axes() const { return 2 * n_; }
  std::size_t size() const { return size_; }
  int count(int axis) const { return counts_[static_cast<std::size_t>(axis)]; }
  double spacing(int axis) const { return spacing_[static_cast<std::size_t>(axis)]; }
  double lo(int axis) const { return lo_[static_cast<std::size_t>(axis)]; }
  std::size_t stride(int axis) const { return strides_[static_cast<std::size_t>(axis)]; }

  std::size_t index(std::span<const int> ijk) const;
  void unravel(std::size_t idx, std::span<int> ijk) const;
  double coordinate(int axis, int i) const { return lo(axis) + i * spacing(axis); }
  std::vector<cplx> position(std::size_t idx) const;

  // Node displaced by `offset` grid steps; nullopt when it leaves the array.
  std::optional<std::size_t> shifted(std::size_t idx, std::span<const int> offset) const;
  // Node coinciding with z to within tol * spacing on every axis.
  std::optional<std::size_t> node_at(std::span<const cplx> z, double tol = 1e-6) const;

  bool same_layout(const Lattice& o, double tol = 1e-12) const;

 private:
  int n_ = 0;
  std::vector<double> lo_, spacing_;
  std::vector<int> counts_;
  std::vector<std::size_t> strides_;
  std::size_t size_ = 0;
};

inline constexpr int kMaxAxes = 8;

struct StencilTap {
  std::array<int, kMaxAxes> offset{};
  cplx weight;
};

struct Stencil {
  std::vector<StencilTap> taps;
  int accuracy = 4;  // formal order of accuracy
};

// 1-D derivative rules along one axis (weights already scaled by spacing).
enum class AxisRule { Central4, Central2, Forward2, Backward2 };

// d/dz_a (conj = false) or d/dzbar_a (conj = true).
Stencil wirtinger_first(const Lattice& L, int a, bool conj, AxisRule rule_x, AxisRule rule_y);
// f_{a bbar}: mixed holomorphic/antiholomorphic second derivative.
Stencil wirtinger_mixed(const Lattice& L, int a, int b, std::span<const AxisRule> rules);
// f_{ab}: pure holomorphic second derivative.
Stencil wirtinger_holomorphic(const Lattice& L, int a, int b, std::span<const AxisRule> rules);

// Apply a stencil at node idx; `mask` (optional) must be true at every tap.
// Returns nullopt when a tap leaves the array or the mask.
std::optional<cplx> apply_stencil(const Lattice& L, const Stencil& S, std::size_t idx,
                                  std::span<const cplx> values, std::span<const char> mask = {});

// Nodes and weights of the tensor-product cubic Lagrange interpolant at z;
// nullopt when the 4^d support leaves the array.
std::optional<std::vector<std::pair<std::size_t, double>>> cubic_support(const Lattice& L, std::span<const cplx> z);

// Tensor-product cubic Lagrange interpolation at an arbitrary point.
// Returns nullopt if the 4^d support leaves the array or the mask.
std::optional<cplx> interpolate_cubic(const Lattice& L, std::span<const cplx> z,
                                      std::span<const cplx> values, std::span<const char> mask = {});

}  // namespace kefam

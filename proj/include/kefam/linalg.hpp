#pragma once

// Small dense Hermitian helpers shared by the geometry modules.

#include <Eigen/Dense>
#include <complex>

namespace kefam {

using cplx = std::complex<double>;

// Hermitian part (A + A^H) / 2.
Eigen::MatrixXcd hermitian_part(const Eigen::MatrixXcd& A);
double min_eigenvalue(const Eigen::MatrixXcd& A);
Eigen::VectorXd eigenvalues(const Eigen::MatrixXcd& A);

// Positive definite check via Cholesky of the Hermitian part.
bool positive_definite(const Eigen::MatrixXcd& A);
// log det of a Hermitian positive definite matrix; NaN when not positive.
double log_det_hpd(const Eigen::MatrixXcd& A);

// Largest and smallest generalized eigenvalues of (A, B), B positive definite.
struct PinchBounds {
  double lo;
  double hi;
};
PinchBounds relative_spectrum(const Eigen::MatrixXcd& A, const Eigen::MatrixXcd& B);

}  // namespace kefam

#include "kefam/linalg.hpp"

#include <cmath>
#include <limits>

namespace kefam {

Eigen::MatrixXcd hermitian_part(const Eigen::MatrixXcd& A) { return 0.5 * (A + A.adjoint()); }

Eigen::VectorXd eigenvalues(const Eigen::MatrixXcd& A) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(hermitian_part(A), Eigen::EigenvaluesOnly);
  return es.eigenvalues();
}

double min_eigenvalue(const Eigen::MatrixXcd& A) { return eigenvalues(A).minCoeff(); }

bool positive_definite(const Eigen::MatrixXcd& A) {
  Eigen::LLT<Eigen::MatrixXcd> llt(hermitian_part(A));
  return llt.info() == Eigen::Success;
}

double log_det_hpd(const Eigen::MatrixXcd& A) {
  Eigen::LLT<Eigen::MatrixXcd> llt(hermitian_part(A));
  if (llt.info() != Eigen::Success) return std::numeric_limits<double>::quiet_NaN();
  double acc = 0.0;
  const auto& L = llt.matrixLLT();
  for (Eigen::Index i = 0; i < L.rows(); ++i) acc += 2.0 * std::log(L(i, i).real());
  return acc;
}

PinchBounds relative_spectrum(const Eigen::MatrixXcd& A, const Eigen::MatrixXcd& B) {
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXcd> es(hermitian_part(A), hermitian_part(B),
                                                                Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  return {ev.minCoeff(), ev.maxCoeff()};
}

}  // namespace kefam

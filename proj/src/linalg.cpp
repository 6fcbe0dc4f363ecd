#include "heckmi/linalg.hpp"

#include <algorithm>
#include <cmath>

#include "heckmi/errors.hpp"

namespace heckmi {

bool is_symmetric(const Matrix& m, double tol) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= tol * scale;
}

Matrix nearest_psd(const Matrix& m, double floor) {
  if (!is_symmetric(m)) throw ContractViolation("nearest_psd: input is not symmetric");
  if (m.size() == 0) return m;
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  const Vector& lambda = es.eigenvalues();
  if (lambda.minCoeff() >= floor) return m;
  const Vector clipped = lambda.cwiseMax(floor);
  Matrix out = es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

double psd_projection_distance(const Matrix& m, double floor) {
  return (nearest_psd(m, floor) - m).norm();
}

Matrix spd_inverse(const Matrix& m, double ridge) {
  const Eigen::Index n = m.rows();
  Matrix a = 0.5 * (m + m.transpose());
  a.diagonal().array() += ridge;
  Eigen::LDLT<Matrix> ldlt(a);
  if (ldlt.info() == Eigen::Success && ldlt.isPositive() &&
      ldlt.vectorD().minCoeff() > 0.0) {
    Matrix inv = ldlt.solve(Matrix::Identity(n, n));
    return 0.5 * (inv + inv.transpose());
  }
  // Fall back to a spectral pseudo-inverse with the eigen floor.
  Eigen::SelfAdjointEigenSolver<Matrix> es(a);
  const Vector inv_lambda = es.eigenvalues().cwiseMax(kEigenFloor).cwiseInverse();
  Matrix inv = es.eigenvectors() * inv_lambda.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (inv + inv.transpose());
}

Matrix psd_factor(const Matrix& m) {
  Eigen::LLT<Matrix> llt(0.5 * (m + m.transpose()));
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.transpose()));
  const Vector root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal();
}

Eigen::Index vech_size(Eigen::Index dim) { return dim * (dim + 1) / 2; }

Vector vech(const Matrix& m) {
  Vector v(vech_size(m.rows()));
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = j; i < m.rows(); ++i) v(k++) = m(i, j);
  return v;
}

Matrix unvech(const Vector& v, Eigen::Index dim) {
  if (v.size() != vech_size(dim)) throw ContractViolation("unvech: size mismatch");
  Matrix m(dim, dim);
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < dim; ++j)
    for (Eigen::Index i = j; i < dim; ++i) {
      m(i, j) = v(k);
      m(j, i) = v(k);
      ++k;
    }
  return m;
}

}  // namespace heckmi

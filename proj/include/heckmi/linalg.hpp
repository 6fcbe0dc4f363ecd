#pragma once

#include <Eigen/Dense>

namespace heckmi {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Eigenvalue floor used by every PSD projection.
inline constexpr double kEigenFloor = 1e-10;

/// Projects a symmetric matrix onto {M : eigenvalues >= floor} in Frobenius
/// norm by clipping its spectrum. Inputs already satisfying the floor are
/// returned unchanged. Throws ContractViolation for non-symmetric input.
Matrix nearest_psd(const Matrix& m, double floor = kEigenFloor);

/// Frobenius distance moved by nearest_psd.
double psd_projection_distance(const Matrix& m, double floor = kEigenFloor);

bool is_symmetric(const Matrix& m, double tol = 1e-9);

/// Inverse of a symmetric PSD matrix after adding ridge * I.
Matrix spd_inverse(const Matrix& m, double ridge = 0.0);

/// A factor F with F F^T = m for a PSD matrix (eigen-based, tolerates
/// singular input).
Matrix psd_factor(const Matrix& m);

/// Half-vectorisation (column-major lower triangle) and its inverse.
Vector vech(const Matrix& m);
Matrix unvech(const Vector& v, Eigen::Index dim);
Eigen::Index vech_size(Eigen::Index dim);

}  // namespace heckmi

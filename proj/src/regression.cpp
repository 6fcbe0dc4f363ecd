#include "heckmi/regression.hpp"

#include <cmath>

#include "heckmi/special.hpp"

namespace heckmi {

RegressionFit least_squares(const Matrix& x, const Vector& y) {
  RegressionFit out;
  const Eigen::Index n = x.rows(), p = x.cols();
  if (n <= p) return out;
  Eigen::ColPivHouseholderQR<Matrix> qr(x);
  if (qr.rank() < p) return out;
  out.beta = qr.solve(y);
  const Vector resid = y - x * out.beta;
  out.sigma2 = resid.squaredNorm() / static_cast<double>(n - p);
  const Matrix xtx = x.transpose() * x;
  out.vcov = out.sigma2 * spd_inverse(xtx);
  out.ok = out.beta.allFinite();
  return out;
}

double probit_loglik(const Matrix& x, const Vector& y01, const Vector& beta) {
  const Vector eta = x * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    ll += log_std_normal_cdf(y01(i) > 0.5 ? eta(i) : -eta(i));
  return ll;
}

RegressionFit probit(const Matrix& x, const Vector& y01) {
  RegressionFit out;
  const Eigen::Index n = x.rows(), p = x.cols();
  if (n <= p) return out;
  const double ones = y01.sum();
  if (ones < 0.5 || ones > static_cast<double>(n) - 0.5) return out;

  Vector beta = Vector::Zero(p);
  double ll = probit_loglik(x, y01, beta);
  Matrix info(p, p);
  for (int iter = 0; iter < 100; ++iter) {
    const Vector eta = x * beta;
    Vector score_w(n), info_w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double q = y01(i) > 0.5 ? 1.0 : -1.0;
      const double lam = inverse_mills(q * eta(i));
      score_w(i) = q * lam;
      info_w(i) = lam * (lam + q * eta(i));
    }
    const Vector grad = x.transpose() * score_w;
    info = x.transpose() * info_w.asDiagonal() * x;
    Eigen::LDLT<Matrix> ldlt(info);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return out;
    const Vector step = ldlt.solve(grad);
    double t = 1.0;
    Vector next = beta + step;
    double ll_next = probit_loglik(x, y01, next);
    while (!(ll_next >= ll - 1e-12) && t > 1e-8) {
      t *= 0.5;
      next = beta + t * step;
      ll_next = probit_loglik(x, y01, next);
    }
    if (!(ll_next >= ll - 1e-12)) return out;
    beta = next;
    const double change = ll_next - ll;
    ll = ll_next;
    if (beta.cwiseAbs().maxCoeff() > 30.0) return out;  // separation
    if (std::abs(change) < 1e-11 * (1.0 + std::abs(ll)) && grad.cwiseAbs().maxCoeff() < 1e-6 * (1.0 + std::abs(ll))) {
      out.ok = true;
      break;
    }
    if (step.cwiseAbs().maxCoeff() < 1e-12) {
      out.ok = true;
      break;
    }
  }
  if (!out.ok) return out;
  if (ll > -1e-6) {  // separation: the likelihood approaches its supremum 0
    out.ok = false;
    return out;
  }
  // Information at the final estimate.
  const Vector eta = x * beta;
  Vector info_w(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double q = y01(i) > 0.5 ? 1.0 : -1.0;
    const double lam = inverse_mills(q * eta(i));
    info_w(i) = lam * (lam + q * eta(i));
  }
  info = x.transpose() * info_w.asDiagonal() * x;
  out.beta = beta;
  out.vcov = spd_inverse(info);
  return out;
}

}  // namespace heckmi

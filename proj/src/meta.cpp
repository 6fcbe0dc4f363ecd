#include "heckmi/meta.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/tools/minima.hpp>

#include "heckmi/errors.hpp"
#include "heckmi/optimize.hpp"

namespace heckmi {

namespace {

// Keeps V_i invertible when psi and S_i both vanish.
constexpr double kJitter = 1e-12;

void validate(const MetaInput& in) {
  if (in.estimates.size() < 2)
    throw PoolingError("meta-analysis needs at least 2 clusters, got " +
                       std::to_string(in.estimates.size()));
  if (in.vcovs.size() != in.estimates.size())
    throw ContractViolation("meta-analysis: estimates and vcovs differ in length");
  const Eigen::Index d = in.dim();
  if (d < 1) throw ContractViolation("meta-analysis: empty estimate vectors");
  for (std::size_t i = 0; i < in.size(); ++i)
    if (in.estimates[i].size() != d || in.vcovs[i].rows() != d || in.vcovs[i].cols() != d)
      throw ContractViolation("meta-analysis: inconsistent dimensions");
}

struct GlsResult {
  Vector mean;
  Matrix s_theta;
  double restricted_loglik;
};

GlsResult gls(const MetaInput& in, const Matrix& psi) {
  const Eigen::Index d = in.dim();
  Matrix sum_w = Matrix::Zero(d, d);
  Vector sum_wy = Vector::Zero(d);
  double logdet_v = 0.0;
  std::vector<Matrix> w(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    Matrix v = psi + in.vcovs[i];
    v.diagonal().array() += kJitter;
    Eigen::LLT<Matrix> llt(0.5 * (v + v.transpose()));
    if (llt.info() != Eigen::Success) return {Vector(), Matrix(), -std::numeric_limits<double>::infinity()};
    logdet_v += 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    w[i] = llt.solve(Matrix::Identity(d, d));
    sum_w += w[i];
    sum_wy += w[i] * in.estimates[i];
  }
  Eigen::LLT<Matrix> llt_sum(0.5 * (sum_w + sum_w.transpose()));
  if (llt_sum.info() != Eigen::Success) return {Vector(), Matrix(), -std::numeric_limits<double>::infinity()};
  const Vector mean = llt_sum.solve(sum_wy);
  double quad = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const Vector e = in.estimates[i] - mean;
    quad += e.dot(w[i] * e);
  }
  const double logdet_sum = 2.0 * llt_sum.matrixLLT().diagonal().array().log().sum();
  Matrix s_theta = llt_sum.solve(Matrix::Identity(d, d));
  s_theta = 0.5 * (s_theta + s_theta.transpose());
  return {mean, s_theta, -0.5 * (logdet_v + logdet_sum + quad)};
}

Matrix psi_from_cholesky(const Vector& gamma, Eigen::Index d, PsiStructure structure) {
  Matrix l = Matrix::Zero(d, d);
  if (structure == PsiStructure::diagonal) {
    for (Eigen::Index j = 0; j < d; ++j) l(j, j) = std::exp(gamma(j));
  } else {
    Eigen::Index k = 0;
    for (Eigen::Index j = 0; j < d; ++j)
      for (Eigen::Index i = j; i < d; ++i) l(i, j) = (i == j) ? std::exp(gamma(k++)) : gamma(k++);
  }
  return l * l.transpose();
}

Vector cholesky_start(const Matrix& psi0, PsiStructure structure) {
  const Eigen::Index d = psi0.rows();
  if (structure == PsiStructure::diagonal) {
    Vector g(d);
    for (Eigen::Index j = 0; j < d; ++j) g(j) = 0.5 * std::log(psi0(j, j));
    return g;
  }
  Eigen::LLT<Matrix> llt(psi0);
  const Matrix l = llt.matrixL();
  Vector g(vech_size(d));
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index i = j; i < d; ++i) g(k++) = (i == j) ? std::log(l(i, j)) : l(i, j);
  return g;
}

Matrix sample_covariance(const std::vector<Vector>& ys) {
  const Eigen::Index d = ys.front().size();
  Vector mean = Vector::Zero(d);
  for (const auto& y : ys) mean += y;
  mean /= static_cast<double>(ys.size());
  Matrix cov = Matrix::Zero(d, d);
  for (const auto& y : ys) cov += (y - mean) * (y - mean).transpose();
  return cov / static_cast<double>(ys.size() - 1);
}

Matrix mean_within(const MetaInput& in) {
  Matrix s = Matrix::Zero(in.dim(), in.dim());
  for (const auto& v : in.vcovs) s += v;
  return s / static_cast<double>(in.size());
}

// Covariance of vech(psi) under a Wishart approximation with k - 1 df.
Matrix moments_s_psi(const Matrix& m, std::size_t k) {
  const Eigen::Index d = m.rows();
  std::vector<std::pair<Eigen::Index, Eigen::Index>> idx;
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index i = j; i < d; ++i) idx.emplace_back(i, j);
  Matrix s(idx.size(), idx.size());
  for (std::size_t u = 0; u < idx.size(); ++u)
    for (std::size_t v = 0; v < idx.size(); ++v) {
      const auto [a, b] = idx[u];
      const auto [c, e] = idx[v];
      s(u, v) = (m(a, c) * m(b, e) + m(a, e) * m(b, c)) / static_cast<double>(k - 1);
    }
  return s;
}

MetaFit moments_fit(const MetaInput& in) {
  const Matrix raw = sample_covariance(in.estimates) - mean_within(in);
  Matrix psi = nearest_psd(0.5 * (raw + raw.transpose()), 0.0);
  const GlsResult g = gls(in, psi);
  MetaFit fit;
  fit.theta_hat = g.mean;
  fit.psi_hat = psi;
  fit.s_theta = g.s_theta;
  fit.s_psi = moments_s_psi(psi + mean_within(in), in.size());
  fit.restricted_loglik = g.restricted_loglik;
  fit.converged = false;
  fit.moments_fallback = true;
  fit.n_clusters = in.size();
  return fit;
}

}  // namespace

PsiStructure psi_structure_from_string(const std::string& s) {
  if (s == "full") return PsiStructure::full;
  if (s == "diagonal") return PsiStructure::diagonal;
  throw ValidationError("meta.psi_structure must be 'full' or 'diagonal', got '" + s + "'");
}

const char* to_string(PsiStructure s) { return s == PsiStructure::full ? "full" : "diagonal"; }

double restricted_loglik(const MetaInput& input, const Matrix& psi) {
  validate(input);
  return gls(input, psi).restricted_loglik;
}

MetaFit reml_univariate(const MetaInput& input) {
  validate(input);
  if (input.dim() != 1) throw ContractViolation("reml_univariate: dimension must be 1");
  const std::size_t k = input.size();
  std::vector<double> y(k), v(k);
  for (std::size_t i = 0; i < k; ++i) {
    y[i] = input.estimates[i](0);
    v[i] = std::max(input.vcovs[i](0, 0), 0.0);
  }
  auto objective = [&](double tau2) {  // negative restricted log-likelihood
    double sw = 0.0, swy = 0.0, logdet = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double vi = v[i] + tau2 + kJitter;
      sw += 1.0 / vi;
      swy += y[i] / vi;
      logdet += std::log(vi);
    }
    const double mu = swy / sw;
    double quad = 0.0;
    for (std::size_t i = 0; i < k; ++i) quad += (y[i] - mu) * (y[i] - mu) / (v[i] + tau2 + kJitter);
    return 0.5 * (logdet + std::log(sw) + quad);
  };

  double ymean = 0.0;
  for (double yi : y) ymean += yi;
  ymean /= static_cast<double>(k);
  double spread = 0.0;
  for (double yi : y) spread += (yi - ymean) * (yi - ymean);
  const double vmax = *std::max_element(v.begin(), v.end());
  const double upper = std::max(10.0 * (spread + vmax), 1e-8);

  // Coarse scan over {0} and a geometric grid, then Brent within the bracket.
  constexpr int kGrid = 80;
  std::vector<double> grid{0.0};
  for (int i = 0; i <= kGrid; ++i) grid.push_back(upper * std::pow(1e-12, 1.0 - static_cast<double>(i) / kGrid));
  std::size_t best = 0;
  double best_val = objective(0.0);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const double val = objective(grid[i]);
    if (val < best_val) {
      best_val = val;
      best = i;
    }
  }
  double tau2 = grid[best];
  const double lo = best == 0 ? 0.0 : grid[best - 1];
  const double hi = grid[std::min(best + 1, grid.size() - 1)];
  if (hi > lo) {
    auto r = boost::math::tools::brent_find_minima(objective, lo, hi, std::numeric_limits<double>::digits);
    if (r.second <= best_val) tau2 = r.first;
  }
  if (objective(0.0) <= objective(tau2)) tau2 = 0.0;

  double sw = 0.0, sw2 = 0.0, sw3 = 0.0, swy = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double w = 1.0 / (v[i] + tau2 + kJitter);
    sw += w;
    sw2 += w * w;
    sw3 += w * w * w;
    swy += w * y[i];
  }
  const double info = 0.5 * (sw2 - 2.0 * sw3 / sw + (sw2 * sw2) / (sw * sw));

  MetaFit fit;
  fit.theta_hat = Vector::Constant(1, swy / sw);
  fit.psi_hat = Matrix::Constant(1, 1, tau2);
  fit.s_theta = Matrix::Constant(1, 1, 1.0 / sw);
  fit.s_psi = Matrix::Constant(1, 1, info > 0.0 ? 1.0 / info : 0.0);
  fit.restricted_loglik = -objective(tau2);
  fit.converged = true;
  fit.n_clusters = k;
  return fit;
}

MetaFit reml_multivariate(const MetaInput& input, PsiStructure structure) {
  validate(input);
  const Eigen::Index d = input.dim();
  if (d == 1) return reml_univariate(input);

  // Method-of-moments start, kept away from the boundary.
  const Matrix within = mean_within(input);
  const Matrix raw = sample_covariance(input.estimates) - within;
  Matrix psi0 = nearest_psd(0.5 * (raw + raw.transpose()), 0.0);
  const double scale = std::max(1e-6, 0.05 * within.diagonal().mean());
  psi0.diagonal().array() += scale;
  if (structure == PsiStructure::diagonal) psi0 = Matrix(psi0.diagonal().asDiagonal());

  Objective obj;
  obj.value = [&](const Vector& g) {
    const double ll = gls(input, psi_from_cholesky(g, d, structure)).restricted_loglik;
    return std::isfinite(ll) ? -ll : std::numeric_limits<double>::infinity();
  };
  MinimizeOptions mo;
  mo.max_iterations = 500;
  MinimizeResult res;
  try {
    res = minimize(obj, cholesky_start(psi0, structure), mo);
  } catch (const DomainError&) {
    return moments_fit(input);
  }
  if (!res.converged) return moments_fit(input);

  const Matrix psi = psi_from_cholesky(res.x, d, structure);
  const GlsResult g = gls(input, psi);

  // Delta method from the Cholesky parameters to vech(psi).
  const Eigen::Index m = res.x.size();
  Matrix jac(vech_size(d), m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const double h = 1e-6 * std::max(1.0, std::abs(res.x(j)));
    Vector xp = res.x, xm = res.x;
    xp(j) += h;
    xm(j) -= h;
    jac.col(j) = (vech(psi_from_cholesky(xp, d, structure)) - vech(psi_from_cholesky(xm, d, structure))) / (2.0 * h);
  }
  Matrix s_psi = jac * res.inverse_hessian * jac.transpose();
  s_psi = 0.5 * (s_psi + s_psi.transpose());

  MetaFit fit;
  fit.theta_hat = g.mean;
  fit.psi_hat = psi;
  fit.s_theta = g.s_theta;
  fit.s_psi = nearest_psd(s_psi, 0.0);
  fit.restricted_loglik = g.restricted_loglik;
  fit.converged = true;
  fit.n_clusters = input.size();
  return fit;
}

MarginalModel pool_heckman(const std::vector<FitOutcome>& fits, PsiStructure structure) {
  std::vector<ClusterFit> usable;
  for (const auto& f : fits)
    if (const auto* cf = std::get_if<ClusterFit>(&f); cf && cf->converged) usable.push_back(*cf);
  return pool_heckman(usable, structure);
}

MarginalModel pool_heckman(const std::vector<ClusterFit>& fits, PsiStructure structure) {
  if (fits.size() < 2)
    throw PoolingError("pooling needs at least 2 estimable clusters, got " + std::to_string(fits.size()));
  const ModelLayout L = fits.front().layout;
  for (const auto& f : fits)
    if (f.layout.family != L.family || f.layout.p != L.p || f.layout.q != L.q || f.layout.has_rho != L.has_rho)
      throw ContractViolation("pool_heckman: cluster fits have different layouts");

  auto block = [&](Eigen::Index start, Eigen::Index len) {
    MetaInput in;
    for (const auto& f : fits) {
      const Vector theta = f.params.pack(L);
      in.estimates.push_back(theta.segment(start, len));
      in.vcovs.push_back(f.vcov.block(start, start, len, len));
    }
    return in;
  };

  MarginalModel model;
  model.layout = L;
  model.block_o = reml_multivariate(block(0, L.p), structure);
  if (L.q > 0) model.block_s = reml_multivariate(block(L.p, L.q), structure);
  if (L.has_sigma()) model.log_sigma = reml_univariate(block(L.sigma_index(), 1));
  if (L.has_rho) model.atanh_rho = reml_univariate(block(L.rho_index(), 1));
  for (const auto& f : fits) model.contributing_clusters.push_back(f.cluster_id);
  return model;
}

}  // namespace heckmi

#include "heckmi/draw.hpp"

#include <algorithm>
#include <cmath>

#include "heckmi/errors.hpp"
#include "heckmi/special.hpp"

namespace heckmi {

DrawnBlock draw_block(const MetaFit& fit, RngStream& rng) {
  DrawnBlock out;
  const Eigen::Index d = fit.dim();
  out.theta_star = draw_mvnormal(rng, fit.theta_hat, nearest_psd(fit.s_theta, 0.0));
  const Vector raw = draw_mvnormal(rng, vech(fit.psi_hat), nearest_psd(fit.s_psi, 0.0));
  if (d == 1) {
    out.psi_star = Matrix::Constant(1, 1, std::max(raw(0), 0.0));
    out.projection_distance = std::max(-raw(0), 0.0);
    return out;
  }
  const Matrix psi_raw = unvech(raw, d);
  out.psi_star = nearest_psd(psi_raw);
  out.projection_distance = (out.psi_star - psi_raw).norm();
  return out;
}

DrawnMarginal draw_marginal(const MarginalModel& model, RngStream& rng) {
  DrawnMarginal out;
  out.layout = model.layout;
  out.block_o = draw_block(model.block_o, rng);
  if (model.block_s) out.block_s = draw_block(*model.block_s, rng);
  if (model.log_sigma) out.log_sigma = draw_block(*model.log_sigma, rng);
  if (model.atanh_rho) out.atanh_rho = draw_block(*model.atanh_rho, rng);
  return out;
}

BlockPosterior block_posterior(const Vector& theta_star, const Matrix& psi_star,
                               const Vector* estimate, const Matrix* within) {
  if (!estimate) return {theta_star, psi_star};
  const Matrix psi_inv = spd_inverse(psi_star, kPrecisionRidge);
  const Matrix s_inv = spd_inverse(*within, kPrecisionRidge);
  const Matrix cov = spd_inverse(psi_inv + s_inv);
  const Vector mean = cov * (psi_inv * theta_star + s_inv * *estimate);
  return {mean, cov};
}

DrawnClusterParams draw_cluster(const ClusterFit* fit, const DrawnMarginal& marginal, RngStream& rng,
                                const std::string& cluster_id) {
  const ModelLayout& L = marginal.layout;
  if (fit && (fit->layout.p != L.p || fit->layout.q != L.q || fit->layout.has_rho != L.has_rho ||
              fit->layout.family != L.family))
    throw ContractViolation("draw_cluster: fit layout differs from the marginal model");

  Vector theta;
  if (fit) theta = fit->params.pack(L);
  auto draw = [&](const DrawnBlock& b, Eigen::Index start) {
    Vector est;
    Matrix within;
    if (fit) {
      est = theta.segment(start, b.theta_star.size());
      within = fit->vcov.block(start, start, b.theta_star.size(), b.theta_star.size());
    }
    const BlockPosterior post =
        block_posterior(b.theta_star, b.psi_star, fit ? &est : nullptr, fit ? &within : nullptr);
    return draw_mvnormal(rng, post.mean, nearest_psd(post.cov, 0.0));
  };

  DrawnClusterParams out;
  out.cluster_id = fit ? fit->cluster_id : cluster_id;
  out.from_marginal = fit == nullptr;
  out.beta_o_star = draw(marginal.block_o, 0);
  if (marginal.block_s) out.beta_s_star = draw(*marginal.block_s, L.p);
  if (marginal.log_sigma) out.sigma_star = std::exp(draw(*marginal.log_sigma, L.sigma_index())(0));
  if (marginal.atanh_rho) out.rho_star = std::tanh(draw(*marginal.atanh_rho, L.rho_index())(0));
  return out;
}

double continuous_imputation_mean(double eta_o, double eta_s, double sigma, double rho) {
  if (rho == 0.0) return eta_o;
  // phi(eta_s) / Phi(-eta_s) is the inverse Mills ratio at -eta_s.
  return eta_o - rho * sigma * inverse_mills(-eta_s);
}

double binary_imputation_probability(double eta_o, double eta_s, double rho, bool* fallback) {
  if (fallback) *fallback = false;
  const double denom = std_normal_cdf(-eta_s);
  if (denom < 1e-300) {
    if (fallback) *fallback = true;
    return std_normal_cdf(eta_o);
  }
  if (rho == 0.0) return std_normal_cdf(eta_o);
  return std::clamp(bvn_cdf(eta_o, -eta_s, -rho) / denom, 0.0, 1.0);
}

namespace {

Vector selection_index(const Matrix& x_selection, const DrawnClusterParams& params, Eigen::Index n) {
  if (params.beta_s_star.size() == 0) return Vector::Zero(n);
  return x_selection * params.beta_s_star;
}

}  // namespace

Vector impute_continuous(const Matrix& x_outcome, const Matrix& x_selection,
                         const DrawnClusterParams& params, RngStream& rng) {
  if (!params.sigma_star) throw ContractViolation("impute_continuous: sigma* missing");
  const Eigen::Index n = x_outcome.rows();
  const Vector eta_o = x_outcome * params.beta_o_star;
  const Vector eta_s = selection_index(x_selection, params, n);
  const double sigma = *params.sigma_star;
  Vector out(n);
  for (Eigen::Index i = 0; i < n; ++i)
    out(i) = draw_normal(rng, continuous_imputation_mean(eta_o(i), eta_s(i), sigma, params.rho_star), sigma);
  return out;
}

Vector impute_binary(const Matrix& x_outcome, const Matrix& x_selection,
                     const DrawnClusterParams& params, RngStream& rng, int* fallback_count) {
  const Eigen::Index n = x_outcome.rows();
  const Vector eta_o = x_outcome * params.beta_o_star;
  const Vector eta_s = selection_index(x_selection, params, n);
  Vector out(n);
  int fallbacks = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    bool fb = false;
    const double p = binary_imputation_probability(eta_o(i), eta_s(i), params.rho_star, &fb);
    fallbacks += fb ? 1 : 0;
    out(i) = draw_bernoulli(rng, p);
  }
  if (fallback_count) *fallback_count += fallbacks;
  return out;
}

}  // namespace heckmi

#include "heckmi/heckman.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <limits>

#include "heckmi/errors.hpp"
#include "heckmi/optimize.hpp"
#include "heckmi/regression.hpp"
#include "heckmi/special.hpp"

namespace heckmi {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kTwoPi = 6.283185307179586477;
// Beyond this |atanh rho| the likelihood is treated as non-finite.
constexpr double kMaxAtanhRho = 8.0;

double loglik_continuous_impl(const ModelLayout& L, const Vector& theta, const ClusterData& d,
                              Vector* grad) {
  const Eigen::Index n = d.n();
  const Vector eta_o = d.x_outcome * theta.head(L.p);
  Vector eta_s;
  if (L.q > 0) eta_s = d.x_selection * theta.segment(L.p, L.q);
  const double log_sigma = theta(L.sigma_index());
  const double sigma = std::exp(log_sigma);
  const double tau = L.has_rho ? theta(L.rho_index()) : 0.0;
  if (std::abs(tau) > kMaxAtanhRho || !std::isfinite(sigma) || sigma <= 0.0) return kNaN;
  const double rho = std::tanh(tau);
  const double s = std::sqrt((1.0 - rho) * (1.0 + rho));

  Vector w_o, w_s;
  double g_sigma = 0.0, g_tau = 0.0;
  if (grad) {
    w_o = Vector::Zero(n);
    if (L.q > 0) w_s = Vector::Zero(n);
  }
  double ll = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (d.r(i) == 0) {
      if (L.q == 0) continue;
      ll += log_std_normal_cdf(-eta_s(i));
      if (grad) w_s(i) = -inverse_mills(-eta_s(i));
      continue;
    }
    const double e = (d.y(i) - eta_o(i)) / sigma;
    ll += log_std_normal_pdf(e) - log_sigma;
    if (L.q == 0) {
      if (grad) {
        w_o(i) = e / sigma;
        g_sigma += e * e - 1.0;
      }
      continue;
    }
    const double a = (eta_s(i) + rho * e) / s;
    ll += log_std_normal_cdf(a);
    if (grad) {
      const double m = inverse_mills(a);
      w_o(i) = (e - m * rho / s) / sigma;
      g_sigma += e * e - m * rho * e / s - 1.0;
      w_s(i) = m / s;
      g_tau += m * (e + rho * eta_s(i)) / s;
    }
  }
  if (grad) {
    grad->resize(L.size());
    grad->head(L.p) = d.x_outcome.transpose() * w_o;
    if (L.q > 0) grad->segment(L.p, L.q) = d.x_selection.transpose() * w_s;
    (*grad)(L.sigma_index()) = g_sigma;
    if (L.has_rho) (*grad)(L.rho_index()) = g_tau;
  }
  return ll;
}

double loglik_binary_impl(const ModelLayout& L, const Vector& theta, const ClusterData& d,
                          Vector* grad) {
  const Eigen::Index n = d.n();
  const Vector eta_o = d.x_outcome * theta.head(L.p);
  Vector eta_s;
  if (L.q > 0) eta_s = d.x_selection * theta.segment(L.p, L.q);
  const double tau = L.has_rho ? theta(L.rho_index()) : 0.0;
  if (std::abs(tau) > kMaxAtanhRho) return kNaN;
  const double rho = std::tanh(tau);
  const double s2 = (1.0 - rho) * (1.0 + rho);
  const double s = std::sqrt(s2);

  Vector w_o, w_s;
  double g_tau = 0.0;
  if (grad) {
    w_o = Vector::Zero(n);
    if (L.q > 0) w_s = Vector::Zero(n);
  }
  double ll = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (d.r(i) == 0) {
      if (L.q == 0) continue;
      ll += log_std_normal_cdf(-eta_s(i));
      if (grad) w_s(i) = -inverse_mills(-eta_s(i));
      continue;
    }
    const double sgn = d.y(i) > 0.5 ? 1.0 : -1.0;
    if (L.q == 0) {
      ll += log_std_normal_cdf(sgn * eta_o(i));
      if (grad) w_o(i) = sgn * inverse_mills(sgn * eta_o(i));
      continue;
    }
    const double log_prob = log_bvn_cdf(sgn * eta_o(i), eta_s(i), sgn * rho);
    if (!std::isfinite(log_prob)) return -std::numeric_limits<double>::infinity();
    ll += log_prob;
    if (grad) {
      const double eo = eta_o(i), es = eta_s(i);
      w_o(i) = sgn * std::exp(log_std_normal_pdf(eo) + log_std_normal_cdf((es - rho * eo) / s) - log_prob);
      w_s(i) = std::exp(log_std_normal_pdf(es) + log_std_normal_cdf(sgn * (eo - rho * es) / s) - log_prob);
      const double log_pdf2 = -(eo * eo - 2.0 * rho * eo * es + es * es) / (2.0 * s2) - std::log(kTwoPi * s);
      g_tau += sgn * std::exp(log_pdf2 - log_prob) * s2;
    }
  }
  if (grad) {
    grad->resize(L.size());
    grad->head(L.p) = d.x_outcome.transpose() * w_o;
    if (L.q > 0) grad->segment(L.p, L.q) = d.x_selection.transpose() * w_s;
    if (L.has_rho) (*grad)(L.rho_index()) = g_tau;
  }
  return ll;
}

ModelLayout layout_from_params(const HeckmanParams& params, Family family) {
  ModelLayout L;
  L.family = family;
  L.p = params.beta_o.size();
  L.q = params.beta_s.size();
  L.has_rho = L.q > 0;
  return L;
}

// Rows with r == 1.
std::vector<Eigen::Index> observed_rows(const ClusterData& d) {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < d.n(); ++i)
    if (d.r(i) == 1) rows.push_back(i);
  return rows;
}

}  // namespace

const char* to_string(Family f) { return f == Family::continuous ? "continuous" : "binary"; }

Family family_from_string(const std::string& s) {
  if (s == "continuous") return Family::continuous;
  if (s == "binary") return Family::binary;
  throw ValidationError("unknown family '" + s + "' (expected continuous or binary)");
}

double HeckmanParams::sigma() const { return std::exp(log_sigma); }
double HeckmanParams::rho() const { return std::tanh(atanh_rho); }

Vector HeckmanParams::pack(const ModelLayout& L) const {
  if (beta_o.size() != L.p || beta_s.size() != L.q)
    throw ContractViolation("HeckmanParams::pack: layout mismatch");
  Vector theta(L.size());
  theta.head(L.p) = beta_o;
  if (L.q > 0) theta.segment(L.p, L.q) = beta_s;
  if (L.has_sigma()) theta(L.sigma_index()) = log_sigma;
  if (L.has_rho) theta(L.rho_index()) = atanh_rho;
  return theta;
}

HeckmanParams HeckmanParams::unpack(const ModelLayout& L, const Vector& theta) {
  if (theta.size() != L.size()) throw ContractViolation("HeckmanParams::unpack: size mismatch");
  HeckmanParams p;
  p.beta_o = theta.head(L.p);
  p.beta_s = theta.segment(L.p, L.q);
  if (L.has_sigma()) p.log_sigma = theta(L.sigma_index());
  if (L.has_rho) p.atanh_rho = theta(L.rho_index());
  return p;
}

ModelLayout layout_for(const ClusterData& data, Family family, const FitOptions& options) {
  ModelLayout L;
  L.family = family;
  L.p = data.x_outcome.cols();
  L.q = options.outcome_only ? 0 : data.x_selection.cols();
  L.has_rho = !options.outcome_only && !options.fix_rho_zero;
  return L;
}

double loglik(const ModelLayout& layout, const Vector& theta, const ClusterData& data,
              Vector* gradient) {
  if (theta.size() != layout.size()) throw ContractViolation("loglik: parameter size mismatch");
  return layout.family == Family::continuous ? loglik_continuous_impl(layout, theta, data, gradient)
                                             : loglik_binary_impl(layout, theta, data, gradient);
}

double loglik_continuous(const HeckmanParams& params, const ClusterData& data) {
  const ModelLayout L = layout_from_params(params, Family::continuous);
  return loglik(L, params.pack(L), data);
}

double loglik_binary(const HeckmanParams& params, const ClusterData& data) {
  const ModelLayout L = layout_from_params(params, Family::binary);
  return loglik(L, params.pack(L), data);
}

Eigen::Index minimum_observed(Eigen::Index p, Eigen::Index q) { return 2 * (p + q + 2); }

HeckmanParams two_step_start(const ClusterData& data, Family family, const FitOptions& options) {
  const ModelLayout L = layout_for(data, family, options);
  const Eigen::Index n = data.n();
  if (n < L.p + L.q + 2) throw NonEstimableError("too few rows for a two-step start");
  const auto obs = observed_rows(data);
  const auto n_obs = static_cast<Eigen::Index>(obs.size());
  if (n_obs <= L.p) throw NonEstimableError("too few observed rows for the outcome equation");

  HeckmanParams start;
  start.beta_s = Vector::Zero(L.q);
  Vector eta_s;
  if (L.q > 0) {
    if (n_obs == n) throw NonEstimableError("no selection variation (all rows observed)");
    const RegressionFit sel = probit(data.x_selection, data.r.cast<double>());
    if (!sel.ok) throw NonEstimableError("selection probit not estimable (separation)");
    start.beta_s = sel.beta;
    eta_s = data.x_selection * sel.beta;
  }

  Matrix xo(n_obs, L.p);
  Vector yo(n_obs);
  for (Eigen::Index k = 0; k < n_obs; ++k) {
    xo.row(k) = data.x_outcome.row(obs[k]);
    yo(k) = data.y(obs[k]);
  }

  if (family == Family::binary) {
    const RegressionFit out = probit(xo, yo);
    if (!out.ok) throw NonEstimableError("outcome probit not estimable (separation)");
    start.beta_o = out.beta;
    start.atanh_rho = 0.0;
    return start;
  }

  if (L.q == 0 || !L.has_rho) {
    const RegressionFit out = least_squares(xo, yo);
    if (!out.ok) throw NonEstimableError("outcome regression is rank deficient");
    start.beta_o = out.beta;
    const double rss = (yo - xo * out.beta).squaredNorm();
    start.log_sigma = 0.5 * std::log(std::max(rss / static_cast<double>(n_obs), 1e-12));
    return start;
  }

  Matrix xa(n_obs, L.p + 1);
  Vector delta(n_obs);
  for (Eigen::Index k = 0; k < n_obs; ++k) {
    const double es = eta_s(obs[k]);
    const double lam = inverse_mills(es);
    xa.row(k).head(L.p) = xo.row(k);
    xa(k, L.p) = lam;
    delta(k) = lam * (lam + es);
  }
  const RegressionFit out = least_squares(xa, yo);
  if (!out.ok) throw NonEstimableError("two-step outcome regression is rank deficient");
  start.beta_o = out.beta.head(L.p);
  const double beta_lambda = out.beta(L.p);
  const double rss = (yo - xa * out.beta).squaredNorm();
  const double sigma2 = rss / static_cast<double>(n_obs) + beta_lambda * beta_lambda * delta.mean();
  const double sigma = std::sqrt(std::max(sigma2, 1e-12));
  start.log_sigma = std::log(sigma);
  start.atanh_rho = std::atanh(std::clamp(beta_lambda / sigma, -0.95, 0.95));
  return start;
}

FitOutcome fit_cluster(const ClusterData& data, Family family, const FitOptions& options) {
  const ModelLayout L = layout_for(data, family, options);
  const Eigen::Index n_obs = data.n_observed();
  if (options.enforce_min_data && n_obs < minimum_observed(L.p, L.q))
    return NonEstimable{data.cluster_id, "observed rows " + std::to_string(n_obs) + " < " +
                                             std::to_string(minimum_observed(L.p, L.q))};
  if (L.q > 0 && (n_obs == 0 || n_obs == data.n()))
    return NonEstimable{data.cluster_id, "selection indicator has no variation"};

  HeckmanParams start;
  try {
    start = two_step_start(data, family, options);
  } catch (const NonEstimableError& e) {
    return NonEstimable{data.cluster_id, e.what()};
  }

  // Value and gradient come from one pass; cache the last point.
  struct Cache {
    Vector x;
    double value = 0.0;
    Vector grad;
  };
  auto cache = std::make_shared<Cache>();
  auto evaluate = [L, &data, cache](const Vector& x) {
    if (cache->x.size() == x.size() && cache->x == x) return;
    Vector g;
    const double ll = loglik(L, x, data, &g);
    cache->x = x;
    cache->value = std::isfinite(ll) ? -ll : std::numeric_limits<double>::infinity();
    cache->grad = std::isfinite(ll) ? Vector(-g) : Vector::Constant(x.size(), kNaN);
  };
  Objective obj;
  obj.value = [evaluate, cache](const Vector& x) {
    evaluate(x);
    return cache->value;
  };
  obj.gradient = [evaluate, cache](const Vector& x) {
    evaluate(x);
    return cache->grad;
  };

  MinimizeOptions mo;
  mo.max_iterations = options.max_iterations;
  MinimizeResult res;
  try {
    res = minimize(obj, start.pack(L), mo);
  } catch (const DomainError& e) {
    return NonEstimable{data.cluster_id, std::string("likelihood not finite at start: ") + e.what()};
  }
  if (!res.converged)
    return NonEstimable{data.cluster_id, "optimizer did not converge (" + res.message + ")"};

  ClusterFit fit;
  fit.cluster_id = data.cluster_id;
  fit.layout = L;
  fit.params = HeckmanParams::unpack(L, res.x);
  fit.vcov = res.inverse_hessian;
  fit.converged = true;
  fit.hessian_repaired = res.hessian_repaired;
  fit.n_obs = n_obs;
  fit.n = data.n();
  if (L.has_rho && std::abs(fit.params.atanh_rho) >= std::atanh(options.rho_bound))
    return NonEstimable{data.cluster_id, "rho estimate at the boundary (|rho| >= " +
                                             std::to_string(options.rho_bound) + ")"};
  return fit;
}

}  // namespace heckmi

#include "heckmi/sim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "heckmi/errors.hpp"
#include "heckmi/mice.hpp"
#include "heckmi/parallel.hpp"
#include "heckmi/regression.hpp"
#include "heckmi/special.hpp"

namespace heckmi {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kZ975 = 1.959963984540054;

double mean(const std::vector<double>& v) {
  return v.empty() ? kNaN : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return kNaN;
  const double mu = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - mu) * (x - mu);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

const char* to_string(ErrorModel e) {
  switch (e) {
    case ErrorModel::bvn: return "bvn";
    case ErrorModel::skew_t: return "skew_t";
    case ErrorModel::explicit_selection: return "explicit";
  }
  return "?";
}

ErrorModel error_model_from_string(const std::string& s) {
  if (s == "bvn") return ErrorModel::bvn;
  if (s == "skew_t") return ErrorModel::skew_t;
  if (s == "explicit") return ErrorModel::explicit_selection;
  throw ValidationError("unknown error model '" + s + "' (expected bvn, skew_t or explicit)");
}

const char* to_string(Method m) {
  switch (m) {
    case Method::cca: return "cca";
    case Method::heckman_1l: return "heckman_1l";
    case Method::mar_2l: return "mar_2l";
    case Method::heckman_2l: return "heckman_2l";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "cca") return Method::cca;
  if (s == "heckman_1l") return Method::heckman_1l;
  if (s == "mar_2l") return Method::mar_2l;
  if (s == "heckman_2l") return Method::heckman_2l;
  throw ValidationError("unknown method '" + s + "' (expected cca, heckman_1l, mar_2l or heckman_2l)");
}

void validate(const ScenarioConfig& c) {
  const std::string who = "scenario '" + c.name + "': ";
  if (!(c.rho > -1.0 && c.rho < 1.0)) throw ValidationError(who + "rho must lie in (-1, 1)");
  if (c.n_clusters < 2) throw ValidationError(who + "n_clusters must be at least 2");
  if (c.cluster_size < 1) throw ValidationError(who + "cluster_size must be at least 1");
  if (c.n_reps < 1) throw ValidationError(who + "n_reps must be at least 1");
  if (c.m < 2) throw ValidationError(who + "m must be at least 2");
  if (c.methods.empty()) throw ValidationError(who + "no methods selected");
  for (std::size_t i = 0; i < c.methods.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (c.methods[i] == c.methods[j])
        throw ValidationError(who + "method '" + to_string(c.methods[i]) + "' listed twice");
}

GeneratedData generate(const ScenarioConfig& config, RngStream& rng, const TrueParams& tp) {
  validate(config);
  const int n_cl = config.n_clusters;
  const int n_i = config.cluster_size;
  const double rho = config.rho;
  const std::size_t n = static_cast<std::size_t>(n_cl) * static_cast<std::size_t>(n_i);

  std::vector<double> cluster(n), x1(n), x2(n), x3(n), y(n), r(n);
  GeneratedData out;
  Truth& truth = out.truth;
  truth.y_star.resize(n);
  truth.r_star.resize(n);

  // Systematically missing clusters.
  const int n_sys = static_cast<int>(std::ceil(tp.systematic_fraction * n_cl - 1e-9));
  std::vector<int> order(static_cast<std::size_t>(n_cl));
  std::iota(order.begin(), order.end(), 0);
  RngStream pick = rng.child(0);
  for (int k = 0; k < n_sys; ++k) {
    const auto j = static_cast<std::size_t>(k) + pick.index(static_cast<std::uint64_t>(n_cl - k));
    std::swap(order[static_cast<std::size_t>(k)], order[j]);
  }
  truth.systematic_clusters.assign(order.begin(), order.begin() + n_sys);
  std::sort(truth.systematic_clusters.begin(), truth.systematic_clusters.end());

  Matrix mean_cov(2, 2);
  mean_cov << tp.cluster_mean_var, tp.cluster_mean_cov, tp.cluster_mean_cov, tp.cluster_mean_var;
  Matrix re_cov(2, 2);
  const double cross = tp.re_cross_factor * rho;
  re_cov << tp.psi_coef, tp.psi_coef * cross, tp.psi_coef * cross, tp.psi_coef;
  const double x3_sd = std::sqrt(tp.x3_variance);
  const Eigen::Vector2d alpha(tp.skew_alpha[0], tp.skew_alpha[1]);

  for (int c = 0; c < n_cl; ++c) {
    RngStream cr = rng.child({1, static_cast<std::uint64_t>(c)});
    const Vector mu = draw_mvnormal(cr, Vector::Zero(2), mean_cov);
    std::array<double, 3> bo{};
    std::array<double, 4> bs{};
    for (int k = 0; k < 3; ++k) {
      const Vector b = draw_mvnormal(cr, Vector::Zero(2), re_cov);
      bo[static_cast<std::size_t>(k)] = tp.beta_o[static_cast<std::size_t>(k)] + b(0);
      bs[static_cast<std::size_t>(k)] = tp.beta_s[static_cast<std::size_t>(k)] + b(1);
    }
    bs[3] = tp.beta_s[3] + draw_normal(cr, 0.0, std::sqrt(tp.psi_erv));
    const double sigma = std::exp(draw_normal(cr, 0.0, tp.log_sigma_sd));
    truth.beta_o_cluster.push_back(bo);
    truth.sigma_cluster.push_back(sigma);
    Eigen::Matrix2d scale;
    scale << sigma * sigma, rho * sigma, rho * sigma, 1.0;
    const bool systematic =
        std::binary_search(truth.systematic_clusters.begin(), truth.systematic_clusters.end(), c);

    for (int j = 0; j < n_i; ++j) {
      const std::size_t row = static_cast<std::size_t>(c) * static_cast<std::size_t>(n_i) + static_cast<std::size_t>(j);
      cluster[row] = c + 1;
      x1[row] = draw_bernoulli(cr, tp.treatment_prob);
      x2[row] = draw_normal(cr, mu(0), 1.0);
      x3[row] = draw_normal(cr, mu(1), x3_sd);
      double eo = 0.0, es = 0.0;
      switch (config.error_model) {
        case ErrorModel::bvn: {
          const Vector e = draw_mvnormal(cr, Vector::Zero(2), scale);
          eo = e(0);
          es = e(1);
          break;
        }
        case ErrorModel::skew_t: {
          const Eigen::Vector2d e = draw_bvn_skew_t(cr, scale, alpha, tp.skew_df);
          eo = e(0);
          es = e(1);
          break;
        }
        case ErrorModel::explicit_selection:
          eo = draw_normal(cr, 0.0, sigma);
          es = cr.normal();
          break;
      }
      const double ys = bo[0] + bo[1] * x1[row] + bo[2] * x2[row] + eo;
      const double rs = config.error_model == ErrorModel::explicit_selection
                            ? tp.explicit_slope * ys + es
                            : bs[0] + bs[1] * x1[row] + bs[2] * x2[row] + bs[3] * x3[row] + es;
      truth.y_star[row] = ys;
      truth.r_star[row] = rs;
      const bool observed = rs > 0.0 && !systematic;
      r[row] = observed ? 1.0 : 0.0;
      const double yv = config.family == Family::binary ? (ys > 0.0 ? 1.0 : 0.0) : ys;
      y[row] = observed ? yv : kNaN;
    }
  }
  out.data = TabularDataset::from_columns({"cluster", "X1", "X2", "X3", "y", "r"}, {cluster, x1, x2, x3, y, r});
  return out;
}

const std::array<std::string, kEstimands>& estimand_names() {
  static const std::array<std::string, kEstimands> names{"beta0", "beta1", "beta2",
                                                          "sd_psi00", "sd_psi11", "sd_psi22"};
  return names;
}

std::array<double, kEstimands> estimand_truth(const TrueParams& tp) {
  const double sd = std::sqrt(tp.psi_coef);
  return {tp.beta_o[0], tp.beta_o[1], tp.beta_o[2], sd, sd, sd};
}

ReplicateResult analyze_two_stage(const TabularDataset& completed, Family family, PsiStructure structure,
                                  const std::string& cluster_column) {
  const std::size_t cc = completed.column_index(cluster_column);
  const std::size_t cy = completed.column_index("y");
  const std::size_t c1 = completed.column_index("X1");
  const std::size_t c2 = completed.column_index("X2");
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t r = 0; r < completed.n_rows(); ++r)
    if (!completed.is_missing(cy, r) && !std::isnan(completed.values(cy)[r]))
      groups[completed.text(cc, r)].push_back(r);

  MetaInput input;
  for (const auto& [label, rows] : groups) {
    const auto nr = static_cast<Eigen::Index>(rows.size());
    Matrix x(nr, 3);
    Vector yv(nr);
    for (Eigen::Index i = 0; i < nr; ++i) {
      const std::size_t row = rows[static_cast<std::size_t>(i)];
      x(i, 0) = 1.0;
      x(i, 1) = completed.values(c1)[row];
      x(i, 2) = completed.values(c2)[row];
      yv(i) = completed.values(cy)[row];
    }
    const RegressionFit fit = family == Family::continuous ? least_squares(x, yv) : probit(x, yv);
    if (!fit.ok || !fit.beta.allFinite() || !fit.vcov.allFinite()) continue;
    input.estimates.push_back(fit.beta);
    input.vcovs.push_back(fit.vcov);
  }
  ReplicateResult res;
  if (input.size() < 2) {
    res.message = "fewer than two clusters could be analysed";
    return res;
  }
  const MetaFit meta = reml_multivariate(input, structure);
  for (int k = 0; k < 3; ++k) {
    const double est = meta.theta_hat(k);
    const double se = std::sqrt(std::max(meta.s_theta(k, k), 0.0));
    res.estimate[static_cast<std::size_t>(k)] = est;
    res.estimate[static_cast<std::size_t>(k + 3)] = std::sqrt(std::max(meta.psi_hat(k, k), 0.0));
    res.se[static_cast<std::size_t>(k)] = se;
    res.lower[static_cast<std::size_t>(k)] = est - kZ975 * se;
    res.upper[static_cast<std::size_t>(k)] = est + kZ975 * se;
  }
  res.converged = std::all_of(res.estimate.begin(), res.estimate.end(), [](double v) { return std::isfinite(v); });
  if (!res.converged) res.message = "non-finite analysis estimates";
  return res;
}

RubinEstimate rubin_scalar(const std::vector<double>& estimates, const std::vector<double>& ses) {
  const std::size_t m = estimates.size();
  if (m < 2) throw PoolingError("Rubin's rules need at least two imputations");
  if (ses.size() != m) throw ContractViolation("rubin_scalar: estimates and ses differ in length");
  RubinEstimate r;
  r.qbar = mean(estimates);
  double w = 0.0, b = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    w += ses[k] * ses[k];
    b += (estimates[k] - r.qbar) * (estimates[k] - r.qbar);
  }
  const double md = static_cast<double>(m);
  r.within = w / md;
  r.between = b / (md - 1.0);
  const double inflated = (1.0 + 1.0 / md) * r.between;
  r.total = r.within + inflated;
  double q = kZ975;
  if (inflated > 0.0) {
    const double ratio = 1.0 + r.within / inflated;
    r.df = (md - 1.0) * ratio * ratio;
    q = boost::math::quantile(boost::math::students_t(r.df), 0.975);
  } else {
    r.df = std::numeric_limits<double>::infinity();
  }
  const double half = q * std::sqrt(r.total);
  r.lower = r.qbar - half;
  r.upper = r.qbar + half;
  return r;
}

ReplicateResult rubin_pool(const std::vector<ReplicateResult>& per) {
  if (per.size() < 2) throw PoolingError("Rubin's rules need at least two imputations");
  ReplicateResult out;
  out.method = per.front().method;
  out.converged = true;
  for (const auto& r : per) out.converged = out.converged && r.converged;
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> est, se;
    for (const auto& r : per) {
      est.push_back(r.estimate[k]);
      se.push_back(r.se[k]);
    }
    const RubinEstimate re = rubin_scalar(est, se);
    out.estimate[k] = re.qbar;
    out.se[k] = std::sqrt(re.total);
    out.lower[k] = re.lower;
    out.upper[k] = re.upper;
  }
  for (std::size_t k = 3; k < static_cast<std::size_t>(kEstimands); ++k) {
    double s = 0.0;
    for (const auto& r : per) s += r.estimate[k];
    out.estimate[k] = s / static_cast<double>(per.size());
  }
  return out;
}

ReplicateResult run_method(const GeneratedData& generated, const ScenarioConfig& config, Method method,
                           const RngStream& rng) {
  const auto start = std::chrono::steady_clock::now();
  ReplicateResult res;
  try {
    if (method == Method::cca) {
      res = analyze_two_stage(generated.data, config.family, config.psi_structure);
    } else {
      ImputationSpec spec;
      spec.name = "y";
      spec.target = "y";
      spec.family = config.family;
      spec.outcome_predictors = {"X1", "X2"};
      spec.selection_predictors = {"X1", "X2", "X3"};
      spec.method = method == Method::heckman_2l   ? ImputationMethod::heckman_2l
                    : method == Method::mar_2l     ? ImputationMethod::mar_2l
                                                   : ImputationMethod::heckman_1l;
      EngineOptions opts;
      opts.psi_structure = config.psi_structure;
      const MIDataset mi = impute_univariate(generated.data, spec, config.m, rng, opts);
      std::vector<ReplicateResult> per;
      for (const auto& table : mi.completed) {
        per.push_back(analyze_two_stage(table, config.family, config.psi_structure));
        if (!per.back().converged) throw ImputationError("analysis failed: " + per.back().message);
      }
      res = rubin_pool(per);
    }
  } catch (const std::exception& e) {
    res = ReplicateResult{};
    res.message = e.what();
  }
  res.method = method;
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

std::vector<MetricRow> compute_metrics(const std::string& scenario, Method method,
                                       const std::vector<ReplicateResult>& results,
                                       const std::array<double, kEstimands>& truth) {
  std::vector<const ReplicateResult*> run;
  for (const auto& r : results)
    if (r.converged) run.push_back(&r);
  const double n = static_cast<double>(run.size());
  const double n_total = static_cast<double>(results.size());
  const double run_frac = n_total > 0 ? n / n_total : kNaN;

  std::vector<MetricRow> rows;
  auto add = [&](const std::string& estimand, const char* measure, double value, double mcse) {
    rows.push_back({scenario, to_string(method), estimand, measure, value, mcse});
  };
  for (std::size_t k = 0; k < static_cast<std::size_t>(kEstimands); ++k) {
    const std::string& name = estimand_names()[k];
    const double theta = truth[k];
    std::vector<double> est, sq;
    for (const auto* r : run) {
      est.push_back(r->estimate[k]);
      sq.push_back((r->estimate[k] - theta) * (r->estimate[k] - theta));
    }
    const double empse = sample_sd(est);
    const double bias = mean(est) - theta;
    add(name, "bias", bias, empse / std::sqrt(n));
    add(name, "empse", empse, run.size() >= 2 ? empse / std::sqrt(2.0 * (n - 1.0)) : kNaN);
    const double rmse = std::sqrt(mean(sq));
    add(name, "rmse", rmse, rmse > 0.0 ? sample_sd(sq) / std::sqrt(n) / (2.0 * rmse) : (run.empty() ? kNaN : 0.0));
    if (k < 3) {
      std::vector<double> cover, width, var;
      for (const auto* r : run) {
        cover.push_back(r->lower[k] <= theta && theta <= r->upper[k] ? 1.0 : 0.0);
        width.push_back(r->upper[k] - r->lower[k]);
        var.push_back(r->se[k] * r->se[k]);
      }
      const double c = mean(cover);
      add(name, "coverage", c, std::sqrt(c * (1.0 - c) / n));
      add(name, "width", mean(width), sample_sd(width) / std::sqrt(n));
      const double modse = std::sqrt(mean(var));
      add(name, "modse", modse, modse > 0.0 ? sample_sd(var) / std::sqrt(n) / (2.0 * modse) : kNaN);
    }
    add(name, "run_pct", 100.0 * run_frac, 100.0 * std::sqrt(run_frac * (1.0 - run_frac) / n_total));
  }
  return rows;
}

ScenarioMetrics run_scenario(const ScenarioConfig& config, int workers) {
  validate(config);
  ScenarioMetrics out;
  out.config = config;
  const auto reps = static_cast<std::size_t>(config.n_reps);
  out.results.assign(reps, {});
  parallel_for(reps, workers, [&](std::size_t rep) {
    RngStream gen(config.seed, {rep, 0});
    const GeneratedData data = generate(config, gen);
    std::vector<ReplicateResult> per;
    for (Method m : config.methods)
      per.push_back(run_method(data, config, m, RngStream(config.seed, {rep, 1, static_cast<std::uint64_t>(m)})));
    out.results[rep] = std::move(per);
  });
  const auto truth = estimand_truth();
  for (std::size_t j = 0; j < config.methods.size(); ++j) {
    std::vector<ReplicateResult> col;
    MethodSummary s;
    s.method = config.methods[j];
    for (const auto& rep : out.results) {
      col.push_back(rep[j]);
      s.n_run += rep[j].converged ? 1 : 0;
      s.mean_seconds += rep[j].seconds;
    }
    s.n_reps = static_cast<int>(col.size());
    s.mean_seconds /= std::max(1, s.n_reps);
    out.summaries.push_back(s);
    auto rows = compute_metrics(config.name, s.method, col, truth);
    out.rows.insert(out.rows.end(), rows.begin(), rows.end());
  }
  return out;
}

}  // namespace heckmi

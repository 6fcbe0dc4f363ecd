#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <map>

#include "heckmi/errors.hpp"
#include "heckmi/sim.hpp"

using namespace heckmi;
using Catch::Approx;

namespace {

ScenarioConfig small_config(double rho = 0.6, int n_i = 200) {
  ScenarioConfig c;
  c.rho = rho;
  c.cluster_size = n_i;
  return c;
}

double corr(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i] / n;
    mb += b[i] / n;
  }
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

const MetricRow& find_row(const std::vector<MetricRow>& rows, const std::string& estimand, const std::string& measure) {
  for (const auto& r : rows)
    if (r.estimand == estimand && r.measure == measure) return r;
  throw std::runtime_error("row not found: " + estimand + " " + measure);
}

}  // namespace

TEST_CASE("generator layout and systematic clusters") {
  RngStream rng(11);
  const GeneratedData g = generate(small_config(), rng);
  REQUIRE(g.data.n_rows() == 2000);
  CHECK(g.data.column_names() == std::vector<std::string>{"cluster", "X1", "X2", "X3", "y", "r"});
  REQUIRE(g.truth.systematic_clusters.size() == 2);
  const auto& cl = g.data.values("cluster");
  const std::size_t yc = g.data.column_index("y");
  std::map<int, std::pair<int, int>> per;  // observed, total
  for (std::size_t r = 0; r < g.data.n_rows(); ++r) {
    auto& p = per[static_cast<int>(cl[r]) - 1];
    p.second += 1;
    p.first += g.data.is_missing(yc, r) ? 0 : 1;
    REQUIRE((g.data.values("r")[r] == 1.0) == !g.data.is_missing(yc, r));
  }
  CHECK(per.size() == 10);
  int observed = 0;
  for (const auto& [c, p] : per) {
    const bool sys = std::binary_search(g.truth.systematic_clusters.begin(), g.truth.systematic_clusters.end(), c);
    if (sys) CHECK(p.first == 0);
    else CHECK(p.first > 0);
    observed += p.first;
  }
  const double frac_missing = 1.0 - observed / 2000.0;
  CHECK(frac_missing > 0.3);
  CHECK(frac_missing < 0.8);

  RngStream again(11);
  const GeneratedData h = generate(small_config(), again);
  CHECK(h.truth.y_star == g.truth.y_star);
}

TEST_CASE("selection correlation follows rho") {
  RngStream rng(12);
  ScenarioConfig c = small_config(0.0, 2000);
  const GeneratedData g0 = generate(c, rng);
  c.rho = 0.6;
  RngStream rng2(12);
  const GeneratedData g6 = generate(c, rng2);
  // Residual correlation of the latent equations.
  auto residual_corr = [](const GeneratedData& g) {
    const auto& x1 = g.data.values("X1");
    const auto& x2 = g.data.values("X2");
    const auto& x3 = g.data.values("X3");
    std::vector<double> eo, es;
    const std::size_t n_i = 2000;
    for (std::size_t i = 0; i < g.truth.y_star.size(); ++i) {
      const auto& bo = g.truth.beta_o_cluster[i / n_i];
      eo.push_back(g.truth.y_star[i] - bo[0] - bo[1] * x1[i] - bo[2] * x2[i]);
      es.push_back(g.truth.r_star[i] - (-0.8 + 1.3 * x1[i] - 0.7 * x2[i] + 1.2 * x3[i]));
    }
    return corr(eo, es);
  };
  CHECK(std::abs(residual_corr(g0)) < 0.1);
  CHECK(residual_corr(g6) > 0.3);
}

TEST_CASE("explicit selection model correlation") {
  ScenarioConfig c = small_config(0.0, 2000);
  c.error_model = ErrorModel::explicit_selection;
  RngStream rng(13);
  const GeneratedData g = generate(c, rng);
  // r* = 0.3 y* + e with Var(e) = 1 and e independent of y*.
  double m = 0, v = 0;
  const double n = static_cast<double>(g.truth.y_star.size());
  for (double y : g.truth.y_star) m += y / n;
  for (double y : g.truth.y_star) v += (y - m) * (y - m) / (n - 1);
  const double expected = 0.3 * std::sqrt(v) / std::sqrt(0.09 * v + 1.0);
  CHECK(corr(g.truth.y_star, g.truth.r_star) == Approx(expected).margin(0.02));
}

TEST_CASE("binary outcome prevalence") {
  ScenarioConfig c = small_config(0.6, 1000);
  c.family = Family::binary;
  RngStream rng(14);
  const GeneratedData g = generate(c, rng);
  double pos = 0;
  for (double y : g.truth.y_star) pos += y > 0.0 ? 1.0 : 0.0;
  pos /= static_cast<double>(g.truth.y_star.size());
  CHECK(pos > 0.6);
  CHECK(pos < 0.82);
  const std::size_t yc = g.data.column_index("y");
  for (std::size_t r = 0; r < g.data.n_rows(); ++r)
    if (!g.data.is_missing(yc, r)) REQUIRE((g.data.values(yc)[r] == 0.0 || g.data.values(yc)[r] == 1.0));
}

TEST_CASE("scenario validation") {
  ScenarioConfig c;
  c.rho = 1.0;
  CHECK_THROWS_AS(validate(c), ValidationError);
  c = ScenarioConfig{};
  c.m = 1;
  CHECK_THROWS_AS(validate(c), ValidationError);
  c = ScenarioConfig{};
  c.n_clusters = 1;
  CHECK_THROWS_AS(validate(c), ValidationError);
  CHECK(method_from_string("heckman_2l") == Method::heckman_2l);
  CHECK(error_model_from_string("explicit") == ErrorModel::explicit_selection);
  CHECK_THROWS_AS(method_from_string("nope"), ValidationError);
}

TEST_CASE("two-stage analysis of noiseless common coefficients") {
  RngStream rng(15);
  std::vector<double> cl, x1, x2, y;
  for (int c = 0; c < 8; ++c)
    for (int j = 0; j < 50; ++j) {
      cl.push_back(c + 1);
      const double a = rng.uniform() < 0.5 ? 1.0 : 0.0, b = rng.normal();
      x1.push_back(a);
      x2.push_back(b);
      y.push_back(0.3 + a + b + 1e-6 * rng.normal());
    }
  const TabularDataset d = TabularDataset::from_columns({"cluster", "X1", "X2", "y"}, {cl, x1, x2, y});
  const ReplicateResult res = analyze_two_stage(d, Family::continuous);
  REQUIRE(res.converged);
  CHECK(res.estimate[0] == Approx(0.3).margin(1e-5));
  CHECK(res.estimate[1] == Approx(1.0).margin(1e-5));
  CHECK(res.estimate[2] == Approx(1.0).margin(1e-5));
  for (int k = 3; k < 6; ++k) CHECK(res.estimate[static_cast<std::size_t>(k)] < 1e-4);
}

TEST_CASE("two-stage analysis does not depend on cluster labels") {
  RngStream rng(16);
  const GeneratedData g = generate(small_config(0.3, 150), rng);
  const ReplicateResult a = analyze_two_stage(g.data, Family::continuous);
  std::vector<double> relabeled = g.data.values("cluster");
  for (double& v : relabeled) v = 100.0 - v;
  const TabularDataset d = TabularDataset::from_columns(
      {"cluster", "X1", "X2", "X3", "y"},
      {relabeled, g.data.values("X1"), g.data.values("X2"), g.data.values("X3"), g.data.values("y")});
  const ReplicateResult b = analyze_two_stage(d, Family::continuous);
  REQUIRE(a.converged);
  REQUIRE(b.converged);
  for (std::size_t k = 0; k < 6; ++k) CHECK(a.estimate[k] == Approx(b.estimate[k]).margin(1e-6));
}

TEST_CASE("Rubin's rules arithmetic") {
  const RubinEstimate r = rubin_scalar({0.0, 1.0}, {1.0, 1.0});
  CHECK(r.qbar == Approx(0.5).epsilon(1e-14));
  CHECK(r.within == Approx(1.0).epsilon(1e-14));
  CHECK(r.between == Approx(0.5).epsilon(1e-14));
  CHECK(r.total == Approx(1.75).epsilon(1e-14));
  const double df = (1.0 + 1.0 / (1.5 * 0.5)) * (1.0 + 1.0 / (1.5 * 0.5));
  CHECK(r.df == Approx(df).epsilon(1e-12));
  CHECK(r.upper - r.qbar == Approx(r.qbar - r.lower).epsilon(1e-12));
  CHECK(r.upper - r.qbar > 1.96 * std::sqrt(1.75));

  const RubinEstimate z = rubin_scalar({2.0, 2.0, 2.0}, {0.5, 0.5, 0.5});
  CHECK(z.between == 0.0);
  CHECK(std::isinf(z.df));
  CHECK(z.total == Approx(0.25));
  CHECK(z.upper == Approx(2.0 + 1.959963984540054 * 0.5).epsilon(1e-12));

  CHECK_THROWS_AS(rubin_scalar({1.0}, {1.0}), PoolingError);
}

TEST_CASE("Rubin pooling of identical results is the identity") {
  ReplicateResult one;
  one.converged = true;
  one.estimate = {0.3, 1.0, 1.0, 0.6, 0.6, 0.6};
  one.se = {0.1, 0.1, 0.1};
  const ReplicateResult p = rubin_pool({one, one, one});
  for (std::size_t k = 0; k < 6; ++k) CHECK(p.estimate[k] == Approx(one.estimate[k]).epsilon(1e-14));
  for (std::size_t k = 0; k < 3; ++k) CHECK(p.se[k] == Approx(0.1).epsilon(1e-14));
}

TEST_CASE("metrics of perfect estimates") {
  const auto truth = estimand_truth();
  CHECK(truth[3] == Approx(std::sqrt(0.4)));
  ReplicateResult perfect;
  perfect.converged = true;
  for (std::size_t k = 0; k < 6; ++k) perfect.estimate[k] = truth[k];
  for (std::size_t k = 0; k < 3; ++k) {
    perfect.se[k] = 0.1;
    perfect.lower[k] = truth[k] - 0.2;
    perfect.upper[k] = truth[k] + 0.2;
  }
  ReplicateResult failed;
  const std::vector<MetricRow> rows = compute_metrics("s", Method::cca, {perfect, perfect, perfect, failed}, truth);
  CHECK(find_row(rows, "beta1", "bias").value == 0.0);
  CHECK(find_row(rows, "beta1", "rmse").value == 0.0);
  CHECK(find_row(rows, "beta1", "coverage").value == 1.0);
  CHECK(find_row(rows, "beta1", "width").value == Approx(0.4));
  CHECK(find_row(rows, "beta1", "modse").value == Approx(0.1));
  CHECK(find_row(rows, "sd_psi11", "run_pct").value == Approx(75.0));
  CHECK_THROWS(find_row(rows, "sd_psi11", "coverage"));
}

TEST_CASE("metric values match a direct computation") {
  const auto truth = estimand_truth();
  std::vector<ReplicateResult> res;
  const std::vector<double> b1{0.9, 1.1, 1.3, 0.95};
  for (double v : b1) {
    ReplicateResult r;
    r.converged = true;
    r.estimate = truth;
    r.estimate[1] = v;
    r.se = {0.1, 0.1, 0.1};
    r.lower = {0, v - 0.15, 0};
    r.upper = {1, v + 0.15, 2};
    res.push_back(r);
  }
  const auto rows = compute_metrics("s", Method::mar_2l, res, truth);
  const double mean = (0.9 + 1.1 + 1.3 + 0.95) / 4.0;
  double ss = 0, sq = 0;
  for (double v : b1) {
    ss += (v - mean) * (v - mean);
    sq += (v - 1.0) * (v - 1.0);
  }
  CHECK(find_row(rows, "beta1", "bias").value == Approx(mean - 1.0).epsilon(1e-12));
  CHECK(find_row(rows, "beta1", "empse").value == Approx(std::sqrt(ss / 3.0)).epsilon(1e-12));
  CHECK(find_row(rows, "beta1", "bias").mcse == Approx(std::sqrt(ss / 3.0) / 2.0).epsilon(1e-12));
  CHECK(find_row(rows, "beta1", "rmse").value == Approx(std::sqrt(sq / 4.0)).epsilon(1e-12));
  CHECK(find_row(rows, "beta1", "coverage").value == Approx(0.75));
}

TEST_CASE("scenario output does not depend on worker count") {
  ScenarioConfig c = small_config(0.6, 150);
  c.n_reps = 3;
  c.m = 2;
  c.seed = 21;
  const ScenarioMetrics a = run_scenario(c, 1);
  const ScenarioMetrics b = run_scenario(c, 3);
  REQUIRE(a.rows.size() == b.rows.size());
  CHECK(a.rows.size() == 4 * (6 * 4 + 3 * 3));
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    CHECK(a.rows[i].estimand == b.rows[i].estimand);
    if (std::isnan(a.rows[i].value)) CHECK(std::isnan(b.rows[i].value));
    else CHECK(a.rows[i].value == b.rows[i].value);
  }
}

TEST_CASE("misspecified error models still run") {
  for (ErrorModel e : {ErrorModel::skew_t, ErrorModel::explicit_selection}) {
    ScenarioConfig c;
    c.error_model = e;
    c.rho = e == ErrorModel::skew_t ? 0.6 : 0.0;
    c.n_reps = 20;
    c.seed = 31;
    const ScenarioMetrics s = run_scenario(c, 1);
    for (const auto& sum : s.summaries) {
      INFO(to_string(e) << " " << to_string(sum.method));
      CHECK(sum.n_run >= 16);
    }
  }
}

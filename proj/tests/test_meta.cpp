#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "heckmi/errors.hpp"
#include "heckmi/meta.hpp"
#include "heckmi/rng.hpp"
#include "support.hpp"

using namespace heckmi;

namespace {

MetaInput scalar_input(const std::vector<double>& y, const std::vector<double>& v) {
  MetaInput in;
  for (std::size_t i = 0; i < y.size(); ++i) {
    in.estimates.push_back(Vector::Constant(1, y[i]));
    in.vcovs.push_back(Matrix::Constant(1, 1, v[i]));
  }
  return in;
}

// Scalar REML objective written out directly.
double reml_objective(const std::vector<double>& y, const std::vector<double>& v, double tau2) {
  double sw = 0, swy = 0, logdet = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double w = 1.0 / (v[i] + tau2);
    sw += w;
    swy += w * y[i];
    logdet += std::log(v[i] + tau2);
  }
  const double mu = swy / sw;
  double q = 0;
  for (std::size_t i = 0; i < y.size(); ++i) q += (y[i] - mu) * (y[i] - mu) / (v[i] + tau2);
  return -0.5 * (logdet + std::log(sw) + q);
}

// Oracle: dense grid followed by repeated local refinement.
double reml_grid(const std::vector<double>& y, const std::vector<double>& v) {
  double lo = 0.0, hi = 10.0;
  double best = 0.0;
  for (int round = 0; round < 12; ++round) {
    const int n = 2000;
    double best_val = -INFINITY;
    for (int k = 0; k <= n; ++k) {
      const double t = lo + (hi - lo) * k / n;
      const double val = reml_objective(y, v, t);
      if (val > best_val) {
        best_val = val;
        best = t;
      }
    }
    const double w = (hi - lo) / n;
    lo = std::max(0.0, best - 2 * w);
    hi = best + 2 * w;
  }
  return best;
}

}  // namespace

TEST_CASE("balanced univariate REML has a closed form") {
  RngStream rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const int k = 3 + static_cast<int>(rng.index(20));
    const double v = 0.05 + rng.uniform();
    std::vector<double> y(static_cast<std::size_t>(k)), vs(static_cast<std::size_t>(k), v);
    double mean = 0;
    for (auto& e : y) {
      e = rng.normal() * (0.2 + 2 * rng.uniform());
      mean += e / k;
    }
    double s2 = 0;
    for (double e : y) s2 += (e - mean) * (e - mean) / (k - 1);
    const MetaFit fit = reml_univariate(scalar_input(y, vs));
    CHECK(std::abs(fit.psi_hat(0, 0) - std::max(0.0, s2 - v)) < 1e-6);
    CHECK(std::abs(fit.theta_hat(0) - mean) < 1e-12);
  }
}

TEST_CASE("identical estimates give zero between-cluster variance") {
  const MetaFit fit = reml_univariate(scalar_input({0.7, 0.7, 0.7, 0.7}, {0.2, 0.2, 0.2, 0.2}));
  CHECK(fit.psi_hat(0, 0) == 0.0);
  CHECK(std::abs(fit.theta_hat(0) - 0.7) < 1e-14);
}

TEST_CASE("two-cluster REML matches a grid search") {
  const std::vector<double> y{0.0, 1.0}, v{0.1, 0.1};
  const MetaFit fit = reml_univariate(scalar_input(y, v));
  CHECK(std::abs(fit.psi_hat(0, 0) - reml_grid(y, v)) < 1e-6);
  CHECK(std::abs(fit.psi_hat(0, 0) - 0.4) < 1e-6);
}

TEST_CASE("unbalanced REML matches a grid search") {
  RngStream rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> y, v;
    for (int i = 0; i < 12; ++i) {
      v.push_back(0.02 + 0.5 * rng.uniform());
      y.push_back(0.4 + 0.6 * rng.normal() + std::sqrt(v.back()) * rng.normal());
    }
    const MetaFit fit = reml_univariate(scalar_input(y, v));
    CHECK(std::abs(fit.psi_hat(0, 0) - reml_grid(y, v)) < 1e-6);
    CHECK(fit.restricted_loglik == Catch::Approx(reml_objective(y, v, fit.psi_hat(0, 0))).margin(1e-9));
  }
}

TEST_CASE("pooled mean lies in the convex hull and is order invariant") {
  RngStream rng(3);
  std::vector<double> y, v;
  for (int i = 0; i < 9; ++i) {
    y.push_back(rng.normal());
    v.push_back(0.1 + rng.uniform());
  }
  const MetaFit a = reml_univariate(scalar_input(y, v));
  CHECK(a.theta_hat(0) >= *std::min_element(y.begin(), y.end()));
  CHECK(a.theta_hat(0) <= *std::max_element(y.begin(), y.end()));
  std::reverse(y.begin(), y.end());
  std::reverse(v.begin(), v.end());
  const MetaFit b = reml_univariate(scalar_input(y, v));
  CHECK(std::abs(a.theta_hat(0) - b.theta_hat(0)) < 1e-10);
  CHECK(std::abs(a.psi_hat(0, 0) - b.psi_hat(0, 0)) < 1e-10);
}

TEST_CASE("fixed-effect limit") {
  RngStream rng(4);
  std::vector<double> y, v;
  for (int i = 0; i < 8; ++i) {
    y.push_back(1.0 + rng.normal());
    v.push_back(1e-10);
  }
  double mean = 0;
  for (double e : y) mean += e / 8;
  const MetaFit fit = reml_univariate(scalar_input(y, v));
  CHECK(std::abs(fit.theta_hat(0) - mean) < 1e-8);
  CHECK(std::abs(fit.s_theta(0, 0) - fit.psi_hat(0, 0) / 8) < 1e-8);
}

TEST_CASE("d = 1 multivariate path equals the univariate path") {
  const MetaInput in = scalar_input({0.1, 0.5, -0.3, 0.9}, {0.05, 0.1, 0.2, 0.1});
  const MetaFit a = reml_multivariate(in);
  const MetaFit b = reml_univariate(in);
  CHECK(std::abs(a.psi_hat(0, 0) - b.psi_hat(0, 0)) < 1e-10);
  CHECK(std::abs(a.theta_hat(0) - b.theta_hat(0)) < 1e-12);
}

TEST_CASE("multivariate REML recovers a diagonal psi") {
  RngStream rng(5);
  Matrix psi = Matrix::Zero(2, 2);
  psi(0, 0) = 0.4;
  psi(1, 1) = 0.2;
  const Vector theta = (Vector(2) << 1.0, -0.5).finished();
  MetaInput in;
  for (int i = 0; i < 200; ++i) {
    Matrix s(2, 2);
    s << 0.05, 0.01, 0.01, 0.04;
    s *= 0.5 + rng.uniform();
    const Vector b = draw_mvnormal(rng, theta, psi);
    in.estimates.push_back(draw_mvnormal(rng, b, s));
    in.vcovs.push_back(s);
  }
  for (PsiStructure st : {PsiStructure::full, PsiStructure::diagonal}) {
    const MetaFit fit = reml_multivariate(in, st);
    CHECK(fit.converged);
    CHECK(std::abs(fit.psi_hat(0, 0) / 0.4 - 1) < 0.15);
    CHECK(std::abs(fit.psi_hat(1, 1) / 0.2 - 1) < 0.15);
    CHECK(fit.s_psi.rows() == 3);
    if (st == PsiStructure::diagonal) {
      CHECK(fit.psi_hat(0, 1) == 0.0);
      CHECK(fit.s_psi.row(1).cwiseAbs().maxCoeff() < 1e-14);
    }
  }
  // Order invariance.
  MetaInput rev = in;
  std::reverse(rev.estimates.begin(), rev.estimates.end());
  std::reverse(rev.vcovs.begin(), rev.vcovs.end());
  const MetaFit a = reml_multivariate(in), b = reml_multivariate(rev);
  CHECK((a.theta_hat - b.theta_hat).cwiseAbs().maxCoeff() < 1e-6);
  CHECK((a.psi_hat - b.psi_hat).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("REML optimum is a local maximum of the restricted likelihood") {
  RngStream rng(6);
  MetaInput in;
  for (int i = 0; i < 15; ++i) {
    Matrix s = Matrix::Identity(2, 2) * (0.05 + 0.1 * rng.uniform());
    in.estimates.push_back((Vector(2) << rng.normal(), 0.5 * rng.normal()).finished());
    in.vcovs.push_back(s);
  }
  const MetaFit fit = reml_multivariate(in);
  const double at = restricted_loglik(in, fit.psi_hat);
  CHECK(std::abs(at - fit.restricted_loglik) < 1e-8);
  for (int k = 0; k < 3; ++k) {
    Matrix d = Matrix::Zero(2, 2);
    if (k == 2) {
      d(0, 1) = d(1, 0) = 1e-3;
    } else {
      d(k, k) = 1e-3;
    }
    if (Eigen::SelfAdjointEigenSolver<Matrix>(fit.psi_hat + d).eigenvalues().minCoeff() >= 0)
      CHECK(restricted_loglik(in, fit.psi_hat + d) <= at + 1e-9);
    if (Eigen::SelfAdjointEigenSolver<Matrix>(fit.psi_hat - d).eigenvalues().minCoeff() >= 0)
      CHECK(restricted_loglik(in, fit.psi_hat - d) <= at + 1e-9);
  }
}

TEST_CASE("pooling needs two clusters") {
  CHECK_THROWS_AS(reml_univariate(scalar_input({1.0}, {0.1})), PoolingError);
  CHECK_THROWS_AS(reml_multivariate(scalar_input({1.0}, {0.1})), PoolingError);
}

namespace {

std::vector<FitOutcome> fit_clusters(RngStream& rng, Family fam, int n_clusters, int n) {
  std::vector<FitOutcome> out;
  for (int c = 0; c < n_clusters; ++c) {
    auto t = testing::default_truth(0.5);
    for (Eigen::Index k = 0; k < 3; ++k) t.beta_o(k) += 0.3 * rng.normal();
    out.push_back(fit_cluster(testing::simulate_cluster(rng, n, t, fam, "c" + std::to_string(c)), fam));
  }
  return out;
}

}  // namespace

TEST_CASE("pool_heckman blocks") {
  RngStream rng(7);
  std::vector<FitOutcome> fits = fit_clusters(rng, Family::continuous, 10, 1500);
  std::vector<ClusterFit> ok;
  for (const auto& f : fits) {
    REQUIRE(std::holds_alternative<ClusterFit>(f));
    ok.push_back(std::get<ClusterFit>(f));
  }
  const MarginalModel m = pool_heckman(fits);
  REQUIRE(m.block_s);
  REQUIRE(m.log_sigma);
  REQUIRE(m.atanh_rho);
  CHECK(m.contributing_clusters.size() == 10);
  const Vector truth = (Vector(3) << 0.3, 1.0, 1.0).finished();
  for (Eigen::Index k = 0; k < 3; ++k) CHECK(std::abs(m.block_o.theta_hat(k) - truth(k)) < 3 * std::sqrt(m.block_o.s_theta(k, k)));

  // Block extraction uses only the matching sub-matrix of each vcov.
  MetaInput in;
  for (const auto& f : ok) {
    in.estimates.push_back(f.params.beta_o);
    in.vcovs.push_back(f.vcov.topLeftCorner(3, 3));
  }
  const MetaFit direct = reml_multivariate(in);
  CHECK((direct.theta_hat - m.block_o.theta_hat).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((direct.psi_hat - m.block_o.psi_hat).cwiseAbs().maxCoeff() < 1e-12);

  fits[4] = NonEstimable{"c4", "test"};
  CHECK(pool_heckman(fits).contributing_clusters.size() == 9);
}

TEST_CASE("binary marginal model has no sigma block") {
  RngStream rng(8);
  const MarginalModel m = pool_heckman(fit_clusters(rng, Family::binary, 5, 1500));
  CHECK_FALSE(m.log_sigma.has_value());
  CHECK(m.atanh_rho.has_value());
  std::vector<FitOutcome> one{NonEstimable{"a", "x"}, NonEstimable{"b", "y"}};
  CHECK_THROWS_AS(pool_heckman(one), PoolingError);
}

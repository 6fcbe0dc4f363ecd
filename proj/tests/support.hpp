#pragma once

#include <cmath>

#include "heckmi/heckman.hpp"
#include "heckmi/rng.hpp"

namespace testing {

using heckmi::Matrix;
using heckmi::Vector;

struct ClusterTruth {
  Vector beta_o;
  Vector beta_s;
  double sigma = 1.0;
  double rho = 0.0;
};

// Outcome design [1, x1, x2], selection design [1, x1, x2, x3].
inline heckmi::ClusterData simulate_cluster(heckmi::RngStream& rng, Eigen::Index n, const ClusterTruth& t,
                                            heckmi::Family family, const std::string& id = "c") {
  heckmi::ClusterData d;
  d.cluster_id = id;
  d.x_outcome.resize(n, 3);
  d.x_selection.resize(n, 4);
  d.y.resize(n);
  d.r.resize(n);
  const double s = std::sqrt(1.0 - t.rho * t.rho);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x1 = rng.normal(), x2 = rng.normal(), x3 = rng.normal();
    d.x_outcome.row(i) << 1.0, x1, x2;
    d.x_selection.row(i) << 1.0, x1, x2, x3;
    const double es = rng.normal();
    const double eo = t.sigma * (t.rho * es + s * rng.normal());
    const double ys = d.x_outcome.row(i).dot(t.beta_o) + eo;
    const bool obs = d.x_selection.row(i).dot(t.beta_s) + es > 0.0;
    d.r(i) = obs ? 1 : 0;
    const double y = family == heckmi::Family::binary ? (ys > 0.0 ? 1.0 : 0.0) : ys;
    d.y(i) = obs ? y : std::nan("");
  }
  return d;
}

inline ClusterTruth default_truth(double rho = 0.6) {
  ClusterTruth t;
  t.beta_o = (Vector(3) << 0.3, 1.0, 1.0).finished();
  t.beta_s = (Vector(4) << 0.2, 0.8, -0.5, 1.0).finished();
  t.sigma = 1.0;
  t.rho = rho;
  return t;
}

}  // namespace testing

#include "heckmi/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "heckmi/errors.hpp"

namespace heckmi {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double safe_value(const Objective& obj, const Vector& x) {
  const double v = obj.value(x);
  return std::isfinite(v) ? v : kInf;
}

Vector eval_gradient(const Objective& obj, const Vector& x) {
  if (obj.gradient) return obj.gradient(x);
  return numeric_gradient(obj.value, x);
}

double cubic_min(double a, double fa, double ga, double b, double fb, double gb) {
  // Minimiser of the cubic interpolating (a, fa, ga) and (b, fb, gb).
  const double d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - ga * gb;
  if (disc < 0.0 || !std::isfinite(disc)) return 0.5 * (a + b);
  const double d2 = std::copysign(std::sqrt(disc), b - a);
  const double t = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2.0 * d2);
  const double lo = std::min(a, b), hi = std::max(a, b);
  if (!std::isfinite(t) || t <= lo + 0.1 * (hi - lo) || t >= hi - 0.1 * (hi - lo))
    return 0.5 * (a + b);
  return t;
}

struct LineSearchResult {
  bool ok = false;
  double step = 0.0;
  double value = kInf;
  Vector x;
  Vector gradient;
};

// Strong Wolfe conditions, bracketing then zoom.
LineSearchResult wolfe_search(const Objective& obj, const Vector& x, double f0,
                              const Vector& g0, const Vector& dir, double step0) {
  constexpr double c1 = 1e-4;
  constexpr double c2 = 0.9;
  const double dg0 = g0.dot(dir);
  LineSearchResult out;
  if (!(dg0 < 0.0)) return out;

  auto probe = [&](double a, double& fa, double& ga, Vector& xa, Vector& gra) {
    xa = x + a * dir;
    fa = safe_value(obj, xa);
    if (std::isfinite(fa)) {
      gra = eval_gradient(obj, xa);
      ga = gra.dot(dir);
      if (!std::isfinite(ga)) fa = kInf;
    } else {
      ga = kInf;
    }
  };

  double a_prev = 0.0, f_prev = f0, g_prev = dg0;
  double a = step0;
  Vector xa, gra;
  double fa = kInf, ga = kInf;
  for (int i = 0; i < 60; ++i) {
    probe(a, fa, ga, xa, gra);
    if (!std::isfinite(fa)) {
      a = a_prev + 0.5 * (a - a_prev);
      if (a - a_prev < 1e-20) return out;
      continue;
    }
    if (fa > f0 + c1 * a * dg0 || (i > 0 && fa >= f_prev)) break;  // bracket [a_prev, a]
    if (std::abs(ga) <= -c2 * dg0) {
      out = {true, a, fa, xa, gra};
      return out;
    }
    if (ga >= 0.0) {  // bracket [a, a_prev]
      std::swap(a, a_prev);
      std::swap(fa, f_prev);
      std::swap(ga, g_prev);
      break;
    }
    a_prev = a;
    f_prev = fa;
    g_prev = ga;
    a *= 2.0;
  }

  // zoom between lo (best so far, satisfies sufficient decrease) and hi.
  double lo = a_prev, f_lo = f_prev, g_lo = g_prev;
  double hi = a, f_hi = fa, g_hi = ga;
  LineSearchResult best;
  if (lo > 0.0) {
    best.ok = true;
    best.step = lo;
    best.value = f_lo;
    best.x = x + lo * dir;
    best.gradient = eval_gradient(obj, best.x);
  }
  for (int i = 0; i < 60; ++i) {
    double t = std::isfinite(f_hi) && std::isfinite(g_hi) ? cubic_min(lo, f_lo, g_lo, hi, f_hi, g_hi)
                                                          : 0.5 * (lo + hi);
    if (std::abs(hi - lo) < 1e-16 * std::max(1.0, std::abs(lo))) break;
    double ft, gt;
    Vector xt, grt;
    probe(t, ft, gt, xt, grt);
    if (!std::isfinite(ft) || ft > f0 + c1 * t * dg0 || ft >= f_lo) {
      hi = t;
      f_hi = ft;
      g_hi = gt;
    } else {
      if (std::abs(gt) <= -c2 * dg0) return {true, t, ft, xt, grt};
      best = {true, t, ft, xt, grt};
      if (gt * (hi - lo) >= 0.0) {
        hi = lo;
        f_hi = f_lo;
        g_hi = g_lo;
      }
      lo = t;
      f_lo = ft;
      g_lo = gt;
    }
  }
  // Accept a sufficient-decrease point even without the curvature condition.
  if (best.ok && best.value < f0) return best;
  return out;
}

Matrix invert_hessian(const Matrix& h, bool& repaired) {
  const Eigen::Index n = h.rows();
  if (!h.allFinite()) {
    repaired = true;
    return Matrix::Constant(n, n, std::numeric_limits<double>::quiet_NaN());
  }
  const Matrix sym = 0.5 * (h + h.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  Vector inv(n);
  repaired = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double l = es.eigenvalues()(i);
    if (!(l > 0.0)) repaired = true;
    inv(i) = std::abs(l) < 1e-300 ? 1e10 : 1.0 / l;
  }
  Matrix out = es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
  out = 0.5 * (out + out.transpose());
  if (repaired) out = nearest_psd(out);
  return out;
}

}  // namespace

Vector numeric_gradient(const std::function<double(const Vector&)>& f, const Vector& x) {
  const double eps3 = std::cbrt(std::numeric_limits<double>::epsilon());
  Vector g(x.size());
  Vector xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = eps3 * std::max(1.0, std::abs(x(i)));
    const double xi = x(i);
    xp(i) = xi + h;
    const double fp = f(xp);
    xp(i) = xi - h;
    const double fm = f(xp);
    xp(i) = xi;
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

Matrix numeric_hessian(const Objective& objective, const Vector& x) {
  const Eigen::Index n = x.size();
  Matrix h(n, n);
  Vector xp = x;
  if (objective.gradient) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double step = std::max(1e-5, 1e-5 * std::abs(x(i)));
      xp(i) = x(i) + step;
      const Vector gp = objective.gradient(xp);
      xp(i) = x(i) - step;
      const Vector gm = objective.gradient(xp);
      xp(i) = x(i);
      h.col(i) = (gp - gm) / (2.0 * step);
    }
    return 0.5 * (h + h.transpose());
  }
  const double f0 = objective.value(x);
  Vector step(n);
  for (Eigen::Index i = 0; i < n; ++i) step(i) = std::max(1e-4, 1e-4 * std::abs(x(i)));
  for (Eigen::Index i = 0; i < n; ++i) {
    xp(i) = x(i) + step(i);
    const double fp = objective.value(xp);
    xp(i) = x(i) - step(i);
    const double fm = objective.value(xp);
    xp(i) = x(i);
    h(i, i) = (fp - 2.0 * f0 + fm) / (step(i) * step(i));
    for (Eigen::Index j = 0; j < i; ++j) {
      auto at = [&](double si, double sj) {
        xp(i) = x(i) + si * step(i);
        xp(j) = x(j) + sj * step(j);
        const double v = objective.value(xp);
        xp(i) = x(i);
        xp(j) = x(j);
        return v;
      };
      const double v = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * step(i) * step(j));
      h(i, j) = v;
      h(j, i) = v;
    }
  }
  return h;
}

MinimizeResult minimize(const Objective& objective, const Vector& x0,
                        const MinimizeOptions& options) {
  MinimizeResult res;
  const Eigen::Index n = x0.size();
  Vector x = x0;
  double f = safe_value(objective, x);
  if (!std::isfinite(f)) throw DomainError("minimize: objective not finite at starting point");
  Vector g = eval_gradient(objective, x);
  Matrix hinv = Matrix::Identity(n, n);
  bool fresh = true;

  auto small_gradient = [&](double factor) {
    return g.size() == 0 ||
           g.cwiseAbs().maxCoeff() <= factor * options.gradient_tolerance * std::max(1.0, std::abs(f));
  };

  int iter = 0;
  for (; iter < options.max_iterations; ++iter) {
    if (!g.allFinite()) {
      res.message = "non-finite gradient";
      break;
    }
    if (small_gradient(1.0)) {
      res.converged = true;
      res.message = "gradient tolerance reached";
      break;
    }
    Vector dir = -hinv * g;
    if (!(dir.dot(g) < 0.0)) {
      hinv.setIdentity();
      fresh = true;
      dir = -g;
    }
    const double step0 = fresh ? std::min(1.0, 1.0 / std::max(1e-12, g.norm())) : 1.0;
    LineSearchResult ls = wolfe_search(objective, x, f, g, dir, step0);
    if (!ls.ok) {
      if (!fresh) {
        hinv.setIdentity();
        fresh = true;
        continue;
      }
      res.converged = small_gradient(10.0);
      res.message = "line search failed";
      break;
    }
    const Vector s = ls.x - x;
    const Vector y = ls.gradient - g;
    const double fprev = f;
    x = ls.x;
    f = ls.value;
    g = ls.gradient;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh) hinv *= sy / y.squaredNorm();
      const double rho = 1.0 / sy;
      const Matrix I = Matrix::Identity(n, n);
      hinv = (I - rho * s * y.transpose()) * hinv * (I - rho * y * s.transpose()) +
             rho * s * s.transpose();
      fresh = false;
    }
    if (std::abs(fprev - f) <= 1e-15 * std::max(1.0, std::abs(f)) && small_gradient(10.0)) {
      res.converged = true;
      res.message = "function change below tolerance";
      ++iter;
      break;
    }
  }
  if (iter >= options.max_iterations) res.message = "iteration cap reached";

  res.x = x;
  res.value = f;
  res.gradient = g;
  res.iterations = iter;
  if (options.compute_hessian) {
    const Matrix h = numeric_hessian(objective, x);
    res.inverse_hessian = invert_hessian(h, res.hessian_repaired);
    if (!res.inverse_hessian.allFinite()) {
      res.converged = false;
      res.message = "Hessian not finite at the optimum";
    }
  }
  return res;
}

}  // namespace heckmi

#include "heckmi/special.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "heckmi/errors.hpp"

namespace heckmi {

namespace {

constexpr double kInvSqrt2Pi = 0.39894228040143267794;
constexpr double kLogSqrt2Pi = 0.91893853320467274178;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Phi(-t) / phi(t) for t >= 8 by backward evaluation of the Laplace
// continued fraction 1/(t + 1/(t + 2/(t + 3/(t + ...)))).
double mills_ratio_upper(double t) {
  double tail = t;
  for (int k = 120; k >= 1; --k) tail = t + k / tail;
  return 1.0 / tail;
}

template <std::size_t N>
double horner(double x, const std::array<double, N>& c) {
  double r = 0.0;
  for (std::size_t i = N; i-- > 0;) r = r * x + c[i];
  return r;
}

// Gauss-Legendre nodes (negative half) and weights for 6, 12 and 20 points.
constexpr std::array<double, 3> kW6 = {0.1713244923791705, 0.3607615730481384,
                                       0.4679139345726904};
constexpr std::array<double, 3> kX6 = {-0.9324695142031522, -0.6612093864662647,
                                       -0.2386191860831970};
constexpr std::array<double, 6> kW12 = {0.4717533638651177e-1, 0.1069393259953183,
                                        0.1600783285433464,    0.2031674267230659,
                                        0.2334925365383547,    0.2491470458134029};
constexpr std::array<double, 6> kX12 = {-0.9815606342467191, -0.9041172563704750,
                                        -0.7699026741943050, -0.5873179542866171,
                                        -0.3678314989981802, -0.1252334085114692};
constexpr std::array<double, 10> kW20 = {
    0.1761400713915212e-1, 0.4060142980038694e-1, 0.6267204833410906e-1,
    0.8327674157670475e-1, 0.1019301198172404,    0.1181945319615184,
    0.1316886384491766,    0.1420961093183821,    0.1491729864726037,
    0.1527533871307259};
constexpr std::array<double, 10> kX20 = {
    -0.9931285991850949, -0.9639719272779138, -0.9122344282513259,
    -0.8391169718222188, -0.7463319064601508, -0.6360536807265150,
    -0.5108670019508271, -0.3737060887154196, -0.2277858511416451,
    -0.7652652113349733e-1};

// P(X > h, Y > k) for finite h, k and |r| < 1.
double bvn_upper(double h, double k, double r) {
  const double* x;
  const double* w;
  int lg;
  if (std::abs(r) < 0.3) {
    x = kX6.data(); w = kW6.data(); lg = 3;
  } else if (std::abs(r) < 0.75) {
    x = kX12.data(); w = kW12.data(); lg = 6;
  } else {
    x = kX20.data(); w = kW20.data(); lg = 10;
  }

  double hk = h * k;
  double bvn = 0.0;
  if (std::abs(r) < 0.925) {
    const double hs = (h * h + k * k) / 2.0;
    const double asr = std::asin(r);
    for (int i = 0; i < lg; ++i) {
      double sn = std::sin(asr * (x[i] + 1.0) / 2.0);
      bvn += w[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
      sn = std::sin(asr * (-x[i] + 1.0) / 2.0);
      bvn += w[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
    }
    return bvn * asr / (2.0 * kTwoPi) + std_normal_cdf(-h) * std_normal_cdf(-k);
  }

  if (r < 0.0) {
    k = -k;
    hk = -hk;
  }
  if (std::abs(r) < 1.0) {
    const double as = (1.0 - r) * (1.0 + r);
    double a = std::sqrt(as);
    const double bs = (h - k) * (h - k);
    const double c = (4.0 - hk) / 8.0;
    const double d = (12.0 - hk) / 16.0;
    bvn = a * std::exp(-(bs / as + hk) / 2.0) *
          (1.0 - c * (bs - as) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as * as / 5.0);
    if (hk > -160.0) {
      const double b = std::sqrt(bs);
      bvn -= std::exp(-hk / 2.0) * std::sqrt(kTwoPi) * std_normal_cdf(-b / a) * b *
             (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
    }
    a /= 2.0;
    for (int i = 0; i < lg; ++i) {
      double xs = (a * (x[i] + 1.0)) * (a * (x[i] + 1.0));
      double rs = std::sqrt(1.0 - xs);
      bvn += a * w[i] *
             (std::exp(-bs / (2.0 * xs) - hk / (1.0 + rs)) / rs -
              std::exp(-(bs / xs + hk) / 2.0) * (1.0 + c * xs * (1.0 + d * xs)));
      xs = as * (-x[i] + 1.0) * (-x[i] + 1.0) / 4.0;
      rs = std::sqrt(1.0 - xs);
      bvn += a * w[i] * std::exp(-(bs / xs + hk) / 2.0) *
             (std::exp(-hk * xs / (2.0 * (1.0 + rs) * (1.0 + rs))) / rs -
              (1.0 + c * xs * (1.0 + d * xs)));
    }
    bvn = -bvn / kTwoPi;
  }
  if (r > 0.0) {
    bvn += std_normal_cdf(-std::max(h, k));
  } else {
    bvn = -bvn;
    if (k > h) {
      if (h < 0.0)
        bvn += std_normal_cdf(k) - std_normal_cdf(h);
      else
        bvn += std_normal_cdf(-h) - std_normal_cdf(-k);
    }
  }
  return bvn;
}

}  // namespace

double std_normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double log_std_normal_pdf(double x) { return -kLogSqrt2Pi - 0.5 * x * x; }

double std_normal_cdf(double x) {
  if (std::isnan(x)) return x;
  return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0);
}

double log_std_normal_cdf(double x) {
  if (x < -8.0) return log_std_normal_pdf(x) + std::log(mills_ratio_upper(-x));
  if (x > 0.0) return std::log1p(-std_normal_cdf(-x));
  return std::log(std_normal_cdf(x));
}

double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw DomainError("std_normal_quantile: p must lie in (0, 1), got " + std::to_string(p));

  // Wichura (1988), algorithm AS 241, PPND16.
  static constexpr std::array<double, 8> a = {
      3.3871328727963666080e0, 1.3314166789178437745e+2, 1.9715909503065514427e+3,
      1.3731693765509461125e+4, 4.5921953931549871457e+4, 6.7265770927008700853e+4,
      3.3430575583588128105e+4, 2.5090809287301226727e+3};
  static constexpr std::array<double, 8> b = {
      1.0, 4.2313330701600911252e+1, 6.8718700749205790830e+2, 5.3941960214247511077e+3,
      2.1213794301586595867e+4, 3.9307895800092710610e+4, 2.8729085735721942674e+4,
      5.2264952788528545610e+3};
  static constexpr std::array<double, 8> c = {
      1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4};
  static constexpr std::array<double, 8> d = {
      1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9};
  static constexpr std::array<double, 8> e = {
      6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7};
  static constexpr std::array<double, 8> f = {
      1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15};

  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q * horner(r, a) / horner(r, b);
  }
  double r = std::sqrt(-std::log(q < 0.0 ? p : 1.0 - p));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = horner(r, c) / horner(r, d);
  } else {
    r -= 5.0;
    val = horner(r, e) / horner(r, f);
  }
  return q < 0.0 ? -val : val;
}

namespace {

constexpr double kTailThreshold = 1e-7;

// log Phi_2(a, b; rho) for a <= b and |rho| < 1 from
// Phi_2 = int_{-inf}^{a} phi(x) Phi((b - rho x) / s) dx. The log integrand is
// concave, so it is integrated after shifting by its maximum.
double log_bvn_tail(double a, double b, double rho) {
  const double s = std::sqrt((1.0 - rho) * (1.0 + rho));
  auto f = [&](double x) { return log_std_normal_pdf(x) + log_std_normal_cdf((b - rho * x) / s); };
  auto df = [&](double x) { return -x - rho / s * inverse_mills((b - rho * x) / s); };
  double x_max = a;
  if (df(a) < 0.0) {
    double lo = a - 1.0;
    while (df(lo) < 0.0) lo -= 2.0 * (a - lo);
    double hi = a;
    for (int i = 0; i < 200 && hi - lo > 1e-12 * std::max(1.0, std::abs(lo)); ++i) {
      const double mid = 0.5 * (lo + hi);
      (df(mid) < 0.0 ? hi : lo) = mid;
    }
    x_max = 0.5 * (lo + hi);
  }
  const double f_max = f(x_max);
  // Curvature of the log integrand is at least 1, so 40 units covers e^-800.
  const double lo = x_max - 40.0;
  const double hi = std::min(a, x_max + 40.0);
  auto g = [&](double x) { return std::exp(f(x) - f_max); };
  double integral = 0.0;
  if (x_max > lo) integral += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(g, lo, x_max, 15, 1e-13);
  if (hi > x_max) integral += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(g, x_max, hi, 15, 1e-13);
  return f_max + std::log(integral);
}

}  // namespace

double bvn_cdf(double a, double b, double rho) {
  if (std::isnan(a) || std::isnan(b) || std::isnan(rho)) return std::numeric_limits<double>::quiet_NaN();
  if (a > b) std::swap(a, b);  // exact symmetry
  if (a == -std::numeric_limits<double>::infinity()) return 0.0;
  if (b == std::numeric_limits<double>::infinity()) return std_normal_cdf(a);
  rho = std::clamp(rho, -1.0, 1.0);
  if (rho == 1.0) return std_normal_cdf(a);
  if (rho == -1.0) return std::max(0.0, std_normal_cdf(a) - std_normal_cdf(-b));
  const double v = bvn_upper(-a, -b, rho);
  if (v < kTailThreshold) return std::exp(log_bvn_tail(a, b, rho));
  return std::clamp(v, 0.0, 1.0);
}

double log_bvn_cdf(double a, double b, double rho) {
  if (std::isnan(a) || std::isnan(b) || std::isnan(rho)) return std::numeric_limits<double>::quiet_NaN();
  if (a > b) std::swap(a, b);
  if (a == -std::numeric_limits<double>::infinity()) return -std::numeric_limits<double>::infinity();
  if (b == std::numeric_limits<double>::infinity()) return log_std_normal_cdf(a);
  rho = std::clamp(rho, -1.0, 1.0);
  if (rho == 1.0) return log_std_normal_cdf(a);
  if (rho == -1.0) return std::log(std::max(0.0, std_normal_cdf(a) - std_normal_cdf(-b)));
  const double v = bvn_upper(-a, -b, rho);
  if (v < kTailThreshold) return log_bvn_tail(a, b, rho);
  return std::log(std::min(v, 1.0));
}

double bvn_pdf(double a, double b, double rho) {
  const double s2 = (1.0 - rho) * (1.0 + rho);
  return std::exp(-(a * a - 2.0 * rho * a * b + b * b) / (2.0 * s2)) / (kTwoPi * std::sqrt(s2));
}

double inverse_mills(double x) {
  if (x < -8.0) return 1.0 / mills_ratio_upper(-x);
  return std_normal_pdf(x) / std_normal_cdf(x);
}

double fisher_z(double rho) {
  if (!(std::abs(rho) < 1.0))
    throw DomainError("fisher_z: |rho| must be < 1, got " + std::to_string(rho));
  return std::atanh(rho);
}

double fisher_z_inv(double z) { return std::tanh(z); }

}  // namespace heckmi

#include "heckmi/rng.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "heckmi/errors.hpp"

namespace heckmi {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                           std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t M0 = 0xD2511F53u, M1 = 0xCD9E8D57u;
  constexpr std::uint32_t W0 = 0x9E3779B9u, W1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(M0, ctr[0], hi0, lo0);
    mulhilo(M1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += W0;
    key[1] += W1;
  }
  return ctr;
}

RngStream::RngStream(std::uint64_t master_seed, std::vector<std::uint64_t> path)
    : seed_(master_seed), path_(std::move(path)) {
  // Two independent 64-bit digests of (seed, path): one keys the cipher, the
  // other occupies the upper half of the counter.
  std::uint64_t h1 = splitmix(seed_ ^ 0x243F6A8885A308D3ULL);
  std::uint64_t h2 = splitmix(seed_ ^ 0x13198A2E03707344ULL);
  for (std::uint64_t p : path_) {
    h1 = splitmix(h1 ^ splitmix(p + 0xA4093822299F31D0ULL));
    h2 = splitmix(h2 ^ splitmix(p + 0x082EFA98EC4E6C89ULL));
  }
  h1 = splitmix(h1 ^ path_.size());
  h2 = splitmix(h2 ^ (path_.size() << 1));
  key_ = {static_cast<std::uint32_t>(h1), static_cast<std::uint32_t>(h1 >> 32)};
  tag_ = {static_cast<std::uint32_t>(h2), static_cast<std::uint32_t>(h2 >> 32)};
}

RngStream RngStream::child(std::uint64_t index) const {
  auto p = path_;
  p.push_back(index);
  return RngStream(seed_, std::move(p));
}

RngStream RngStream::child(std::initializer_list<std::uint64_t> indices) const {
  auto p = path_;
  p.insert(p.end(), indices.begin(), indices.end());
  return RngStream(seed_, std::move(p));
}

void RngStream::refill() {
  buffer_ = philox4x32_10({static_cast<std::uint32_t>(block_),
                           static_cast<std::uint32_t>(block_ >> 32), tag_[0], tag_[1]},
                          key_);
  ++block_;
  used_ = 0;
}

std::uint64_t RngStream::next_u64() {
  if (used_ > 2) refill();
  const std::uint64_t v = (static_cast<std::uint64_t>(buffer_[used_]) << 32) | buffer_[used_ + 1];
  used_ += 2;
  return v;
}

double RngStream::uniform() {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::normal() {
  if (spare_normal_) {
    const double v = *spare_normal_;
    spare_normal_.reset();
    return v;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_normal_ = v * f;
  return u * f;
}

std::uint64_t RngStream::index(std::uint64_t n) {
  if (n == 0) throw DomainError("RngStream::index: n must be positive");
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

double draw_normal(RngStream& rng, double mean, double sd) {
  if (!(sd >= 0.0) || !std::isfinite(mean))
    throw DomainError("draw_normal: invalid parameters");
  return mean + sd * rng.normal();
}

Vector draw_mvnormal(RngStream& rng, const Vector& mean, const Matrix& cov) {
  if (cov.rows() != mean.size() || cov.cols() != mean.size())
    throw DomainError("draw_mvnormal: dimension mismatch");
  if (!is_symmetric(cov)) throw DomainError("draw_mvnormal: covariance not symmetric");
  if (mean.size() == 0) return mean;
  const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (cov + cov.transpose()), Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -1e-8 * scale)
    throw DomainError("draw_mvnormal: covariance not positive semi-definite");
  Vector z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return mean + psd_factor(cov) * z;
}

int draw_bernoulli(RngStream& rng, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("draw_bernoulli: p outside [0, 1]");
  return rng.uniform() < p ? 1 : 0;
}

double draw_gamma(RngStream& rng, double shape) {
  if (!(shape > 0.0) || !std::isfinite(shape)) throw DomainError("draw_gamma: shape must be positive");
  if (shape < 1.0) {
    const double g = draw_gamma(rng, shape + 1.0);
    return g * std::pow(rng.uniform(), 1.0 / shape);
  }
  // Marsaglia & Tsang (2000).
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
  }
}

double draw_chisq(RngStream& rng, double df) {
  if (!(df > 0.0)) throw DomainError("draw_chisq: df must be positive");
  return 2.0 * draw_gamma(rng, 0.5 * df);
}

Eigen::Vector2d draw_bvn_skew_t(RngStream& rng, const Eigen::Matrix2d& scale,
                                const Eigen::Vector2d& alpha, double df) {
  if (!(df > 0.0)) throw DomainError("draw_bvn_skew_t: df must be positive");
  if (!(scale(0, 0) > 0.0 && scale(1, 1) > 0.0) ||
      std::abs(scale(0, 1) - scale(1, 0)) > 1e-12 || scale.determinant() <= 0.0)
    throw DomainError("draw_bvn_skew_t: scale matrix must be positive definite");
  const Eigen::Vector2d omega = scale.diagonal().cwiseSqrt();
  const Eigen::Matrix2d corr = omega.cwiseInverse().asDiagonal() * scale * omega.cwiseInverse().asDiagonal();
  const Eigen::Vector2d delta = corr * alpha / std::sqrt(1.0 + alpha.dot(corr * alpha));

  Matrix joint(3, 3);
  joint << 1.0, delta(0), delta(1),
           delta(0), corr(0, 0), corr(0, 1),
           delta(1), corr(1, 0), corr(1, 1);
  const Vector x = draw_mvnormal(rng, Vector::Zero(3), joint);
  Eigen::Vector2d z(x(1), x(2));
  if (x(0) <= 0.0) z = -z;
  Eigen::Vector2d y = omega.asDiagonal() * z;
  if (std::isfinite(df)) y /= std::sqrt(draw_chisq(rng, df) / df);
  return y;
}

}  // namespace heckmi

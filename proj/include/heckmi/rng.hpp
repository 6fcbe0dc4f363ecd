#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <vector>

#include "heckmi/linalg.hpp"

namespace heckmi {

/// Philox4x32-10 block function.
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr, std::array<std::uint32_t, 2> key);

/// Counter-based random stream (Philox4x32-10) addressed by a master seed
/// and a hierarchical path such as {replicate, imputation, cluster}.
///
/// Streams with the same (seed, path) produce identical sequences on every
/// platform; streams with different paths are statistically independent, so
/// concurrent work splits by path instead of sharing a generator. A stream is
/// single-owner: copy it or derive a child, never share it across threads.
class RngStream {
 public:
  explicit RngStream(std::uint64_t master_seed, std::vector<std::uint64_t> path = {});

  /// Stream at path + {index}. Independent of how much of *this was consumed.
  RngStream child(std::uint64_t index) const;
  RngStream child(std::initializer_list<std::uint64_t> indices) const;

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  /// Standard normal (Marsaglia polar method).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n);

  std::uint64_t master_seed() const { return seed_; }
  const std::vector<std::uint64_t>& path() const { return path_; }

 private:
  void refill();

  std::uint64_t seed_;
  std::vector<std::uint64_t> path_;
  std::array<std::uint32_t, 2> key_{};
  std::array<std::uint32_t, 2> tag_{};
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int used_ = 4;
  std::optional<double> spare_normal_;
};

double draw_normal(RngStream& rng, double mean, double sd);
/// Throws DomainError when cov is not PSD (tolerance 1e-8 relative).
Vector draw_mvnormal(RngStream& rng, const Vector& mean, const Matrix& cov);
/// Throws DomainError for p outside [0, 1].
int draw_bernoulli(RngStream& rng, double p);
double draw_gamma(RngStream& rng, double shape);
double draw_chisq(RngStream& rng, double df);

/// Bivariate skew-t: an Azzalini skew-normal with scale matrix `scale` and
/// shape `alpha`, divided by sqrt(chi2_df / df). df = +inf gives the
/// skew-normal itself.
Eigen::Vector2d draw_bvn_skew_t(RngStream& rng, const Eigen::Matrix2d& scale,
                                const Eigen::Vector2d& alpha, double df);

}  // namespace heckmi

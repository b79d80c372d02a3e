#ifndef ZOL2L_ZO_ORACLE_HPP
#define ZOL2L_ZO_ORACLE_HPP

// Zeroth-order gradient estimation and Gaussian query sampling.

#include <cstdint>

#include "zol2l/common.hpp"
#include "zol2l/optimizee.hpp"
#include "zol2l/rng.hpp"

namespace zol2l {

inline constexpr double kDefaultMu = 0.01;

enum class EstimateKind { kRandomDirection, kCoordinatewise };

struct GradientEstimate {
  Vector g;
  std::uint64_t queries_used = 0;
  EstimateKind kind = EstimateKind::kRandomDirection;
  /// Random-direction only: f(theta + mu u_i) - f(theta) per direction.
  Vector differences;
  /// Random-direction only: f(theta).
  double base_value = 0.0;
};

/// Diagonal covariance, stored as per-coordinate variances.
struct DiagonalGaussian {
  Vector var;

  static DiagonalGaussian identity(Index d) { return {Vector::Ones(d)}; }
  Index dim() const { return var.size(); }
  /// Left-to-right sum, so that normalization can make it exactly d.
  double trace() const {
    double t = 0.0;
    for (Index j = 0; j < var.size(); ++j) t += var[j];
    return t;
  }
  bool valid() const { return var.allFinite() && (var.array() > 0.0).all(); }
};

/// q directions as columns: z standard normal, u = sqrt(var) * z.
struct DirectionBatch {
  Matrix z;  // d x q
  Matrix u;  // d x q
  Index count() const { return u.cols(); }
};

/// (1 / (mu q)) sum_i [f(theta + mu u_i) - f(theta)] u_i. The base value is
/// evaluated once; every query uses `batch_seed`. Costs q + 1 queries.
GradientEstimate estimate_gradient_random(Optimizee& f, const Vector& theta, double mu,
                                          const DirectionBatch& directions,
                                          std::uint64_t batch_seed = kFullBatch);

/// sum_i (1 / (2 mu_i)) [f(theta + mu_i e_i) - f(theta - mu_i e_i)] e_i.
/// Costs 2d queries.
GradientEstimate estimate_gradient_coordinatewise(Optimizee& f, const Vector& theta,
                                                  const Vector& mu,
                                                  std::uint64_t batch_seed = kFullBatch);

/// mu_i = 1e-6 * max(1, |theta_i|).
Vector default_coordinate_steps(const Vector& theta);

/// Draws z column by column from `rng` and applies u = Sigma^{1/2} z.
DirectionBatch sample_directions(const DiagonalGaussian& sigma, int q, Rng& rng);

struct MixedCovariance {
  DiagonalGaussian cov;
  bool used_predicted = false;  // the Bernoulli draw X
};

/// One X ~ Ber(p): returns sigma when X = 1, the identity otherwise.
MixedCovariance mix_covariance(const DiagonalGaussian& sigma, double p, Rng& rng);

/// Rescales so the trace equals d. The result's `trace()` is exactly d.
DiagonalGaussian normalize_covariance(const DiagonalGaussian& sigma);

double cosine_similarity(const Vector& a, const Vector& b);

}  // namespace zol2l

#endif  // ZOL2L_ZO_ORACLE_HPP

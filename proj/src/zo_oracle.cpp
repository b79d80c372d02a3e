#include "zol2l/zo_oracle.hpp"

#include <cmath>
#include <string>

namespace zol2l {

namespace {

double checked_query(Optimizee& f, const Vector& point, std::uint64_t batch_seed) {
  const double v = f.query(point, batch_seed);
  if (!std::isfinite(v)) throw NumericError("non-finite function value at query point", point);
  return v;
}

}  // namespace

GradientEstimate estimate_gradient_random(Optimizee& f, const Vector& theta, double mu,
                                          const DirectionBatch& directions,
                                          std::uint64_t batch_seed) {
  require(mu > 0.0, ErrorKind::kInvalidArgument, "estimate_gradient_random: mu must be positive");
  const Index q = directions.count();
  require(q >= 1, ErrorKind::kInvalidArgument, "estimate_gradient_random: need q >= 1");
  require(directions.u.rows() == theta.size() && theta.size() == f.dimension(),
          ErrorKind::kShapeMismatch, "estimate_gradient_random: dimension mismatch");
  require_finite(directions.u, "estimate_gradient_random: directions");

  GradientEstimate est;
  est.kind = EstimateKind::kRandomDirection;
  const double base = checked_query(f, theta, batch_seed);
  est.base_value = base;
  est.differences.resize(q);
  for (Index i = 0; i < q; ++i) {
    const Vector point = theta + mu * directions.u.col(i);
    est.differences[i] = checked_query(f, point, batch_seed) - base;
  }
  est.g = directions.u * est.differences / (mu * static_cast<double>(q));
  est.queries_used = static_cast<std::uint64_t>(q) + 1;
  return est;
}

GradientEstimate estimate_gradient_coordinatewise(Optimizee& f, const Vector& theta,
                                                  const Vector& mu, std::uint64_t batch_seed) {
  const Index d = theta.size();
  require(mu.size() == d && d == f.dimension(), ErrorKind::kShapeMismatch,
          "estimate_gradient_coordinatewise: dimension mismatch");
  require((mu.array() > 0.0).all(), ErrorKind::kInvalidArgument,
          "estimate_gradient_coordinatewise: every mu_i must be positive");
  GradientEstimate est;
  est.kind = EstimateKind::kCoordinatewise;
  est.g.resize(d);
  Vector point = theta;
  for (Index i = 0; i < d; ++i) {
    point[i] = theta[i] + mu[i];
    const double up = checked_query(f, point, batch_seed);
    point[i] = theta[i] - mu[i];
    const double down = checked_query(f, point, batch_seed);
    point[i] = theta[i];
    est.g[i] = (up - down) / (2.0 * mu[i]);
  }
  est.queries_used = 2 * static_cast<std::uint64_t>(d);
  return est;
}

Vector default_coordinate_steps(const Vector& theta) {
  return theta.cwiseAbs().cwiseMax(1.0) * 1e-6;
}

DirectionBatch sample_directions(const DiagonalGaussian& sigma, int q, Rng& rng) {
  require(q >= 1, ErrorKind::kInvalidArgument, "sample_directions: q must be >= 1");
  require(sigma.valid(), ErrorKind::kInvalidArgument,
          "sample_directions: variances must be positive and finite");
  DirectionBatch b;
  b.z = rng.normal_matrix(sigma.dim(), q);
  b.u = sigma.var.cwiseSqrt().asDiagonal() * b.z;
  return b;
}

MixedCovariance mix_covariance(const DiagonalGaussian& sigma, double p, Rng& rng) {
  require(p >= 0.0 && p <= 1.0, ErrorKind::kInvalidArgument, "mix_covariance: p outside [0, 1]");
  const bool x = rng.bernoulli(p);
  return {x ? sigma : DiagonalGaussian::identity(sigma.dim()), x};
}

DiagonalGaussian normalize_covariance(const DiagonalGaussian& sigma) {
  const double d = static_cast<double>(sigma.dim());
  const double trace = sigma.trace();
  if (!(std::isfinite(trace) && trace > 0.0) || !sigma.var.allFinite())
    throw NumericError("normalize_covariance: trace must be positive and finite", sigma.var);
  DiagonalGaussian out{sigma.var * (d / trace)};
  // Fold the roundoff into the largest variance, then settle the last
  // addition of trace() through the last coordinate.
  Index big = 0;
  out.var.maxCoeff(&big);
  out.var[big] += d - out.trace();
  const Index last = out.dim() - 1;
  for (int pass = 0; pass < 64; ++pass) {
    const double t = out.trace();
    if (t == d) break;
    double next = out.var[last] + (d - t);
    if (next == out.var[last] || pass > 2) next = std::nextafter(out.var[last], t < d ? HUGE_VAL : -HUGE_VAL);
    out.var[last] = next;
  }
  return out;
}

double cosine_similarity(const Vector& a, const Vector& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

}  // namespace zol2l

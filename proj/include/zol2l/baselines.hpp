#ifndef ZOL2L_BASELINES_HPP
#define ZOL2L_BASELINES_HPP

// Hand-designed zeroth-order optimizers: ZO-SGD, ZO-signSGD, ZO-ADAM,
// ZO-SZVR-G and the Guided ES sampler.

#include <cstdint>
#include <span>

#include "zol2l/common.hpp"
#include "zol2l/optimizee.hpp"
#include "zol2l/rng.hpp"
#include "zol2l/zo_oracle.hpp"

namespace zol2l {

/// Log-scale grid for the constant delta in eta = delta / d.
inline constexpr double kDeltaGrid[] = {0.01, 0.1, 1.0, 10.0, 100.0, 1000.0};

Vector zo_sgd_step(const Vector& theta, const Vector& g, double eta);

/// sign(0) = 0.
Vector zo_signsgd_step(const Vector& theta, const Vector& g, double eta);

struct AdamState {
  Vector m;
  Vector v;
  std::int64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double eta = 1e-3;

  static AdamState zeros(Index d, double eta, double beta1 = 0.9, double beta2 = 0.999,
                         double eps = 1e-8);
};

/// Bias-corrected ADAM; advances `state`.
Vector zo_adam_step(const Vector& theta, const Vector& g, AdamState& state);

struct SzvrState {
  Vector snapshot;
  Vector snapshot_grad;
  double snapshot_value = 0.0;
  int epoch_len = 10;
  int q_snapshot = 100;
  std::int64_t inner = 0;
};

struct SzvrStepInfo {
  Vector g;
  std::uint64_t queries = 0;
  bool refreshed = false;
};

/// One ZO-SZVR-G iteration. On epoch boundaries the snapshot is moved to theta
/// and its gradient re-estimated with q_snapshot directions on the full
/// batch (q_snapshot + 1 queries). Each step then draws one minibatch and one
/// direction batch shared by the estimates at theta and at the snapshot:
///   g = ghat_b(theta) - ghat_b(snapshot) + snapshot_grad.
/// For deterministic optimizees f(snapshot) is reused from the refresh, so a
/// step costs 2q + 1 queries; stochastic ones re-evaluate it (2q + 2).
Vector szvr_step(Optimizee& f, const Vector& theta, SzvrState& state, int q, double mu,
                 double eta, Rng& rng, SzvrStepInfo* info = nullptr);

struct GuidedSubspace {
  Matrix basis;  // d x k, orthonormal columns
  double alpha = 0.5;
  Index rank() const { return basis.cols(); }
};

/// Orthonormal basis of span(surrogates) by Gram-Schmidt; vectors whose
/// residual norm is <= 1e-12 * max(1, |v|) are dropped.
GuidedSubspace guided_subspace(std::span<const Vector> surrogates, Index dim, double alpha);

/// u = sqrt(alpha) z + sqrt(1 - alpha) U z_k, rescaled so E|u|^2 = d.
/// With alpha = 1 or an empty subspace, u = z and only z is drawn.
DirectionBatch guided_es_sample(std::span<const Vector> surrogates, Index dim, double alpha, int q,
                                Rng& rng);

}  // namespace zol2l

#endif  // ZOL2L_BASELINES_HPP

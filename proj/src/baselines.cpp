#include "zol2l/baselines.hpp"

#include <algorithm>
#include <cmath>

namespace zol2l {

namespace {

void check_step_inputs(const Vector& theta, const Vector& g, double eta, const char* who) {
  require(theta.size() == g.size(), ErrorKind::kShapeMismatch, std::string(who) + ": size mismatch");
  if (!theta.allFinite() || !g.allFinite() || !std::isfinite(eta))
    throw NumericError(std::string(who) + ": non-finite input", theta);
}

}  // namespace

Vector zo_sgd_step(const Vector& theta, const Vector& g, double eta) {
  check_step_inputs(theta, g, eta, "zo_sgd_step");
  return theta - eta * g;
}

Vector zo_signsgd_step(const Vector& theta, const Vector& g, double eta) {
  check_step_inputs(theta, g, eta, "zo_signsgd_step");
  const Vector s = g.unaryExpr([](double v) { return double((v > 0.0) - (v < 0.0)); });
  return theta - eta * s;
}

AdamState AdamState::zeros(Index d, double eta, double beta1, double beta2, double eps) {
  AdamState s;
  s.m = Vector::Zero(d);
  s.v = Vector::Zero(d);
  s.eta = eta;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.eps = eps;
  return s;
}

Vector zo_adam_step(const Vector& theta, const Vector& g, AdamState& s) {
  check_step_inputs(theta, g, s.eta, "zo_adam_step");
  require(s.m.size() == g.size() && s.v.size() == g.size(), ErrorKind::kShapeMismatch,
          "zo_adam_step: state size mismatch");
  require(s.t >= 0, ErrorKind::kInvalidArgument, "zo_adam_step: negative step counter");
  ++s.t;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * g;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * g.cwiseAbs2();
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  const Vector m_hat = s.m / c1;
  const Vector v_hat = s.v / c2;
  return theta - s.eta * m_hat.cwiseQuotient((v_hat.cwiseSqrt().array() + s.eps).matrix());
}

Vector szvr_step(Optimizee& f, const Vector& theta, SzvrState& st, int q, double mu, double eta,
                 Rng& rng, SzvrStepInfo* info) {
  require(q >= 1, ErrorKind::kInvalidArgument, "szvr_step: q must be >= 1");
  require(st.epoch_len >= 1 && st.q_snapshot >= 1, ErrorKind::kInvalidArgument,
          "szvr_step: bad epoch configuration");
  const Index d = theta.size();
  std::uint64_t queries = 0;
  const bool refresh = st.inner % st.epoch_len == 0;
  if (refresh) {
    st.snapshot = theta;
    const DirectionBatch dirs = sample_directions(DiagonalGaussian::identity(d), st.q_snapshot, rng);
    GradientEstimate est = estimate_gradient_random(f, st.snapshot, mu, dirs, kFullBatch);
    st.snapshot_grad = std::move(est.g);
    st.snapshot_value = est.base_value;
    queries += est.queries_used;
  }
  ++st.inner;

  const std::uint64_t batch = f.stochastic() ? rng.next_u64() : kFullBatch;
  const DirectionBatch dirs = sample_directions(DiagonalGaussian::identity(d), q, rng);
  const GradientEstimate at_theta = estimate_gradient_random(f, theta, mu, dirs, batch);
  queries += at_theta.queries_used;

  double snap_base = st.snapshot_value;
  if (f.stochastic()) {
    snap_base = f.query(st.snapshot, batch);
    ++queries;
  }
  Vector snap_diff(q);
  for (int i = 0; i < q; ++i) {
    const double v = f.query(st.snapshot + mu * dirs.u.col(i), batch);
    if (!std::isfinite(v)) throw NumericError("szvr_step: non-finite function value", st.snapshot);
    snap_diff[i] = v - snap_base;
  }
  queries += static_cast<std::uint64_t>(q);

  Vector g = dirs.u * (at_theta.differences - snap_diff) / (mu * q) + st.snapshot_grad;
  Vector next = zo_sgd_step(theta, g, eta);
  if (info) {
    info->g = std::move(g);
    info->queries = queries;
    info->refreshed = refresh;
  }
  return next;
}

GuidedSubspace guided_subspace(std::span<const Vector> surrogates, Index dim, double alpha) {
  require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::kInvalidArgument,
          "guided_subspace: alpha outside [0, 1]");
  std::vector<Vector> cols;
  for (const Vector& s : surrogates) {
    require(s.size() == dim, ErrorKind::kShapeMismatch, "guided_subspace: surrogate size mismatch");
    if (!s.allFinite()) continue;
    const double scale = std::max(1.0, s.norm());
    Vector r = s;
    // Two Gram-Schmidt sweeps keep the columns orthonormal to roundoff.
    for (int sweep = 0; sweep < 2; ++sweep)
      for (const Vector& c : cols) r -= c.dot(r) * c;
    const double n = r.norm();
    if (n <= 1e-12 * scale) continue;
    cols.push_back(r / n);
  }
  GuidedSubspace out;
  out.alpha = alpha;
  out.basis.resize(dim, static_cast<Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) out.basis.col(static_cast<Index>(k)) = cols[k];
  return out;
}

DirectionBatch guided_es_sample(std::span<const Vector> surrogates, Index dim, double alpha, int q,
                                Rng& rng) {
  require(q >= 1, ErrorKind::kInvalidArgument, "guided_es_sample: q must be >= 1");
  const GuidedSubspace sub = guided_subspace(surrogates, dim, alpha);
  DirectionBatch b;
  b.z = rng.normal_matrix(dim, q);
  const Index k = sub.rank();
  if (alpha == 1.0 || k == 0) {
    b.u = b.z;
    return b;
  }
  const Matrix zk = rng.normal_matrix(k, q);
  const double d = static_cast<double>(dim);
  const double scale = std::sqrt(d / (alpha * d + (1.0 - alpha) * static_cast<double>(k)));
  b.u = scale * (std::sqrt(alpha) * b.z + std::sqrt(1.0 - alpha) * sub.basis * zk);
  return b;
}

}  // namespace zol2l

#include <doctest.h>

#include <array>
#include <cmath>
#include <vector>

#include "zol2l/baselines.hpp"
#include "zol2l/tasks.hpp"

using namespace zol2l;

TEST_CASE("zo_sgd_step") {
  CHECK(zo_sgd_step(Vector{{1.0, 2.0}}, Vector{{0.5, -1.0}}, 0.1).isApprox(Vector{{0.95, 2.1}}, 1e-15));
  const Vector theta{{3.0, -1.0}};
  CHECK(zo_sgd_step(theta, Vector::Zero(2), 0.7) == theta);
  CHECK_THROWS_AS(zo_sgd_step(theta, Vector::Zero(3), 0.1), Error);
}

TEST_CASE("zo_sgd on a quadratic converges") {
  const Index d = 10;
  double ratio = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    FunctionOptimizee f(d, [](const Vector& t) { return 0.5 * t.squaredNorm(); });
    Rng rng(seed);
    Vector theta = rng.normal_vector(d);
    const double start = f.full_value(theta);
    for (int t = 0; t < 500; ++t) {
      const auto dirs = sample_directions(DiagonalGaussian::identity(d), 20, rng);
      theta = zo_sgd_step(theta, estimate_gradient_random(f, theta, kDefaultMu, dirs, kFullBatch).g, 0.05);
    }
    ratio += f.full_value(theta) / start / 10.0;
  }
  CHECK(ratio < 1e-2);
}

TEST_CASE("zo_signsgd_step") {
  CHECK(zo_signsgd_step(Vector{{1.0, 2.0}}, Vector{{0.5, -1.0}}, 0.1).isApprox(Vector{{0.9, 2.1}}, 1e-15));
  const Vector theta{{3.0, -1.0, 0.5}};
  CHECK(zo_signsgd_step(theta, Vector::Zero(3), 0.7) == theta);
  const Vector g{{0.3, -2.0, 0.0}};
  const Vector base = zo_signsgd_step(theta, g, 0.2);
  CHECK(base[2] == theta[2]);
  for (double c : {1e-6, 3.0, 1e6}) CHECK(zo_signsgd_step(theta, Vector(c * g), 0.2) == base);
}

TEST_CASE("zo_adam_step: first step and zero gradient") {
  AdamState s = AdamState::zeros(1, 0.1);
  const Vector next = zo_adam_step(Vector::Ones(1), Vector::Constant(1, 0.5), s);
  CHECK(next[0] == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(s.t == 1);

  AdamState z = AdamState::zeros(2, 0.1);
  const Vector theta{{1.0, -4.0}};
  CHECK(zo_adam_step(theta, Vector::Zero(2), z) == theta);
}

TEST_CASE("zo_adam_step with zero betas is normalized sgd") {
  AdamState s = AdamState::zeros(3, 0.05, 0.0, 0.0);
  const Vector theta{{0.0, 1.0, 2.0}};
  const Vector g{{0.2, -3.0, 1e-3}};
  const Vector next = zo_adam_step(theta, g, s);
  for (Index j = 0; j < 3; ++j) CHECK(next[j] == doctest::Approx(theta[j] - 0.05 * g[j] / (std::abs(g[j]) + 1e-8)));
}

TEST_CASE("zo_adam_step matches a reference implementation bit for bit") {
  const Index d = 4;
  auto f = quadratic_task(d, 5);
  Rng rng(6);
  const double eta = 0.02, b1 = 0.9, b2 = 0.996, eps = 1e-8;
  AdamState s = AdamState::zeros(d, eta, b1, b2, eps);
  Vector theta = rng.normal_vector(d);
  std::vector<double> ref(theta.data(), theta.data() + d), m(d, 0.0), v(d, 0.0);
  for (int t = 1; t <= 100; ++t) {
    const auto dirs = sample_directions(DiagonalGaussian::identity(d), 5, rng);
    const Vector g = estimate_gradient_random(*f, theta, kDefaultMu, dirs, kFullBatch).g;
    theta = zo_adam_step(theta, g, s);
    const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
    for (Index j = 0; j < d; ++j) {
      const auto u = static_cast<std::size_t>(j);
      m[u] = b1 * m[u] + (1.0 - b1) * g[j];
      v[u] = b2 * v[u] + (1.0 - b2) * (g[j] * g[j]);
      ref[u] = ref[u] - eta * ((m[u] / c1) / (std::sqrt(v[u] / c2) + eps));
      CHECK(theta[j] == ref[u]);
    }
  }
}

namespace {

// Counts queries and records the ledger per step.
std::vector<std::uint64_t> szvr_ledger(Optimizee& f, int steps, int q, int q_snap) {
  SzvrState st;
  st.q_snapshot = q_snap;
  Rng rng(3);
  Vector theta = Vector::Ones(f.dimension());
  std::vector<std::uint64_t> per_step;
  for (int t = 0; t < steps; ++t) {
    const std::uint64_t before = f.ledger();
    SzvrStepInfo info;
    theta = szvr_step(f, theta, st, q, kDefaultMu, 0.01, rng, &info);
    per_step.push_back(f.ledger() - before);
    CHECK(info.queries == per_step.back());
    CHECK(info.refreshed == (t % 10 == 0));
  }
  return per_step;
}

}  // namespace

TEST_CASE("szvr: per-step query accounting on a deterministic task") {
  auto f = quadratic_task(6, 2);
  const int q = 5, q_snap = 100;
  const auto per_step = szvr_ledger(*f, 200, q, q_snap);
  std::uint64_t total = 0;
  for (std::size_t t = 0; t < per_step.size(); ++t) {
    const std::uint64_t expected = 2 * q + 1 + (t % 10 == 0 ? q_snap + 1 : 0);
    CHECK(per_step[t] == expected);
    total += per_step[t];
  }
  CHECK(f->ledger() == total);
}

TEST_CASE("szvr: stochastic tasks re-evaluate the snapshot base") {
  auto f = generate_binary_task(5, 50, 1, 10);
  const auto per_step = szvr_ledger(*f, 20, 4, 30);
  for (std::size_t t = 0; t < per_step.size(); ++t)
    CHECK(per_step[t] == 2 * 4 + 2 + (t % 10 == 0 ? 31u : 0u));
}

TEST_CASE("szvr: at the snapshot the estimate is the snapshot gradient") {
  auto f = generate_binary_task(5, 60, 4, 8);
  SzvrState st;
  st.q_snapshot = 7;
  Rng rng(1);
  const Vector theta = Vector::Constant(5, 0.2);
  SzvrStepInfo info;
  const Vector next = szvr_step(*f, theta, st, 7, kDefaultMu, 0.3, rng, &info);
  CHECK(info.refreshed);
  CHECK((info.g - st.snapshot_grad).norm() <= 1e-14 * (1.0 + st.snapshot_grad.norm()));
  CHECK((next - zo_sgd_step(theta, st.snapshot_grad, 0.3)).norm() < 1e-14);
}

TEST_CASE("guided subspace: single surrogate and degenerate ones") {
  Vector s = Vector::Zero(5);
  s[0] = 3.0;
  s[1] = 4.0;
  const std::array<Vector, 1> one{s};
  const auto sub = guided_subspace(one, 5, 0.5);
  REQUIRE(sub.rank() == 1);
  CHECK(sub.basis.col(0).isApprox(Vector{{0.6, 0.8, 0.0, 0.0, 0.0}}, 1e-15));

  const std::array<Vector, 3> dup{s, Vector(2.0 * s), Vector::Zero(5)};
  CHECK(guided_subspace(dup, 5, 0.5).rank() == 1);

  Rng rng(9);
  const std::array<Vector, 2> two{rng.normal_vector(5), rng.normal_vector(5)};
  const auto b = guided_subspace(two, 5, 0.5).basis;
  CHECK((b.transpose() * b - Matrix::Identity(2, 2)).norm() < 1e-14);
}

TEST_CASE("guided ES with alpha 1 is standard sampling") {
  Rng rng(4);
  const std::array<Vector, 2> surrogates{rng.normal_vector(8), rng.normal_vector(8)};
  Rng a(21), b(21);
  for (int k = 0; k < 5; ++k) {
    const auto g = guided_es_sample(surrogates, 8, 1.0, 6, a);
    const auto s = sample_directions(DiagonalGaussian::identity(8), 6, b);
    CHECK(g.u == s.u);
  }
}

TEST_CASE("guided ES covariance") {
  const Index d = 6;
  Vector dir = Vector::Zero(d);
  dir[1] = 1.0;
  dir[2] = 1.0;
  const std::array<Vector, 1> surrogates{dir};
  Rng rng(77);
  const int n = 50000;
  const auto batch = guided_es_sample(surrogates, d, 0.5, n, rng);
  const Matrix emp = batch.u * batch.u.transpose() / static_cast<double>(n);
  const Vector unit = dir.normalized();
  Matrix expected = 0.5 * Matrix::Identity(d, d) + 0.5 * unit * unit.transpose();
  expected *= static_cast<double>(d) / expected.trace();
  CHECK((emp - expected).norm() / expected.norm() < 0.05);
  CHECK(emp.trace() == doctest::Approx(static_cast<double>(d)).epsilon(0.02));
}

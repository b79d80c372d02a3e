#include <doctest.h>

#include <cmath>

#include "zol2l/tasks.hpp"
#include "zol2l/zo_oracle.hpp"

using namespace zol2l;

namespace {

DirectionBatch fixed_directions(Matrix u) { return {u, u}; }

FunctionOptimizee quadratic(Index d) {
  return FunctionOptimizee(d, [](const Vector& t) { return 0.5 * t.squaredNorm(); },
                           [](const Vector& t) { return t; });
}

}  // namespace

TEST_CASE("random-direction estimate: constant function gives zero") {
  FunctionOptimizee f(3, [](const Vector&) { return 4.2; });
  Rng rng(1);
  const auto dirs = sample_directions(DiagonalGaussian::identity(3), 5, rng);
  const auto est = estimate_gradient_random(f, Vector::Ones(3), 0.1, dirs, kFullBatch);
  CHECK(est.g.isZero(0.0));
  CHECK(est.queries_used == 6);
  CHECK(f.ledger() == 6);
}

TEST_CASE("random-direction estimate: linear function with axis directions") {
  FunctionOptimizee f(2, [](const Vector& t) { return t[0]; });
  for (double mu : {1e-3, 0.5, 7.0}) {
    const auto est = estimate_gradient_random(f, Vector::Zero(2), mu, fixed_directions(Matrix::Identity(2, 2)), kFullBatch);
    CHECK(est.g[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(est.g[1] == 0.0);
  }
}

TEST_CASE("random-direction estimate: small mu approaches the directional average") {
  const Index d = 6;
  QuadraticTask f(Vector::LinSpaced(d, -1, 1), Vector::LinSpaced(d, 0.5, 2));
  Rng rng(4);
  const Vector theta = rng.normal_vector(d);
  const auto dirs = sample_directions(DiagonalGaussian::identity(d), 8, rng);
  const auto est = estimate_gradient_random(f, theta, 1e-6, dirs, kFullBatch);
  const Vector grad = f.gradient(theta, kFullBatch);
  Vector expected = Vector::Zero(d);
  for (Index i = 0; i < dirs.count(); ++i) expected += grad.dot(dirs.u.col(i)) * dirs.u.col(i);
  expected /= static_cast<double>(dirs.count());
  CHECK((est.g - expected).norm() / expected.norm() < 1e-4);
}

TEST_CASE("random-direction estimate rejects bad input") {
  auto f = quadratic(3);
  CHECK_THROWS_AS(estimate_gradient_random(f, Vector::Zero(3), 0.0, fixed_directions(Matrix::Identity(3, 3)), kFullBatch), Error);
  CHECK_THROWS_AS(estimate_gradient_random(f, Vector::Zero(2), 0.1, fixed_directions(Matrix::Identity(3, 3)), kFullBatch), Error);
  FunctionOptimizee blowup(1, [](const Vector& t) { return t[0] > 0 ? std::log(-1.0) : 0.0; });
  CHECK_THROWS_AS(estimate_gradient_random(blowup, Vector::Zero(1), 0.1, fixed_directions(Matrix::Ones(1, 1)), kFullBatch), NumericError);
}

TEST_CASE("coordinatewise estimate: worked examples") {
  FunctionOptimizee sq(2, [](const Vector& t) { return t.squaredNorm(); });
  const auto est = estimate_gradient_coordinatewise(sq, Vector{{1.0, -2.0}}, Vector::Constant(2, 0.1), kFullBatch);
  CHECK(est.g[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(est.g[1] == doctest::Approx(-4.0).epsilon(1e-14));
  CHECK(est.queries_used == 4);
  CHECK(sq.ledger() == 4);

  FunctionOptimizee cube(1, [](const Vector& t) { return t[0] * t[0] * t[0]; });
  const auto c = estimate_gradient_coordinatewise(cube, Vector::Ones(1), Vector::Constant(1, 0.1), kFullBatch);
  CHECK(c.g[0] == doctest::Approx(3.01).epsilon(1e-12));

  FunctionOptimizee flat(4, [](const Vector&) { return -1.0; });
  CHECK(estimate_gradient_coordinatewise(flat, Vector::Ones(4), Vector::Constant(4, 0.3), kFullBatch).g.isZero(0.0));
}

TEST_CASE("coordinatewise estimate is exact on quadratics for any step") {
  for (Index d : {Index{3}, Index{40}}) {
    auto f = quadratic_task(d, 9);
    Rng rng(2);
    const Vector theta = rng.normal_vector(d) * 3.0;
    const Vector ref = f->gradient(theta, kFullBatch);
    for (double mu : {1e-3, 1e-2, 1.0}) {
      const Vector g = estimate_gradient_coordinatewise(*f, theta, Vector::Constant(d, mu), kFullBatch).g;
      CHECK((g - ref).norm() / ref.norm() < 1e-9);
    }
    // Tiny steps are still exact in exact arithmetic; cancellation costs digits.
    const Vector g = estimate_gradient_coordinatewise(*f, theta, default_coordinate_steps(theta), kFullBatch).g;
    CHECK((g - ref).norm() / ref.norm() < 1e-7);
  }
  CHECK(default_coordinate_steps(Vector{{0.0, -5.0}}).isApprox(Vector{{1e-6, 5e-6}}));
}

TEST_CASE("sample_directions: identity and scaled covariances") {
  Rng a(8), b(8);
  const auto dirs = sample_directions(DiagonalGaussian::identity(4), 3, a);
  CHECK(dirs.u == dirs.z);
  CHECK(dirs.z == b.normal_matrix(4, 3));

  Rng c(8);
  const auto scaled = sample_directions(DiagonalGaussian{Vector::Constant(4, 4.0)}, 3, c);
  CHECK(scaled.u == 2.0 * scaled.z);
  CHECK(scaled.z == dirs.z);
}

TEST_CASE("sample_directions: empirical variances") {
  const Vector var{{0.25, 1.0, 2.0, 4.0, 9.0}};
  Rng rng(33);
  const auto dirs = sample_directions(DiagonalGaussian{var}, 50000, rng);
  for (Index j = 0; j < 5; ++j) {
    const double emp = dirs.u.row(j).squaredNorm() / 50000.0;
    CHECK(std::abs(emp - var[j]) / var[j] < 0.05);
  }
}

TEST_CASE("sample_directions rejects non-positive variances") {
  Rng rng(1);
  CHECK_THROWS_AS(sample_directions(DiagonalGaussian{Vector{{1.0, 0.0}}}, 2, rng), Error);
  CHECK_THROWS_AS(sample_directions(DiagonalGaussian::identity(2), 0, rng), Error);
}

TEST_CASE("mix_covariance: extreme probabilities") {
  const DiagonalGaussian s{Vector{{2.0, 0.5}}};
  Rng rng(3);
  for (int k = 0; k < 200; ++k) {
    const auto never = mix_covariance(s, 0.0, rng);
    CHECK_FALSE(never.used_predicted);
    CHECK(never.cov.var == Vector::Ones(2));
    const auto always = mix_covariance(s, 1.0, rng);
    CHECK(always.used_predicted);
    CHECK(always.cov.var == s.var);
  }
  CHECK_THROWS_AS(mix_covariance(s, 1.5, rng), Error);
}

TEST_CASE("normalize_covariance: worked examples") {
  const auto n = normalize_covariance(DiagonalGaussian{Vector{{3.0, 1.0}}});
  CHECK(n.var == Vector{{1.5, 0.5}});
  CHECK(normalize_covariance(DiagonalGaussian::identity(7)).var == Vector::Ones(7));
  const auto c = normalize_covariance(DiagonalGaussian{Vector::Constant(5, 0.37)});
  CHECK(c.var.isApprox(Vector::Ones(5), 1e-15));
  CHECK(c.trace() == 5.0);
  CHECK_THROWS_AS(normalize_covariance(DiagonalGaussian{Vector{{1.0, std::nan("")}}}), NumericError);
}

TEST_CASE("cosine_similarity") {
  CHECK(cosine_similarity(Vector{{1.0, 2.0}}, Vector{{2.0, 4.0}}) == doctest::Approx(1.0));
  CHECK(cosine_similarity(Vector{{1.0, 0.0}}, Vector{{0.0, 3.0}}) == 0.0);
  CHECK(cosine_similarity(Vector{{1.0, 0.0}}, Vector{{-1.0, 0.0}}) == doctest::Approx(-1.0));
  CHECK(cosine_similarity(Vector::Zero(2), Vector{{1.0, 0.0}}) == 0.0);
}

TEST_CASE("estimates share one minibatch per call") {
  auto task = generate_binary_task(5, 100, 3, 10);
  Rng rng(2);
  const Vector theta = rng.normal_vector(5);
  const auto dirs = sample_directions(DiagonalGaussian::identity(5), 4, rng);
  const auto est = estimate_gradient_random(*task, theta, 0.01, dirs, 77);
  CHECK(est.base_value == task->value(theta, 77));
  for (Index i = 0; i < 4; ++i)
    CHECK(est.differences[i] == task->value(theta + 0.01 * dirs.u.col(i), 77) - est.base_value);
}

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "zol2l/baselines.hpp"
#include "zol2l/learned_optimizer.hpp"
#include "zol2l/lstm_io.hpp"
#include "zol2l/tasks.hpp"

using namespace zol2l;

namespace {

LstmParams<double> with_head(Index input_dim, std::uint64_t seed, double scale) {
  LstmParams<double> p = init_params(input_dim, seed);
  Rng rng(seed + 1000);
  p.head_w = rng.normal_vector(kLstmHidden).transpose() * scale;
  p.head_b = rng.normal() * scale;
  return p;
}

ZoLstmConfig config(Variant v, int q, double p) {
  ZoLstmConfig c;
  c.variant = v;
  c.q = q;
  c.p = p;
  return c;
}

}  // namespace

TEST_CASE("zero heads leave theta unchanged and predict unit variances") {
  ZoLstmOptimizer opt(init_params(1, 1), init_params(2, 2), config(Variant::kFull, 5, 1.0));
  auto f = quadratic_task(6, 3);
  opt.reset(6);
  TrajectoryRng rng(4);
  Vector theta = Vector::LinSpaced(6, -1, 1);
  for (int t = 0; t < 10; ++t) {
    IterationLog log;
    const Vector next = opt.step(*f, theta, rng, &log);
    CHECK(next == theta);
    CHECK(log.var == Vector::Ones(6));
    CHECK(log.dtheta.isZero(0.0));
  }
}

TEST_CASE("coordinate permutation commutes with the update") {
  const auto upd = with_head(1, 3, 0.4);
  const auto qry = with_head(2, 4, 0.3);
  ZoLstmOptimizer a(upd, qry, ZoLstmConfig{});
  ZoLstmOptimizer b(upd, qry, ZoLstmConfig{});
  const Index d = 7;
  a.reset(d);
  b.reset(d);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(d);
  perm.setIdentity();
  Rng shuffle(5);
  for (Index i = d - 1; i > 0; --i) std::swap(perm.indices()[i], perm.indices()[static_cast<Index>(shuffle.next_u64() % static_cast<std::uint64_t>(i + 1))]);
  Rng rng(6);
  for (int t = 0; t < 5; ++t) {
    const Vector g = rng.normal_vector(d);
    const Vector dt = rng.normal_vector(d);
    CHECK((perm * a.update_rnn_apply(g)).isApprox(b.update_rnn_apply(perm * g), 1e-14));
    CHECK((perm * a.query_rnn_apply(g, dt).var).isApprox(b.query_rnn_apply(perm * g, perm * dt).var, 1e-14));
  }
}

TEST_CASE("alpha scales the update") {
  const auto upd = with_head(1, 9, 0.5);
  ZoLstmConfig one, two;
  two.alpha = 2.0;
  ZoLstmOptimizer a(upd, std::nullopt, one), b(upd, std::nullopt, two);
  a.reset(4);
  b.reset(4);
  Rng rng(1);
  for (int t = 0; t < 3; ++t) {
    const Vector g = rng.normal_vector(4);
    CHECK(b.update_rnn_apply(g).isApprox(2.0 * a.update_rnn_apply(g), 1e-15));
  }
}

TEST_CASE("shared parameters serve any dimension") {
  const auto upd = with_head(1, 2, 0.3);
  const auto qry = with_head(2, 5, 0.3);
  for (Index d : {Index{10}, Index{100}, Index{784}}) {
    ZoLstmOptimizer opt(upd, qry, config(Variant::kFull, 4, 0.5));
    opt.reset(d);
    FunctionOptimizee f(d, [](const Vector& t) { return 0.5 * t.squaredNorm(); });
    TrajectoryRng rng(3);
    Vector theta = Vector::Ones(d);
    for (int t = 0; t < 3; ++t) theta = opt.step(f, theta, rng);
    CHECK(theta.size() == d);
    CHECK(theta.allFinite());
    CHECK(opt.update_params().flatten().size() == upd.flatten().size());
  }
}

TEST_CASE("no_query matches the full variant at p = 0 bit for bit") {
  const auto upd = with_head(1, 7, 0.2);
  const auto qry = with_head(2, 8, 0.5);
  ZoLstmOptimizer full(upd, qry, config(Variant::kFull, 6, 0.0));
  ZoLstmOptimizer noq(upd, std::nullopt, config(Variant::kNoQuery, 6, 0.5));
  auto f = generate_binary_task(9, 100, 2, 16);
  full.reset(9);
  noq.reset(9);
  TrajectoryRng ra(11), rb(11);
  Vector a = f->initial_point(1), b = a;
  for (int t = 0; t < 50; ++t) {
    a = full.step(*f, a, ra);
    b = noq.step(*f, b, rb);
    REQUIRE(a == b);
  }
}

TEST_CASE("no_update at p = 0 is ZO-SGD") {
  ZoLstmConfig c = config(Variant::kNoUpdate, 5, 0.0);
  c.eta = 0.2;
  ZoLstmOptimizer opt(LstmParams<double>::zeros(1), with_head(2, 3, 0.5), c);
  auto f = generate_binary_task(6, 80, 4, 8);
  opt.reset(6);
  TrajectoryRng ra(2), rb(2);
  Vector a = Vector::Zero(6), b = a;
  for (int t = 0; t < 40; ++t) {
    a = opt.step(*f, a, ra);
    const std::uint64_t batch = rb.sampling.next_u64();
    const auto dirs = sample_directions(DiagonalGaussian::identity(6), 5, rb.sampling);
    b = zo_sgd_step(b, estimate_gradient_random(*f, b, c.mu, dirs, batch).g, 0.2);
    REQUIRE(a == b);
  }
}

TEST_CASE("each iteration costs q + 1 queries") {
  for (Variant v : {Variant::kFull, Variant::kNoQuery, Variant::kNoUpdate, Variant::kGuidedEs}) {
    ZoLstmConfig c = config(v, 7, 0.5);
    c.eta = 0.01;
    ZoLstmOptimizer opt(with_head(1, 1, 0.1), with_head(2, 2, 0.1), c);
    auto f = generate_binary_task(5, 60, 3, 10);
    opt.reset(5);
    TrajectoryRng rng(8);
    Vector theta = Vector::Zero(5);
    for (int t = 0; t < 200; ++t) {
      IterationLog log;
      theta = opt.step(*f, theta, rng, &log);
      CHECK(log.queries == 8);
    }
    CHECK(f->ledger() == 200u * 8u);
  }
}

TEST_CASE("reset clears recurrent state") {
  ZoLstmOptimizer opt(with_head(1, 4, 0.5), with_head(2, 5, 0.5), ZoLstmConfig{});
  opt.reset(3);
  const Vector g{{0.3, -0.1, 2.0}};
  const Vector first = opt.update_rnn_apply(g);
  const Vector second = opt.update_rnn_apply(g);
  CHECK(first != second);
  opt.reset(3);
  CHECK(opt.update_state().h.isZero(0.0));
  CHECK(opt.prev_g().isZero(0.0));
  CHECK(opt.update_rnn_apply(g) == first);
  CHECK_THROWS_AS(opt.update_rnn_apply(Vector::Zero(4)), Error);
}

TEST_CASE("optimizer files") {
  OptimizerModel m;
  m.update = with_head(1, 1, 0.3);
  m.query = with_head(2, 2, 0.3);
  m.p = 0.25;
  m.q = 11;
  const auto path = (std::filesystem::temp_directory_path() / "zol2l_test_opt.json").string();
  save_optimizer(m, path);
  const OptimizerModel back = load_optimizer(path);
  CHECK(back.update == m.update);
  CHECK(*back.query == *m.query);
  CHECK(back.p == 0.25);
  CHECK(back.q == 11);

  nlohmann::json doc = optimizer_to_json(m);
  doc["update"] = lstm_to_json(with_head(2, 1, 0.1));
  CHECK_THROWS_AS(optimizer_from_json(doc), Error);
  doc = optimizer_to_json(m);
  doc["schema"] = "nope";
  CHECK_THROWS_AS(optimizer_from_json(doc), Error);
  {
    std::ofstream out(path);
    out << "{ not json";
  }
  try {
    load_optimizer(path);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kMalformedDocument);
  }
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_optimizer(path), Error);
}

#include <doctest.h>

#include <cmath>
#include <vector>

#include "zol2l/lstm.hpp"
#include "zol2l/lstm_io.hpp"

using namespace zol2l;

namespace {

// Plain scalar loops over one coordinate; shares nothing with the Eigen path.
struct RefCell {
  std::vector<double> h, c;
};

double ref_sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

double ref_step(const LstmParams<double>& p, const std::vector<double>& x, RefCell& cell) {
  const int H = static_cast<int>(kLstmHidden);
  std::vector<double> act[4];
  for (int k = 0; k < 4; ++k) {
    act[k].resize(H);
    const auto& gp = p.gates[static_cast<std::size_t>(k)];
    for (int r = 0; r < H; ++r) {
      double z = gp.bias(r);
      for (std::size_t a = 0; a < x.size(); ++a) z += gp.w_in(r, static_cast<Index>(a)) * x[a];
      for (int s = 0; s < H; ++s) z += gp.w_hid(r, s) * cell.h[static_cast<std::size_t>(s)];
      act[k][static_cast<std::size_t>(r)] = k == 2 ? std::tanh(z) : ref_sigmoid(z);
    }
  }
  double out = p.head_b;
  for (int r = 0; r < H; ++r) {
    const auto u = static_cast<std::size_t>(r);
    cell.c[u] = act[1][u] * cell.c[u] + act[0][u] * act[2][u];
    cell.h[u] = act[3][u] * std::tanh(cell.c[u]);
    out += p.head_w(r) * cell.h[u];
  }
  return out;
}

LstmParams<double> random_params(Index input_dim, std::uint64_t seed) {
  LstmParams<double> p = init_params(input_dim, seed);
  Rng rng(seed + 100);
  p.head_w = rng.normal_vector(kLstmHidden).transpose() * 0.5;
  p.head_b = rng.normal();
  return p;
}

}  // namespace

TEST_CASE("init_params: shapes, forget bias, zero head, determinism") {
  const auto p1 = init_params(1, 7);
  const auto p2 = init_params(2, 7);
  CHECK(p1.gate(Gate::kInput).w_in.cols() == 1);
  CHECK(p2.gate(Gate::kInput).w_in.cols() == 2);
  CHECK(p2.gate(Gate::kCell).w_hid.rows() == kLstmHidden);
  CHECK(p1.gate(Gate::kForget).bias.isConstant(1.0));
  CHECK(p1.head_w.isZero(0.0));
  CHECK(p1.head_b == 0.0);
  CHECK(init_params(1, 7) == p1);
  CHECK((p1.gate(Gate::kOutput).w_hid.array().abs() <= 0.1).all());
  CHECK_THROWS_AS(init_params(3, 7), Error);
}

TEST_CASE("lstm_step: zero parameters give zero output and state") {
  const auto p = LstmParams<double>::zeros(1);
  auto r = lstm_step(p, Matrix(Matrix::Zero(1, 4)), LstmState<double>::zeros(4));
  CHECK(r.output.isZero(0.0));
  CHECK(r.state.h.isZero(0.0));
  CHECK(r.state.c.isZero(0.0));
}

TEST_CASE("lstm_step: a zero head outputs exactly zero for any input and state") {
  const auto p = init_params(2, 3);
  Rng rng(5);
  LstmState<double> s{rng.normal_matrix(kLstmHidden, 6), rng.normal_matrix(kLstmHidden, 6)};
  auto r = lstm_step(p, Matrix(rng.normal_matrix(2, 6) * 10.0), s);
  CHECK(r.output.isZero(0.0));
}

TEST_CASE("lstm_forward agrees with an independent scalar evaluator") {
  for (Index input_dim : {Index{1}, Index{2}}) {
    const auto p = random_params(input_dim, 11 + static_cast<std::uint64_t>(input_dim));
    const Index d = 5;
    Rng rng(17);
    LstmState<double> state = LstmState<double>::zeros(d);
    std::vector<RefCell> cells(static_cast<std::size_t>(d),
                               RefCell{std::vector<double>(kLstmHidden, 0.0), std::vector<double>(kLstmHidden, 0.0)});
    for (int t = 0; t < 6; ++t) {
      const Matrix x = rng.normal_matrix(input_dim, d);
      const auto out = lstm_forward(p, x, state);
      for (Index j = 0; j < d; ++j) {
        std::vector<double> xj(static_cast<std::size_t>(input_dim));
        for (Index a = 0; a < input_dim; ++a) xj[static_cast<std::size_t>(a)] = x(a, j);
        const double ref = ref_step(p, xj, cells[static_cast<std::size_t>(j)]);
        CHECK(out(j) == doctest::Approx(ref).epsilon(1e-13));
      }
    }
  }
}

TEST_CASE("coordinates do not interact") {
  const auto p = random_params(1, 2);
  Rng rng(9);
  LstmState<double> s{rng.normal_matrix(kLstmHidden, 4), rng.normal_matrix(kLstmHidden, 4)};
  const Matrix x = rng.normal_matrix(1, 4);
  const auto base = lstm_step(p, x, s);
  LstmState<double> s2 = s;
  s2.h.col(2).setConstant(3.0);
  s2.c.col(2).setConstant(-2.0);
  Matrix x2 = x;
  x2(0, 2) = 42.0;
  const auto changed = lstm_step(p, x2, s2);
  for (Index j : {Index{0}, Index{1}, Index{3}}) CHECK(changed.output(j) == base.output(j));
  CHECK(changed.output(2) != base.output(2));
}

TEST_CASE("lstm_step rejects bad shapes and non-finite inputs") {
  const auto p = init_params(1, 1);
  try {
    lstm_step(p, Matrix(Matrix::Zero(2, 3)), LstmState<double>::zeros(3));
    FAIL("expected a shape error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kShapeMismatch);
  }
  Matrix bad = Matrix::Zero(1, 3);
  bad(0, 1) = std::nan("");
  CHECK_THROWS_AS(lstm_step(p, bad, LstmState<double>::zeros(3)), NumericError);
}

TEST_CASE("lstm_backward: zero output gradients give zero gradients") {
  const auto p = random_params(2, 4);
  Rng rng(3);
  LstmState<double> s = LstmState<double>::zeros(3);
  LstmTape<double> tape;
  std::vector<Eigen::Matrix<double, 1, Eigen::Dynamic>> dout;
  for (int t = 0; t < 4; ++t) {
    lstm_forward(p, Matrix(rng.normal_matrix(2, 3)), s, &tape);
    dout.push_back(Eigen::Matrix<double, 1, Eigen::Dynamic>::Zero(3));
  }
  const auto r = lstm_backward<double>(p, tape, dout, LstmState<double>::zeros(3));
  CHECK(r.grads.flatten().isZero(0.0));
  for (const auto& g : r.input_grads) CHECK(g.isZero(0.0));
}

TEST_CASE("lstm_backward: head bias gradient of a single output is one per coordinate") {
  const auto p = random_params(1, 6);
  LstmState<double> s = LstmState<double>::zeros(1);
  LstmTape<double> tape;
  lstm_forward(p, Matrix(Matrix::Constant(1, 1, 0.3)), s, &tape);
  std::vector<Eigen::Matrix<double, 1, Eigen::Dynamic>> dout{Eigen::Matrix<double, 1, Eigen::Dynamic>::Ones(1)};
  const auto r = lstm_backward<double>(p, tape, dout, LstmState<double>::zeros(1));
  CHECK(r.grads.head_b == 1.0);
}

TEST_CASE("gradient_check: 1-step and 20-step unrolls") {
  for (Index input_dim : {Index{1}, Index{2}}) {
    const auto p = random_params(input_dim, 21);
    CHECK(gradient_check(p, 1, 5) < 1e-5);
    CHECK(gradient_check(p, 20, 6) < 1e-4);
  }
  CHECK(std::isfinite(gradient_check(LstmParams<double>::zeros(1), 3, 1)));
}

TEST_CASE("input and initial-state gradients match finite differences") {
  const auto p = random_params(2, 8);
  const Index d = 2;
  Rng rng(12);
  std::vector<Matrix> xs;
  for (int t = 0; t < 3; ++t) xs.push_back(rng.normal_matrix(2, d));
  const LstmState<double> s0{rng.normal_matrix(kLstmHidden, d) * 0.3, rng.normal_matrix(kLstmHidden, d) * 0.3};
  std::vector<Eigen::Matrix<double, 1, Eigen::Dynamic>> w;
  for (int t = 0; t < 3; ++t) w.push_back(rng.normal_vector(d).transpose());

  auto objective = [&](const std::vector<Matrix>& in, const LstmState<double>& init) {
    LstmState<double> s = init;
    double total = 0.0;
    for (std::size_t t = 0; t < in.size(); ++t) total += w[t].dot(lstm_forward(p, in[t], s));
    return total;
  };
  LstmState<double> s = s0;
  LstmTape<double> tape;
  for (const auto& x : xs) lstm_forward(p, x, s, &tape);
  const auto r = lstm_backward<double>(p, tape, w, LstmState<double>::zeros(d));

  const double eps = 1e-6;
  for (std::size_t t = 0; t < xs.size(); ++t)
    for (Index k = 0; k < xs[t].size(); ++k) {
      auto plus = xs, minus = xs;
      plus[t].data()[k] += eps;
      minus[t].data()[k] -= eps;
      const double fd = (objective(plus, s0) - objective(minus, s0)) / (2 * eps);
      CHECK(r.input_grads[t].data()[k] == doctest::Approx(fd).epsilon(1e-6));
    }
  for (Index k = 0; k < s0.h.size(); ++k) {
    auto plus = s0, minus = s0;
    plus.c.data()[k] += eps;
    minus.c.data()[k] -= eps;
    const double fd = (objective(xs, plus) - objective(xs, minus)) / (2 * eps);
    CHECK(r.initial_state_grads.c.data()[k] == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("the cell is usable in single precision") {
  const auto pd = random_params(1, 30);
  LstmParams<float> pf = LstmParams<float>::unflatten(1, pd.flatten().cast<float>());
  Rng rng(2);
  const Matrix x = rng.normal_matrix(1, 4);
  LstmState<double> sd = LstmState<double>::zeros(4);
  LstmState<float> sf = LstmState<float>::zeros(4);
  const auto od = lstm_forward(pd, x, sd);
  const Eigen::MatrixXf xf = x.cast<float>();
  const auto of = lstm_forward(pf, xf, sf);
  for (Index j = 0; j < 4; ++j) CHECK(of(j) == doctest::Approx(od(j)).epsilon(1e-5));
}

TEST_CASE("model documents") {
  const auto p = random_params(2, 40);
  CHECK(deserialize_params(serialize_params(p)) == p);

  nlohmann::json doc = lstm_to_json(p);
  SUBCASE("hidden size 11 is a shape error") {
    doc["hidden_dim"] = 11;
    try {
      lstm_from_json(doc);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kShapeMismatch);
    }
  }
  SUBCASE("a NaN entry is a non-finite error") {
    doc["tensors"]["b_f"]["data"][3] = "NaN";
    CHECK_THROWS_AS(lstm_from_json(doc), NumericError);
  }
  SUBCASE("a truncated tensor is a shape error") {
    doc["tensors"]["w_hi"]["data"].erase(0);
    try {
      lstm_from_json(doc);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kShapeMismatch);
    }
  }
  SUBCASE("wrong schema is malformed") {
    doc["schema"] = "something-else";
    try {
      lstm_from_json(doc);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kMalformedDocument);
    }
  }
}

#ifndef ZOL2L_LSTM_HPP
#define ZOL2L_LSTM_HPP

// Coordinatewise LSTM cell: one layer, 10 hidden units, scalar linear head.
//
// Every optimizee coordinate is a column. A forward step maps an input
// matrix (input_dim x d) and a state (hidden x d, twice) to one scalar output
// per coordinate. Columns never interact, so the same parameters serve
// optimizees of any dimension.
//
//   i = sigmoid(W_ii x + W_hi h + b_i)      f = sigmoid(W_if x + W_hf h + b_f)
//   g = tanh(W_ig x + W_hg h + b_g)         o = sigmoid(W_io x + W_ho h + b_o)
//   c' = f * c + i * g                      h' = o * tanh(c')
//   out = w_head . h' + b_head

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "zol2l/common.hpp"
#include "zol2l/rng.hpp"

namespace zol2l {

inline constexpr Index kLstmHidden = 10;
inline constexpr Index kLstmOutput = 1;

enum class Gate : int { kInput = 0, kForget = 1, kCell = 2, kOutput = 3 };

template <typename Scalar>
struct LstmGateParams {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  Mat w_in;   // hidden x input_dim
  Mat w_hid;  // hidden x hidden
  Vec bias;   // hidden
};

/// Weights of the cell plus its linear head. Also used as the carrier of
/// parameter gradients (same shapes).
template <typename Scalar>
struct LstmParams {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

  Index input_dim = 1;
  std::array<LstmGateParams<Scalar>, 4> gates;
  RowVec head_w;  // 1 x hidden
  Scalar head_b = 0;

  static LstmParams zeros(Index input_dim) {
    LstmParams p;
    p.input_dim = input_dim;
    for (auto& g : p.gates) {
      g.w_in = Mat::Zero(kLstmHidden, input_dim);
      g.w_hid = Mat::Zero(kLstmHidden, kLstmHidden);
      g.bias = Vec::Zero(kLstmHidden);
    }
    p.head_w = RowVec::Zero(kLstmHidden);
    p.head_b = 0;
    return p;
  }

  const LstmGateParams<Scalar>& gate(Gate g) const { return gates[static_cast<int>(g)]; }
  LstmGateParams<Scalar>& gate(Gate g) { return gates[static_cast<int>(g)]; }

  static Index size_for(Index input_dim) {
    return 4 * (kLstmHidden * input_dim + kLstmHidden * kLstmHidden + kLstmHidden) +
           kLstmHidden + 1;
  }
  Index size() const { return size_for(input_dim); }

  /// Visits every scalar in the canonical flat order: gates i, f, g, o (each
  /// w_in and w_hid column-major, then bias), head weights, head bias.
  template <typename Fn>
  void for_each(Fn&& fn) {
    for (auto& g : gates) {
      for (Index k = 0; k < g.w_in.size(); ++k) fn(g.w_in.data()[k]);
      for (Index k = 0; k < g.w_hid.size(); ++k) fn(g.w_hid.data()[k]);
      for (Index k = 0; k < g.bias.size(); ++k) fn(g.bias.data()[k]);
    }
    for (Index k = 0; k < head_w.size(); ++k) fn(head_w.data()[k]);
    fn(head_b);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    const_cast<LstmParams*>(this)->for_each([&](Scalar& s) { fn(static_cast<const Scalar&>(s)); });
  }

  Vec flatten() const {
    Vec out(size());
    Index k = 0;
    for_each([&](const Scalar& s) { out[k++] = s; });
    return out;
  }

  static LstmParams unflatten(Index input_dim, const Vec& flat) {
    require(flat.size() == size_for(input_dim), ErrorKind::kShapeMismatch,
            "LstmParams::unflatten: wrong vector length");
    LstmParams p = zeros(input_dim);
    Index k = 0;
    p.for_each([&](Scalar& s) { s = flat[k++]; });
    return p;
  }

  bool all_finite() const {
    bool ok = true;
    for_each([&](const Scalar& s) { ok = ok && std::isfinite(static_cast<double>(s)); });
    return ok;
  }

  bool operator==(const LstmParams& o) const {
    return input_dim == o.input_dim && flatten() == o.flatten();
  }
};

/// Per-coordinate hidden and cell state; column j belongs to coordinate j.
template <typename Scalar>
struct LstmState {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Mat h;
  Mat c;

  static LstmState zeros(Index coords) {
    return {Mat::Zero(kLstmHidden, coords), Mat::Zero(kLstmHidden, coords)};
  }
  Index coords() const { return h.cols(); }
};

/// Everything the backward pass needs from one forward step.
template <typename Scalar>
struct LstmStep {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Mat x, h_prev, c_prev;
  Mat i, f, g, o;
  Mat c, tanh_c, h;
};

template <typename Scalar>
using LstmTape = std::vector<LstmStep<Scalar>>;

template <typename Scalar>
struct LstmStepResult {
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> output;
  LstmState<Scalar> state;
  LstmStep<Scalar> step;
};

namespace detail {

template <typename Derived>
auto sigmoid(const Eigen::MatrixBase<Derived>& x) {
  using S = typename Derived::Scalar;
  return x.unaryExpr([](S v) { return S(1) / (S(1) + std::exp(-v)); });
}

template <typename Derived>
auto tanh_of(const Eigen::MatrixBase<Derived>& x) {
  using S = typename Derived::Scalar;
  return x.unaryExpr([](S v) { return std::tanh(v); });
}

}  // namespace detail

/// Draws gate weights and biases from U[-0.1, 0.1], then sets the forget
/// bias to 1 and zeroes the head, so an untrained cell outputs exactly 0.
template <typename Scalar = double>
LstmParams<Scalar> init_params(Index input_dim, std::uint64_t seed) {
  require(input_dim == 1 || input_dim == 2, ErrorKind::kInvalidArgument,
          "init_params: input_dim must be 1 or 2");
  LstmParams<Scalar> p = LstmParams<Scalar>::zeros(input_dim);
  Rng rng(seed);
  for (auto& g : p.gates) {
    for (Index k = 0; k < g.w_in.size(); ++k) g.w_in.data()[k] = Scalar(rng.uniform(-0.1, 0.1));
    for (Index k = 0; k < g.w_hid.size(); ++k) g.w_hid.data()[k] = Scalar(rng.uniform(-0.1, 0.1));
    for (Index k = 0; k < g.bias.size(); ++k) g.bias.data()[k] = Scalar(rng.uniform(-0.1, 0.1));
  }
  p.gate(Gate::kForget).bias.setConstant(Scalar(1));
  return p;
}

/// One recurrent step over all coordinates. `x` is input_dim x d.
template <typename Scalar>
LstmStepResult<Scalar> lstm_step(const LstmParams<Scalar>& p,
                                 const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& x,
                                 const LstmState<Scalar>& state) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  require(x.rows() == p.input_dim, ErrorKind::kShapeMismatch, "lstm_step: input rows != input_dim");
  require(state.h.rows() == kLstmHidden && state.c.rows() == kLstmHidden &&
              state.h.cols() == x.cols() && state.c.cols() == x.cols(),
          ErrorKind::kShapeMismatch, "lstm_step: state shape mismatch");
  if (!x.allFinite()) throw NumericError("lstm_step: non-finite input");
  if (!state.h.allFinite() || !state.c.allFinite())
    throw NumericError("lstm_step: non-finite state");

  auto pre = [&](Gate g) -> Mat {
    const auto& gp = p.gate(g);
    Mat z = gp.w_in * x + gp.w_hid * state.h;
    z.colwise() += gp.bias;
    return z;
  };

  LstmStepResult<Scalar> r;
  LstmStep<Scalar>& s = r.step;
  s.x = x;
  s.h_prev = state.h;
  s.c_prev = state.c;
  s.i = detail::sigmoid(pre(Gate::kInput));
  s.f = detail::sigmoid(pre(Gate::kForget));
  s.g = detail::tanh_of(pre(Gate::kCell));
  s.o = detail::sigmoid(pre(Gate::kOutput));
  s.c = s.f.cwiseProduct(state.c) + s.i.cwiseProduct(s.g);
  s.tanh_c = detail::tanh_of(s.c);
  s.h = s.o.cwiseProduct(s.tanh_c);
  r.output = p.head_w * s.h;
  r.output.array() += p.head_b;
  r.state = {s.h, s.c};
  return r;
}

/// Forward step that advances `state` in place and appends to `tape` when
/// one is given.
template <typename Scalar>
Eigen::Matrix<Scalar, 1, Eigen::Dynamic> lstm_forward(
    const LstmParams<Scalar>& p, const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& x,
    LstmState<Scalar>& state, LstmTape<Scalar>* tape = nullptr) {
  LstmStepResult<Scalar> r = lstm_step(p, x, state);
  state = std::move(r.state);
  if (tape) tape->push_back(std::move(r.step));
  return std::move(r.output);
}

/// Reverse-mode through one step. `d_output` is 1 x d, `d_state` holds the
/// gradients flowing into (h', c'). Parameter gradients are accumulated into
/// `grads`; the input gradient is written to `d_input` when non-null.
/// Returns the gradients w.r.t. the previous state (h, c).
template <typename Scalar>
LstmState<Scalar> lstm_step_backward(const LstmParams<Scalar>& p, const LstmStep<Scalar>& s,
                                     const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>& d_output,
                                     const LstmState<Scalar>& d_state, LstmParams<Scalar>& grads,
                                     Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>* d_input) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Index d = s.h.cols();
  require(d_output.cols() == d && d_state.h.cols() == d && d_state.c.cols() == d,
          ErrorKind::kShapeMismatch, "lstm_step_backward: gradient shape mismatch");

  grads.head_w.noalias() += d_output * s.h.transpose();
  grads.head_b += d_output.sum();

  const Mat dh = d_state.h + p.head_w.transpose() * d_output;
  const Mat one = Mat::Ones(kLstmHidden, d);
  const Mat dc = d_state.c + dh.cwiseProduct(s.o).cwiseProduct(one - s.tanh_c.cwiseAbs2());

  std::array<Mat, 4> dpre;
  dpre[0] = dc.cwiseProduct(s.g).cwiseProduct(s.i.cwiseProduct(one - s.i));
  dpre[1] = dc.cwiseProduct(s.c_prev).cwiseProduct(s.f.cwiseProduct(one - s.f));
  dpre[2] = dc.cwiseProduct(s.i).cwiseProduct(one - s.g.cwiseAbs2());
  dpre[3] = dh.cwiseProduct(s.tanh_c).cwiseProduct(s.o.cwiseProduct(one - s.o));

  LstmState<Scalar> d_prev{Mat::Zero(kLstmHidden, d), dc.cwiseProduct(s.f)};
  if (d_input) d_input->setZero(p.input_dim, d);
  for (int k = 0; k < 4; ++k) {
    auto& gg = grads.gates[k];
    const auto& gp = p.gates[k];
    gg.w_in.noalias() += dpre[k] * s.x.transpose();
    gg.w_hid.noalias() += dpre[k] * s.h_prev.transpose();
    gg.bias += dpre[k].rowwise().sum();
    d_prev.h.noalias() += gp.w_hid.transpose() * dpre[k];
    if (d_input) d_input->noalias() += gp.w_in.transpose() * dpre[k];
  }
  return d_prev;
}

template <typename Scalar>
struct LstmBackwardResult {
  LstmParams<Scalar> grads;
  std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> input_grads;
  LstmState<Scalar> initial_state_grads;
};

/// Exact gradients of sum_t output_grads[t] . output_t (plus the final-state
/// terms) w.r.t. parameters, every input, and the initial state.
template <typename Scalar>
LstmBackwardResult<Scalar> lstm_backward(
    const LstmParams<Scalar>& p, const LstmTape<Scalar>& tape,
    std::span<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> output_grads,
    const LstmState<Scalar>& final_state_grads) {
  require(output_grads.size() == tape.size(), ErrorKind::kShapeMismatch,
          "lstm_backward: output_grads length != tape length");
  LstmBackwardResult<Scalar> r;
  r.grads = LstmParams<Scalar>::zeros(p.input_dim);
  r.input_grads.resize(tape.size());
  LstmState<Scalar> d_state = final_state_grads;
  for (std::size_t t = tape.size(); t-- > 0;) {
    d_state = lstm_step_backward(p, tape[t], output_grads[t], d_state, r.grads, &r.input_grads[t]);
  }
  r.initial_state_grads = std::move(d_state);
  if (!r.grads.all_finite()) throw NumericError("lstm_backward: non-finite gradient");
  return r;
}

/// Runs a seeded `steps`-long forward/backward over a few coordinates with
/// random inputs, output weights and final-state weights, perturbs every
/// parameter, and returns the largest
/// |analytic - central difference| / max(1, |analytic|).
template <typename Scalar = double>
Scalar gradient_check(const LstmParams<Scalar>& params, int steps, std::uint64_t seed,
                      Scalar eps = Scalar(1e-6)) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  require(steps >= 1, ErrorKind::kInvalidArgument, "gradient_check: steps must be >= 1");
  constexpr Index kCoords = 3;
  Rng rng(seed);
  std::vector<Mat> inputs;
  std::vector<RowVec> weights;
  for (int t = 0; t < steps; ++t) {
    inputs.push_back(rng.normal_matrix(params.input_dim, kCoords).template cast<Scalar>());
    weights.push_back(rng.normal_matrix(1, kCoords).template cast<Scalar>());
  }
  LstmState<Scalar> init{rng.normal_matrix(kLstmHidden, kCoords).template cast<Scalar>() * Scalar(0.5),
                         rng.normal_matrix(kLstmHidden, kCoords).template cast<Scalar>() * Scalar(0.5)};
  LstmState<Scalar> final_w{rng.normal_matrix(kLstmHidden, kCoords).template cast<Scalar>(),
                            rng.normal_matrix(kLstmHidden, kCoords).template cast<Scalar>()};

  auto objective = [&](const LstmParams<Scalar>& p, LstmTape<Scalar>* tape) {
    LstmState<Scalar> st = init;
    Scalar total = 0;
    for (int t = 0; t < steps; ++t) total += weights[t].dot(lstm_forward(p, inputs[t], st, tape));
    total += final_w.h.cwiseProduct(st.h).sum() + final_w.c.cwiseProduct(st.c).sum();
    return total;
  };

  LstmTape<Scalar> tape;
  objective(params, &tape);
  const auto back = lstm_backward(params, tape, std::span<const RowVec>(weights), final_w);
  const auto analytic = back.grads.flatten();
  const auto base = params.flatten();

  Scalar worst = 0;
  for (Index k = 0; k < base.size(); ++k) {
    auto plus = base, minus = base;
    plus[k] += eps;
    minus[k] -= eps;
    const Scalar fp = objective(LstmParams<Scalar>::unflatten(params.input_dim, plus), nullptr);
    const Scalar fm = objective(LstmParams<Scalar>::unflatten(params.input_dim, minus), nullptr);
    const Scalar fd = (fp - fm) / (Scalar(2) * eps);
    using std::abs;
    using std::max;
    const Scalar rel = abs(analytic[k] - fd) / max(Scalar(1), abs(analytic[k]));
    worst = max(worst, rel);
  }
  return worst;
}

// JSON model file ("zo-l2l-lstm/1"); 64-bit only.
std::string serialize_params(const LstmParams<double>& params);
LstmParams<double> deserialize_params(const std::string& text);

}  // namespace zol2l

#endif  // ZOL2L_LSTM_HPP

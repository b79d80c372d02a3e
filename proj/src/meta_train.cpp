#include "zol2l/meta_train.hpp"

#include <cmath>
#include <limits>

#include "zol2l/baselines.hpp"
#include "zol2l/zo_oracle.hpp"

namespace zol2l {

void MetaConfig::validate() const {
  require(horizon >= 1, ErrorKind::kConfig, "meta config: horizon must be >= 1");
  require(unroll >= 1 && horizon % unroll == 0, ErrorKind::kConfig,
          "meta config: unroll length must divide the horizon");
  require(lambda >= 0.0, ErrorKind::kConfig, "meta config: lambda must be >= 0");
  require(meta_lr > 0.0 && clip_norm > 0.0, ErrorKind::kConfig,
          "meta config: learning rate and clip norm must be positive");
  require(iterations >= 0 && train_instances >= 1 && validation_instances >= 1 && validate_every >= 1,
          ErrorKind::kConfig, "meta config: bad iteration counts");
}

double MetaGradient::norm() const {
  double sq = update.flatten().squaredNorm();
  if (query) sq += query->flatten().squaredNorm();
  return std::sqrt(sq);
}

double meta_objective(std::span<const IterationLog> traj, double lambda, int first_step) {
  double total = 0.0;
  int t = first_step;
  for (const IterationLog& it : traj) {
    total += static_cast<double>(t++) * it.loss;
    if (it.var.size() > 0) total += lambda * (it.var.array() - 1.0).square().sum();
  }
  return total;
}

Vector optimizee_gradient(Optimizee& f, const Vector& theta, GradientSource source) {
  if (source == GradientSource::kAnalytic) {
    if (!f.has_gradient())
      throw Error(ErrorKind::kUnavailable, "analytic optimizee gradient requested but unavailable");
    return f.gradient(theta, kFullBatch);
  }
  return estimate_gradient_coordinatewise(f, theta, default_coordinate_steps(theta), kFullBatch).g;
}

SegmentResult bptt_segment(ZoLstmOptimizer& opt, Optimizee& f, const Vector& theta, int steps,
                           int first_step, const MetaConfig& cfg, TrajectoryRng& rng) {
  require(steps >= 1, ErrorKind::kInvalidArgument, "bptt_segment: need at least one step");
  const Index d = theta.size();
  const ZoLstmConfig& oc = opt.config();

  SegmentResult res;
  res.traces.resize(static_cast<std::size_t>(steps));
  res.logs.resize(static_cast<std::size_t>(steps));
  std::vector<Vector> loss_grads(static_cast<std::size_t>(steps));

  Vector th = theta;
  for (int k = 0; k < steps; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    th = opt.step(f, th, rng, &res.logs[ku], &res.traces[ku]);
    if (!std::isfinite(res.logs[ku].loss))
      throw NumericError("bptt_segment: non-finite loss at step " + std::to_string(first_step + k), th);
    loss_grads[ku] = optimizee_gradient(f, th, cfg.gradient_source);
    if (!loss_grads[ku].allFinite())
      throw NumericError("bptt_segment: non-finite optimizee gradient", th);
  }
  res.theta = th;

  // Objective of the segment; the regularizer only covers predicted variances.
  for (int k = 0; k < steps; ++k) {
    const auto ku = static_cast<std::size_t>(k);
    res.loss += static_cast<double>(first_step + k) * res.logs[ku].loss;
    if (res.traces[ku].has_query_step)
      res.loss += cfg.lambda * (res.traces[ku].var.array() - 1.0).square().sum();
  }

  // Reverse pass.
  auto update_grads = LstmParams<double>::zeros(opt.update_params().input_dim);
  std::optional<LstmParams<double>> query_grads;
  if (opt.query_params()) query_grads = LstmParams<double>::zeros(opt.query_params()->input_dim);

  Vector theta_bar = Vector::Zero(d);
  Vector next_g_bar = Vector::Zero(d);
  Vector next_dtheta_bar = Vector::Zero(d);
  LstmState<double> update_state_bar = LstmState<double>::zeros(d);
  LstmState<double> query_state_bar = LstmState<double>::zeros(d);

  for (int k = steps - 1; k >= 0; --k) {
    const auto ku = static_cast<std::size_t>(k);
    const StepTrace& tr = res.traces[ku];
    theta_bar += static_cast<double>(first_step + k) * loss_grads[ku];
    const Vector dtheta_bar = theta_bar + next_dtheta_bar;

    Vector g_bar = next_g_bar;
    if (oc.variant == Variant::kNoUpdate) {
      g_bar -= oc.eta * dtheta_bar;
    } else {
      Matrix x_bar;
      const RowVector out_bar = oc.alpha * dtheta_bar.transpose();
      update_state_bar = lstm_step_backward(opt.update_params(), tr.update_step, out_bar,
                                            update_state_bar, update_grads, &x_bar);
      g_bar += x_bar.row(0).transpose();
    }

    next_g_bar.setZero();
    next_dtheta_bar.setZero();
    if (!tr.has_query_step) continue;

    // g = sqrt(s) * coeff, s = d * mixed / sum(mixed), mixed = x ? var : 1.
    const Vector& s = tr.normalized;
    Vector var_bar = Vector::Zero(d);
    if (tr.mix_x) {
      const Vector s_bar = g_bar.cwiseProduct(tr.coeff).cwiseQuotient(2.0 * s.cwiseSqrt());
      const double trace = tr.var.sum();
      const double dd = static_cast<double>(d);
      const double shared = s_bar.dot(s) / dd;
      var_bar = (dd / trace) * (s_bar.array() - shared).matrix();
    }
    var_bar += (2.0 * cfg.lambda) * (tr.var.array() - 1.0).matrix();
    const RowVector raw_bar = var_bar.cwiseProduct(tr.var).transpose();
    Matrix xq_bar;
    query_state_bar = lstm_step_backward(*opt.query_params(), tr.query_step, raw_bar,
                                         query_state_bar, *query_grads, &xq_bar);
    next_g_bar = xq_bar.row(0).transpose();
    next_dtheta_bar = xq_bar.row(1).transpose();
  }

  if (cfg.phase == Phase::kUpdateRnn) {
    res.grad.update = std::move(update_grads);
    if (query_grads) res.grad.query = LstmParams<double>::zeros(query_grads->input_dim);
  } else {
    res.grad.update = LstmParams<double>::zeros(opt.update_params().input_dim);
    res.grad.query = std::move(query_grads);
  }
  if (!std::isfinite(res.grad.norm()))
    throw NumericError("bptt_segment: non-finite meta-gradient in segment starting at step " +
                       std::to_string(first_step));
  return res;
}

double validation_loss(const ZoLstmOptimizer& prototype, const TaskFamily& tasks,
                       const MetaConfig& cfg, int instances, std::uint64_t seed, Split split) {
  double total = 0.0;
  for (int i = 0; i < instances; ++i) {
    auto f = tasks.make(split, static_cast<std::uint64_t>(i));
    ZoLstmOptimizer opt = prototype;
    opt.reset(f->dimension());
    Vector theta = f->initial_point(derive_seed(seed, static_cast<std::uint64_t>(i)));
    TrajectoryRng rng(derive_seed(seed, 1'000'000 + static_cast<std::uint64_t>(i)));
    try {
      for (int t = 0; t < cfg.horizon; ++t) theta = opt.step(*f, theta, rng);
    } catch (const NumericError&) {
      return std::numeric_limits<double>::infinity();
    }
    const double v = f->full_value(theta);
    if (!std::isfinite(v)) return std::numeric_limits<double>::infinity();
    total += v;
  }
  return total / static_cast<double>(instances);
}

namespace {

constexpr std::uint64_t kValidationSeedTag = 0x7a11d;

TrainingReport run_training(ZoLstmOptimizer opt, const TaskFamily& tasks, const MetaConfig& cfg,
                            std::uint64_t seed) {
  cfg.validate();
  const bool phase_update = cfg.phase == Phase::kUpdateRnn;
  auto trained = [&]() -> LstmParams<double>& {
    return phase_update ? opt.update_params() : *opt.query_params();
  };
  const Index input_dim = trained().input_dim;
  AdamState adam = AdamState::zeros(trained().size(), cfg.meta_lr);
  const std::uint64_t val_seed = derive_seed(seed, kValidationSeedTag);

  auto evaluate = [&]() {
    ZoLstmOptimizer proto = opt;
    if (!phase_update) proto.config().p = cfg.eval_p;
    return validation_loss(proto, tasks, cfg, cfg.validation_instances, val_seed);
  };

  TrainingReport report;
  report.params = trained();
  report.initial_validation = evaluate();
  report.best_validation = report.initial_validation;

  const int segments = cfg.horizon / cfg.unroll;
  for (int it = 0; it < cfg.iterations; ++it) {
    MetaIterationRecord rec;
    rec.iteration = it;
    rec.instance = static_cast<std::uint64_t>(it % cfg.train_instances);
    auto f = tasks.make(Split::kTrain, rec.instance);
    opt.reset(f->dimension());
    Vector theta = f->initial_point(derive_seed(seed, 2'000'000 + static_cast<std::uint64_t>(it)));
    TrajectoryRng rng(derive_seed(seed, 3'000'000 + static_cast<std::uint64_t>(it)));
    try {
      for (int s = 0; s < segments; ++s) {
        SegmentResult seg = bptt_segment(opt, *f, theta, cfg.unroll, s * cfg.unroll + 1, cfg, rng);
        theta = seg.theta;
        rec.objective += seg.loss;
        Vector g = phase_update ? seg.grad.update.flatten() : seg.grad.query->flatten();
        const double n = g.norm();
        if (n > cfg.clip_norm) g *= cfg.clip_norm / n;
        AdamState trial = adam;
        const Vector next = zo_adam_step(trained().flatten(), g, trial);
        if (!next.allFinite()) throw NumericError("meta-update produced non-finite parameters");
        adam = std::move(trial);
        trained() = LstmParams<double>::unflatten(input_dim, next);
      }
      rec.final_loss = f->full_value(theta);
    } catch (const NumericError&) {
      rec.diverged = true;
      rec.final_loss = std::numeric_limits<double>::quiet_NaN();
      ++report.skipped;
    }

    if ((it + 1) % cfg.validate_every == 0 || it + 1 == cfg.iterations) {
      const double v = evaluate();
      rec.validation = v;
      if (v < report.best_validation) {
        report.best_validation = v;
        report.best_iteration = it;
        report.params = trained();
      }
    }
    report.history.push_back(rec);
  }
  return report;
}

}  // namespace

TrainingReport train_update_rnn(const TaskFamily& tasks, const MetaConfig& cfg, std::uint64_t seed) {
  require(cfg.phase == Phase::kUpdateRnn, ErrorKind::kConfig, "train_update_rnn: phase must be update_rnn");
  ZoLstmConfig oc = cfg.optimizer;
  oc.variant = Variant::kNoQuery;
  ZoLstmOptimizer opt(init_params(1, derive_seed(seed, 1)), std::nullopt, oc);
  return run_training(std::move(opt), tasks, cfg, seed);
}

TrainingReport train_query_rnn(const LstmParams<double>& frozen_update, const TaskFamily& tasks,
                               const MetaConfig& cfg, std::uint64_t seed) {
  require(cfg.phase == Phase::kQueryRnn, ErrorKind::kConfig, "train_query_rnn: phase must be query_rnn");
  ZoLstmConfig oc = cfg.optimizer;
  oc.variant = Variant::kFull;
  oc.p = 1.0;
  ZoLstmOptimizer opt(frozen_update, init_params(2, derive_seed(seed, 2)), oc);
  return run_training(std::move(opt), tasks, cfg, seed);
}

nlohmann::json meta_config_to_json(const MetaConfig& c) {
  return {{"horizon", c.horizon},
          {"unroll", c.unroll},
          {"lambda", c.lambda},
          {"meta_lr", c.meta_lr},
          {"clip_norm", c.clip_norm},
          {"iterations", c.iterations},
          {"train_instances", c.train_instances},
          {"validation_instances", c.validation_instances},
          {"validate_every", c.validate_every},
          {"phase", c.phase == Phase::kUpdateRnn ? "update_rnn" : "query_rnn"},
          {"gradient_source", c.gradient_source == GradientSource::kAnalytic ? "analytic" : "coordinatewise_zo"},
          {"q", c.optimizer.q},
          {"mu", c.optimizer.mu},
          {"alpha", c.optimizer.alpha},
          {"eval_p", c.eval_p}};
}

nlohmann::json training_manifest(const MetaConfig& cfg, std::uint64_t seed, const TrainingReport& r) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& h : r.history) {
    nlohmann::json row = {{"iteration", h.iteration},
                          {"instance", h.instance},
                          {"diverged", h.diverged},
                          {"objective", h.objective}};
    row["final_loss"] = h.diverged ? nlohmann::json(nullptr) : nlohmann::json(h.final_loss);
    row["validation"] = h.validation ? nlohmann::json(*h.validation) : nlohmann::json(nullptr);
    history.push_back(std::move(row));
  }
  return {{"config", meta_config_to_json(cfg)},
          {"seed", seed},
          {"initial_validation", r.initial_validation},
          {"best_validation", r.best_validation},
          {"best_iteration", r.best_iteration},
          {"skipped", r.skipped},
          {"history", std::move(history)}};
}

}  // namespace zol2l

#ifndef ZOL2L_META_TRAIN_HPP
#define ZOL2L_META_TRAIN_HPP

// Meta-training of the UpdateRNN and QueryRNN by truncated BPTT.
//
// Objective over a horizon of T steps:
//   L = sum_t t * f(theta_t) + lambda * sum_t sum_j (sigma^2_{t,j} - 1)^2
// Training runs in two phases: the UpdateRNN alone under standard Gaussian
// sampling, then the QueryRNN with the UpdateRNN frozen.
//
// Gradient paths through one iteration:
//  - loss terms reach theta_t through theta_t = theta_{t-1} + dtheta_t; the
//    optimizee gradient is analytic or a coordinatewise central difference;
//  - the estimate is g = sqrt(s) * coeff with s the normalized sampling
//    variances; coeff (the finite-difference terms) is a constant, so the
//    QueryRNN is reached through sqrt(s) and the regularizer;
//  - recurrent states and previous-iterate buffers carry values across
//    segment boundaries but no gradient.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zol2l/learned_optimizer.hpp"
#include "zol2l/lstm.hpp"
#include "zol2l/tasks.hpp"

namespace zol2l {

enum class Phase { kUpdateRnn, kQueryRnn };
enum class GradientSource { kAnalytic, kCoordinatewiseZo };

struct MetaConfig {
  int horizon = 200;  // T
  int unroll = 20;    // K
  double lambda = 0.005;
  double meta_lr = 1e-3;
  double clip_norm = 1.0;
  int iterations = 200;           // trajectories
  int train_instances = 90;
  int validation_instances = 5;
  int validate_every = 10;
  Phase phase = Phase::kUpdateRnn;
  GradientSource gradient_source = GradientSource::kAnalytic;
  /// q, mu, alpha of the optimizer being trained.
  ZoLstmConfig optimizer;
  /// Bernoulli probability used when validating a QueryRNN.
  double eval_p = 0.5;

  void validate() const;
};

struct MetaGradient {
  LstmParams<double> update = LstmParams<double>::zeros(1);
  std::optional<LstmParams<double>> query;
  double norm() const;
};

/// Weighted loss plus the covariance regularizer. `first_step` is the global
/// index t of traj[0] (weights are omega_t = t).
double meta_objective(std::span<const IterationLog> traj, double lambda, int first_step = 1);

/// Gradient of the optimizee used for backpropagation only.
Vector optimizee_gradient(Optimizee& f, const Vector& theta, GradientSource source);

struct SegmentResult {
  Vector theta;
  double loss = 0.0;
  MetaGradient grad;
  std::vector<StepTrace> traces;
  std::vector<IterationLog> logs;
};

/// Runs `steps` iterations of `opt` from theta (its states carry in and out)
/// and backpropagates the segment's objective contribution. `first_step` is
/// the global index of the first iteration.
SegmentResult bptt_segment(ZoLstmOptimizer& opt, Optimizee& f, const Vector& theta, int steps,
                           int first_step, const MetaConfig& cfg, TrajectoryRng& rng);

struct MetaIterationRecord {
  int iteration = 0;
  std::uint64_t instance = 0;
  double final_loss = 0.0;
  double objective = 0.0;
  bool diverged = false;
  std::optional<double> validation;
};

struct TrainingReport {
  LstmParams<double> params = LstmParams<double>::zeros(1);
  double initial_validation = 0.0;
  double best_validation = 0.0;
  int best_iteration = -1;  // -1: the initial parameters were never beaten
  int skipped = 0;
  std::vector<MetaIterationRecord> history;
};

/// Phase 1: sampling pinned to the identity.
TrainingReport train_update_rnn(const TaskFamily& tasks, const MetaConfig& cfg, std::uint64_t seed);

/// Phase 2: UpdateRNN frozen, QueryRNN covariance used directly.
TrainingReport train_query_rnn(const LstmParams<double>& frozen_update, const TaskFamily& tasks,
                               const MetaConfig& cfg, std::uint64_t seed);

/// Mean full-batch loss after `cfg.horizon` steps over the first `instances`
/// validation instances.
double validation_loss(const ZoLstmOptimizer& prototype, const TaskFamily& tasks,
                       const MetaConfig& cfg, int instances, std::uint64_t seed,
                       Split split = Split::kValidation);

nlohmann::json meta_config_to_json(const MetaConfig& cfg);
nlohmann::json training_manifest(const MetaConfig& cfg, std::uint64_t seed,
                                 const TrainingReport& report);

}  // namespace zol2l

#endif  // ZOL2L_META_TRAIN_HPP

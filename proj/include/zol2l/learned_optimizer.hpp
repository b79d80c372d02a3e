#ifndef ZOL2L_LEARNED_OPTIMIZER_HPP
#define ZOL2L_LEARNED_OPTIMIZER_HPP

// The ZO-LSTM optimizer: a coordinatewise UpdateRNN mapping gradient
// estimates to parameter updates and a coordinatewise QueryRNN predicting
// per-coordinate sampling variances, joined by the guided ZO oracle.

#include <cstdint>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "zol2l/lstm.hpp"
#include "zol2l/optimizee.hpp"
#include "zol2l/rng.hpp"
#include "zol2l/zo_oracle.hpp"

namespace zol2l {

enum class Variant {
  kFull,      // UpdateRNN + QueryRNN
  kNoQuery,   // UpdateRNN, standard Gaussian sampling
  kNoUpdate,  // ZO-SGD update, QueryRNN sampling
  kGuidedEs,  // UpdateRNN, Guided ES sampling
};

const char* to_string(Variant v);

struct ZoLstmConfig {
  Variant variant = Variant::kFull;
  int q = 20;
  double mu = kDefaultMu;
  /// Bernoulli probability of sampling from the predicted covariance.
  double p = 0.5;
  /// Scale applied to UpdateRNN outputs.
  double alpha = 1.0;
  /// ZO-SGD learning rate for Variant::kNoUpdate.
  double eta = 0.0;
  /// Full-space weight for Variant::kGuidedEs.
  double guided_alpha = 0.5;
};

struct IterationLog {
  double loss = 0.0;  // full-batch f(theta') after the update
  Vector g;           // gradient estimate
  Vector dtheta;      // applied update
  Vector var;         // predicted variances before mixing
  bool mix_x = false;
  std::uint64_t queries = 0;
};

/// Values recorded during a step for differentiation by meta-training.
struct StepTrace {
  bool has_query_step = false;
  LstmStep<double> query_step;
  LstmStep<double> update_step;
  Vector var;         // exp(QueryRNN output), or ones
  bool mix_x = false;
  Vector normalized;  // sampling variances after mixing and normalization
  Vector coeff;       // g / sqrt(normalized): (1 / (mu q)) sum_i diff_i z_i
  Vector g;
  Vector dtheta;
};

class ZoLstmOptimizer {
 public:
  ZoLstmOptimizer(LstmParams<double> update, std::optional<LstmParams<double>> query,
                  ZoLstmConfig cfg);

  /// Zero recurrent states and previous-iterate buffers for d coordinates.
  void reset(Index d);

  /// Delta theta_j = alpha * UpdateRNN(g_j); advances the update states.
  Vector update_rnn_apply(const Vector& g, LstmStep<double>* step = nullptr);

  /// sigma^2_j = exp(QueryRNN([g_prev_j, dtheta_prev_j])); advances the query
  /// states.
  DiagonalGaussian query_rnn_apply(const Vector& g_prev, const Vector& dtheta_prev,
                                   LstmStep<double>* step = nullptr);

  /// One iteration: predict the covariance, mix with the identity, normalize,
  /// sample q directions, estimate the gradient (q + 1 queries), update.
  Vector step(Optimizee& f, const Vector& theta, TrajectoryRng& rng, IterationLog* log = nullptr,
              StepTrace* trace = nullptr);

  Index dim() const { return prev_g_.size(); }
  const ZoLstmConfig& config() const { return cfg_; }
  ZoLstmConfig& config() { return cfg_; }
  const LstmParams<double>& update_params() const { return update_; }
  LstmParams<double>& update_params() { return update_; }
  const std::optional<LstmParams<double>>& query_params() const { return query_; }
  std::optional<LstmParams<double>>& query_params() { return query_; }
  bool uses_query_rnn() const;

  const LstmState<double>& update_state() const { return update_state_; }
  const LstmState<double>& query_state() const { return query_state_; }
  LstmState<double>& update_state() { return update_state_; }
  LstmState<double>& query_state() { return query_state_; }
  const Vector& prev_g() const { return prev_g_; }
  const Vector& prev_dtheta() const { return prev_dtheta_; }

 private:
  LstmParams<double> update_;
  std::optional<LstmParams<double>> query_;
  ZoLstmConfig cfg_;
  LstmState<double> update_state_;
  LstmState<double> query_state_;
  Vector prev_g_;
  Vector prev_dtheta_;
};

/// Trained optimizer file ("zo-l2l-opt/1").
struct OptimizerModel {
  LstmParams<double> update = LstmParams<double>::zeros(1);
  std::optional<LstmParams<double>> query;
  double p = 0.5;
  int q = 20;
  double mu = kDefaultMu;
  double alpha = 1.0;
};

inline constexpr const char* kOptimizerSchema = "zo-l2l-opt/1";

nlohmann::json optimizer_to_json(const OptimizerModel& model);
OptimizerModel optimizer_from_json(const nlohmann::json& doc);
void save_optimizer(const OptimizerModel& model, const std::string& path);
OptimizerModel load_optimizer(const std::string& path);

}  // namespace zol2l

#endif  // ZOL2L_LEARNED_OPTIMIZER_HPP

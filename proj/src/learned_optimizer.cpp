#include "zol2l/learned_optimizer.hpp"

#include <array>
#include <fstream>
#include <sstream>

#include "zol2l/baselines.hpp"
#include "zol2l/lstm_io.hpp"

namespace zol2l {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kNoQuery: return "no_query";
    case Variant::kNoUpdate: return "no_update";
    case Variant::kGuidedEs: return "guided_es";
  }
  return "unknown";
}

ZoLstmOptimizer::ZoLstmOptimizer(LstmParams<double> update, std::optional<LstmParams<double>> query,
                                 ZoLstmConfig cfg)
    : update_(std::move(update)), query_(std::move(query)), cfg_(cfg) {
  require(update_.input_dim == 1, ErrorKind::kShapeMismatch, "UpdateRNN must take 1 input");
  require(!query_ || query_->input_dim == 2, ErrorKind::kShapeMismatch, "QueryRNN must take 2 inputs");
  require(cfg_.q >= 1 && cfg_.mu > 0.0 && cfg_.p >= 0.0 && cfg_.p <= 1.0, ErrorKind::kInvalidArgument,
          "ZoLstmOptimizer: invalid q, mu or p");
  reset(0);
}

bool ZoLstmOptimizer::uses_query_rnn() const {
  return query_.has_value() && (cfg_.variant == Variant::kFull || cfg_.variant == Variant::kNoUpdate);
}

void ZoLstmOptimizer::reset(Index d) {
  require(d >= 0, ErrorKind::kInvalidArgument, "reset: negative dimension");
  update_state_ = LstmState<double>::zeros(d);
  query_state_ = LstmState<double>::zeros(d);
  prev_g_ = Vector::Zero(d);
  prev_dtheta_ = Vector::Zero(d);
}

Vector ZoLstmOptimizer::update_rnn_apply(const Vector& g, LstmStep<double>* step) {
  require(g.size() == update_state_.coords(), ErrorKind::kShapeMismatch,
          "update_rnn_apply: estimate size differs from state size");
  if (!g.allFinite()) throw NumericError("update_rnn_apply: non-finite gradient estimate", g);
  auto r = lstm_step(update_, Matrix(g.transpose()), update_state_);
  update_state_ = std::move(r.state);
  if (step) *step = std::move(r.step);
  return cfg_.alpha * r.output.transpose();
}

DiagonalGaussian ZoLstmOptimizer::query_rnn_apply(const Vector& g_prev, const Vector& dtheta_prev,
                                                  LstmStep<double>* step) {
  require(query_.has_value(), ErrorKind::kUnavailable, "query_rnn_apply: no QueryRNN parameters");
  const Index d = query_state_.coords();
  require(g_prev.size() == d && dtheta_prev.size() == d, ErrorKind::kShapeMismatch,
          "query_rnn_apply: input size differs from state size");
  Matrix x(2, d);
  x.row(0) = g_prev.transpose();
  x.row(1) = dtheta_prev.transpose();
  auto r = lstm_step(*query_, x, query_state_);
  query_state_ = std::move(r.state);
  if (step) *step = std::move(r.step);
  DiagonalGaussian out{r.output.transpose().array().exp()};
  if (!out.valid()) throw NumericError("query_rnn_apply: variance overflow", out.var);
  return out;
}

Vector ZoLstmOptimizer::step(Optimizee& f, const Vector& theta, TrajectoryRng& rng,
                             IterationLog* log, StepTrace* trace) {
  const Index d = theta.size();
  require(d == dim() && d == f.dimension(), ErrorKind::kShapeMismatch,
          "ZoLstmOptimizer::step: optimizer state not sized to the optimizee");

  StepTrace local;
  StepTrace& tr = trace ? *trace : local;
  tr.has_query_step = uses_query_rnn();

  DiagonalGaussian predicted = DiagonalGaussian::identity(d);
  if (tr.has_query_step) predicted = query_rnn_apply(prev_g_, prev_dtheta_, &tr.query_step);
  tr.var = predicted.var;

  const MixedCovariance mixed = mix_covariance(predicted, cfg_.p, rng.mixing);
  tr.mix_x = mixed.used_predicted;
  const DiagonalGaussian sampling = normalize_covariance(mixed.cov);
  tr.normalized = sampling.var;

  const std::uint64_t batch = f.stochastic() ? rng.sampling.next_u64() : kFullBatch;
  DirectionBatch dirs;
  if (cfg_.variant == Variant::kGuidedEs) {
    const std::array<Vector, 2> surrogates = {prev_g_, prev_dtheta_};
    dirs = guided_es_sample(surrogates, d, cfg_.guided_alpha, cfg_.q, rng.sampling);
  } else {
    dirs = sample_directions(sampling, cfg_.q, rng.sampling);
  }
  GradientEstimate est = estimate_gradient_random(f, theta, cfg_.mu, dirs, batch);
  tr.g = est.g;
  tr.coeff = est.g.cwiseQuotient(sampling.var.cwiseSqrt());

  if (cfg_.variant == Variant::kNoUpdate) {
    tr.dtheta = -(cfg_.eta * est.g);
  } else {
    tr.dtheta = update_rnn_apply(est.g, &tr.update_step);
  }
  if (!tr.dtheta.allFinite()) throw NumericError("ZoLstmOptimizer::step: non-finite update", theta);

  Vector next = theta + tr.dtheta;
  prev_g_ = est.g;
  prev_dtheta_ = tr.dtheta;

  if (log) {
    log->loss = f.full_value(next);
    log->g = tr.g;
    log->dtheta = tr.dtheta;
    log->var = tr.var;
    log->mix_x = tr.mix_x;
    log->queries = est.queries_used;
  }
  return next;
}

// ------------------------------------------------------------- model file

nlohmann::json optimizer_to_json(const OptimizerModel& m) {
  return {{"schema", kOptimizerSchema},
          {"update", lstm_to_json(m.update)},
          {"query", m.query ? lstm_to_json(*m.query) : nlohmann::json(nullptr)},
          {"p", m.p},
          {"q", m.q},
          {"mu", m.mu},
          {"alpha", m.alpha}};
}

OptimizerModel optimizer_from_json(const nlohmann::json& doc) {
  auto bad = [](const std::string& what) {
    throw Error(ErrorKind::kMalformedDocument, "optimizer document: " + what);
  };
  if (!doc.is_object() || !doc.contains("schema") || doc["schema"] != kOptimizerSchema)
    bad("schema is not zo-l2l-opt/1");
  if (!doc.contains("update")) bad("missing 'update'");
  OptimizerModel m;
  m.update = lstm_from_json(doc["update"]);
  if (m.update.input_dim != 1) throw Error(ErrorKind::kShapeMismatch, "update model must have input_dim 1");
  if (doc.contains("query") && !doc["query"].is_null()) {
    m.query = lstm_from_json(doc["query"]);
    if (m.query->input_dim != 2) throw Error(ErrorKind::kShapeMismatch, "query model must have input_dim 2");
  }
  try {
    m.p = doc.value("p", 0.5);
    m.q = doc.value("q", 20);
    m.mu = doc.value("mu", kDefaultMu);
    m.alpha = doc.value("alpha", 1.0);
  } catch (const nlohmann::json::exception& e) {
    bad(e.what());
  }
  return m;
}

void save_optimizer(const OptimizerModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kUnavailable, "cannot write optimizer file " + path);
  out << optimizer_to_json(model).dump(1) << '\n';
}

OptimizerModel load_optimizer(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kUnavailable, "cannot open optimizer file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::kMalformedDocument, std::string("optimizer file: ") + e.what());
  }
  return optimizer_from_json(doc);
}

}  // namespace zol2l

#include "zol2l/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace zol2l {

namespace fs = std::filesystem;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct KindName {
  OptimizerKind kind;
  const char* name;
};

constexpr KindName kKindNames[] = {
    {OptimizerKind::kZoSgd, "zo-sgd"},
    {OptimizerKind::kZoSignSgd, "zo-signsgd"},
    {OptimizerKind::kZoAdam, "zo-adam"},
    {OptimizerKind::kZoSzvrG, "zo-szvr-g"},
    {OptimizerKind::kZoLstm, "zo-lstm"},
    {OptimizerKind::kZoLstmNoQuery, "zo-lstm-no-query"},
    {OptimizerKind::kZoLstmNoUpdate, "zo-lstm-no-update"},
    {OptimizerKind::kZoLstmGuidedEs, "zo-lstm-guided-es"},
};

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorKind::kConfig, what); }

}  // namespace

const char* to_string(OptimizerKind k) {
  for (const auto& e : kKindNames)
    if (e.kind == k) return e.name;
  return "unknown";
}

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  for (const auto& e : kKindNames)
    if (s == e.name) return e.kind;
  config_error("unknown optimizer '" + s + "'");
}

bool is_learned(OptimizerKind k) {
  return k == OptimizerKind::kZoLstm || k == OptimizerKind::kZoLstmNoQuery ||
         k == OptimizerKind::kZoLstmNoUpdate || k == OptimizerKind::kZoLstmGuidedEs;
}

// ----------------------------------------------------------------- steppers

namespace {

class BaselineStepper final : public Stepper {
 public:
  BaselineStepper(const OptimizerSpec& spec, const RunSettings& run) : spec_(spec), run_(run) {}

  void reset(Index d) override { adam_ = AdamState::zeros(d, spec_.eta, spec_.beta1, spec_.beta2); }

  Vector step(Optimizee& f, const Vector& theta, TrajectoryRng& rng, Vector* g) override {
    const Index d = theta.size();
    const std::uint64_t batch = f.stochastic() ? rng.sampling.next_u64() : kFullBatch;
    const DirectionBatch dirs = sample_directions(DiagonalGaussian::identity(d), run_.q, rng.sampling);
    GradientEstimate est = estimate_gradient_random(f, theta, run_.mu, dirs, batch);
    Vector next;
    switch (spec_.kind) {
      case OptimizerKind::kZoSignSgd: next = zo_signsgd_step(theta, est.g, spec_.eta); break;
      case OptimizerKind::kZoAdam: next = zo_adam_step(theta, est.g, adam_); break;
      default: next = zo_sgd_step(theta, est.g, spec_.eta); break;
    }
    if (g) *g = std::move(est.g);
    return next;
  }

 private:
  OptimizerSpec spec_;
  RunSettings run_;
  AdamState adam_;
};

class SzvrStepper final : public Stepper {
 public:
  SzvrStepper(const OptimizerSpec& spec, const RunSettings& run) : spec_(spec), run_(run) {}

  void reset(Index) override { state_ = SzvrState{}; }

  Vector step(Optimizee& f, const Vector& theta, TrajectoryRng& rng, Vector* g) override {
    SzvrStepInfo info;
    Vector next = szvr_step(f, theta, state_, run_.q, run_.mu, spec_.eta, rng.sampling, &info);
    if (g) *g = std::move(info.g);
    return next;
  }

 private:
  OptimizerSpec spec_;
  RunSettings run_;
  SzvrState state_;
};

class LearnedStepper final : public Stepper {
 public:
  explicit LearnedStepper(ZoLstmOptimizer opt) : opt_(std::move(opt)) {}

  void reset(Index d) override { opt_.reset(d); }

  Vector step(Optimizee& f, const Vector& theta, TrajectoryRng& rng, Vector* g) override {
    Vector next = opt_.step(f, theta, rng);
    if (g) *g = opt_.prev_g();
    return next;
  }

 private:
  ZoLstmOptimizer opt_;
};

}  // namespace

std::unique_ptr<Stepper> make_stepper(const OptimizerSpec& spec, const RunSettings& run) {
  switch (spec.kind) {
    case OptimizerKind::kZoSgd:
    case OptimizerKind::kZoSignSgd:
    case OptimizerKind::kZoAdam:
      return std::make_unique<BaselineStepper>(spec, run);
    case OptimizerKind::kZoSzvrG:
      return std::make_unique<SzvrStepper>(spec, run);
    default: break;
  }

  ZoLstmConfig oc;
  oc.q = run.q;
  oc.mu = run.mu;
  oc.p = spec.p.value_or(run.p);
  oc.eta = spec.eta;
  LstmParams<double> update = init_params(1, 0);
  std::optional<LstmParams<double>> query;
  if (spec.model) {
    update = spec.model->update;
    query = spec.model->query;
    oc.alpha = spec.alpha.value_or(spec.model->alpha);
  } else if (spec.kind != OptimizerKind::kZoLstmNoUpdate) {
    config_error(spec.name() + ": a trained optimizer model is required");
  }

  switch (spec.kind) {
    case OptimizerKind::kZoLstm:
      if (!query) config_error(spec.name() + ": the model has no QueryRNN");
      oc.variant = Variant::kFull;
      break;
    case OptimizerKind::kZoLstmNoQuery:
      oc.variant = Variant::kNoQuery;
      query.reset();
      break;
    case OptimizerKind::kZoLstmNoUpdate:
      oc.variant = Variant::kNoUpdate;
      break;
    default:
      oc.variant = Variant::kGuidedEs;
      query.reset();
      break;
  }
  return std::make_unique<LearnedStepper>(ZoLstmOptimizer(std::move(update), std::move(query), oc));
}

// -------------------------------------------------------------------- runs

double CurveRecord::mean_success_iteration() const {
  if (trials.empty()) return 0.0;
  double total = 0.0;
  for (const TrialLog& t : trials)
    total += t.first_success ? *t.first_success : static_cast<double>(t.loss.size());
  return total / static_cast<double>(trials.size());
}

double CurveRecord::success_rate() const {
  if (trials.empty()) return 0.0;
  const auto n = std::count_if(trials.begin(), trials.end(), [](const TrialLog& t) { return t.first_success.has_value(); });
  return static_cast<double>(n) / static_cast<double>(trials.size());
}

void aggregate(CurveRecord& rec, int iterations) {
  const auto T = static_cast<std::size_t>(iterations);
  rec.loss_mean.assign(T, 0.0);
  rec.loss_std.assign(T, 0.0);
  rec.queries_mean.assign(T, 0.0);
  rec.success_frac.assign(T, 0.0);
  const double n = static_cast<double>(rec.trials.size());
  if (rec.trials.empty()) return;
  for (std::size_t t = 0; t < T; ++t) {
    double sum = 0.0, queries = 0.0, succ = 0.0;
    for (const TrialLog& tr : rec.trials) {
      sum += tr.loss[t];
      queries += static_cast<double>(tr.queries[t]);
      if (tr.first_success && static_cast<std::size_t>(*tr.first_success) <= t + 1) succ += 1.0;
    }
    const double mean = sum / n;
    double ss = 0.0;
    for (const TrialLog& tr : rec.trials) ss += (tr.loss[t] - mean) * (tr.loss[t] - mean);
    rec.loss_mean[t] = mean;
    rec.loss_std[t] = rec.trials.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    rec.queries_mean[t] = queries / n;
    rec.success_frac[t] = succ / n;
  }
}

CurveRecord run_curve(const OptimizerSpec& spec, const TaskFamily& family, const RunSettings& run,
                      const StepObserver& observer) {
  require(run.iterations >= 1 && run.instances >= 1 && run.trials >= 1 && run.q >= 1,
          ErrorKind::kConfig, "run settings: iterations, instances, trials and q must be >= 1");
  CurveRecord rec;
  rec.optimizer = spec.name();
  auto stepper = make_stepper(spec, run);
  const auto T = static_cast<std::size_t>(run.iterations);

  for (int i = 0; i < run.instances; ++i) {
    auto f = family.make(run.split, static_cast<std::uint64_t>(i));
    const Index d = f->dimension();
    for (int r = 0; r < run.trials; ++r) {
      const std::uint64_t trial_seed =
          derive_seed(run.seed, static_cast<std::uint64_t>(i) * static_cast<std::uint64_t>(run.trials) +
                                    static_cast<std::uint64_t>(r));
      TrialLog log;
      log.instance = static_cast<std::uint64_t>(i);
      log.trial = r;
      log.loss.reserve(T);
      log.queries.reserve(T);

      Vector theta = f->initial_point(trial_seed);
      TrajectoryRng rng(derive_seed(trial_seed, 1));
      stepper->reset(d);
      f->reset_ledger();
      log.initial_loss = f->full_value(theta);
      double last = log.initial_loss;
      std::uint64_t spent = 0;
      Vector g;

      for (std::size_t t = 0; t < T; ++t) {
        const std::uint64_t before = f->ledger();
        Vector next;
        try {
          next = stepper->step(*f, theta, rng, &g);
        } catch (const NumericError&) {
          log.diverged = true;
          break;
        }
        const double loss = next.allFinite() ? f->full_value(next) : kInf;
        if (!std::isfinite(loss)) {
          log.diverged = true;
          break;
        }
        spent += f->ledger() - before;
        log.loss.push_back(loss);
        log.queries.push_back(spent);
        if (!log.first_success) {
          const auto s = attack_success_of(*f, next);
          if (s && *s) log.first_success = static_cast<int>(t + 1);
        }
        if (observer) observer(log, *f, theta, g, next);
        theta = std::move(next);
        last = loss;
      }
      while (log.loss.size() < T) {
        log.loss.push_back(last);
        log.queries.push_back(spent);
      }
      rec.trials.push_back(std::move(log));
    }
  }
  aggregate(rec, run.iterations);
  return rec;
}

// ------------------------------------------------------------------ tuning

namespace {

double tuning_score(const OptimizerSpec& spec, const TaskFamily& family, const RunSettings& run) {
  try {
    const CurveRecord rec = run_curve(spec, family, run);
    for (const TrialLog& t : rec.trials)
      if (t.diverged) return kInf;
    const double s = rec.final_loss_mean();
    return std::isfinite(s) ? s : kInf;
  } catch (const NumericError&) {
    return kInf;
  }
}

}  // namespace

TuneResult tune_baseline(const OptimizerSpec& spec, const TaskFamily& family, RunSettings run,
                         const std::vector<double>& deltas) {
  require(!deltas.empty(), ErrorKind::kConfig, "tune_baseline: empty grid");
  require(!is_learned(spec.kind) || spec.kind == OptimizerKind::kZoLstmNoUpdate, ErrorKind::kConfig,
          "tune_baseline: " + spec.name() + " has no learning rate to tune");
  run.split = Split::kValidation;
  const double d = static_cast<double>(family.dimension());

  TuneResult best;
  best.score = kInf;
  auto evaluate = [&](double delta, double b1, double b2) {
    OptimizerSpec s = spec;
    s.eta = delta / d;
    s.beta1 = b1;
    s.beta2 = b2;
    const double score = tuning_score(s, family, run);
    best.table.push_back({{"delta", delta},
                          {"eta", s.eta},
                          {"beta1", b1},
                          {"beta2", b2},
                          {"score", std::isfinite(score) ? nlohmann::json(score) : nlohmann::json(nullptr)}});
    if (score < best.score) {
      best.score = score;
      best.delta = delta;
      best.eta = s.eta;
      best.beta1 = b1;
      best.beta2 = b2;
    }
  };

  std::vector<std::pair<double, double>> betas{{spec.beta1, spec.beta2}};
  if (spec.kind == OptimizerKind::kZoAdam)
    betas = {{0.9, 0.99}, {0.9, 0.996}, {0.9, 0.999}, {0.99, 0.99}, {0.99, 0.996}, {0.99, 0.999}};
  for (const auto& [b1, b2] : betas)
    for (double delta : deltas) evaluate(delta, b1, b2);
  if (!std::isfinite(best.score))
    throw Error(ErrorKind::kNonFinite, "tune_baseline: every grid point diverged for " + spec.name());

  if (deltas.size() > 1) {
    const double centre = best.delta;
    for (double factor : {0.5, 0.75, 1.25, 1.5}) evaluate(centre * factor, best.beta1, best.beta2);
  }
  return best;
}

// ------------------------------------------------------------------- config

FamilyHandle make_family(const TaskSpec& spec) {
  FamilyHandle h;
  if (spec.family == "binary") {
    require(spec.d >= 1 && spec.n >= 1 && spec.batch >= 0 && spec.batch <= spec.n, ErrorKind::kConfig,
            "binary task: need d, n >= 1 and 0 <= batch <= n");
    h.family = std::make_unique<BinaryFamily>(spec.d, spec.n, spec.batch, spec.seed);
  } else if (spec.family == "quadratic") {
    require(spec.d >= 1, ErrorKind::kConfig, "quadratic task: need d >= 1");
    h.family = std::make_unique<QuadraticFamily>(spec.d, spec.seed);
  } else if (spec.family == "attack") {
    require(spec.grid_rows >= 1 && spec.grid_cols >= 1 && spec.grid_rows <= kImageSide &&
                spec.grid_cols <= kImageSide,
            ErrorKind::kConfig, "attack task: grid must lie within 1..8 per side");
    if (spec.classifier.empty()) {
      h.classifier = std::shared_ptr<const ToyClassifier>(&bundled_classifier(), [](const ToyClassifier*) {});
    } else {
      h.classifier = std::make_shared<ToyClassifier>(load_classifier(spec.classifier));
    }
    h.family = std::make_unique<AttackFamily>(*h.classifier, spec.seed, spec.c, spec.grid_rows, spec.grid_cols);
  } else {
    config_error("unknown task family '" + spec.family + "'");
  }
  return h;
}

namespace {

template <typename T>
T field(const nlohmann::json& obj, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    config_error(std::string("config field '") + key + "' has the wrong type");
  }
}

void check_keys(const nlohmann::json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) config_error(where + " must be an object");
  for (const auto& [k, v] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) config_error(where + ": unknown field '" + k + "'");
  }
}

OptimizerModel resolve_model(const std::string& path, const fs::path& base) {
  fs::path p(path);
  if (p.is_relative() && !base.empty()) p = base / p;
  try {
    return load_optimizer(p.string());
  } catch (const Error& e) {
    config_error("cannot resolve optimizer model '" + p.string() + "': " + e.what());
  }
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "validation") return Split::kValidation;
  if (s == "test") return Split::kTest;
  config_error("unknown split '" + s + "'");
}

MetaConfig parse_meta(const nlohmann::json& m) {
  check_keys(m,
             {"horizon", "unroll", "lambda", "meta_lr", "clip_norm", "iterations", "train_instances",
              "validation_instances", "validate_every", "phase", "gradient_source", "q", "mu", "alpha",
              "eval_p"},
             "meta");
  MetaConfig c;
  c.horizon = field(m, "horizon", c.horizon);
  c.unroll = field(m, "unroll", c.unroll);
  c.lambda = field(m, "lambda", c.lambda);
  c.meta_lr = field(m, "meta_lr", c.meta_lr);
  c.clip_norm = field(m, "clip_norm", c.clip_norm);
  c.iterations = field(m, "iterations", c.iterations);
  c.train_instances = field(m, "train_instances", c.train_instances);
  c.validation_instances = field(m, "validation_instances", c.validation_instances);
  c.validate_every = field(m, "validate_every", c.validate_every);
  const std::string phase = field<std::string>(m, "phase", "update_rnn");
  if (phase == "update_rnn") c.phase = Phase::kUpdateRnn;
  else if (phase == "query_rnn") c.phase = Phase::kQueryRnn;
  else config_error("meta.phase must be update_rnn or query_rnn");
  const std::string src = field<std::string>(m, "gradient_source", "analytic");
  if (src == "analytic") c.gradient_source = GradientSource::kAnalytic;
  else if (src == "coordinatewise_zo") c.gradient_source = GradientSource::kCoordinatewiseZo;
  else config_error("meta.gradient_source must be analytic or coordinatewise_zo");
  c.optimizer.q = field(m, "q", c.optimizer.q);
  c.optimizer.mu = field(m, "mu", c.optimizer.mu);
  c.optimizer.alpha = field(m, "alpha", c.optimizer.alpha);
  c.eval_p = field(m, "eval_p", c.eval_p);
  c.validate();
  return c;
}

}  // namespace

ExperimentConfig parse_experiment_config(const nlohmann::json& doc, const fs::path& base_dir) {
  check_keys(doc,
             {"task", "optimizers", "iterations", "instances", "trials", "q", "mu", "p", "seed", "split",
              "model", "deltas", "tune_instances", "tune_trials", "q_sweep", "grids", "p_sweep", "meta", "out"},
             "config");
  ExperimentConfig c;
  c.source = doc;

  if (doc.contains("task")) {
    const auto& t = doc["task"];
    check_keys(t, {"family", "d", "n", "batch", "seed", "c", "grid", "classifier"}, "task");
    c.task.family = field<std::string>(t, "family", c.task.family);
    if (c.task.family != "binary" && c.task.family != "quadratic" && c.task.family != "attack")
      config_error("unknown task family '" + c.task.family + "'");
    c.task.d = field<Index>(t, "d", c.task.d);
    c.task.n = field<Index>(t, "n", c.task.n);
    c.task.batch = field<Index>(t, "batch", c.task.batch);
    c.task.seed = field<std::uint64_t>(t, "seed", c.task.seed);
    c.task.c = field(t, "c", c.task.c);
    if (t.contains("grid")) {
      const auto grid = field<std::vector<Index>>(t, "grid", {});
      if (grid.size() != 2) config_error("task.grid must be [rows, cols]");
      c.task.grid_rows = grid[0];
      c.task.grid_cols = grid[1];
    }
    c.task.classifier = field<std::string>(t, "classifier", "");
    if (!c.task.classifier.empty() && fs::path(c.task.classifier).is_relative() && !base_dir.empty())
      c.task.classifier = (base_dir / c.task.classifier).string();
  }

  c.run.iterations = field(doc, "iterations", c.run.iterations);
  c.run.instances = field(doc, "instances", c.run.instances);
  c.run.trials = field(doc, "trials", c.run.trials);
  c.run.q = field(doc, "q", c.run.q);
  c.run.mu = field(doc, "mu", c.run.mu);
  c.run.p = field(doc, "p", c.run.p);
  c.run.seed = field<std::uint64_t>(doc, "seed", c.run.seed);
  c.run.split = split_from_string(field<std::string>(doc, "split", "test"));
  if (c.run.iterations < 1 || c.run.instances < 1 || c.run.trials < 1 || c.run.q < 1 || !(c.run.mu > 0.0) ||
      c.run.p < 0.0 || c.run.p > 1.0)
    config_error("iterations, instances, trials, q must be >= 1, mu > 0 and p in [0, 1]");

  if (doc.contains("model")) {
    c.model_path = field<std::string>(doc, "model", "");
    c.model = resolve_model(c.model_path, base_dir);
  }

  if (doc.contains("optimizers")) {
    if (!doc["optimizers"].is_array()) config_error("optimizers must be an array");
    for (const auto& o : doc["optimizers"]) {
      check_keys(o, {"kind", "label", "eta", "beta1", "beta2", "tune", "model", "p", "alpha"}, "optimizer");
      OptimizerSpec s;
      s.kind = optimizer_kind_from_string(field<std::string>(o, "kind", ""));
      s.label = field<std::string>(o, "label", "");
      s.eta = field(o, "eta", 0.0);
      s.beta1 = field(o, "beta1", s.beta1);
      s.beta2 = field(o, "beta2", s.beta2);
      s.tune = field(o, "tune", !o.contains("eta"));
      if (o.contains("p")) s.p = field(o, "p", 0.5);
      if (o.contains("alpha")) s.alpha = field(o, "alpha", 1.0);
      if (o.contains("model")) {
        s.model_path = field<std::string>(o, "model", "");
        s.model = resolve_model(s.model_path, base_dir);
      } else if (is_learned(s.kind) && c.model) {
        s.model = c.model;
        s.model_path = c.model_path;
      }
      if (!is_learned(s.kind) || s.kind == OptimizerKind::kZoLstmNoUpdate) {
        if (!s.tune && !(s.eta > 0.0)) config_error(s.name() + ": eta must be positive");
      } else {
        s.tune = false;
        if (!s.model) config_error(s.name() + ": needs a model file");
        if (s.kind == OptimizerKind::kZoLstm && !s.model->query)
          config_error(s.name() + ": the model has no QueryRNN");
      }
      c.roster.push_back(std::move(s));
    }
    std::map<std::string, int> seen;
    for (const auto& s : c.roster)
      if (++seen[s.name()] > 1) config_error("duplicate optimizer name '" + s.name() + "'");
  }

  c.deltas = field(doc, "deltas", c.deltas);
  if (c.deltas.empty()) config_error("deltas must be nonempty");
  c.tune_instances = field(doc, "tune_instances", c.tune_instances);
  c.tune_trials = field(doc, "tune_trials", c.tune_trials);
  c.q_sweep = field(doc, "q_sweep", c.q_sweep);
  c.p_sweep = field(doc, "p_sweep", c.p_sweep);
  if (doc.contains("grids")) {
    c.grids.clear();
    for (const auto& g : field<std::vector<std::vector<Index>>>(doc, "grids", {})) {
      if (g.size() != 2) config_error("grids entries must be [rows, cols]");
      c.grids.emplace_back(g[0], g[1]);
    }
  }
  if (doc.contains("meta")) c.meta = parse_meta(doc["meta"]);
  c.out_dir = field<std::string>(doc, "out", "");
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot open config file " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    config_error(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_experiment_config(doc, fs::path(path).parent_path());
}

// ------------------------------------------------------------- experiments

nlohmann::json tune_roster(std::vector<OptimizerSpec>& roster, const TaskFamily& family,
                           const ExperimentConfig& cfg) {
  RunSettings tr = cfg.run;
  tr.instances = cfg.tune_instances;
  tr.trials = cfg.tune_trials;

  nlohmann::json records = nlohmann::json::object();
  std::optional<double> sgd_eta;
  for (auto& s : roster) {
    if (!s.tune || s.kind == OptimizerKind::kZoLstmNoUpdate) continue;
    const TuneResult r = tune_baseline(s, family, tr, cfg.deltas);
    s.eta = r.eta;
    s.beta1 = r.beta1;
    s.beta2 = r.beta2;
    s.tune = false;
    if (s.kind == OptimizerKind::kZoSgd && !sgd_eta) sgd_eta = r.eta;
    records[s.name()] = {{"delta", r.delta}, {"eta", r.eta}, {"beta1", r.beta1}, {"beta2", r.beta2},
                         {"score", r.score}, {"grid", r.table}};
  }
  for (auto& s : roster) {
    if (!s.tune) continue;
    if (!sgd_eta) {
      OptimizerSpec sgd;
      sgd.kind = OptimizerKind::kZoSgd;
      const TuneResult r = tune_baseline(sgd, family, tr, cfg.deltas);
      sgd_eta = r.eta;
      records["zo-sgd"] = {{"delta", r.delta}, {"eta", r.eta}, {"score", r.score}, {"grid", r.table}};
    }
    s.eta = *sgd_eta;
    s.tune = false;
    records[s.name()] = {{"eta", s.eta}, {"inherited_from", "zo-sgd"}};
  }
  return records;
}

std::vector<CurveRecord> run_benchmark(ExperimentConfig cfg, nlohmann::json* tuning) {
  require(!cfg.roster.empty(), ErrorKind::kConfig, "bench: empty optimizer roster");
  FamilyHandle h = make_family(cfg.task);
  nlohmann::json rec = tune_roster(cfg.roster, *h.family, cfg);
  if (tuning) *tuning = std::move(rec);
  std::vector<CurveRecord> out;
  for (const auto& s : cfg.roster) out.push_back(run_curve(s, *h.family, cfg.run));
  return out;
}

namespace {

const OptimizerModel& require_model(const ExperimentConfig& cfg, bool need_query) {
  const OptimizerModel* m = cfg.model ? &*cfg.model : nullptr;
  if (!m)
    for (const auto& s : cfg.roster)
      if (s.model && (!need_query || s.model->query)) {
        m = &*s.model;
        break;
      }
  if (!m) config_error("a trained optimizer model is required (top-level 'model')");
  if (need_query && !m->query) config_error("the trained optimizer model has no QueryRNN");
  return *m;
}

OptimizerSpec learned_spec(OptimizerKind kind, const OptimizerModel& model) {
  OptimizerSpec s;
  s.kind = kind;
  s.model = model;
  if (kind == OptimizerKind::kZoLstmNoUpdate) s.tune = true;
  return s;
}

OptimizerSpec sgd_from_roster(const ExperimentConfig& cfg) {
  for (const auto& s : cfg.roster)
    if (s.kind == OptimizerKind::kZoSgd) return s;
  OptimizerSpec s;
  s.kind = OptimizerKind::kZoSgd;
  s.tune = true;
  return s;
}

}  // namespace

std::vector<CurveRecord> run_ablation(ExperimentConfig cfg, nlohmann::json* tuning) {
  const OptimizerModel model = require_model(cfg, true);
  std::vector<OptimizerSpec> roster{sgd_from_roster(cfg),
                                    learned_spec(OptimizerKind::kZoLstm, model),
                                    learned_spec(OptimizerKind::kZoLstmNoQuery, model),
                                    learned_spec(OptimizerKind::kZoLstmNoUpdate, model),
                                    learned_spec(OptimizerKind::kZoLstmGuidedEs, model)};
  roster[0].label.clear();
  cfg.roster = std::move(roster);
  return run_benchmark(std::move(cfg), tuning);
}

double mean_cosine(const OptimizerSpec& spec, const TaskFamily& family, const RunSettings& run) {
  std::map<std::pair<std::uint64_t, int>, std::vector<double>> per_trial;
  auto observer = [&](const TrialLog& log, Optimizee& f, const Vector& before, const Vector& g, const Vector&) {
    const GradientSource src = f.has_gradient() ? GradientSource::kAnalytic : GradientSource::kCoordinatewiseZo;
    per_trial[{log.instance, log.trial}].push_back(cosine_similarity(g, optimizee_gradient(f, before, src)));
  };
  const CurveRecord rec = run_curve(spec, family, run, observer);

  double total = 0.0;
  int counted = 0;
  for (const TrialLog& t : rec.trials) {
    const auto& cos = per_trial[{t.instance, t.trial}];
    if (cos.empty()) continue;
    std::size_t window = cos.size();
    if (t.first_success) {
      window = static_cast<std::size_t>(*t.first_success);
    } else {
      const double final_loss = t.loss.back();
      for (std::size_t k = 0; k < cos.size(); ++k)
        if (t.loss[k] <= 1.05 * final_loss) {
          window = k + 1;
          break;
        }
    }
    window = std::clamp<std::size_t>(window, 1, cos.size());
    double s = 0.0;
    for (std::size_t k = 0; k < window; ++k) s += cos[k];
    total += s / static_cast<double>(window);
    ++counted;
  }
  return counted ? total / counted : 0.0;
}

std::vector<CosineRow> eval_cosine_similarity(const ExperimentConfig& cfg) {
  const OptimizerModel& model = require_model(cfg, true);
  FamilyHandle h = make_family(cfg.task);
  std::vector<CosineRow> rows;
  for (int q : cfg.q_sweep) {
    RunSettings run = cfg.run;
    run.q = q;
    CosineRow row;
    row.q = q;
    row.with_query = mean_cosine(learned_spec(OptimizerKind::kZoLstm, model), *h.family, run);
    row.without_query = mean_cosine(learned_spec(OptimizerKind::kZoLstmNoQuery, model), *h.family, run);
    rows.push_back(row);
  }
  return rows;
}

ComplexityReport eval_iteration_complexity(ExperimentConfig cfg) {
  require(cfg.task.family == "attack", ErrorKind::kConfig, "dimscale needs an attack task");
  std::vector<OptimizerSpec> roster = cfg.roster;
  if (roster.empty()) {
    roster.push_back(sgd_from_roster(cfg));
    OptimizerSpec with_query = learned_spec(OptimizerKind::kZoLstmNoUpdate, require_model(cfg, true));
    roster.push_back(with_query);
  }
  auto grids = cfg.grids;
  std::sort(grids.begin(), grids.end(),
            [](const auto& a, const auto& b) { return a.first * a.second < b.first * b.second; });

  ComplexityReport report;
  std::map<std::string, std::vector<double>> trend;
  for (const auto& [rows, cols] : grids) {
    TaskSpec ts = cfg.task;
    ts.grid_rows = rows;
    ts.grid_cols = cols;
    FamilyHandle h = make_family(ts);
    std::vector<OptimizerSpec> local = roster;
    tune_roster(local, *h.family, cfg);
    for (const auto& s : local) {
      const CurveRecord rec = run_curve(s, *h.family, cfg.run);
      report.rows.push_back({rows, cols, s.name(), rec.mean_success_iteration(), rec.success_rate()});
      trend[s.name()].push_back(rec.mean_success_iteration());
    }
  }
  for (const auto& [name, values] : trend)
    report.non_decreasing[name] = std::is_sorted(values.begin(), values.end());
  return report;
}

std::vector<FrequencyRow> sweep_sampling_frequency(const ExperimentConfig& cfg) {
  const OptimizerModel& model = require_model(cfg, true);
  FamilyHandle h = make_family(cfg.task);
  std::vector<FrequencyRow> rows;
  for (double p : cfg.p_sweep) {
    require(p >= 0.0 && p <= 1.0, ErrorKind::kConfig, "p_sweep values must lie in [0, 1]");
    OptimizerSpec s = learned_spec(OptimizerKind::kZoLstm, model);
    s.p = p;
    const CurveRecord rec = run_curve(s, *h.family, cfg.run);
    FrequencyRow row;
    row.p = p;
    row.mean_iterations = rec.mean_success_iteration();
    row.success_rate = rec.success_rate();
    double loss = 0.0;
    int n = 0;
    for (const TrialLog& t : rec.trials)
      if (t.first_success) {
        loss += t.loss[static_cast<std::size_t>(*t.first_success - 1)];
        ++n;
      }
    row.loss_at_success = n ? loss / n : std::numeric_limits<double>::quiet_NaN();
    rows.push_back(row);
  }
  return rows;
}

std::vector<CurveRecord> compare_query_budget(ExperimentConfig cfg, nlohmann::json* tuning) {
  if (cfg.roster.empty()) {
    cfg.roster.push_back(sgd_from_roster(cfg));
    OptimizerSpec szvr;
    szvr.kind = OptimizerKind::kZoSzvrG;
    szvr.tune = true;
    cfg.roster.push_back(szvr);
    const OptimizerModel* m = cfg.model ? &*cfg.model : nullptr;
    if (m && m->query) cfg.roster.push_back(learned_spec(OptimizerKind::kZoLstmNoUpdate, *m));
    if (m && m->query) cfg.roster.push_back(learned_spec(OptimizerKind::kZoLstm, *m));
  } else if (std::none_of(cfg.roster.begin(), cfg.roster.end(),
                          [](const OptimizerSpec& s) { return s.kind == OptimizerKind::kZoSzvrG; })) {
    OptimizerSpec szvr;
    szvr.kind = OptimizerKind::kZoSzvrG;
    szvr.tune = true;
    cfg.roster.push_back(szvr);
  }
  return run_benchmark(std::move(cfg), tuning);
}

// ------------------------------------------------------------------ output

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kUnavailable, "cannot write " + path.string());
  return out;
}

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

void write_curve_csv(const CurveRecord& rec, const fs::path& path) {
  std::ofstream out = open_out(path);
  out << "iteration,loss_mean,loss_std,queries_mean,success_frac\n";
  for (std::size_t t = 0; t < rec.loss_mean.size(); ++t)
    out << t + 1 << ',' << num(rec.loss_mean[t]) << ',' << num(rec.loss_std[t]) << ','
        << num(rec.queries_mean[t]) << ',' << num(rec.success_frac[t]) << '\n';
}

void write_raw_csv(const CurveRecord& rec, const fs::path& path) {
  std::ofstream out = open_out(path);
  out << "instance,trial,iteration,loss,queries,success\n";
  for (const TrialLog& t : rec.trials)
    for (std::size_t k = 0; k < t.loss.size(); ++k) {
      const bool succ = t.first_success && static_cast<std::size_t>(*t.first_success) <= k + 1;
      out << t.instance << ',' << t.trial << ',' << k + 1 << ',' << num(t.loss[k]) << ',' << t.queries[k]
          << ',' << (succ ? 1 : 0) << '\n';
    }
}

nlohmann::json run_settings_to_json(const RunSettings& r) {
  static const char* splits[] = {"train", "validation", "test"};
  return {{"iterations", r.iterations}, {"instances", r.instances}, {"trials", r.trials}, {"q", r.q},
          {"mu", r.mu}, {"p", r.p}, {"seed", r.seed}, {"split", splits[static_cast<int>(r.split)]}};
}

void write_curves(const std::vector<CurveRecord>& curves, const fs::path& dir, const nlohmann::json& config_echo,
                  const nlohmann::json& extra) {
  fs::create_directories(dir);
  nlohmann::json optimizers = nlohmann::json::object();
  for (const CurveRecord& c : curves) {
    write_curve_csv(c, dir / (c.optimizer + ".csv"));
    write_raw_csv(c, dir / (c.optimizer + ".raw.csv"));
    const auto diverged =
        std::count_if(c.trials.begin(), c.trials.end(), [](const TrialLog& t) { return t.diverged; });
    optimizers[c.optimizer] = {{"final_loss_mean", finite_or_null(c.final_loss_mean())},
                               {"final_loss_std", finite_or_null(c.loss_std.empty() ? 0.0 : c.loss_std.back())},
                               {"queries_final", c.queries_mean.empty() ? 0.0 : c.queries_mean.back()},
                               {"success_rate", c.success_rate()},
                               {"mean_success_iteration", c.mean_success_iteration()},
                               {"diverged_trials", diverged}};
  }
  nlohmann::json summary = {{"config", config_echo}, {"optimizers", std::move(optimizers)}};
  if (!extra.is_null())
    for (const auto& [k, v] : extra.items()) summary[k] = v;
  std::ofstream out = open_out(dir / "summary.json");
  out << summary.dump(1) << '\n';
}

}  // namespace zol2l

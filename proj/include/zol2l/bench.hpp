#ifndef ZOL2L_BENCH_HPP
#define ZOL2L_BENCH_HPP

// Experiment harness: optimizer rosters, baseline tuning, convergence
// curves, ablations and the analysis sweeps, with CSV / JSON output.
//
// Every optimizer in one run sees the same task instances, initial points
// and rng streams: cell (instance i, trial r) uses
// trial_seed = derive_seed(seed, i * trials + r).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "zol2l/baselines.hpp"
#include "zol2l/learned_optimizer.hpp"
#include "zol2l/meta_train.hpp"
#include "zol2l/tasks.hpp"

namespace zol2l {

enum class OptimizerKind {
  kZoSgd,
  kZoSignSgd,
  kZoAdam,
  kZoSzvrG,
  kZoLstm,
  kZoLstmNoQuery,
  kZoLstmNoUpdate,
  kZoLstmGuidedEs,
};

const char* to_string(OptimizerKind k);
OptimizerKind optimizer_kind_from_string(const std::string& s);
bool is_learned(OptimizerKind k);

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::kZoSgd;
  std::string label;  // CSV file stem; defaults to the kind name
  double eta = 0.0;   // baselines and the no-update variant
  double beta1 = 0.9;
  double beta2 = 0.999;
  bool tune = false;  // tune eta (and ADAM betas) before running
  std::optional<OptimizerModel> model;
  std::string model_path;
  std::optional<double> p;      // overrides RunSettings::p
  std::optional<double> alpha;  // overrides the model's update scale

  std::string name() const { return label.empty() ? to_string(kind) : label; }
};

struct RunSettings {
  int iterations = 200;
  int instances = 10;
  int trials = 10;
  int q = 20;
  double mu = kDefaultMu;
  double p = 0.5;
  std::uint64_t seed = 1;
  Split split = Split::kTest;
};

/// One optimizer bound to run settings; owns its per-trajectory state.
class Stepper {
 public:
  virtual ~Stepper() = default;
  virtual void reset(Index d) = 0;
  /// Next iterate; `g` receives the gradient estimate that drove the step.
  virtual Vector step(Optimizee& f, const Vector& theta, TrajectoryRng& rng, Vector* g) = 0;
};

std::unique_ptr<Stepper> make_stepper(const OptimizerSpec& spec, const RunSettings& run);

struct TrialLog {
  std::uint64_t instance = 0;
  int trial = 0;
  double initial_loss = 0.0;
  std::vector<double> loss;              // full-batch loss after iteration t
  std::vector<std::uint64_t> queries;    // cumulative ledger after iteration t
  std::optional<int> first_success;      // 1-based iteration, attack tasks
  bool diverged = false;                 // losses after a divergence repeat the last finite one
};

struct CurveRecord {
  std::string optimizer;
  std::vector<double> loss_mean;
  std::vector<double> loss_std;
  std::vector<double> queries_mean;
  std::vector<double> success_frac;
  std::vector<TrialLog> trials;

  double final_loss_mean() const { return loss_mean.empty() ? 0.0 : loss_mean.back(); }
  /// Mean first-success iteration; trials that never succeed count as the
  /// iteration budget.
  double mean_success_iteration() const;
  double success_rate() const;
};

/// Called after every iteration with the iterate the step started from.
using StepObserver = std::function<void(const TrialLog& trial, Optimizee& f, const Vector& theta_before,
                                        const Vector& g, const Vector& theta_after)>;

CurveRecord run_curve(const OptimizerSpec& spec, const TaskFamily& family, const RunSettings& run,
                      const StepObserver& observer = {});

/// Recomputes the per-iteration aggregates from raw trial logs.
void aggregate(CurveRecord& rec, int iterations);

struct TuneResult {
  double delta = 0.0;
  double eta = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double score = 0.0;
  nlohmann::json table = nlohmann::json::array();
};

/// eta = delta / d. Coarse pass over `deltas`, then delta* x {0.5, 0.75, 1,
/// 1.25, 1.5}; ADAM additionally searches beta1 in {0.9, 0.99} and beta2 in
/// {0.99, 0.996, 0.999}. Scores are mean final losses on validation
/// instances; non-finite trajectories score +inf.
TuneResult tune_baseline(const OptimizerSpec& spec, const TaskFamily& family, RunSettings run,
                         const std::vector<double>& deltas);

struct TaskSpec {
  std::string family = "binary";  // binary | quadratic | attack
  Index d = 20;
  Index n = 500;
  Index batch = 32;
  std::uint64_t seed = 1;
  double c = kAttackDistortionWeight;
  Index grid_rows = kImageSide;
  Index grid_cols = kImageSide;
  std::string classifier;  // attack target file; empty selects the bundled one
};

/// A family together with the classifier it may reference.
struct FamilyHandle {
  std::shared_ptr<const ToyClassifier> classifier;
  std::unique_ptr<TaskFamily> family;
};

FamilyHandle make_family(const TaskSpec& spec);

struct ExperimentConfig {
  TaskSpec task;
  std::vector<OptimizerSpec> roster;
  RunSettings run;
  std::optional<OptimizerModel> model;  // trained optimizer for ablate / cosine / sweeps
  std::string model_path;
  std::vector<double> deltas{std::begin(kDeltaGrid), std::end(kDeltaGrid)};
  int tune_instances = 5;
  int tune_trials = 2;
  std::vector<int> q_sweep{10, 20, 50};
  std::vector<std::pair<Index, Index>> grids{{2, 2}, {4, 4}, {4, 8}, {8, 8}};
  std::vector<double> p_sweep{0.0, 0.25, 0.5, 0.75, 1.0};
  MetaConfig meta;
  std::string out_dir;
  nlohmann::json source = nlohmann::json::object();
};

/// Parses a config document; model paths resolve relative to `base_dir`.
/// Unresolvable models and malformed fields raise ErrorKind::kConfig.
ExperimentConfig parse_experiment_config(const nlohmann::json& doc,
                                         const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::string& path);

/// Resolves `tune` entries in place (no-update variants inherit the tuned
/// ZO-SGD eta). Returns the tuning records keyed by optimizer name.
nlohmann::json tune_roster(std::vector<OptimizerSpec>& roster, const TaskFamily& family,
                           const ExperimentConfig& cfg);

std::vector<CurveRecord> run_benchmark(ExperimentConfig cfg, nlohmann::json* tuning = nullptr);

/// ZO-SGD, ZO-LSTM, ZO-LSTM-no-query, ZO-LSTM-no-update, ZO-LSTM-GuidedES.
std::vector<CurveRecord> run_ablation(ExperimentConfig cfg, nlohmann::json* tuning = nullptr);

struct CosineRow {
  int q = 0;
  double with_query = 0.0;
  double without_query = 0.0;
};

/// Per-step cosine between the estimate and the reference gradient
/// (analytic, else coordinatewise), averaged over the steps before first
/// attack success (other tasks: before the loss first drops below 1.05x its
/// final value; at least one step), then over trials.
std::vector<CosineRow> eval_cosine_similarity(const ExperimentConfig& cfg);
double mean_cosine(const OptimizerSpec& spec, const TaskFamily& family, const RunSettings& run);

struct ComplexityRow {
  Index grid_rows = 0;
  Index grid_cols = 0;
  std::string optimizer;
  double mean_iterations = 0.0;
  double success_rate = 0.0;
};

struct ComplexityReport {
  std::vector<ComplexityRow> rows;
  /// Per optimizer: whether mean iterations are non-decreasing in d.
  nlohmann::json non_decreasing = nlohmann::json::object();
};

ComplexityReport eval_iteration_complexity(ExperimentConfig cfg);

struct FrequencyRow {
  double p = 0.0;
  double mean_iterations = 0.0;
  double loss_at_success = 0.0;
  double success_rate = 0.0;
};

std::vector<FrequencyRow> sweep_sampling_frequency(const ExperimentConfig& cfg);

/// As run_benchmark with a roster that includes ZO-SZVR-G; the CSVs'
/// queries_mean column is the x-axis.
std::vector<CurveRecord> compare_query_budget(ExperimentConfig cfg, nlohmann::json* tuning = nullptr);

void write_curve_csv(const CurveRecord& rec, const std::filesystem::path& path);
void write_raw_csv(const CurveRecord& rec, const std::filesystem::path& path);
/// <optimizer>.csv, <optimizer>.raw.csv and summary.json.
void write_curves(const std::vector<CurveRecord>& curves, const std::filesystem::path& dir,
                  const nlohmann::json& config_echo, const nlohmann::json& extra = {});

nlohmann::json run_settings_to_json(const RunSettings& run);

}  // namespace zol2l

#endif  // ZOL2L_BENCH_HPP

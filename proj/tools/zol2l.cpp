// zol2l: meta-training and benchmark driver.
//
// Exit codes: 0 success, 2 configuration error, 3 numeric failure.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "zol2l/bench.hpp"
#include "zol2l/lstm.hpp"
#include "zol2l/meta_train.hpp"

namespace fs = std::filesystem;
using namespace zol2l;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

ExperimentConfig load(const Globals& g) {
  ExperimentConfig cfg = g.config.empty() ? parse_experiment_config(nlohmann::json::object())
                                          : load_experiment_config(g.config);
  if (g.seed) cfg.run.seed = *g.seed;
  if (!g.out.empty()) cfg.out_dir = g.out;
  if (cfg.out_dir.empty()) cfg.out_dir = "out";
  return cfg;
}

void write_json(const fs::path& path, const nlohmann::json& doc) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kUnavailable, "cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

nlohmann::json echo(const ExperimentConfig& cfg) {
  return {{"source", cfg.source}, {"run", run_settings_to_json(cfg.run)}};
}

void print_finals(const std::vector<CurveRecord>& curves) {
  for (const auto& c : curves)
    std::printf("%-22s final loss %.6g  queries %.0f  success %.2f\n", c.optimizer.c_str(), c.final_loss_mean(),
                c.queries_mean.empty() ? 0.0 : c.queries_mean.back(), c.success_rate());
}

int train(const Globals& g, Phase phase) {
  ExperimentConfig cfg = load(g);
  cfg.meta.phase = phase;
  cfg.meta.optimizer.q = cfg.run.q;
  cfg.meta.optimizer.mu = cfg.run.mu;
  FamilyHandle h = make_family(cfg.task);
  if (phase == Phase::kUpdateRnn && !h.family->has_gradient())
    cfg.meta.gradient_source = GradientSource::kCoordinatewiseZo;

  OptimizerModel model;
  model.q = cfg.run.q;
  model.mu = cfg.run.mu;
  model.p = cfg.meta.eval_p;
  model.alpha = cfg.meta.optimizer.alpha;
  TrainingReport report;
  if (phase == Phase::kUpdateRnn) {
    report = train_update_rnn(*h.family, cfg.meta, cfg.run.seed);
    model.update = report.params;
  } else {
    if (!cfg.model) throw Error(ErrorKind::kConfig, "train-query needs 'model' with a trained UpdateRNN");
    if (!h.family->has_gradient()) cfg.meta.gradient_source = GradientSource::kCoordinatewiseZo;
    report = train_query_rnn(cfg.model->update, *h.family, cfg.meta, cfg.run.seed);
    model.update = cfg.model->update;
    model.alpha = cfg.model->alpha;
    model.query = report.params;
  }
  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);
  save_optimizer(model, (dir / "optimizer.json").string());
  write_json(dir / "training.json", training_manifest(cfg.meta, cfg.run.seed, report));
  std::printf("validation loss %.6g -> %.6g (best iteration %d, %d skipped)\n", report.initial_validation,
              report.best_validation, report.best_iteration, report.skipped);
  return 0;
}

int gradcheck(const Globals& g) {
  const std::uint64_t seed = g.seed.value_or(1);
  int failures = 0;
  for (Index input_dim : {Index{1}, Index{2}}) {
    LstmParams<double> p = init_params(input_dim, seed);
    Rng rng(derive_seed(seed, 7));
    p.head_w = rng.normal_vector(kLstmHidden).transpose() * 0.3;
    p.head_b = 0.1;
    const double one = gradient_check(p, 1, derive_seed(seed, 1));
    const double many = gradient_check(p, 20, derive_seed(seed, 2));
    const bool ok = one < 1e-5 && many < 1e-4;
    failures += ok ? 0 : 1;
    std::printf("input_dim %ld: 1-step %.3e, 20-step %.3e %s\n", static_cast<long>(input_dim), one, many,
                ok ? "ok" : "FAIL");
  }
  return failures ? 3 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"zeroth-order learned optimizer toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "experiment config (JSON)");
  app.add_option("--seed", g.seed, "master seed");
  app.add_option("--out", g.out, "output directory");

  auto* train_update = app.add_subcommand("train-update", "meta-train the UpdateRNN");
  auto* train_query = app.add_subcommand("train-query", "meta-train the QueryRNN with the UpdateRNN frozen");
  auto* tune = app.add_subcommand("tune", "tune baseline learning rates");
  auto* bench = app.add_subcommand("bench", "convergence curves for the roster");
  auto* ablate = app.add_subcommand("ablate", "ablation roster");
  auto* cosine = app.add_subcommand("cosine", "cosine similarity with and without the QueryRNN");
  auto* dimscale = app.add_subcommand("dimscale", "iterations to first attack success vs dimension");
  auto* freq = app.add_subcommand("freq-sweep", "sampling-frequency sweep");
  auto* budget = app.add_subcommand("query-budget", "loss vs queries including ZO-SZVR-G");
  auto* grad = app.add_subcommand("gradcheck", "LSTM backward pass vs finite differences");
  for (auto* sub : {train_update, train_query, tune, bench, ablate, cosine, dimscale, freq, budget, grad}) {
    sub->add_option("--config", g.config, "experiment config (JSON)");
    sub->add_option("--seed", g.seed, "master seed");
    sub->add_option("--out", g.out, "output directory");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train_update->parsed()) return train(g, Phase::kUpdateRnn);
    if (train_query->parsed()) return train(g, Phase::kQueryRnn);
    if (grad->parsed()) return gradcheck(g);

    ExperimentConfig cfg = load(g);
    const fs::path dir(cfg.out_dir);
    nlohmann::json tuning;

    if (tune->parsed()) {
      FamilyHandle h = make_family(cfg.task);
      tuning = tune_roster(cfg.roster, *h.family, cfg);
      write_json(dir / "tuning.json", {{"config", echo(cfg)}, {"tuning", tuning}});
      for (const auto& s : cfg.roster) std::printf("%-22s eta %.6g\n", s.name().c_str(), s.eta);
    } else if (bench->parsed() || ablate->parsed() || budget->parsed()) {
      std::vector<CurveRecord> curves = bench->parsed()    ? run_benchmark(cfg, &tuning)
                                        : ablate->parsed() ? run_ablation(cfg, &tuning)
                                                           : compare_query_budget(cfg, &tuning);
      write_curves(curves, dir, echo(cfg), {{"tuning", tuning}});
      print_finals(curves);
    } else if (cosine->parsed()) {
      const auto rows = eval_cosine_similarity(cfg);
      fs::create_directories(dir);
      std::ofstream csv(dir / "cosine.csv");
      csv << "q,with_query,without_query\n";
      nlohmann::json table = nlohmann::json::array();
      for (const auto& r : rows) {
        csv << r.q << ',' << r.with_query << ',' << r.without_query << '\n';
        table.push_back({{"q", r.q}, {"with_query", r.with_query}, {"without_query", r.without_query}});
        std::printf("q=%d  with %.4f  without %.4f\n", r.q, r.with_query, r.without_query);
      }
      write_json(dir / "summary.json", {{"config", echo(cfg)}, {"cosine", table}});
    } else if (dimscale->parsed()) {
      const ComplexityReport rep = eval_iteration_complexity(cfg);
      fs::create_directories(dir);
      std::ofstream csv(dir / "dimscale.csv");
      csv << "d,grid_rows,grid_cols,optimizer,mean_iterations,success_rate\n";
      nlohmann::json table = nlohmann::json::array();
      for (const auto& r : rep.rows) {
        const Index d = r.grid_rows * r.grid_cols;
        csv << d << ',' << r.grid_rows << ',' << r.grid_cols << ',' << r.optimizer << ',' << r.mean_iterations
            << ',' << r.success_rate << '\n';
        table.push_back({{"d", d}, {"optimizer", r.optimizer}, {"mean_iterations", r.mean_iterations},
                         {"success_rate", r.success_rate}});
        std::printf("d=%-3ld %-22s iterations %.2f  success %.2f\n", static_cast<long>(d), r.optimizer.c_str(),
                    r.mean_iterations, r.success_rate);
      }
      write_json(dir / "summary.json",
                 {{"config", echo(cfg)}, {"rows", table}, {"non_decreasing", rep.non_decreasing}});
    } else if (freq->parsed()) {
      const auto rows = sweep_sampling_frequency(cfg);
      fs::create_directories(dir);
      std::ofstream csv(dir / "freq_sweep.csv");
      csv << "p,mean_iterations,loss_at_success,success_rate\n";
      nlohmann::json table = nlohmann::json::array();
      for (const auto& r : rows) {
        csv << r.p << ',' << r.mean_iterations << ',' << r.loss_at_success << ',' << r.success_rate << '\n';
        table.push_back({{"p", r.p}, {"mean_iterations", r.mean_iterations},
                         {"loss_at_success", std::isfinite(r.loss_at_success) ? nlohmann::json(r.loss_at_success)
                                                                               : nlohmann::json(nullptr)},
                         {"success_rate", r.success_rate}});
        std::printf("p=%.2f  iterations %.2f  loss at success %.4g  success %.2f\n", r.p, r.mean_iterations,
                    r.loss_at_success, r.success_rate);
      }
      write_json(dir / "summary.json", {{"config", echo(cfg)}, {"rows", table}});
    }
    return 0;
  } catch (const Error& e) {
    std::fprintf(stderr, "error (%s): %s\n", to_string(e.kind()), e.what());
    switch (e.kind()) {
      case ErrorKind::kNonFinite: return 3;
      default: return 2;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

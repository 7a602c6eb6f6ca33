// Command-line front end: ingest, features, calibrate-spectrum, train,
// evaluate, export-embeddings, plot, smoke. Every verb takes --config and
// repeatable --set key=value overrides.

#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "lungsc/augment.hpp"
#include "lungsc/error.hpp"
#include "lungsc/experiment.hpp"
#include "lungsc/log.hpp"

namespace fs = std::filesystem;
using namespace lungsc;

namespace {

struct CommonArgs {
  std::string config;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "experiment config (JSON)");
  cmd->add_option("--set", args.overrides, "override, e.g. --set train.epochs=10")
      ->take_all();
}

ExperimentConfig load_config(const CommonArgs& args) {
  if (args.config.empty())
    return ExperimentConfig::from_json(nlohmann::json::object(), args.overrides);
  return ExperimentConfig::load(args.config, args.overrides);
}

void print_report(const MetricsReport& r) {
  std::printf("fold=%d n=%lld SP=%.4f SE=%.4f AS=%.4f HS=%.4f", r.fold,
              static_cast<long long>(r.n_units), r.SP, r.SE, r.AS, r.HS);
  if (r.f1) std::printf(" P+=%.4f Se=%.4f F1=%.4f", *r.precision_pos, *r.sensitivity_pos, *r.f1);
  std::printf("\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lung sound classification pipeline"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string out_path, checkpoint;
  int fold = 0;
  std::string role = "test";
  std::string smoke_dir = "smoke_work";
  uint64_t smoke_seed = 7;
  int smoke_epochs = 5;

  auto* ingest_cmd = app.add_subcommand("ingest", "parse the corpus, build splits, write manifest");
  add_common(ingest_cmd, args);
  ingest_cmd->add_option("--out", out_path, "manifest output path");

  auto* features_cmd = app.add_subcommand("features", "extract features into the cache");
  add_common(features_cmd, args);
  features_cmd->add_option("--fold", fold, "fold to prepare");

  auto* calib_cmd = app.add_subcommand("calibrate-spectrum", "fit and store correction coefficients");
  add_common(calib_cmd, args);
  calib_cmd->add_option("--fold", fold, "fold to calibrate");
  calib_cmd->add_option("--out", out_path, "coefficient file path");

  auto* train_cmd = app.add_subcommand("train", "run the configured folds and runs");
  add_common(train_cmd, args);

  auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on a fold's test split");
  add_common(eval_cmd, args);
  eval_cmd->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
  eval_cmd->add_option("--fold", fold, "fold to evaluate");

  auto* export_cmd = app.add_subcommand("export-embeddings", "write pooled embeddings per unit");
  add_common(export_cmd, args);
  export_cmd->add_option("--checkpoint", checkpoint, "checkpoint path")->required();
  export_cmd->add_option("--fold", fold, "fold");
  export_cmd->add_option("--split", role, "train|validation|test");
  export_cmd->add_option("--out", out_path, "output TSV")->required();

  auto* plot_cmd = app.add_subcommand("plot", "emit comparison charts from a results table");
  add_common(plot_cmd, args);
  plot_cmd->add_option("--out", out_path, "output SVG");

  auto* smoke_cmd = app.add_subcommand("smoke", "synthetic end-to-end run of all four modes");
  add_common(smoke_cmd, args);
  smoke_cmd->add_option("--workdir", smoke_dir, "working directory");
  smoke_cmd->add_option("--seed", smoke_seed, "seed");
  smoke_cmd->add_option("--epochs", smoke_epochs, "epochs per mode");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest_cmd) {
      const ExperimentConfig cfg = load_config(args);
      const Corpus corpus = build_corpus(cfg);
      const SplitPlan plan = plan_split(corpus, cfg);
      const std::string path =
          out_path.empty() ? (fs::path(cfg.output_dir()) / "manifest.csv").string() : out_path;
      fs::create_directories(fs::path(path).parent_path().empty()
                                 ? "."
                                 : fs::path(path).parent_path().string());
      write_manifest(path, corpus_to_manifest(corpus, &plan, 0));
      std::printf("units: %zu\n", corpus.units.size());
      for (const auto& [label, count] : corpus.label_counts())
        std::printf("label %d: %lld\n", label, static_cast<long long>(count));
      int64_t total = static_cast<int64_t>(corpus.units.size());
      for (const auto& [dev, count] : corpus.device_counts())
        std::printf("device %s: %lld (%.1f%%)\n", dev.c_str(), static_cast<long long>(count),
                    100.0 * static_cast<double>(count) / static_cast<double>(total));
      std::printf("manifest: %s\n", path.c_str());
    } else if (*features_cmd) {
      const ExperimentConfig cfg = load_config(args);
      const Corpus corpus = build_corpus(cfg);
      const SplitPlan plan = plan_split(corpus, cfg);
      const PreparedFold prepared = prepare_fold(corpus, plan, fold, cfg);
      std::printf("fold %d: %zu segments (train %zu / val %zu / test %zu)\n", fold,
                  prepared.features.size(), prepared.train_idx.size(), prepared.val_idx.size(),
                  prepared.test_idx.size());
      std::printf("normalization: mean %.6f stddev %.6f over %lld values\n",
                  prepared.norm_stats.mean, prepared.norm_stats.stddev(),
                  static_cast<long long>(prepared.norm_stats.count));
    } else if (*calib_cmd) {
      const ExperimentConfig cfg = load_config(args);
      const Corpus corpus = build_corpus(cfg);
      const SplitPlan plan = plan_split(corpus, cfg);
      const PreparedFold prepared = prepare_fold(corpus, plan, fold, cfg);
      const std::string path =
          out_path.empty()
              ? (fs::path(cfg.output_dir()) / ("speccorr_f" + std::to_string(fold) + ".json")).string()
              : out_path;
      fs::create_directories(cfg.output_dir());
      prepared.corrections.save(path);
      std::printf("devices calibrated: %zu -> %s\n", prepared.corrections.by_device.size(),
                  path.c_str());
      std::printf("test-split device gap: %.6g -> %.6g\n", prepared.device_gap_before,
                  prepared.device_gap_after);
    } else if (*train_cmd) {
      const ExperimentConfig cfg = load_config(args);
      const ExperimentResult result = run_experiment(cfg);
      for (const auto& run : result.runs) {
        std::printf("fold=%d run=%d best_epoch=%d ", run.fold, run.run, run.fit.best_epoch);
        print_report(run.report);
      }
      std::printf("results: %s\n", result.results_csv.c_str());
    } else if (*eval_cmd) {
      const ExperimentConfig cfg = load_config(args);
      print_report(evaluate_checkpoint(checkpoint, cfg, fold));
    } else if (*export_cmd) {
      const ExperimentConfig cfg = load_config(args);
      SplitRole r = SplitRole::test;
      if (role == "train") r = SplitRole::train;
      else if (role == "validation") r = SplitRole::validation;
      else if (role != "test") throw ConfigError("--split must be train|validation|test");
      export_embeddings(checkpoint, cfg, fold, r, out_path);
      std::printf("embeddings: %s\n", out_path.c_str());
    } else if (*plot_cmd) {
      const ExperimentConfig cfg = load_config(args);
      const std::string csv = (fs::path(cfg.output_dir()) / "results.csv").string();
      const std::string svg =
          out_path.empty() ? (fs::path(cfg.output_dir()) / "comparison.svg").string() : out_path;
      if (emit_plots(csv, svg)) std::printf("chart: %s\n", svg.c_str());
    } else if (*smoke_cmd) {
      const SmokeResult result = run_smoke(smoke_dir, smoke_seed, smoke_epochs);
      for (const auto& [mode, report] : result.by_mode) {
        std::printf("%-20s AS=%.4f SP=%.4f SE=%.4f (%.1fs)\n", mode.c_str(), report.AS,
                    report.SP, report.SE, result.seconds_by_mode.at(mode));
      }
      std::printf("device gap: %.6g -> %.6g (%.1f%% reduction)\n", result.device_gap_before,
                  result.device_gap_after,
                  100.0 * (1.0 - result.device_gap_after / std::max(result.device_gap_before, 1e-12)));
      std::printf("deterministic repeat: %s\n", result.deterministic ? "yes" : "NO");
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

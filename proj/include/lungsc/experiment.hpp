#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lungsc/config.hpp"
#include "lungsc/cotuning.hpp"
#include "lungsc/metrics.hpp"

namespace lungsc {

// One classifiable unit: a respiratory cycle (ALSC tasks) or a whole
// recording (RDC tasks).
struct Unit {
  std::string unit_id;
  std::string recording_stem;  // split files and k-folding operate on recordings
  std::string kind;            // "cycle" | "recording"
  std::string path;
  std::string patient_id;
  std::string device_token;
  bool device_calibratable = true;
  double begin_s = 0.0;
  double end_s = 0.0;  // 0 = to the end of the file
  int label = -1;
};

struct Corpus {
  Task task = Task::alsc4;
  std::vector<Unit> units;
  std::map<std::string, std::string> patient_diagnosis;

  std::map<int, int64_t> label_counts() const;
  std::map<std::string, int64_t> device_counts() const;
};

Corpus build_corpus(const ExperimentConfig& cfg);
SplitPlan plan_split(const Corpus& corpus, const ExperimentConfig& cfg);
std::vector<ManifestRow> corpus_to_manifest(const Corpus& corpus, const SplitPlan* plan,
                                            int fold);

// Per-fold feature pipeline output: one normalized log-mel per segment;
// model inputs are materialized lazily by dataset().
struct PreparedFold {
  std::vector<LogMelFeature> features;
  std::vector<int> labels;
  std::vector<std::string> unit_of_segment;
  std::vector<int64_t> train_idx, val_idx, test_idx;
  InputLayout layout = InputLayout::replicate3;
  NormStats norm_stats;
  CorrectionTable corrections;
  // inter-device mean-spectrum L2 gap on test segments, before/after correction
  double device_gap_before = 0.0;
  double device_gap_after = 0.0;

  Dataset dataset(const std::vector<int64_t>& idx) const;
};

PreparedFold prepare_fold(const Corpus& corpus, const SplitPlan& plan, int fold,
                          const ExperimentConfig& cfg);

struct RunResult {
  int fold = 0;
  int run = 0;
  MetricsReport report;
  FitResult fit;
  std::string checkpoint_path;
};

struct ExperimentResult {
  std::vector<RunResult> runs;
  std::string results_csv;
  double device_gap_before = 0.0;
  double device_gap_after = 0.0;
};

// The full pipeline: ingest -> split -> features (+ spectrum correction)
// -> augment -> build -> fit -> vote -> metrics, over every configured
// fold and run. Rows already present in the results CSV (same config hash,
// fold and run) are skipped, which makes interrupted sweeps resumable.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

// Re-evaluates a saved checkpoint on a fold's test split.
MetricsReport evaluate_checkpoint(const std::string& checkpoint_path,
                                  const ExperimentConfig& cfg, int fold);

// One row per unit: unit id, label, then the unit's mean pooled embedding.
void export_embeddings(const std::string& checkpoint_path, const ExperimentConfig& cfg,
                       int fold, SplitRole role, const std::string& out_path);

// Grouped bar chart (mode x depth -> AS, std error bars) rendered as SVG.
// Returns false (with a warning) when the table has no rows.
bool emit_plots(const std::string& results_csv, const std::string& out_svg);

// Synthetic corpus of band-limited tones vs filtered noise, recorded through
// two pseudo-devices with opposite spectral tilts. Writes wavs, annotation
// files and a generic manifest; labels use the crackle flag.
// classes=2 gives tone/noise; classes=4 splits each by band (source task).
void make_synthetic_corpus(const std::string& dir, int n_clips, int classes, uint64_t seed);

struct SmokeResult {
  std::map<std::string, MetricsReport> by_mode;
  std::map<std::string, double> seconds_by_mode;
  double device_gap_before = 0.0;
  double device_gap_after = 0.0;
  bool deterministic = false;
  std::string work_dir;
};

// End-to-end desk-scale run: synthetic corpora, a briefly pre-trained tiny
// source model, then all four fine-tuning modes.
SmokeResult run_smoke(const std::string& work_dir, uint64_t seed, int epochs = 5);

// Writes backbone tensors plus the target head as "fc.*" so a trained
// checkpoint can serve as the pretrained archive of a later run.
void export_pretrained_archive(const Model& model, const std::string& path);

void append_results_csv(const std::string& path, const ExperimentConfig& cfg,
                        const RunResult& result);
bool results_csv_has(const std::string& path, const std::string& config_hash, int fold, int run);

}  // namespace lungsc

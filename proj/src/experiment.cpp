#include "lungsc/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "lungsc/error.hpp"
#include "lungsc/log.hpp"
#include "lungsc/wav.hpp"

namespace fs = std::filesystem;

namespace lungsc {

std::map<int, int64_t> Corpus::label_counts() const {
  std::map<int, int64_t> out;
  for (const auto& u : units) ++out[u.label];
  return out;
}

std::map<std::string, int64_t> Corpus::device_counts() const {
  std::map<std::string, int64_t> out;
  for (const auto& u : units) ++out[u.device_token];
  return out;
}

namespace {

bool is_cycle_task(Task t) {
  return t == Task::alsc4 || t == Task::alsc2 || t == Task::crackle2;
}

}  // namespace

Corpus build_corpus(const ExperimentConfig& cfg) {
  Corpus corpus;
  corpus.task = cfg.task();
  const bool cycles = is_cycle_task(corpus.task);

  std::vector<IngestedRecording> recordings;
  bool icbhi = cfg.corpus_kind() == "icbhi";
  if (icbhi) {
    std::map<std::string, std::string> diagnosis;
    if (!cfg.diagnosis_file().empty()) diagnosis = read_diagnosis_table(cfg.diagnosis_file());
    recordings = scan_icbhi_dir(cfg.data_root(), diagnosis);
  } else {
    recordings = load_generic_corpus(cfg.generic_manifest());
  }
  if (recordings.empty()) throw IoError("corpus is empty");

  int64_t dropped = 0;
  for (const auto& rec : recordings) {
    if (!rec.meta.diagnosis.empty())
      corpus.patient_diagnosis[rec.meta.patient_id] = rec.meta.diagnosis;

    Unit base;
    base.recording_stem = icbhi ? rec.meta.stem() : rec.meta.recording_index;
    base.path = rec.meta.path;
    base.patient_id = rec.meta.patient_id;
    base.device_token = rec.meta.device.token;
    base.device_calibratable = !icbhi || rec.meta.device.kind != DeviceKind::other;

    if (cycles) {
      int idx = 0;
      for (const auto& c : rec.cycles) {
        Unit u = base;
        u.kind = "cycle";
        u.unit_id = base.recording_stem + "#" + std::to_string(idx++);
        u.begin_s = c.begin_s;
        u.end_s = c.end_s;
        u.label = cycle_label(c.crackle, c.wheeze, corpus.task).label;
        corpus.units.push_back(std::move(u));
      }
      if (rec.cycles.empty()) ++dropped;
    } else {
      Unit u = base;
      u.kind = "recording";
      u.unit_id = base.recording_stem;
      u.begin_s = 0.0;
      u.end_s = 0.0;
      u.label = diagnosis_label(rec.meta.diagnosis, corpus.task).label;
      corpus.units.push_back(std::move(u));
    }
  }
  if (dropped > 0)
    warn(std::to_string(dropped) + " recording(s) without cycle annotations were skipped");
  if (corpus.units.empty()) throw IoError("no usable units in the corpus");
  return corpus;
}

SplitPlan plan_split(const Corpus& corpus, const ExperimentConfig& cfg) {
  // folding is recording-granular; cycles inherit their recording's fold
  std::map<std::string, std::string> stem_to_patient;
  for (const auto& u : corpus.units) stem_to_patient[u.recording_stem] = u.patient_id;
  std::vector<SplitUnit> split_units;
  split_units.reserve(stem_to_patient.size());
  for (const auto& [stem, patient] : stem_to_patient) split_units.push_back({stem, patient});

  return build_split(split_units, cfg.split_scheme(), cfg.split_k(),
                     cfg.validation_fraction(), cfg.seed(), corpus.patient_diagnosis,
                     cfg.split_file());
}

std::vector<ManifestRow> corpus_to_manifest(const Corpus& corpus, const SplitPlan* plan,
                                            int fold) {
  std::vector<ManifestRow> rows;
  rows.reserve(corpus.units.size());
  for (const auto& u : corpus.units) {
    ManifestRow r;
    r.unit_id = u.unit_id;
    r.kind = u.kind;
    r.path = u.path;
    r.patient_id = u.patient_id;
    r.device = u.device_token;
    r.begin_s = u.begin_s;
    r.end_s = u.end_s;
    r.label = u.label;
    r.fold = plan ? plan->fold_assignments.at(u.recording_stem) : -1;
    (void)fold;
    r.provenance = "orig";
    rows.push_back(std::move(r));
  }
  return rows;
}

namespace {

struct RowWork {
  const Unit* unit = nullptr;
  OpChain chain;
  SplitRole role = SplitRole::train;
  std::string row_id;
};

// whole-file decode + resample cache
class AudioCache {
 public:
  explicit AudioCache(int target_sr) : target_sr_(target_sr) {}

  const std::vector<double>& get(const std::string& path) {
    auto it = cache_.find(path);
    if (it != cache_.end()) return it->second;
    WavData wav = read_wav(path);
    std::vector<double> resampled = resample(wav.samples, wav.sample_rate, target_sr_);
    return cache_.emplace(path, std::move(resampled)).first->second;
  }

 private:
  int target_sr_;
  std::map<std::string, std::vector<double>> cache_;
};

std::vector<double> slice_unit(const std::vector<double>& samples, const Unit& u, int sr) {
  if (u.kind == "recording") return samples;
  const auto begin = static_cast<int64_t>(std::llround(u.begin_s * sr));
  const auto end = static_cast<int64_t>(std::llround(u.end_s * sr));
  const int64_t n = static_cast<int64_t>(samples.size());
  const int64_t b = std::clamp<int64_t>(begin, 0, n);
  const int64_t e = std::clamp<int64_t>(end, 0, n);
  if (e <= b) return {};
  return std::vector<double>(samples.begin() + b, samples.begin() + e);
}

double mean_pairwise_gap(const std::map<std::string, ProfileAccumulator>& by_device) {
  std::vector<std::vector<double>> means;
  for (const auto& [dev, acc] : by_device)
    if (acc.count > 0) means.push_back(acc.finish(dev).mean_spectrum);
  if (means.size() < 2) return 0.0;
  double acc = 0.0;
  int64_t pairs = 0;
  for (size_t i = 0; i < means.size(); ++i)
    for (size_t j = i + 1; j < means.size(); ++j) {
      double l2 = 0.0;
      for (size_t b = 0; b < means[i].size(); ++b) {
        const double d = means[i][b] - means[j][b];
        l2 += d * d;
      }
      acc += std::sqrt(l2);
      ++pairs;
    }
  return acc / static_cast<double>(pairs);
}

}  // namespace

PreparedFold prepare_fold(const Corpus& corpus, const SplitPlan& plan, int fold,
                          const ExperimentConfig& cfg) {
  const SegmentSpec seg_spec = cfg.segment_spec();
  const SpectralConfig spec_cfg = cfg.spectral_config();
  const InputLayout layout = cfg.input_layout();
  const CalibPreset preset = cfg.calib_preset();
  const int sr = seg_spec.sample_rate_hz;

  // 1. roles + the augmented training recipe
  std::vector<RowWork> rows;
  std::vector<ManifestRow> train_orig;
  std::map<const std::string*, const Unit*> unit_by_id;
  std::map<std::string, const Unit*> unit_index;
  for (const auto& u : corpus.units) unit_index[u.unit_id] = &u;

  std::map<int, int64_t> train_counts;
  for (const auto& u : corpus.units) {
    const SplitRole role = plan.role(u.recording_stem, fold);
    if (role == SplitRole::train) {
      ManifestRow r;
      r.unit_id = u.unit_id;
      r.kind = u.kind;
      r.path = u.path;
      r.patient_id = u.patient_id;
      r.device = u.device_token;
      r.begin_s = u.begin_s;
      r.end_s = u.end_s;
      r.label = u.label;
      r.fold = fold;
      r.provenance = "orig";
      train_orig.push_back(std::move(r));
      ++train_counts[u.label];
    } else {
      RowWork w;
      w.unit = &u;
      w.role = role;
      w.row_id = u.unit_id;
      rows.push_back(std::move(w));
    }
  }
  if (train_orig.empty()) throw InsufficientPatients("fold has no training units");

  std::vector<ManifestRow> train_rows;
  if (cfg.augment_enabled()) {
    AugmentPlan aplan = build_balance_plan(train_counts, corpus.task, cfg.seed());
    cfg.apply_augment_overrides(aplan);
    train_rows = expand_balance_plan(train_orig, aplan);
  } else {
    train_rows = train_orig;
  }
  for (const auto& r : train_rows) {
    RowWork w;
    const std::string source = r.source_id.empty() ? r.unit_id : r.source_id;
    auto it = unit_index.find(source);
    if (it == unit_index.end()) throw IoError("augmented row references unknown unit " + source);
    w.unit = it->second;
    w.role = SplitRole::train;
    w.chain = OpChain::parse(r.provenance);
    w.row_id = r.unit_id;
    rows.push_back(std::move(w));
  }
  (void)unit_by_id;

  // 2. device profiles from original training segments
  AudioCache audio(sr);
  std::map<std::string, ProfileAccumulator> train_profiles;
  for (const auto& r : train_orig) {
    const Unit& u = *unit_index.at(r.unit_id);
    if (!u.device_calibratable) continue;
    const std::vector<double> sliced = slice_unit(audio.get(u.path), u, sr);
    if (sliced.empty()) continue;
    for (const auto& s : segment(sliced, seg_spec)) {
      const Stft mags = stft_magnitude(s.samples, spec_cfg);
      train_profiles[u.device_token].add(segment_mean_spectrum(mags));
    }
  }

  PreparedFold out;
  out.corrections.fold = fold;
  out.corrections.config_hash = cfg.hash();
  if (preset != CalibPreset::no_calib) {
    std::vector<DeviceSpectrumProfile> profiles;
    std::vector<std::string> all_devices;
    for (const auto& [dev, acc] : train_profiles) {
      profiles.push_back(acc.finish(dev));
      all_devices.push_back(dev);
    }
    if (profiles.empty()) {
      warn("no calibratable devices in the training fold; skipping spectrum correction");
    } else {
      const std::vector<std::string> refs = preset_reference_devices(preset, all_devices);
      const std::vector<double> ref = reference_spectrum(profiles, refs);
      out.corrections.reference_set = refs;
      for (const auto& p : profiles)
        out.corrections.by_device[p.device] = correction_coefficients(ref, p);
    }
  }

  // 3. features for every row; unnormalized log-mels first
  const std::vector<double> canonical_bank = mel_filterbank(spec_cfg);
  std::map<std::string, ProfileAccumulator> test_raw, test_corrected;
  std::set<std::string> warned_devices;
  out.layout = layout;

  for (const auto& w : rows) {
    const Unit& u = *w.unit;
    std::vector<double> samples = slice_unit(audio.get(u.path), u, sr);
    if (samples.empty()) {
      warn("unit '" + u.unit_id + "' has no samples after rounding, dropped");
      continue;
    }
    if (!w.chain.time_ops.empty()) samples = apply_time_ops(samples, w.chain, sr);

    std::vector<double> bank;
    if (w.chain.has_vtlp) {
      SpectralConfig warped = spec_cfg;
      warped.warp_factor = w.chain.vtlp_alpha;
      warped.warp_fhi_hz = w.chain.vtlp_fhi_hz;
      bank = mel_filterbank(warped);
    }
    const std::vector<double>& use_bank = w.chain.has_vtlp ? bank : canonical_bank;

    const CorrectionCoefficients* coeffs = nullptr;
    auto cit = out.corrections.by_device.find(u.device_token);
    if (preset != CalibPreset::no_calib) {
      if (cit != out.corrections.by_device.end()) {
        coeffs = &cit->second;
      } else if (u.device_calibratable && warned_devices.insert(u.device_token).second) {
        warn("device '" + u.device_token + "' has no training profile; left uncorrected");
      }
    }

    int seg_idx = 0;
    for (const auto& s : segment(samples, seg_spec)) {
      Stft mags = stft_magnitude(s.samples, spec_cfg);
      if (w.role == SplitRole::test && w.chain.empty())
        test_raw[u.device_token].add(segment_mean_spectrum(mags));
      if (coeffs) mags = apply_correction(mags, *coeffs);
      if (w.role == SplitRole::test && w.chain.empty())
        test_corrected[u.device_token].add(segment_mean_spectrum(mags));

      LogMelFeature feat = logmel(mags, use_bank, spec_cfg);
      feat.segment_id = w.row_id + "@" + std::to_string(seg_idx++);
      feat.device = u.device_token;
      if (w.chain.flip) feat = flip_frequency(feat);

      const int64_t idx = static_cast<int64_t>(out.features.size());
      out.features.push_back(std::move(feat));
      out.labels.push_back(u.label);
      out.unit_of_segment.push_back(u.unit_id);
      switch (w.role) {
        case SplitRole::train: out.train_idx.push_back(idx); break;
        case SplitRole::validation: out.val_idx.push_back(idx); break;
        case SplitRole::test: out.test_idx.push_back(idx); break;
      }
    }
  }
  if (out.train_idx.empty() || out.test_idx.empty())
    throw InsufficientPatients("fold " + std::to_string(fold) + " has an empty train or test side");

  out.device_gap_before = mean_pairwise_gap(test_raw);
  out.device_gap_after = mean_pairwise_gap(test_corrected);

  // 4. training-fold normalization statistics, frozen for everything
  for (int64_t i : out.train_idx) out.norm_stats.add_all(out.features[static_cast<size_t>(i)].values);
  for (auto& f : out.features) normalize(f, out.norm_stats);
  return out;
}

Dataset PreparedFold::dataset(const std::vector<int64_t>& idx) const {
  Dataset ds;
  ds.size = static_cast<int64_t>(idx.size());
  const PreparedFold* self = this;
  const std::vector<int64_t> ids = idx;
  ds.get = [self, ids](int64_t i, ModelInput& x, int& label) {
    const int64_t k = ids[static_cast<size_t>(i)];
    x = to_model_input(self->features[static_cast<size_t>(k)], self->layout);
    label = self->labels[static_cast<size_t>(k)];
  };
  return ds;
}

namespace {

CategoryRelationship build_relationship(Model& model, const PreparedFold& prepared,
                                        const ExperimentConfig& cfg, uint64_t seed) {
  // a single frozen forward pass of the pre-trained model on the
  // validation split supplies the source probabilities
  std::vector<int64_t> idx = prepared.val_idx;
  if (idx.empty()) {
    warn("empty validation split; estimating the relationship on training data");
    idx = prepared.train_idx;
  }
  const int64_t n_target = task_num_classes(cfg.task());
  std::vector<std::vector<double>> probs;
  std::vector<int> labels;
  Dataset ds = prepared.dataset(idx);
  ModelInput input;
  int label = 0;
  for (int64_t i = 0; i < ds.size; ++i) {
    ds.get(i, input, label);
    const Tensor x = model_input_to_tensor(input);
    const Tensor pooled = model.backbone->forward(x, false);
    const Tensor logits = model.source_head->forward(pooled, false);
    std::vector<double> p(static_cast<size_t>(logits.shape[1]));
    double mx = -1e300;
    for (double v : logits.data) mx = std::max(mx, v);
    double z = 0.0;
    for (size_t k = 0; k < p.size(); ++k) {
      p[k] = std::exp(logits.data[k] - mx);
      z += p[k];
    }
    for (double& v : p) v /= z;
    probs.push_back(std::move(p));
    labels.push_back(label);
  }

  auto estimate = [&](const std::vector<std::vector<double>>& pr,
                      const std::vector<int>& lb) {
    if (cfg.relationship_method() == "reverse") {
      const int64_t n_source = static_cast<int64_t>(pr.front().size());
      std::vector<double> prior(static_cast<size_t>(n_source),
                                1.0 / static_cast<double>(n_source));
      return relationship_reverse(pr, lb, n_target, prior, seed);
    }
    return relationship_direct(pr, lb, n_target);
  };
  try {
    return estimate(probs, labels);
  } catch (const MissingClassSamples&) {
    warn("validation split lacks a class; adding training data for the relationship");
    Dataset tds = prepared.dataset(prepared.train_idx);
    for (int64_t i = 0; i < tds.size; ++i) {
      tds.get(i, input, label);
      const Tensor x = model_input_to_tensor(input);
      const Tensor pooled = model.backbone->forward(x, false);
      const Tensor logits = model.source_head->forward(pooled, false);
      std::vector<double> p(static_cast<size_t>(logits.shape[1]));
      double mx = -1e300;
      for (double v : logits.data) mx = std::max(mx, v);
      double z = 0.0;
      for (size_t k = 0; k < p.size(); ++k) {
        p[k] = std::exp(logits.data[k] - mx);
        z += p[k];
      }
      for (double& v : p) v /= z;
      probs.push_back(std::move(p));
      labels.push_back(label);
    }
    return estimate(probs, labels);
  }
}

MetricsReport vote_and_score(const PreparedFold& prepared, Model& model, Task task, int fold,
                             uint64_t run_seed) {
  Dataset test = prepared.dataset(prepared.test_idx);
  const auto probs = predict_proba(model, test);

  std::map<std::string, std::vector<int>> unit_preds;
  std::map<std::string, std::vector<std::vector<double>>> unit_probs;
  std::map<std::string, int> unit_label;
  for (size_t i = 0; i < probs.size(); ++i) {
    const int64_t k = prepared.test_idx[i];
    int arg = 0;
    for (size_t c = 1; c < probs[i].size(); ++c)
      if (probs[i][c] > probs[i][static_cast<size_t>(arg)]) arg = static_cast<int>(c);
    const std::string& unit = prepared.unit_of_segment[static_cast<size_t>(k)];
    unit_preds[unit].push_back(arg);
    unit_probs[unit].push_back(probs[i]);
    unit_label[unit] = prepared.labels[static_cast<size_t>(k)];
  }

  std::vector<int> preds, labels;
  for (const auto& [unit, p] : unit_preds) {
    preds.push_back(majority_vote(p, unit_probs[unit]));
    labels.push_back(unit_label[unit]);
  }
  MetricsReport rep = compute_metrics(preds, labels, task);
  rep.fold = fold;
  rep.run_seed = run_seed;
  return rep;
}

std::string csv_header() {
  return "config_hash,task,mode,depth,norm,fold,run,seed,n_units,SP,SE,AS,HS,"
         "Pplus,Sepos,F1,best_epoch,best_val_accuracy";
}

}  // namespace

bool results_csv_has(const std::string& path, const std::string& config_hash, int fold,
                     int run) {
  std::ifstream f(path);
  if (!f) return false;
  const std::string key = config_hash + "," ;
  std::string line;
  while (std::getline(f, line)) {
    if (line.rfind(key, 0) != 0) continue;
    std::istringstream ls(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (fields.size() > 6 && std::stoi(fields[5]) == fold && std::stoi(fields[6]) == run)
      return true;
  }
  return false;
}

void append_results_csv(const std::string& path, const ExperimentConfig& cfg,
                        const RunResult& result) {
  const bool fresh = !fs::exists(path);
  std::ofstream f(path, std::ios::app);
  if (!f) throw IoError("cannot write results '" + path + "'");
  if (fresh) f << csv_header() << "\n";
  const MetricsReport& r = result.report;
  f.precision(10);
  f << cfg.hash() << ',' << to_string(cfg.task()) << ',' << to_string(cfg.train_config().mode)
    << ',' << to_string(cfg.backbone_spec().depth) << ','
    << to_string(cfg.backbone_spec().norm) << ',' << result.fold << ',' << result.run << ','
    << r.run_seed << ',' << r.n_units << ',' << r.SP << ',' << r.SE << ',' << r.AS << ','
    << r.HS << ',' << (r.precision_pos ? *r.precision_pos : -1.0) << ','
    << (r.sensitivity_pos ? *r.sensitivity_pos : -1.0) << ',' << (r.f1 ? *r.f1 : -1.0) << ','
    << result.fit.best_epoch << ',' << result.fit.best_val_accuracy << "\n";
}

namespace {

std::vector<int> folds_to_run(const ExperimentConfig& cfg, const SplitPlan& plan) {
  std::vector<int> folds;
  if (cfg.raw().contains("split") && cfg.raw().at("split").contains("folds")) {
    for (const auto& f : cfg.raw().at("split").at("folds")) folds.push_back(f.get<int>());
    return folds;
  }
  for (int f = 0; f < plan.k; ++f) folds.push_back(f);
  return folds;
}

RunResult run_one(const PreparedFold& prepared, const ExperimentConfig& cfg, int fold,
                  int run) {
  const Task task = cfg.task();
  const uint64_t run_seed = splitmix64(cfg.seed() + 0x9e37ULL * static_cast<uint64_t>(run) +
                                       static_cast<uint64_t>(fold));

  TrainConfig tcfg = cfg.train_config();
  tcfg.seed = run_seed;

  BackboneSpec spec = cfg.backbone_spec();
  spec.seed = run_seed;
  Model model = build(spec);

  int64_t n_source = cfg.n_source_classes();
  if (model.pretrained_fc_weight) n_source = model.pretrained_fc_weight->shape[0];
  attach_heads(model, n_source, task_num_classes(task), tcfg.mode, run_seed);

  CategoryRelationship rel;
  const CategoryRelationship* rel_ptr = nullptr;
  if (mode_uses_cotuning(tcfg.mode)) {
    rel = build_relationship(model, prepared, cfg, run_seed);
    rel_ptr = &rel;
  }

  const Dataset train = prepared.dataset(prepared.train_idx);
  const Dataset val =
      prepared.dataset(prepared.val_idx.empty() ? prepared.test_idx : prepared.val_idx);
  if (prepared.val_idx.empty())
    warn("fold " + std::to_string(fold) + " has no validation units; using test for model selection");

  RunResult result;
  result.fold = fold;
  result.run = run;
  result.fit = fit(model, train, val, tcfg, rel_ptr);
  result.report = vote_and_score(prepared, model, task, fold, run_seed);

  const fs::path out_dir(cfg.output_dir());
  fs::create_directories(out_dir);
  const std::string tag = "f" + std::to_string(fold) + "_r" + std::to_string(run);
  result.checkpoint_path = (out_dir / ("ckpt_" + tag + ".safetensors")).string();
  std::map<std::string, std::string> meta;
  meta["config_hash"] = cfg.hash();
  meta["fold"] = std::to_string(fold);
  meta["run"] = std::to_string(run);
  meta["split_fingerprint"] =
      fnv1a_hex(std::to_string(prepared.train_idx.size()) + ":" +
                std::to_string(prepared.val_idx.size()) + ":" +
                std::to_string(prepared.test_idx.size()));
  save_checkpoint(model, result.checkpoint_path, meta);
  write_history_csv((out_dir / ("history_" + tag + ".csv")).string(), result.fit.history);
  if (rel_ptr) rel.save((out_dir / ("relationship_" + tag + ".json")).string(), cfg.hash());
  if (!prepared.corrections.by_device.empty())
    prepared.corrections.save((out_dir / ("speccorr_f" + std::to_string(fold) + ".json")).string());
  return result;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  const Corpus corpus = build_corpus(cfg);
  const SplitPlan plan = plan_split(corpus, cfg);

  ExperimentResult result;
  const fs::path out_dir(cfg.output_dir());
  fs::create_directories(out_dir);
  result.results_csv = (out_dir / "results.csv").string();

  for (int fold : folds_to_run(cfg, plan)) {
    std::optional<PreparedFold> prepared;
    for (int run = 0; run < cfg.n_runs(); ++run) {
      if (results_csv_has(result.results_csv, cfg.hash(), fold, run)) {
        warn("skipping fold " + std::to_string(fold) + " run " + std::to_string(run) +
             " (already in results)");
        continue;
      }
      if (!prepared) {
        prepared = prepare_fold(corpus, plan, fold, cfg);
        result.device_gap_before = prepared->device_gap_before;
        result.device_gap_after = prepared->device_gap_after;
      }
      RunResult rr = run_one(*prepared, cfg, fold, run);
      append_results_csv(result.results_csv, cfg, rr);
      result.runs.push_back(std::move(rr));
    }
  }
  return result;
}

MetricsReport evaluate_checkpoint(const std::string& checkpoint_path,
                                  const ExperimentConfig& cfg, int fold) {
  const Corpus corpus = build_corpus(cfg);
  const SplitPlan plan = plan_split(corpus, cfg);
  const PreparedFold prepared = prepare_fold(corpus, plan, fold, cfg);
  std::map<std::string, std::string> meta;
  Model model = load_checkpoint(checkpoint_path, &meta);
  if (meta.count("config_hash") && meta["config_hash"] != cfg.hash())
    warn("checkpoint was trained under config " + meta["config_hash"] +
         ", evaluating under " + cfg.hash());
  return vote_and_score(prepared, model, cfg.task(), fold, cfg.seed());
}

void export_embeddings(const std::string& checkpoint_path, const ExperimentConfig& cfg,
                       int fold, SplitRole role, const std::string& out_path) {
  const Corpus corpus = build_corpus(cfg);
  const SplitPlan plan = plan_split(corpus, cfg);
  const PreparedFold prepared = prepare_fold(corpus, plan, fold, cfg);
  Model model = load_checkpoint(checkpoint_path);

  const std::vector<int64_t>* idx = &prepared.test_idx;
  if (role == SplitRole::train) idx = &prepared.train_idx;
  if (role == SplitRole::validation) idx = &prepared.val_idx;

  // one row per unit: the mean pooled embedding over its segments
  std::map<std::string, std::vector<double>> acc;
  std::map<std::string, int64_t> counts;
  std::map<std::string, int> label_of;
  for (int64_t k : *idx) {
    const ModelInput input =
        to_model_input(prepared.features[static_cast<size_t>(k)], prepared.layout);
    const std::vector<double> emb = pooled_embedding(model, input);
    const std::string& unit = prepared.unit_of_segment[static_cast<size_t>(k)];
    auto& a = acc[unit];
    if (a.empty()) a.assign(emb.size(), 0.0);
    for (size_t i = 0; i < emb.size(); ++i) a[i] += emb[i];
    ++counts[unit];
    label_of[unit] = prepared.labels[static_cast<size_t>(k)];
  }

  std::ofstream f(out_path, std::ios::trunc);
  if (!f) throw IoError("cannot write '" + out_path + "'");
  f << "unit_id\tlabel\tembedding...\n";
  f.precision(10);
  for (const auto& [unit, a] : acc) {
    f << unit << '\t' << label_of[unit];
    for (double v : a) f << '\t' << v / static_cast<double>(counts[unit]);
    f << "\n";
  }
}

// ------------------------------------------------------------------ plots

bool emit_plots(const std::string& results_csv, const std::string& out_svg) {
  std::ifstream f(results_csv);
  if (!f) {
    warn("no results table at '" + results_csv + "', nothing to plot");
    return false;
  }
  struct Key {
    std::string mode, depth;
    bool operator<(const Key& o) const {
      return mode != o.mode ? mode < o.mode : depth < o.depth;
    }
  };
  std::map<Key, std::vector<double>> as_values;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    if (first) {
      first = false;
      continue;
    }
    std::istringstream ls(line);
    std::vector<std::string> fields;
    std::string field;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (fields.size() < 13) continue;
    as_values[{fields[2], fields[3]}].push_back(std::stod(fields[11]));
  }
  if (as_values.empty()) {
    warn("results table '" + results_csv + "' has no rows, nothing to plot");
    return false;
  }

  std::set<std::string> depths, modes;
  for (const auto& [k, v] : as_values) {
    depths.insert(k.depth);
    modes.insert(k.mode);
  }
  const int bar_w = 34, gap = 16, group_gap = 42;
  const int plot_h = 360, margin = 60;
  const int group_w = static_cast<int>(modes.size()) * (bar_w + gap) + group_gap;
  const int width = margin * 2 + group_w * static_cast<int>(depths.size());
  const int height = plot_h + margin * 2;

  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
      << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
  const char* palette[] = {"#4878d0", "#ee854a", "#6acc64", "#d65f5f", "#956cb4", "#8c613c"};
  // axis
  svg << "<line x1='" << margin << "' y1='" << margin + plot_h << "' x2='" << width - margin
      << "' y2='" << margin + plot_h << "' stroke='black'/>\n";
  for (int tick = 0; tick <= 10; ++tick) {
    const double frac = tick / 10.0;
    const int y = margin + plot_h - static_cast<int>(frac * plot_h);
    svg << "<line x1='" << margin - 4 << "' y1='" << y << "' x2='" << margin << "' y2='" << y
        << "' stroke='black'/><text x='" << margin - 8 << "' y='" << y + 4
        << "' font-size='11' text-anchor='end'>" << frac << "</text>\n";
  }

  int gi = 0;
  for (const auto& depth : depths) {
    int mi = 0;
    for (const auto& mode : modes) {
      auto it = as_values.find({mode, depth});
      if (it != as_values.end()) {
        const auto& vals = it->second;
        const double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size();
        double sd = 0.0;
        for (double v : vals) sd += (v - mean) * (v - mean);
        sd = vals.size() > 1 ? std::sqrt(sd / (vals.size() - 1)) : 0.0;
        const int x = margin + gi * group_w + mi * (bar_w + gap);
        const int h = static_cast<int>(mean * plot_h);
        const int y = margin + plot_h - h;
        svg << "<rect x='" << x << "' y='" << y << "' width='" << bar_w << "' height='" << h
            << "' fill='" << palette[mi % 6] << "'/>\n";
        if (sd > 0) {
          const int e0 = margin + plot_h - static_cast<int>((mean + sd) * plot_h);
          const int e1 = margin + plot_h - static_cast<int>(std::max(mean - sd, 0.0) * plot_h);
          const int cx = x + bar_w / 2;
          svg << "<line x1='" << cx << "' y1='" << e0 << "' x2='" << cx << "' y2='" << e1
              << "' stroke='black'/>\n";
        }
      }
      ++mi;
    }
    const int gx = margin + gi * group_w + (group_w - group_gap) / 2;
    svg << "<text x='" << gx << "' y='" << margin + plot_h + 18
        << "' font-size='12' text-anchor='middle'>depth " << depth << "</text>\n";
    ++gi;
  }
  int li = 0;
  for (const auto& mode : modes) {
    svg << "<rect x='" << margin + li * 150 << "' y='" << 16 << "' width='12' height='12' fill='"
        << palette[li % 6] << "'/><text x='" << margin + li * 150 + 18 << "' y='" << 26
        << "' font-size='12'>" << mode << "</text>\n";
    ++li;
  }
  svg << "</svg>\n";

  std::ofstream out(out_svg, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + out_svg + "'");
  out << svg.str();
  return true;
}

// -------------------------------------------------------- synthetic corpus

void make_synthetic_corpus(const std::string& dir, int n_clips, int classes, uint64_t seed) {
  if (classes != 2 && classes != 4) throw ConfigError("synthetic corpus supports 2 or 4 classes");
  fs::create_directories(dir);
  const int sr = 4000;
  const double dur = 2.0;
  const int n = static_cast<int>(sr * dur);

  std::ofstream manifest(fs::path(dir) / "manifest.csv", std::ios::trunc);
  manifest << "path,patient,device,diagnosis,cycle_file\n";

  for (int i = 0; i < n_clips; ++i) {
    Rng rng = Rng::child(seed, static_cast<uint64_t>(i));
    const int cls = i % classes;
    const std::string patient = "p" + std::to_string(i / 5);
    const std::string device = (i % 2 == 0) ? "devA" : "devB";

    std::vector<double> x(static_cast<size_t>(n), 0.0);
    const bool tone = (classes == 2) ? (cls == 1) : (cls == 1 || cls == 2);
    if (tone) {
      double f0;
      if (classes == 2) {
        f0 = rng.uniform(250.0, 750.0);
      } else {
        f0 = (cls == 1) ? rng.uniform(250.0, 450.0) : rng.uniform(550.0, 750.0);
      }
      const double phase = rng.uniform(0.0, 2.0 * M_PI);
      for (int t = 0; t < n; ++t) {
        const double u = 2.0 * M_PI * f0 * t / sr;
        x[static_cast<size_t>(t)] = 0.4 * std::sin(u + phase) + 0.15 * std::sin(2 * u + phase) +
                                    0.06 * std::sin(3 * u + phase) + 0.01 * rng.normal();
      }
    } else {
      // filtered noise; the 4-class variant splits by filter band
      const bool low = (classes == 2) || cls == 0;
      double prev = 0.0;
      const double a = low ? 0.9 : 0.4;
      for (int t = 0; t < n; ++t) {
        prev = a * prev + (1.0 - a) * rng.normal();
        x[static_cast<size_t>(t)] = 0.6 * prev;
      }
      if (!low) {
        // difference filter pushes energy upward
        double last = 0.0;
        for (int t = 0; t < n; ++t) {
          const double cur = x[static_cast<size_t>(t)];
          x[static_cast<size_t>(t)] = cur - 0.7 * last;
          last = cur;
        }
      }
    }

    // pseudo-device frequency tilt
    if (device == "devA") {
      double prev = 0.0;
      for (int t = 0; t < n; ++t) {
        prev = 0.55 * prev + 0.45 * x[static_cast<size_t>(t)];
        x[static_cast<size_t>(t)] = prev * 1.8;
      }
    } else {
      double last = 0.0;
      for (int t = 0; t < n; ++t) {
        const double cur = x[static_cast<size_t>(t)];
        x[static_cast<size_t>(t)] = 0.75 * cur - 0.55 * last + 0.25 * cur;
        last = cur;
      }
    }
    double peak = 1e-9;
    for (double v : x) peak = std::max(peak, std::abs(v));
    for (double& v : x) v = v / peak * 0.5;

    char name[64];
    std::snprintf(name, sizeof(name), "clip%04d", i);
    const std::string wav_name = std::string(name) + ".wav";
    const std::string ann_name = std::string(name) + ".txt";
    write_wav((fs::path(dir) / wav_name).string(), x, sr);

    int crackle = 0, wheeze = 0;
    if (classes == 2) {
      crackle = cls == 1 ? 1 : 0;
    } else {
      crackle = (cls == 1 || cls == 3) ? 1 : 0;
      wheeze = (cls == 2 || cls == 3) ? 1 : 0;
    }
    std::ofstream ann(fs::path(dir) / ann_name, std::ios::trunc);
    ann << "0.0\t" << dur << "\t" << crackle << "\t" << wheeze << "\n";

    manifest << wav_name << ',' << patient << ',' << device << ",Healthy," << ann_name << "\n";
  }
}

void export_pretrained_archive(const Model& model, const std::string& path) {
  TensorArchive ar;
  for (const auto& p : model.params()) {
    if (p.name.rfind("head_target.", 0) == 0) {
      ar.put("fc." + p.name.substr(12), p.shape, *p.value);
    } else if (p.name.rfind("head_source.", 0) == 0) {
      continue;  // a re-exported co-tuned model keeps only its target head
    } else {
      ar.put(p.name, p.shape, *p.value);
    }
  }
  ar.metadata["depth"] = to_string(model.backbone->spec().depth);
  ar.save(path);
}

// ------------------------------------------------------------------ smoke

namespace {

nlohmann::json smoke_config_json(const std::string& corpus_dir, const std::string& out_dir,
                                 const std::string& archive, const std::string& task,
                                 const std::string& mode, int epochs, uint64_t seed) {
  nlohmann::json j;
  j["task"] = task;
  j["seed"] = seed;
  j["data"] = {{"kind", "generic"},
               {"generic_manifest", corpus_dir + "/manifest.csv"},
               {"root", ""},
               {"diagnosis_file", ""}};
  j["split"] = {{"scheme", "kfold"}, {"k", 4}, {"validation_fraction", 0.2}, {"folds", {0}}};
  j["features"] = {{"sample_rate", 4000}, {"segment_s", 2.0}, {"overlap", 0.0},
                   {"nfft", 512},         {"hop", 256},       {"n_mels", 32},
                   {"layout", "replicate3"}};
  j["speccorr"] = {{"preset", "calib_alldev"}};
  j["augment"] = {{"enabled", true}};
  j["backbone"] = {{"depth", "tiny"}, {"pretrained_archive", archive}, {"n_source", 4}};
  j["train"] = {{"mode", mode},
                {"epochs", epochs},
                {"n_runs", 1},
                {"batch_size", 32},
                {"lr_backbone", 0.01},
                {"lr_heads", mode == "vanilla" ? 0.01 : 0.01}};
  j["cotuning"] = {{"relationship", "direct"}, {"lambda", 1.0}};
  j["output"] = {{"dir", out_dir}};
  return j;
}

}  // namespace

SmokeResult run_smoke(const std::string& work_dir, uint64_t seed, int epochs) {
  SmokeResult result;
  result.work_dir = work_dir;
  fs::create_directories(work_dir);

  // 1. source corpus and a briefly trained tiny source model
  const std::string source_dir = (fs::path(work_dir) / "source_corpus").string();
  const std::string target_dir = (fs::path(work_dir) / "target_corpus").string();
  const std::string archive = (fs::path(work_dir) / "pretrained.safetensors").string();
  if (!fs::exists(fs::path(source_dir) / "manifest.csv"))
    make_synthetic_corpus(source_dir, 240, 4, seed + 1);
  if (!fs::exists(fs::path(target_dir) / "manifest.csv"))
    make_synthetic_corpus(target_dir, 200, 2, seed + 2);

  if (!fs::exists(archive)) {
    nlohmann::json pj = smoke_config_json(source_dir, (fs::path(work_dir) / "pretrain").string(),
                                          "", "alsc4", "vanilla", 8, seed + 3);
    pj["augment"]["enabled"] = false;
    pj["speccorr"]["preset"] = "no_calib";
    const ExperimentConfig pcfg = ExperimentConfig::from_json(pj);
    const Corpus corpus = build_corpus(pcfg);
    const SplitPlan plan = plan_split(corpus, pcfg);
    const PreparedFold prepared = prepare_fold(corpus, plan, 0, pcfg);

    BackboneSpec spec = pcfg.backbone_spec();
    Model model = build(spec);
    attach_heads(model, 4, 4, TrainMode::vanilla, seed + 3);
    TrainConfig tcfg = pcfg.train_config();
    const Dataset train = prepared.dataset(prepared.train_idx);
    const Dataset val = prepared.dataset(prepared.val_idx);
    fit(model, train, val, tcfg, nullptr);
    export_pretrained_archive(model, archive);
  }

  // 2. the four fine-tuning modes on the 2-class target corpus
  const char* modes[] = {"vanilla", "cotuning", "stochnorm", "cotuning_stochnorm"};
  for (const char* mode : modes) {
    const auto t0 = std::chrono::steady_clock::now();
    nlohmann::json tj = smoke_config_json(
        target_dir, (fs::path(work_dir) / ("run_" + std::string(mode))).string(), archive,
        "alsc2", mode, epochs, seed);
    const ExperimentConfig tcfg = ExperimentConfig::from_json(tj);
    ExperimentResult er = run_experiment(tcfg);
    if (er.runs.empty()) throw IoError("smoke run produced no results");
    result.by_mode[mode] = er.runs.front().report;
    result.device_gap_before = er.device_gap_before;
    result.device_gap_after = er.device_gap_after;
    const auto t1 = std::chrono::steady_clock::now();
    result.seconds_by_mode[mode] =
        std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count() / 1000.0;
  }

  // 3. determinism: repeat one mode under the same seed in a fresh directory
  {
    nlohmann::json tj = smoke_config_json(
        target_dir, (fs::path(work_dir) / "run_vanilla_repeat").string(), archive, "alsc2",
        "vanilla", epochs, seed);
    const ExperimentConfig tcfg = ExperimentConfig::from_json(tj);
    ExperimentResult er = run_experiment(tcfg);
    const MetricsReport& a = result.by_mode.at("vanilla");
    const MetricsReport& b = er.runs.front().report;
    result.deterministic = (a.SE == b.SE && a.SP == b.SP && a.confusion == b.confusion);
  }
  return result;
}

}  // namespace lungsc

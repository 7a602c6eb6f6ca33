#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lungsc/augment.hpp"
#include "lungsc/backbone.hpp"
#include "lungsc/cotuning.hpp"
#include "lungsc/features.hpp"
#include "lungsc/ingest.hpp"
#include "lungsc/speccorr.hpp"

namespace lungsc {

// Hierarchical experiment configuration: a JSON document merged over the
// built-in defaults, plus `--set a.b.c=value` overrides. The canonical dump
// is hashed (FNV-1a) to key caches, coefficient files and result rows.
class ExperimentConfig {
 public:
  static ExperimentConfig defaults();
  static ExperimentConfig load(const std::string& path,
                               const std::vector<std::string>& overrides = {});
  static ExperimentConfig from_json(const nlohmann::json& doc,
                                    const std::vector<std::string>& overrides = {});

  const nlohmann::json& raw() const { return doc_; }
  std::string hash() const;
  std::string dump(int indent = 2) const { return doc_.dump(indent); }

  Task task() const;

  // data
  std::string corpus_kind() const;      // "icbhi" | "generic"
  std::string data_root() const;        // icbhi audio+annotation directory
  std::string diagnosis_file() const;
  std::string generic_manifest() const;
  std::string output_dir() const;

  // split
  SplitScheme split_scheme() const;
  int split_k() const;
  double validation_fraction() const;
  std::string split_file() const;

  SegmentSpec segment_spec() const;
  SpectralConfig spectral_config() const;
  InputLayout input_layout() const;
  CalibPreset calib_preset() const;

  bool augment_enabled() const;
  // Applies the plan-shaping knobs (probabilities, ranges, flip) on top of
  // the task-derived balance plan.
  void apply_augment_overrides(AugmentPlan& plan) const;

  BackboneSpec backbone_spec() const;
  StochNormConfig stochnorm_config() const;
  TrainConfig train_config() const;
  int n_runs() const;
  uint64_t seed() const;
  int64_t n_source_classes() const;  // for co-tuning without a pretrained classifier
  std::string relationship_method() const;  // "direct" | "reverse"
  std::string feature_cache_dir() const;    // "" disables the cache

 private:
  nlohmann::json doc_;
};

// FNV-1a 64-bit over a string, hex-encoded; stable across builds.
std::string fnv1a_hex(const std::string& s);

}  // namespace lungsc

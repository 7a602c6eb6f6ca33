#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lungsc/features.hpp"
#include "lungsc/nn.hpp"
#include "lungsc/tensorfile.hpp"

namespace lungsc {

enum class BackboneDepth { tiny, r18, r34, r50, r101 };
enum class NormKind { batch, stochastic };
enum class TrainMode { vanilla, cotuning, stochnorm, cotuning_stochnorm };

BackboneDepth backbone_depth_from_string(const std::string& s);
std::string to_string(BackboneDepth d);
NormKind norm_kind_from_string(const std::string& s);
std::string to_string(NormKind k);
TrainMode train_mode_from_string(const std::string& s);
std::string to_string(TrainMode m);

bool mode_uses_cotuning(TrainMode m);
bool mode_uses_stochnorm(TrainMode m);

struct BackboneSpec {
  BackboneDepth depth = BackboneDepth::r18;
  NormKind norm = NormKind::batch;
  std::string pretrained_archive;  // empty = seeded random init
  InputLayout input_layout = InputLayout::replicate3;
  StochNormConfig stochnorm;
  uint64_t seed = 0;
};

// Residual feature extractor F: stem, stages, global average pooling.
// Parameter names follow the conventional flat layout of the reference
// model family (conv1.weight, bn1.*, layerN.M.convK.*, downsample.*), which
// is the explicit key table weight import runs against.
class Backbone {
 public:
  explicit Backbone(const BackboneSpec& spec);

  Tensor forward(const Tensor& x, bool training);  // [N,3,H,W] -> [N, pooled]
  Tensor backward(const Tensor& grad_pooled);
  int64_t pooled_dim() const { return pooled_dim_; }

  std::vector<nn::ParamRef> params();  // group "backbone"
  const BackboneSpec& spec() const { return spec_; }

 private:
  BackboneSpec spec_;
  nn::Sequential body_;
  nn::GlobalAvgPool gap_;
  int64_t pooled_dim_ = 0;
};

// Backbone plus the two task heads: the retained source head G and the
// randomly initialized target head H.
struct Model {
  std::unique_ptr<Backbone> backbone;
  std::unique_ptr<nn::Linear> target_head;  // H
  std::unique_ptr<nn::Linear> source_head;  // G, present iff co-tuning
  TrainMode mode = TrainMode::vanilla;

  // classifier weights found in the pretrained archive, consumed by attach_heads
  std::optional<ArchiveTensor> pretrained_fc_weight;
  std::optional<ArchiveTensor> pretrained_fc_bias;

  std::vector<nn::ParamRef> params() const;
  int64_t pooled_dim() const { return backbone->pooled_dim(); }
};

// Builds F from the spec; with a pretrained archive every backbone tensor is
// imported by its key (strict shapes), the classifier is kept aside for
// attach_heads, and stochastic normalization sites start from the imported
// moving statistics.
Model build(const BackboneSpec& spec);

// H is seeded-random (uniform fan-in); G is loaded from the pretrained
// classifier in co-tuning modes and absent otherwise.
void attach_heads(Model& model, int64_t n_source, int64_t n_target, TrainMode mode,
                  uint64_t seed);

// Deterministic eval-mode embedding of one input.
std::vector<double> pooled_embedding(Model& model, const ModelInput& input);

Tensor model_input_to_tensor(const ModelInput& input);
Tensor batch_to_tensor(const std::vector<const ModelInput*>& batch);

// Checkpoint round-trip: every named parameter and buffer plus metadata.
void save_checkpoint(const Model& model, const std::string& path,
                     const std::map<std::string, std::string>& metadata);
Model load_checkpoint(const std::string& path, std::map<std::string, std::string>* metadata_out = nullptr);

int64_t parameter_count(const Model& model);

}  // namespace lungsc

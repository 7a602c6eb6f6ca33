#include "lungsc/backbone.hpp"

#include <cmath>

#include "lungsc/error.hpp"
#include "lungsc/rng.hpp"

namespace lungsc {

BackboneDepth backbone_depth_from_string(const std::string& s) {
  if (s == "tiny") return BackboneDepth::tiny;
  if (s == "18") return BackboneDepth::r18;
  if (s == "34") return BackboneDepth::r34;
  if (s == "50") return BackboneDepth::r50;
  if (s == "101") return BackboneDepth::r101;
  throw ConfigError("unknown backbone depth '" + s + "' (tiny|18|34|50|101)");
}

std::string to_string(BackboneDepth d) {
  switch (d) {
    case BackboneDepth::tiny: return "tiny";
    case BackboneDepth::r18: return "18";
    case BackboneDepth::r34: return "34";
    case BackboneDepth::r50: return "50";
    case BackboneDepth::r101: return "101";
  }
  return "?";
}

NormKind norm_kind_from_string(const std::string& s) {
  if (s == "batch") return NormKind::batch;
  if (s == "stochastic") return NormKind::stochastic;
  throw ConfigError("unknown norm kind '" + s + "' (batch|stochastic)");
}

std::string to_string(NormKind k) {
  return k == NormKind::batch ? "batch" : "stochastic";
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "vanilla") return TrainMode::vanilla;
  if (s == "cotuning") return TrainMode::cotuning;
  if (s == "stochnorm") return TrainMode::stochnorm;
  if (s == "cotuning_stochnorm") return TrainMode::cotuning_stochnorm;
  throw ConfigError("unknown mode '" + s + "'");
}

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::vanilla: return "vanilla";
    case TrainMode::cotuning: return "cotuning";
    case TrainMode::stochnorm: return "stochnorm";
    case TrainMode::cotuning_stochnorm: return "cotuning_stochnorm";
  }
  return "?";
}

bool mode_uses_cotuning(TrainMode m) {
  return m == TrainMode::cotuning || m == TrainMode::cotuning_stochnorm;
}

bool mode_uses_stochnorm(TrainMode m) {
  return m == TrainMode::stochnorm || m == TrainMode::cotuning_stochnorm;
}

namespace {

struct StageDef {
  bool bottleneck;
  std::vector<int> blocks;  // per stage
};

StageDef stage_def(BackboneDepth d) {
  switch (d) {
    case BackboneDepth::r18: return {false, {2, 2, 2, 2}};
    case BackboneDepth::r34: return {false, {3, 4, 6, 3}};
    case BackboneDepth::r50: return {true, {3, 4, 6, 3}};
    case BackboneDepth::r101: return {true, {3, 4, 23, 3}};
    case BackboneDepth::tiny: return {false, {1, 1}};
  }
  return {false, {}};
}

}  // namespace

Backbone::Backbone(const BackboneSpec& spec) : spec_(spec) {
  spec_.stochnorm.validate();
  int64_t norm_sites = 0;
  nn::NormFactory norm = [this, &norm_sites](int64_t channels) -> std::unique_ptr<nn::Layer> {
    const int64_t id = norm_sites++;
    if (spec_.norm == NormKind::stochastic)
      return std::make_unique<nn::StochNorm2d>(channels, spec_.stochnorm, spec_.seed, id);
    (void)id;
    return std::make_unique<nn::BatchNorm2d>(channels, spec_.stochnorm.eps);
  };

  const StageDef def = stage_def(spec_.depth);
  const bool tiny = spec_.depth == BackboneDepth::tiny;

  if (tiny) {
    body_.add("conv1", std::make_unique<nn::Conv2d>(3, 8, 3, 1, 1, false));
    body_.add("bn1", norm(8));
    body_.add("relu", std::make_unique<nn::ReLU>());
    int64_t in_ch = 8;
    int64_t width = 16;
    for (size_t s = 0; s < def.blocks.size(); ++s) {
      auto stage = std::make_unique<nn::Sequential>();
      for (int b = 0; b < def.blocks[s]; ++b) {
        const int64_t stride = (b == 0) ? 2 : 1;
        stage->add(std::to_string(b),
                   std::make_unique<nn::BasicBlock>(in_ch, width, stride, norm));
        in_ch = width;
      }
      body_.add("layer" + std::to_string(s + 1), std::move(stage));
      width *= 2;
    }
    pooled_dim_ = in_ch;
    return;
  }

  body_.add("conv1", std::make_unique<nn::Conv2d>(3, 64, 7, 2, 3, false));
  body_.add("bn1", norm(64));
  body_.add("relu", std::make_unique<nn::ReLU>());
  body_.add("maxpool", std::make_unique<nn::MaxPool2d>(3, 2, 1));

  int64_t in_ch = 64;
  int64_t width = 64;
  for (size_t s = 0; s < def.blocks.size(); ++s) {
    auto stage = std::make_unique<nn::Sequential>();
    for (int b = 0; b < def.blocks[s]; ++b) {
      const int64_t stride = (s > 0 && b == 0) ? 2 : 1;
      if (def.bottleneck) {
        stage->add(std::to_string(b), std::make_unique<nn::Bottleneck>(in_ch, width, stride, norm));
        in_ch = width * nn::Bottleneck::expansion;
      } else {
        stage->add(std::to_string(b), std::make_unique<nn::BasicBlock>(in_ch, width, stride, norm));
        in_ch = width;
      }
    }
    body_.add("layer" + std::to_string(s + 1), std::move(stage));
    width *= 2;
  }
  pooled_dim_ = in_ch;
}

Tensor Backbone::forward(const Tensor& x, bool training) {
  return gap_.forward(body_.forward(x, training), training);
}

Tensor Backbone::backward(const Tensor& grad_pooled) {
  return body_.backward(gap_.backward(grad_pooled));
}

std::vector<nn::ParamRef> Backbone::params() {
  std::vector<nn::ParamRef> out;
  body_.register_params("", "backbone", out);
  return out;
}

std::vector<nn::ParamRef> Model::params() const {
  std::vector<nn::ParamRef> out = backbone->params();
  if (target_head) target_head->register_params("head_target.", "head_target", out);
  if (source_head) source_head->register_params("head_source.", "head_source", out);
  return out;
}

namespace {

void scratch_init(Backbone& backbone, uint64_t seed) {
  Rng rng(splitmix64(seed ^ 0xb4cbULL));
  for (auto& p : backbone.params()) {
    if (!p.grad) continue;  // buffers keep their identity init
    if (p.name.find("conv") != std::string::npos ||
        p.name.find("downsample.0") != std::string::npos) {
      // fan_in = in_ch * k * k
      int64_t fan_in = 1;
      for (size_t i = 1; i < p.shape.size(); ++i) fan_in *= p.shape[i];
      const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<int64_t>(fan_in, 1)));
      for (double& v : *p.value) v = rng.uniform(-bound, bound);
    }
    // norm weights/biases keep 1/0
  }
}

void import_backbone_weights(Backbone& backbone, const TensorArchive& ar) {
  for (auto& p : backbone.params()) {
    if (!ar.has(p.name)) {
      // num_batches_tracked and similar extras are ignored on the archive
      // side, but every model tensor must be present
      throw MissingWeights("archive lacks '" + p.name + "'");
    }
    const ArchiveTensor& t = ar.at(p.name);
    if (t.data.size() != p.value->size())
      throw WeightShapeMismatch("'" + p.name + "': archive has " +
                                std::to_string(t.data.size()) + " values, model needs " +
                                std::to_string(p.value->size()));
    *p.value = t.data;
  }
}

}  // namespace

Model build(const BackboneSpec& spec) {
  Model model;
  model.backbone = std::make_unique<Backbone>(spec);
  if (spec.pretrained_archive.empty()) {
    scratch_init(*model.backbone, spec.seed);
    return model;
  }
  const TensorArchive ar = TensorArchive::load(spec.pretrained_archive);
  import_backbone_weights(*model.backbone, ar);
  if (ar.has("fc.weight")) model.pretrained_fc_weight = ar.at("fc.weight");
  if (ar.has("fc.bias")) model.pretrained_fc_bias = ar.at("fc.bias");
  return model;
}

void attach_heads(Model& model, int64_t n_source, int64_t n_target, TrainMode mode,
                  uint64_t seed) {
  const int64_t dim = model.pooled_dim();
  model.mode = mode;

  model.target_head = std::make_unique<nn::Linear>(dim, n_target);
  Rng rng(splitmix64(seed ^ 0x4eadULL));
  nn::init_uniform_fanin(model.target_head->weight, dim, rng);
  nn::init_uniform_fanin(model.target_head->bias, dim, rng);

  if (!mode_uses_cotuning(mode)) {
    model.source_head.reset();
    return;
  }
  model.source_head = std::make_unique<nn::Linear>(dim, n_source);
  if (model.pretrained_fc_weight) {
    const auto& w = *model.pretrained_fc_weight;
    if (w.shape.size() != 2 || w.shape[0] != n_source || w.shape[1] != dim)
      throw HeadDimMismatch("pretrained classifier is " +
                            std::to_string(w.shape.size() == 2 ? w.shape[0] : -1) + "x" +
                            std::to_string(w.shape.size() == 2 ? w.shape[1] : -1) +
                            ", expected " + std::to_string(n_source) + "x" + std::to_string(dim));
    model.source_head->weight.data = w.data;
    if (model.pretrained_fc_bias) {
      if (model.pretrained_fc_bias->data.size() != static_cast<size_t>(n_source))
        throw HeadDimMismatch("pretrained classifier bias length mismatch");
      model.source_head->bias.data = model.pretrained_fc_bias->data;
    }
  } else {
    // co-tuning over a scratch model: seeded init, mainly for smoke runs
    nn::init_uniform_fanin(model.source_head->weight, dim, rng);
    nn::init_uniform_fanin(model.source_head->bias, dim, rng);
  }
}

Tensor model_input_to_tensor(const ModelInput& input) {
  Tensor t({1, 3, input.height, input.width});
  t.data = input.values;
  return t;
}

Tensor batch_to_tensor(const std::vector<const ModelInput*>& batch) {
  if (batch.empty()) throw EmptyInput("empty batch");
  const int64_t h = batch.front()->height, w = batch.front()->width;
  Tensor t({static_cast<int64_t>(batch.size()), 3, h, w});
  size_t off = 0;
  for (const ModelInput* in : batch) {
    if (in->height != h || in->width != w)
      throw ShapeMismatch("batch inputs must share one shape");
    std::copy(in->values.begin(), in->values.end(), t.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += in->values.size();
  }
  return t;
}

std::vector<double> pooled_embedding(Model& model, const ModelInput& input) {
  const Tensor x = model_input_to_tensor(input);
  const Tensor pooled = model.backbone->forward(x, false);
  return pooled.data;
}

void save_checkpoint(const Model& model, const std::string& path,
                     const std::map<std::string, std::string>& metadata) {
  TensorArchive ar;
  for (const auto& p : model.params()) ar.put(p.name, p.shape, *p.value);
  ar.metadata = metadata;
  const BackboneSpec& spec = model.backbone->spec();
  ar.metadata["depth"] = to_string(spec.depth);
  ar.metadata["norm"] = to_string(spec.norm);
  ar.metadata["mode"] = to_string(model.mode);
  ar.metadata["input_layout"] = to_string(spec.input_layout);
  ar.metadata["seed"] = std::to_string(spec.seed);
  ar.metadata["sn_p"] = std::to_string(spec.stochnorm.p);
  ar.metadata["sn_alpha"] = std::to_string(spec.stochnorm.alpha);
  ar.metadata["sn_eps"] = std::to_string(spec.stochnorm.eps);
  ar.metadata["n_target"] =
      std::to_string(model.target_head ? model.target_head->out_dim() : 0);
  ar.metadata["n_source"] =
      std::to_string(model.source_head ? model.source_head->out_dim() : 0);
  ar.save(path);
}

Model load_checkpoint(const std::string& path,
                      std::map<std::string, std::string>* metadata_out) {
  TensorArchive ar = TensorArchive::load(path);
  auto need = [&](const std::string& key) -> std::string {
    auto it = ar.metadata.find(key);
    if (it == ar.metadata.end())
      throw CheckpointMismatch("'" + path + "' lacks metadata '" + key + "'");
    return it->second;
  };

  BackboneSpec spec;
  spec.depth = backbone_depth_from_string(need("depth"));
  spec.norm = norm_kind_from_string(need("norm"));
  spec.input_layout = input_layout_from_string(need("input_layout"));
  spec.seed = std::stoull(need("seed"));
  spec.stochnorm.p = std::stod(need("sn_p"));
  spec.stochnorm.alpha = std::stod(need("sn_alpha"));
  spec.stochnorm.eps = std::stod(need("sn_eps"));

  Model model;
  model.backbone = std::make_unique<Backbone>(spec);
  model.mode = train_mode_from_string(need("mode"));
  const int64_t n_target = std::stoll(need("n_target"));
  const int64_t n_source = std::stoll(need("n_source"));
  if (n_target > 0) model.target_head = std::make_unique<nn::Linear>(model.pooled_dim(), n_target);
  if (n_source > 0) model.source_head = std::make_unique<nn::Linear>(model.pooled_dim(), n_source);

  for (auto& p : model.params()) {
    if (!ar.has(p.name)) throw CheckpointMismatch("'" + path + "' lacks tensor '" + p.name + "'");
    const ArchiveTensor& t = ar.at(p.name);
    if (t.data.size() != p.value->size())
      throw CheckpointMismatch("'" + p.name + "' has wrong size in '" + path + "'");
    *p.value = t.data;
  }
  if (metadata_out) *metadata_out = ar.metadata;
  return model;
}

int64_t parameter_count(const Model& model) {
  int64_t n = 0;
  for (const auto& p : model.params())
    if (p.grad) n += static_cast<int64_t>(p.value->size());
  return n;
}

}  // namespace lungsc

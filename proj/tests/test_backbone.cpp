#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "lungsc/backbone.hpp"
#include "lungsc/error.hpp"
#include "lungsc/rng.hpp"

using namespace lungsc;

namespace {

const std::string kGolden = std::string(LUNGSC_TEST_DATA_DIR) + "/tiny_torch_golden.safetensors";

Tensor golden_tensor(const TensorArchive& ar, const std::string& name) {
  const ArchiveTensor& t = ar.at(name);
  Tensor out;
  out.shape = t.shape;
  out.data = t.data;
  return out;
}

}  // namespace

TEST_CASE("tiny backbone reproduces the reference forward pass") {
  REQUIRE(std::filesystem::exists(kGolden));
  const TensorArchive ar = TensorArchive::load(kGolden);

  BackboneSpec spec;
  spec.depth = BackboneDepth::tiny;
  spec.norm = NormKind::batch;
  spec.pretrained_archive = kGolden;
  Model model = build(spec);

  const Tensor x = golden_tensor(ar, "golden.input");
  const Tensor expect_pooled = golden_tensor(ar, "golden.pooled");
  const Tensor pooled = model.backbone->forward(x, false);
  REQUIRE(pooled.shape == expect_pooled.shape);
  for (size_t i = 0; i < pooled.data.size(); ++i)
    CHECK(pooled.data[i] ==
          doctest::Approx(expect_pooled.data[i]).epsilon(1e-8).scale(1.0));

  // the retained source classifier reproduces the reference logits
  attach_heads(model, 4, 2, TrainMode::cotuning, 1);
  const Tensor logits = model.source_head->forward(pooled, false);
  const Tensor expect_logits = golden_tensor(ar, "golden.logits");
  for (size_t i = 0; i < logits.data.size(); ++i)
    CHECK(logits.data[i] == doctest::Approx(expect_logits.data[i]).epsilon(1e-8));
}

TEST_CASE("weight import is bit-exact") {
  const TensorArchive ar = TensorArchive::load(kGolden);
  BackboneSpec spec;
  spec.depth = BackboneDepth::tiny;
  spec.pretrained_archive = kGolden;
  Model model = build(spec);
  for (const auto& p : model.backbone->params()) {
    const ArchiveTensor& src = ar.at(p.name);
    REQUIRE(src.data.size() == p.value->size());
    CHECK(src.data == *p.value);
  }
}

TEST_CASE("stochastic swap keeps eval behavior and adds no learnables") {
  BackboneSpec batch_spec;
  batch_spec.depth = BackboneDepth::tiny;
  batch_spec.norm = NormKind::batch;
  batch_spec.pretrained_archive = kGolden;
  Model batch_model = build(batch_spec);

  BackboneSpec sn_spec = batch_spec;
  sn_spec.norm = NormKind::stochastic;
  Model sn_model = build(sn_spec);

  // moving statistics were initialized from the pre-trained parameters, so
  // both eval paths are the same function
  const TensorArchive ar = TensorArchive::load(kGolden);
  const Tensor x = golden_tensor(ar, "golden.input");
  const Tensor a = batch_model.backbone->forward(x, false);
  const Tensor b = sn_model.backbone->forward(x, false);
  REQUIRE(a.data.size() == b.data.size());
  for (size_t i = 0; i < a.data.size(); ++i)
    CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-12));

  auto trainable = [](Model& m) {
    int64_t n = 0;
    for (const auto& p : m.backbone->params())
      if (p.grad) n += static_cast<int64_t>(p.value->size());
    return n;
  };
  CHECK(trainable(batch_model) == trainable(sn_model));
}

TEST_CASE("pooled dimensions match the architecture table") {
  for (auto [depth, dim] : std::initializer_list<std::pair<BackboneDepth, int64_t>>{
           {BackboneDepth::tiny, 32},
           {BackboneDepth::r18, 512},
           {BackboneDepth::r34, 512},
           {BackboneDepth::r50, 2048},
           {BackboneDepth::r101, 2048}}) {
    BackboneSpec spec;
    spec.depth = depth;
    Model model = build(spec);
    CHECK(model.pooled_dim() == dim);
  }
}

TEST_CASE("parameter counts match the reference model family") {
  // published counts for the 1000-class reference models
  for (auto [depth, count] : std::initializer_list<std::pair<BackboneDepth, int64_t>>{
           {BackboneDepth::r18, 11689512},
           {BackboneDepth::r34, 21797672},
           {BackboneDepth::r50, 25557032},
           {BackboneDepth::r101, 44549160}}) {
    BackboneSpec spec;
    spec.depth = depth;
    Model model = build(spec);
    attach_heads(model, 1000, 4, TrainMode::cotuning, 0);
    int64_t n = 0;
    for (const auto& p : model.params())
      if (p.grad && p.name.rfind("head_target.", 0) != 0)
        n += static_cast<int64_t>(p.value->size());
    CHECK(n == count);
  }
}

TEST_CASE("r18 forward produces a finite embedding at odd spatial sizes") {
  BackboneSpec spec;
  spec.depth = BackboneDepth::r18;
  spec.seed = 3;
  Model model = build(spec);
  Tensor x({1, 3, 50, 63});
  Rng rng(4);
  for (double& v : x.data) v = rng.normal();
  const Tensor pooled = model.backbone->forward(x, false);
  CHECK(pooled.shape == std::vector<int64_t>{1, 512});
  for (double v : pooled.data) CHECK(std::isfinite(v));
}

TEST_CASE("attach_heads shapes and modes") {
  BackboneSpec spec;
  spec.depth = BackboneDepth::tiny;
  spec.pretrained_archive = kGolden;

  Model vanilla = build(spec);
  attach_heads(vanilla, 4, 4, TrainMode::vanilla, 7);
  CHECK(vanilla.target_head->out_dim() == 4);
  CHECK(vanilla.source_head == nullptr);

  Model cot = build(spec);
  attach_heads(cot, 4, 2, TrainMode::cotuning, 7);
  REQUIRE(cot.source_head != nullptr);
  CHECK(cot.source_head->out_dim() == 4);
  // G keeps the pretrained classifier weights verbatim
  const TensorArchive ar = TensorArchive::load(kGolden);
  CHECK(cot.source_head->weight.data == ar.at("fc.weight").data);
  CHECK(cot.source_head->bias.data == ar.at("fc.bias").data);

  Model bad = build(spec);
  CHECK_THROWS_AS(attach_heads(bad, 7, 2, TrainMode::cotuning, 7), HeadDimMismatch);
}

TEST_CASE("target head init is seeded and zero-mean fan-in uniform") {
  BackboneSpec spec;
  spec.depth = BackboneDepth::tiny;
  Model a = build(spec);
  Model b = build(spec);
  attach_heads(a, 4, 3, TrainMode::vanilla, 11);
  attach_heads(b, 4, 3, TrainMode::vanilla, 11);
  CHECK(a.target_head->weight.data == b.target_head->weight.data);
  Model c = build(spec);
  attach_heads(c, 4, 3, TrainMode::vanilla, 12);
  CHECK(a.target_head->weight.data != c.target_head->weight.data);
  const double bound = 1.0 / std::sqrt(32.0);
  for (double v : a.target_head->weight.data) {
    CHECK(v <= bound);
    CHECK(v >= -bound);
  }
}

TEST_CASE("missing and misshapen archives are rejected") {
  namespace fs = std::filesystem;
  BackboneSpec spec;
  spec.depth = BackboneDepth::tiny;

  // drop a tensor
  TensorArchive ar = TensorArchive::load(kGolden);
  TensorArchive incomplete;
  for (const auto& name : ar.names())
    if (name != "conv1.weight") incomplete.put(name, ar.at(name).shape, ar.at(name).data);
  const auto dir = fs::temp_directory_path() / "lungsc_backbone_test";
  fs::create_directories(dir);
  const std::string missing_path = (dir / "missing.safetensors").string();
  incomplete.save(missing_path);
  BackboneSpec ms = spec;
  ms.pretrained_archive = missing_path;
  CHECK_THROWS_AS(build(ms), MissingWeights);

  // corrupt a shape
  TensorArchive wrong;
  for (const auto& name : ar.names()) {
    if (name == "conv1.weight") {
      std::vector<double> bad(10, 0.0);
      wrong.put(name, {10}, bad);
    } else {
      wrong.put(name, ar.at(name).shape, ar.at(name).data);
    }
  }
  const std::string wrong_path = (dir / "wrong.safetensors").string();
  wrong.save(wrong_path);
  BackboneSpec ws = spec;
  ws.pretrained_archive = wrong_path;
  CHECK_THROWS_AS(build(ws), WeightShapeMismatch);
  fs::remove_all(dir);
}

TEST_CASE("pooled_embedding is deterministic and finite on constant input") {
  BackboneSpec spec;
  spec.depth = BackboneDepth::tiny;
  spec.pretrained_archive = kGolden;
  Model model = build(spec);
  ModelInput input;
  input.height = 16;
  input.width = 20;
  input.layout = InputLayout::replicate3;
  input.values.assign(3 * 16 * 20, 0.37);
  const auto a = pooled_embedding(model, input);
  const auto b = pooled_embedding(model, input);
  CHECK(a == b);
  CHECK(a.size() == 32);
  for (double v : a) CHECK(std::isfinite(v));
}

TEST_CASE("checkpoint round trip preserves weights, heads and metadata") {
  namespace fs = std::filesystem;
  BackboneSpec spec;
  spec.depth = BackboneDepth::tiny;
  spec.norm = NormKind::stochastic;
  spec.pretrained_archive = kGolden;
  spec.seed = 21;
  Model model = build(spec);
  attach_heads(model, 4, 3, TrainMode::cotuning_stochnorm, 21);

  const auto path = fs::temp_directory_path() / "lungsc_ckpt_test.safetensors";
  save_checkpoint(model, path.string(), {{"config_hash", "cafe"}, {"fold", "1"}});

  std::map<std::string, std::string> meta;
  Model back = load_checkpoint(path.string(), &meta);
  CHECK(meta.at("config_hash") == "cafe");
  CHECK(back.mode == TrainMode::cotuning_stochnorm);
  CHECK(back.backbone->spec().norm == NormKind::stochastic);
  REQUIRE(back.target_head != nullptr);
  REQUIRE(back.source_head != nullptr);

  auto params_a = model.params();
  auto params_b = back.params();
  REQUIRE(params_a.size() == params_b.size());
  for (size_t i = 0; i < params_a.size(); ++i) {
    CHECK(params_a[i].name == params_b[i].name);
    CHECK(*params_a[i].value == *params_b[i].value);
  }

  const TensorArchive ar = TensorArchive::load(kGolden);
  Tensor x = golden_tensor(ar, "golden.input");
  const Tensor ya = model.backbone->forward(x, false);
  const Tensor yb = back.backbone->forward(x, false);
  CHECK(ya.data == yb.data);
  fs::remove(path);
}

TEST_CASE("scratch init is seeded and depth-consistent") {
  BackboneSpec spec;
  spec.depth = BackboneDepth::tiny;
  spec.seed = 5;
  Model a = build(spec);
  Model b = build(spec);
  auto pa = a.backbone->params();
  auto pb = b.backbone->params();
  for (size_t i = 0; i < pa.size(); ++i) CHECK(*pa[i].value == *pb[i].value);
}

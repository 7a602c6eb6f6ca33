#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "lungsc/config.hpp"
#include "lungsc/error.hpp"

using namespace lungsc;

TEST_CASE("defaults parse and expose the documented values") {
  const auto cfg = ExperimentConfig::defaults();
  CHECK(cfg.task() == Task::alsc4);
  const auto tc = cfg.train_config();
  CHECK(tc.momentum == 0.9);
  CHECK(tc.batch_size == 32);
  CHECK(tc.epochs == 150);
  CHECK(tc.lr_backbone == 0.001);
  const auto spec = cfg.spectral_config();
  CHECK(spec.nfft == 512);
  CHECK(spec.hop == 256);
  CHECK(spec.n_mels == 50);
  const auto seg = cfg.segment_spec();
  CHECK(seg.length_s == 8.0);
  CHECK(seg.sample_rate_hz == 16000);
  CHECK(cfg.calib_preset() == CalibPreset::calib_alldev);
  const auto sn = cfg.stochnorm_config();
  CHECK(sn.p == 0.5);
  CHECK(sn.alpha == 0.1);
  CHECK(sn.eps == 1e-5);
  CHECK(cfg.n_runs() == 5);
}

TEST_CASE("overrides reach nested keys and coerce types") {
  const auto cfg = ExperimentConfig::from_json(
      nlohmann::json::object(),
      {"train.epochs=10", "features.n_mels=45", "task=rdc3", "backbone.depth=\"101\""});
  CHECK(cfg.train_config().epochs == 10);
  CHECK(cfg.spectral_config().n_mels == 45);
  CHECK(cfg.task() == Task::rdc3);
  CHECK(cfg.backbone_spec().depth == BackboneDepth::r101);
}

TEST_CASE("config hash is stable and sensitive") {
  const auto a = ExperimentConfig::from_json(nlohmann::json::object(), {});
  const auto b = ExperimentConfig::from_json(nlohmann::json::object(), {});
  CHECK(a.hash() == b.hash());
  const auto c = ExperimentConfig::from_json(nlohmann::json::object(), {"train.epochs=3"});
  CHECK(a.hash() != c.hash());
}

TEST_CASE("config files merge over the defaults") {
  namespace fs = std::filesystem;
  const auto path = fs::temp_directory_path() / "lungsc_cfg_test.json";
  {
    std::ofstream f(path);
    f << R"({"task": "alsc2", "train": {"mode": "cotuning"}})";
  }
  const auto cfg = ExperimentConfig::load(path.string(), {"train.epochs=7"});
  CHECK(cfg.task() == Task::alsc2);
  CHECK(cfg.train_config().mode == TrainMode::cotuning);
  CHECK(cfg.train_config().epochs == 7);
  // untouched defaults survive
  CHECK(cfg.train_config().batch_size == 32);
  fs::remove(path);
}

TEST_CASE("invalid configs fail fast with ConfigError") {
  CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json::object(), {"task=bogus"}),
                  ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json::object(), {"features.hop=100"}),
                  ConfigError);
  CHECK_THROWS_AS(
      ExperimentConfig::from_json(nlohmann::json::object(), {"train.batch_size=1"}),
      ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json(nlohmann::json::object(), {"stochnorm.p=1.5"}),
                  ConfigError);
}

TEST_CASE("stochnorm modes switch the backbone norm kind") {
  const auto vanilla = ExperimentConfig::from_json(nlohmann::json::object(), {});
  CHECK(vanilla.backbone_spec().norm == NormKind::batch);
  const auto sn =
      ExperimentConfig::from_json(nlohmann::json::object(), {"train.mode=stochnorm"});
  CHECK(sn.backbone_spec().norm == NormKind::stochastic);
  const auto both = ExperimentConfig::from_json(nlohmann::json::object(),
                                                {"train.mode=cotuning_stochnorm"});
  CHECK(both.backbone_spec().norm == NormKind::stochastic);
}

TEST_CASE("missing config file is a ConfigError") {
  CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/config.json", {}), ConfigError);
}

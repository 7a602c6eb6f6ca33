#include "lungsc/config.hpp"

#include <fstream>
#include <sstream>

#include "lungsc/error.hpp"

namespace lungsc {

using nlohmann::json;

namespace {

json builtin_defaults() {
  return json{
      {"task", "alsc4"},
      {"data",
       {{"kind", "icbhi"},
        {"root", ""},
        {"diagnosis_file", ""},
        {"generic_manifest", ""}}},
      {"split",
       {{"scheme", "official"},
        {"k", 5},
        {"validation_fraction", 0.2},
        {"split_file", ""}}},
      {"features",
       {{"sample_rate", 16000},
        {"segment_s", 8.0},
        {"overlap", 0.0},
        {"nfft", 512},
        {"hop", 256},
        {"n_mels", 50},
        {"fmin_hz", 0.0},
        {"fmax_hz", 0.0},
        {"window", "hann_periodic"},
        {"floor_mag", 1e-10},
        {"layout", "replicate3"},
        {"colormap", "viridis"},
        {"normalization", "global_scalar"},
        {"cache_dir", ""}}},
      {"speccorr", {{"preset", "calib_alldev"}}},
      {"augment",
       {{"enabled", true},
        {"prob_volume", 0.5},
        {"prob_noise", 0.5},
        {"prob_pitch", 0.5},
        {"prob_speed", 0.5},
        {"gain_db", {-6.0, 6.0}},
        {"snr_db", {20.0, 40.0}},
        {"pitch_semitones", {-2.0, 2.0}},
        {"speed", {0.9, 1.1}},
        {"stretch", {0.9, 1.1}},
        {"vtlp_alpha", {0.9, 1.1}},
        {"vtlp_fhi_hz", {3200.0, 3800.0}},
        {"flip", true}}},
      {"backbone",
       {{"depth", "50"},
        {"norm", "batch"},
        {"pretrained_archive", ""},
        {"n_source", 1000}}},
      {"stochnorm", {{"p", 0.5}, {"alpha", 0.1}, {"eps", 1e-5}}},
      {"cotuning", {{"relationship", "direct"}, {"lambda", 1.0}}},
      {"train",
       {{"mode", "vanilla"},
        {"lr_backbone", 0.001},
        {"lr_heads", 0.001},
        {"momentum", 0.9},
        {"batch_size", 32},
        {"epochs", 150},
        {"n_runs", 5}}},
      {"seed", 1},
      {"output", {{"dir", "runs"}}}};
}

void merge_into(json& base, const json& patch) {
  if (!patch.is_object()) {
    base = patch;
    return;
  }
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object()) {
      merge_into(base[it.key()], it.value());
    } else {
      base[it.key()] = it.value();
    }
  }
}

void apply_override(json& doc, const std::string& kv) {
  const size_t eq = kv.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + kv + "' is not key=value");
  const std::string key = kv.substr(0, eq);
  const std::string value = kv.substr(eq + 1);

  json* node = &doc;
  std::istringstream parts(key);
  std::string part;
  std::vector<std::string> path;
  while (std::getline(parts, part, '.')) path.push_back(part);
  if (path.empty()) throw ConfigError("empty override key");
  for (size_t i = 0; i + 1 < path.size(); ++i) {
    if (!node->contains(path[i])) (*node)[path[i]] = json::object();
    node = &(*node)[path[i]];
  }
  // interpret the value as JSON when it parses, as a string otherwise
  json parsed = json::parse(value, nullptr, false);
  (*node)[path.back()] = parsed.is_discarded() ? json(value) : parsed;
}

template <typename T>
T get_path(const json& doc, const std::string& a, const std::string& b) {
  try {
    return doc.at(a).at(b).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad or missing config key '" + a + "." + b + "': " + e.what());
  }
}

}  // namespace

std::string fnv1a_hex(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig cfg;
  cfg.doc_ = builtin_defaults();
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path,
                                        const std::vector<std::string>& overrides) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  json doc = json::parse(f, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("config '" + path + "' is not valid JSON");
  return from_json(doc, overrides);
}

ExperimentConfig ExperimentConfig::from_json(const json& doc,
                                             const std::vector<std::string>& overrides) {
  ExperimentConfig cfg;
  cfg.doc_ = builtin_defaults();
  merge_into(cfg.doc_, doc);
  for (const auto& kv : overrides) apply_override(cfg.doc_, kv);
  // fail fast on the typed views
  cfg.task();
  cfg.segment_spec();
  cfg.spectral_config().validate();
  cfg.train_config().validate();
  cfg.stochnorm_config().validate();
  cfg.calib_preset();
  cfg.input_layout();
  return cfg;
}

std::string ExperimentConfig::hash() const { return fnv1a_hex(doc_.dump()); }

Task ExperimentConfig::task() const {
  return task_from_string(doc_.at("task").get<std::string>());
}

std::string ExperimentConfig::corpus_kind() const {
  return get_path<std::string>(doc_, "data", "kind");
}
std::string ExperimentConfig::data_root() const { return get_path<std::string>(doc_, "data", "root"); }
std::string ExperimentConfig::diagnosis_file() const {
  return get_path<std::string>(doc_, "data", "diagnosis_file");
}
std::string ExperimentConfig::generic_manifest() const {
  return get_path<std::string>(doc_, "data", "generic_manifest");
}
std::string ExperimentConfig::output_dir() const { return get_path<std::string>(doc_, "output", "dir"); }

SplitScheme ExperimentConfig::split_scheme() const {
  const std::string s = get_path<std::string>(doc_, "split", "scheme");
  if (s == "official") return SplitScheme::official_6040;
  if (s == "kfold") return SplitScheme::kfold;
  if (s == "manifest") return SplitScheme::leave_manifest;
  throw ConfigError("unknown split scheme '" + s + "' (official|kfold|manifest)");
}
int ExperimentConfig::split_k() const { return get_path<int>(doc_, "split", "k"); }
double ExperimentConfig::validation_fraction() const {
  return get_path<double>(doc_, "split", "validation_fraction");
}
std::string ExperimentConfig::split_file() const {
  return get_path<std::string>(doc_, "split", "split_file");
}

SegmentSpec ExperimentConfig::segment_spec() const {
  SegmentSpec spec;
  spec.length_s = get_path<double>(doc_, "features", "segment_s");
  spec.overlap_fraction = get_path<double>(doc_, "features", "overlap");
  spec.sample_rate_hz = get_path<int>(doc_, "features", "sample_rate");
  spec.target_len();
  return spec;
}

SpectralConfig ExperimentConfig::spectral_config() const {
  SpectralConfig cfg;
  cfg.nfft = get_path<int>(doc_, "features", "nfft");
  cfg.hop = get_path<int>(doc_, "features", "hop");
  cfg.n_mels = get_path<int>(doc_, "features", "n_mels");
  cfg.fmin_hz = get_path<double>(doc_, "features", "fmin_hz");
  cfg.fmax_hz = get_path<double>(doc_, "features", "fmax_hz");
  cfg.sample_rate_hz = get_path<int>(doc_, "features", "sample_rate");
  cfg.floor_mag = get_path<double>(doc_, "features", "floor_mag");
  return cfg;
}

InputLayout ExperimentConfig::input_layout() const {
  return input_layout_from_string(get_path<std::string>(doc_, "features", "layout"));
}

CalibPreset ExperimentConfig::calib_preset() const {
  return calib_preset_from_string(get_path<std::string>(doc_, "speccorr", "preset"));
}

bool ExperimentConfig::augment_enabled() const {
  return get_path<bool>(doc_, "augment", "enabled");
}

void ExperimentConfig::apply_augment_overrides(AugmentPlan& plan) const {
  const json& a = doc_.at("augment");
  plan.time_ops.prob_volume = a.at("prob_volume").get<double>();
  plan.time_ops.prob_noise = a.at("prob_noise").get<double>();
  plan.time_ops.prob_pitch = a.at("prob_pitch").get<double>();
  plan.time_ops.prob_speed = a.at("prob_speed").get<double>();
  plan.time_ops.gain_db_low = a.at("gain_db").at(0).get<double>();
  plan.time_ops.gain_db_high = a.at("gain_db").at(1).get<double>();
  plan.time_ops.snr_db_low = a.at("snr_db").at(0).get<double>();
  plan.time_ops.snr_db_high = a.at("snr_db").at(1).get<double>();
  plan.time_ops.pitch_semitones_low = a.at("pitch_semitones").at(0).get<double>();
  plan.time_ops.pitch_semitones_high = a.at("pitch_semitones").at(1).get<double>();
  plan.time_ops.speed_low = a.at("speed").at(0).get<double>();
  plan.time_ops.speed_high = a.at("speed").at(1).get<double>();
  plan.stretch_low = a.at("stretch").at(0).get<double>();
  plan.stretch_high = a.at("stretch").at(1).get<double>();
  plan.vtlp.alpha_low = a.at("vtlp_alpha").at(0).get<double>();
  plan.vtlp.alpha_high = a.at("vtlp_alpha").at(1).get<double>();
  plan.vtlp.fhi_low_hz = a.at("vtlp_fhi_hz").at(0).get<double>();
  plan.vtlp.fhi_high_hz = a.at("vtlp_fhi_hz").at(1).get<double>();
  plan.flip_enabled = plan.flip_enabled && a.at("flip").get<bool>();
  plan.validate();
}

BackboneSpec ExperimentConfig::backbone_spec() const {
  BackboneSpec spec;
  spec.depth = backbone_depth_from_string(get_path<std::string>(doc_, "backbone", "depth"));
  spec.norm = mode_uses_stochnorm(train_config().mode) ? NormKind::stochastic : NormKind::batch;
  spec.pretrained_archive = get_path<std::string>(doc_, "backbone", "pretrained_archive");
  spec.input_layout = input_layout();
  spec.stochnorm = stochnorm_config();
  spec.seed = seed();
  return spec;
}

StochNormConfig ExperimentConfig::stochnorm_config() const {
  StochNormConfig cfg;
  cfg.p = get_path<double>(doc_, "stochnorm", "p");
  cfg.alpha = get_path<double>(doc_, "stochnorm", "alpha");
  cfg.eps = get_path<double>(doc_, "stochnorm", "eps");
  return cfg;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig cfg;
  cfg.mode = train_mode_from_string(get_path<std::string>(doc_, "train", "mode"));
  cfg.lambda = get_path<double>(doc_, "cotuning", "lambda");
  cfg.lr_backbone = get_path<double>(doc_, "train", "lr_backbone");
  cfg.lr_heads = get_path<double>(doc_, "train", "lr_heads");
  cfg.momentum = get_path<double>(doc_, "train", "momentum");
  cfg.batch_size = get_path<int>(doc_, "train", "batch_size");
  cfg.epochs = get_path<int>(doc_, "train", "epochs");
  cfg.seed = seed();
  return cfg;
}

int ExperimentConfig::n_runs() const { return get_path<int>(doc_, "train", "n_runs"); }

uint64_t ExperimentConfig::seed() const { return doc_.at("seed").get<uint64_t>(); }

int64_t ExperimentConfig::n_source_classes() const {
  return get_path<int64_t>(doc_, "backbone", "n_source");
}

std::string ExperimentConfig::relationship_method() const {
  return get_path<std::string>(doc_, "cotuning", "relationship");
}

std::string ExperimentConfig::feature_cache_dir() const {
  return get_path<std::string>(doc_, "features", "cache_dir");
}

}  // namespace lungsc

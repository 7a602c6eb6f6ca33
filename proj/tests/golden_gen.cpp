// Regenerates tests/data/feature_goldens.json, the bit-exact pins of the
// feature pipeline. Run manually after an intentional change:
//   ./build/tests/golden_gen tests/data/feature_goldens.json
// The pinned values are the implementation's own output at freeze time;
// correctness against independent oracles is asserted in the unit tests.

#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "lungsc/augment.hpp"
#include "lungsc/features.hpp"
#include "lungsc/rng.hpp"

using namespace lungsc;
using nlohmann::json;

namespace {

std::vector<double> noise(size_t n, uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out(n);
  for (double& v : out) v = rng.normal();
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  const std::string out_path = argc > 1 ? argv[1] : "feature_goldens.json";
  json doc;

  {
    json cases = json::array();
    for (auto [n, len, seed] : {std::tuple<size_t, size_t, uint64_t>{3, 9, 100},
                                {2, 7, 101},
                                {13, 40, 102},
                                {1, 5, 103}}) {
      const auto x = noise(n, seed);
      cases.push_back({{"input", x}, {"target_len", len}, {"output", reflect_pad(x, len)}});
    }
    doc["reflect_pad"] = cases;
  }

  {
    const auto x = noise(1300, 200);
    SegmentSpec spec{0.5, 0.0, 1000};
    json segs = json::array();
    for (const auto& s : segment(x, spec))
      segs.push_back({{"start", s.start}, {"src_len", s.src_len}, {"samples", s.samples}});
    doc["segment"] = {{"input", x},
                      {"length_s", spec.length_s},
                      {"overlap", spec.overlap_fraction},
                      {"sample_rate", spec.sample_rate_hz},
                      {"segments", segs}};
  }

  {
    SpectralConfig cfg;
    cfg.nfft = 512;
    cfg.hop = 256;
    cfg.n_mels = 50;
    cfg.sample_rate_hz = 16000;
    doc["mel_filterbank"] = {{"n_mels", cfg.n_mels},
                             {"nfft", cfg.nfft},
                             {"sample_rate", cfg.sample_rate_hz},
                             {"bank", mel_filterbank(cfg)}};

    const auto x = noise(1024, 300);
    const auto stack = stft_magnitude(x, cfg);
    const auto feat = logmel(stack, mel_filterbank(cfg), cfg);
    doc["logmel"] = {{"input", x},
                     {"n_mels", feat.n_mels},
                     {"n_frames", feat.n_frames},
                     {"values", feat.values}};
  }

  {
    LogMelFeature feat;
    feat.n_mels = 6;
    feat.n_frames = 4;
    feat.values = noise(24, 400);
    const auto flipped = flip_frequency(feat);
    doc["flip"] = {{"n_mels", feat.n_mels},
                   {"n_frames", feat.n_frames},
                   {"input", feat.values},
                   {"output", flipped.values}};
  }

  std::ofstream f(out_path, std::ios::trunc);
  f << doc.dump(1) << "\n";
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

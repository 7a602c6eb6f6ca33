#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "lungsc/error.hpp"
#include "lungsc/rng.hpp"
#include "lungsc/speccorr.hpp"

using namespace lungsc;

namespace {

Stft random_stack(int bins, int frames, uint64_t seed) {
  Rng rng(seed);
  Stft s;
  s.bins = bins;
  s.frames = frames;
  s.mag.resize(static_cast<size_t>(bins) * frames);
  for (double& v : s.mag) v = 0.01 + std::abs(rng.normal());
  return s;
}

}  // namespace

TEST_CASE("segment mean spectrum: single frame is that frame") {
  Stft s = random_stack(8, 1, 1);
  const auto mean = segment_mean_spectrum(s);
  for (int b = 0; b < 8; ++b) CHECK(mean[static_cast<size_t>(b)] == s.at(b, 0));
}

TEST_CASE("segment mean spectrum: zero frame halves the other") {
  Stft s;
  s.bins = 4;
  s.frames = 2;
  s.mag = {0, 2, 0, 4, 0, 6, 0, 8};  // frame 0 zero, frame 1 = v
  const auto mean = segment_mean_spectrum(s);
  CHECK(mean == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("segment mean spectrum matches the per-bin loop oracle") {
  Stft s = random_stack(257, 37, 2);
  const auto mean = segment_mean_spectrum(s);
  for (int b = 0; b < s.bins; ++b) {
    double acc = 0.0;
    for (int t = 0; t < s.frames; ++t) acc += s.at(b, t);
    CHECK(std::abs(mean[static_cast<size_t>(b)] - acc / s.frames) < 1e-12);
  }
}

TEST_CASE("segment mean spectrum rejects empty stacks") {
  Stft s;
  s.bins = 4;
  s.frames = 0;
  CHECK_THROWS_AS(segment_mean_spectrum(s), EmptyStack);
}

TEST_CASE("device profile over identical vectors is that vector") {
  std::vector<double> v = {1, 2, 3};
  const auto p = device_profile({v, v, v}, "devX");
  CHECK(p.mean_spectrum == v);
  CHECK(p.n_segments == 3);
}

TEST_CASE("device profile of two spectra averages them") {
  const auto p = device_profile({{2, 4}, {4, 8}}, "devX");
  CHECK(p.mean_spectrum == std::vector<double>{3, 6});
}

TEST_CASE("device profile matches the loop oracle on 100 random spectra") {
  Rng rng(3);
  std::vector<std::vector<double>> spectra(100, std::vector<double>(16));
  for (auto& s : spectra)
    for (double& v : s) v = std::abs(rng.normal());
  const auto p = device_profile(spectra, "devX");
  for (size_t b = 0; b < 16; ++b) {
    double acc = 0.0;
    for (const auto& s : spectra) acc += s[b];
    CHECK(std::abs(p.mean_spectrum[b] - acc / 100.0) < 1e-12);
  }
}

TEST_CASE("empty device is rejected") {
  CHECK_THROWS_AS(device_profile({}, "devX"), EmptyDevice);
}

TEST_CASE("singleton reference set returns that device's mean") {
  DeviceSpectrumProfile p{"devA", {1, 2, 3}, 7};
  CHECK(reference_spectrum({p}, {"devA"}) == p.mean_spectrum);
}

TEST_CASE("reference spectrum is unweighted over devices") {
  // devA has 1000 segments, devB one: the reference still weighs them equally
  DeviceSpectrumProfile a{"devA", {2, 2}, 1000};
  DeviceSpectrumProfile b{"devB", {4, 6}, 1};
  CHECK(reference_spectrum({a, b}, {"devA", "devB"}) == std::vector<double>{3, 4});
}

TEST_CASE("reference spectrum over four devices matches the loop oracle") {
  Rng rng(4);
  std::vector<DeviceSpectrumProfile> profiles;
  for (int d = 0; d < 4; ++d) {
    DeviceSpectrumProfile p;
    p.device = "dev" + std::to_string(d);
    p.n_segments = 1 + static_cast<int64_t>(rng.uniform_index(50));
    p.mean_spectrum.resize(12);
    for (double& v : p.mean_spectrum) v = std::abs(rng.normal());
    profiles.push_back(p);
  }
  const auto ref = reference_spectrum(profiles, {"dev0", "dev1", "dev2", "dev3"});
  for (size_t b = 0; b < 12; ++b) {
    double acc = 0.0;
    for (const auto& p : profiles) acc += p.mean_spectrum[b];
    CHECK(std::abs(ref[b] - acc / 4.0) < 1e-12);
  }
}

TEST_CASE("missing device profile is an error") {
  DeviceSpectrumProfile a{"devA", {1}, 1};
  CHECK_THROWS_AS(reference_spectrum({a}, {"devB"}), MissingDeviceProfile);
}

TEST_CASE("coefficients: ref == mean gives ones, ref = 2 mean gives twos") {
  DeviceSpectrumProfile p{"devA", {1, 2, 4}, 3};
  auto c1 = correction_coefficients(std::vector<double>{1, 2, 4}, p);
  CHECK(c1.coeffs == std::vector<double>{1, 1, 1});
  auto c2 = correction_coefficients(std::vector<double>{2, 4, 8}, p);
  CHECK(c2.coeffs == std::vector<double>{2, 2, 2});
}

TEST_CASE("zero-magnitude bin gets coefficient 1") {
  DeviceSpectrumProfile p{"devA", {0.0, 2.0}, 3};
  auto c = correction_coefficients(std::vector<double>{5.0, 2.0}, p);
  CHECK(c.coeffs[0] == 1.0);
  CHECK(c.coeffs[1] == 1.0);
}

TEST_CASE("coefficients are clipped to [0.1, 10]") {
  DeviceSpectrumProfile p{"devA", {1.0, 1.0}, 1};
  auto c = correction_coefficients(std::vector<double>{100.0, 0.001}, p);
  CHECK(c.coeffs[0] == 10.0);
  CHECK(c.coeffs[1] == 0.1);
}

TEST_CASE("apply_correction identity and inverse round trip") {
  Stft s = random_stack(8, 5, 5);
  CorrectionCoefficients ones{"devA", std::vector<double>(8, 1.0), {}};
  const auto same = apply_correction(s, ones);
  CHECK(same.mag == s.mag);

  CorrectionCoefficients doubled{"devA", std::vector<double>(8, 2.0), {}};
  CorrectionCoefficients halved{"devA", std::vector<double>(8, 0.5), {}};
  const auto round = apply_correction(apply_correction(s, doubled), halved);
  for (size_t i = 0; i < s.mag.size(); ++i)
    CHECK(round.mag[i] == doctest::Approx(s.mag[i]).epsilon(1e-12));
}

TEST_CASE("apply_correction matches the loop oracle") {
  Stft s = random_stack(16, 9, 6);
  Rng rng(7);
  CorrectionCoefficients c;
  c.coeffs.resize(16);
  for (double& v : c.coeffs) v = 0.2 + std::abs(rng.normal());
  const auto out = apply_correction(s, c);
  for (int b = 0; b < 16; ++b)
    for (int t = 0; t < 9; ++t)
      CHECK(std::abs(out.at(b, t) - s.at(b, t) * c.coeffs[static_cast<size_t>(b)]) < 1e-12);
}

TEST_CASE("apply_correction rejects bin mismatch") {
  Stft s = random_stack(8, 2, 8);
  CorrectionCoefficients c{"devA", std::vector<double>(9, 1.0), {}};
  CHECK_THROWS_AS(apply_correction(s, c), ShapeMismatch);
}

TEST_CASE("self-calibration: singleton reference maps the device mean onto s_ref") {
  Rng rng(9);
  std::vector<std::vector<double>> spectra(20, std::vector<double>(16));
  for (auto& s : spectra)
    for (double& v : s) v = 0.1 + std::abs(rng.normal());
  const auto profile = device_profile(spectra, "devK");
  const auto ref = reference_spectrum({profile}, {"devK"});
  const auto coeffs = correction_coefficients(ref, profile);
  // corrected mean spectrum equals the reference exactly
  std::vector<double> corrected_mean(16, 0.0);
  for (const auto& s : spectra)
    for (size_t b = 0; b < 16; ++b) corrected_mean[b] += s[b] * coeffs.coeffs[b] / 20.0;
  for (size_t b = 0; b < 16; ++b) CHECK(corrected_mean[b] == doctest::Approx(ref[b]).epsilon(1e-12));
}

TEST_CASE("homogeneity: gain on a device's audio cancels out of corrected spectra") {
  // the reference is frozen (computed from the unscaled training data), so
  // scaling the device's audio by c scales its mean by c and divides the
  // coefficients by c; corrected spectra are invariant
  Rng rng(10);
  std::vector<std::vector<double>> spectra(12, std::vector<double>(8));
  for (auto& s : spectra)
    for (double& v : s) v = 0.1 + std::abs(rng.normal());
  const auto p0 = device_profile(spectra, "devK");
  const std::vector<double> ref = reference_spectrum({p0}, {"devK"});
  const auto c0 = correction_coefficients(ref, p0);

  for (double gain : {0.5, 2.0, 10.0}) {
    std::vector<std::vector<double>> scaled = spectra;
    for (auto& s : scaled)
      for (double& v : s) v *= gain;
    const auto p1 = device_profile(scaled, "devK");
    for (size_t b = 0; b < 8; ++b)
      CHECK(p1.mean_spectrum[b] == doctest::Approx(gain * p0.mean_spectrum[b]).epsilon(1e-12));
    const auto c1 = correction_coefficients(ref, p1);
    for (size_t b = 0; b < 8; ++b) {
      CHECK(c1.coeffs[b] == doctest::Approx(c0.coeffs[b] / gain).epsilon(1e-12));
      const double corrected0 = spectra[0][b] * c0.coeffs[b];
      const double corrected1 = scaled[0][b] * c1.coeffs[b];
      CHECK(corrected1 == doctest::Approx(corrected0).epsilon(1e-9));
    }
  }
}

TEST_CASE("profile accumulator merge equals one-shot accumulation") {
  Rng rng(11);
  std::vector<std::vector<double>> spectra(30, std::vector<double>(6));
  for (auto& s : spectra)
    for (double& v : s) v = std::abs(rng.normal());
  ProfileAccumulator all, a, b;
  for (size_t i = 0; i < spectra.size(); ++i) {
    all.add(spectra[i]);
    (i % 2 ? a : b).add(spectra[i]);
  }
  a.merge(b);
  const auto pa = a.finish("dev");
  const auto pall = all.finish("dev");
  CHECK(pa.n_segments == pall.n_segments);
  for (size_t i = 0; i < 6; ++i)
    CHECK(pa.mean_spectrum[i] == doctest::Approx(pall.mean_spectrum[i]).epsilon(1e-12));
}

TEST_CASE("preset reference devices") {
  const std::vector<std::string> all = {"AKGC417L", "Meditron", "Litt3200", "LittC2SE"};
  CHECK(preset_reference_devices(CalibPreset::calib_dev1, all) ==
        std::vector<std::string>{"AKGC417L"});
  CHECK(preset_reference_devices(CalibPreset::calib_dev2, all) ==
        std::vector<std::string>{"Meditron"});
  CHECK(preset_reference_devices(CalibPreset::calib_dev1dev2, all) ==
        std::vector<std::string>{"AKGC417L", "Meditron"});
  CHECK(preset_reference_devices(CalibPreset::calib_alldev, all) == all);
  CHECK(preset_reference_devices(CalibPreset::no_calib, all).empty());
}

TEST_CASE("correction table round trip") {
  CorrectionTable t;
  t.fold = 2;
  t.config_hash = "abc123";
  t.reference_set = {"devA", "devB"};
  t.by_device["devA"] = {"devA", {1.0, 2.0, 0.5}, t.reference_set};
  t.by_device["devB"] = {"devB", {0.9, 1.1, 1.0}, t.reference_set};
  const std::string path =
      (std::filesystem::temp_directory_path() / "lungsc_coeff_test.json").string();
  t.save(path);
  const auto back = CorrectionTable::load(path);
  CHECK(back.fold == 2);
  CHECK(back.config_hash == "abc123");
  CHECK(back.reference_set == t.reference_set);
  CHECK(back.by_device.at("devA").coeffs == t.by_device.at("devA").coeffs);
  CHECK(back.by_device.at("devB").coeffs == t.by_device.at("devB").coeffs);
  std::filesystem::remove(path);
}

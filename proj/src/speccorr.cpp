#include "lungsc/speccorr.hpp"

#include <algorithm>
#include <fstream>

#include <nlohmann/json.hpp>

#include "lungsc/error.hpp"
#include "lungsc/log.hpp"

namespace lungsc {

using nlohmann::json;

CalibPreset calib_preset_from_string(const std::string& s) {
  if (s == "no_calib") return CalibPreset::no_calib;
  if (s == "calib_dev1") return CalibPreset::calib_dev1;
  if (s == "calib_dev2") return CalibPreset::calib_dev2;
  if (s == "calib_dev1dev2") return CalibPreset::calib_dev1dev2;
  if (s == "calib_alldev") return CalibPreset::calib_alldev;
  throw ConfigError("unknown calibration preset '" + s + "'");
}

std::string to_string(CalibPreset p) {
  switch (p) {
    case CalibPreset::no_calib: return "no_calib";
    case CalibPreset::calib_dev1: return "calib_dev1";
    case CalibPreset::calib_dev2: return "calib_dev2";
    case CalibPreset::calib_dev1dev2: return "calib_dev1dev2";
    case CalibPreset::calib_alldev: return "calib_alldev";
  }
  return "no_calib";
}

std::vector<std::string> preset_reference_devices(CalibPreset p,
                                                  const std::vector<std::string>& all_devices) {
  switch (p) {
    case CalibPreset::no_calib: return {};
    case CalibPreset::calib_dev1: return {"AKGC417L"};
    case CalibPreset::calib_dev2: return {"Meditron"};
    case CalibPreset::calib_dev1dev2: return {"AKGC417L", "Meditron"};
    case CalibPreset::calib_alldev: return all_devices;
  }
  return {};
}

std::vector<double> segment_mean_spectrum(const Stft& mags) {
  if (mags.frames < 1) throw EmptyStack("mean spectrum of an empty stack");
  std::vector<double> out(static_cast<size_t>(mags.bins), 0.0);
  for (int b = 0; b < mags.bins; ++b) {
    double acc = 0.0;
    for (int t = 0; t < mags.frames; ++t) acc += mags.at(b, t);
    out[static_cast<size_t>(b)] = acc / mags.frames;
  }
  return out;
}

DeviceSpectrumProfile device_profile(const std::vector<std::vector<double>>& segment_spectra,
                                     const std::string& device) {
  if (segment_spectra.empty()) throw EmptyDevice("device '" + device + "' has no segments");
  const size_t bins = segment_spectra.front().size();
  DeviceSpectrumProfile p;
  p.device = device;
  p.n_segments = static_cast<int64_t>(segment_spectra.size());
  p.mean_spectrum.assign(bins, 0.0);
  for (const auto& s : segment_spectra) {
    if (s.size() != bins) throw ShapeMismatch("segment spectra of unequal length");
    for (size_t b = 0; b < bins; ++b) p.mean_spectrum[b] += s[b];
  }
  for (double& v : p.mean_spectrum) v /= static_cast<double>(p.n_segments);
  return p;
}

std::vector<double> reference_spectrum(const std::vector<DeviceSpectrumProfile>& profiles,
                                       const std::vector<std::string>& reference_devices) {
  if (reference_devices.empty())
    throw MissingDeviceProfile("reference device set is empty");
  std::vector<const DeviceSpectrumProfile*> chosen;
  for (const auto& name : reference_devices) {
    const DeviceSpectrumProfile* found = nullptr;
    for (const auto& p : profiles)
      if (p.device == name) found = &p;
    if (!found) throw MissingDeviceProfile("no profile for device '" + name + "'");
    chosen.push_back(found);
  }
  // Unweighted mean over device means: every reference device counts the
  // same regardless of its segment count.
  std::vector<double> ref(chosen.front()->mean_spectrum.size(), 0.0);
  for (const auto* p : chosen) {
    if (p->mean_spectrum.size() != ref.size())
      throw ShapeMismatch("device profiles of unequal length");
    for (size_t b = 0; b < ref.size(); ++b) ref[b] += p->mean_spectrum[b];
  }
  for (double& v : ref) v /= static_cast<double>(chosen.size());
  return ref;
}

CorrectionCoefficients correction_coefficients(std::span<const double> ref,
                                               const DeviceSpectrumProfile& profile) {
  if (ref.size() != profile.mean_spectrum.size())
    throw ShapeMismatch("reference / profile bin counts differ");
  CorrectionCoefficients out;
  out.device = profile.device;
  out.coeffs.resize(ref.size());
  int clipped = 0;
  for (size_t b = 0; b < ref.size(); ++b) {
    const double mean = profile.mean_spectrum[b];
    double c = (mean > 0.0) ? ref[b] / mean : 1.0;
    const double clamped = std::clamp(c, 0.1, 10.0);
    if (clamped != c) ++clipped;
    out.coeffs[b] = clamped;
  }
  if (clipped > 0)
    warn("spectrum correction for '" + profile.device + "': " +
         std::to_string(clipped) + " coefficient(s) clipped to [0.1, 10]");
  return out;
}

Stft apply_correction(const Stft& mags, const CorrectionCoefficients& coeffs) {
  if (static_cast<size_t>(mags.bins) != coeffs.coeffs.size())
    throw ShapeMismatch("coefficient vector has " + std::to_string(coeffs.coeffs.size()) +
                        " bins, stack has " + std::to_string(mags.bins));
  Stft out = mags;
  for (int b = 0; b < out.bins; ++b)
    for (int t = 0; t < out.frames; ++t) out.at(b, t) = mags.at(b, t) * coeffs.coeffs[static_cast<size_t>(b)];
  return out;
}

void ProfileAccumulator::add(std::span<const double> spectrum) {
  if (sum.empty()) sum.assign(spectrum.size(), 0.0);
  if (sum.size() != spectrum.size()) throw ShapeMismatch("spectrum size changed mid-accumulation");
  for (size_t b = 0; b < sum.size(); ++b) sum[b] += spectrum[b];
  ++count;
}

void ProfileAccumulator::merge(const ProfileAccumulator& other) {
  if (other.count == 0) return;
  if (count == 0) {
    *this = other;
    return;
  }
  if (sum.size() != other.sum.size()) throw ShapeMismatch("merging accumulators of unequal width");
  for (size_t b = 0; b < sum.size(); ++b) sum[b] += other.sum[b];
  count += other.count;
}

DeviceSpectrumProfile ProfileAccumulator::finish(const std::string& device) const {
  if (count == 0) throw EmptyDevice("device '" + device + "' has no segments");
  DeviceSpectrumProfile p;
  p.device = device;
  p.n_segments = count;
  p.mean_spectrum.resize(sum.size());
  for (size_t b = 0; b < sum.size(); ++b) p.mean_spectrum[b] = sum[b] / static_cast<double>(count);
  return p;
}

void CorrectionTable::save(const std::string& path) const {
  json j;
  j["fold"] = fold;
  j["config_hash"] = config_hash;
  j["reference_set"] = reference_set;
  json devs = json::object();
  for (const auto& [name, c] : by_device) devs[name] = c.coeffs;
  j["coefficients"] = devs;
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << j.dump(2) << "\n";
}

CorrectionTable CorrectionTable::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path + "'");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw IoError("bad correction table '" + path + "': " + e.what());
  }
  CorrectionTable t;
  t.fold = j.value("fold", -1);
  t.config_hash = j.value("config_hash", "");
  t.reference_set = j.at("reference_set").get<std::vector<std::string>>();
  for (auto it = j.at("coefficients").begin(); it != j.at("coefficients").end(); ++it) {
    CorrectionCoefficients c;
    c.device = it.key();
    c.coeffs = it.value().get<std::vector<double>>();
    c.reference_set = t.reference_set;
    t.by_device[it.key()] = std::move(c);
  }
  return t;
}

}  // namespace lungsc

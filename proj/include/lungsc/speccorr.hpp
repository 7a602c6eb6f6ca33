#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "lungsc/dsp.hpp"

namespace lungsc {

struct DeviceSpectrumProfile {
  std::string device;
  std::vector<double> mean_spectrum;  // nfft/2+1 bins
  int64_t n_segments = 0;
};

struct CorrectionCoefficients {
  std::string device;
  std::vector<double> coeffs;
  std::vector<std::string> reference_set;
};

enum class CalibPreset { no_calib, calib_dev1, calib_dev2, calib_dev1dev2, calib_alldev };

CalibPreset calib_preset_from_string(const std::string& s);
std::string to_string(CalibPreset p);

// Devices named by each preset; calib_alldev resolves to every profiled device.
std::vector<std::string> preset_reference_devices(CalibPreset p,
                                                  const std::vector<std::string>& all_devices);

// Per-bin mean of a magnitude stack along the time axis.
std::vector<double> segment_mean_spectrum(const Stft& mags);

DeviceSpectrumProfile device_profile(const std::vector<std::vector<double>>& segment_spectra,
                                     const std::string& device);

std::vector<double> reference_spectrum(const std::vector<DeviceSpectrumProfile>& profiles,
                                       const std::vector<std::string>& reference_devices);

// coeffs[b] = ref[b] / mean[b]; zero-magnitude bins get coefficient 1 and
// the result is clipped to [0.1, 10] (clipping is reported via warn()).
CorrectionCoefficients correction_coefficients(std::span<const double> ref,
                                               const DeviceSpectrumProfile& profile);

Stft apply_correction(const Stft& mags, const CorrectionCoefficients& coeffs);

// Mergeable (sum, count) accumulator used when profiling a corpus.
struct ProfileAccumulator {
  std::vector<double> sum;
  int64_t count = 0;

  void add(std::span<const double> spectrum);
  void merge(const ProfileAccumulator& other);
  DeviceSpectrumProfile finish(const std::string& device) const;
};

struct CorrectionTable {
  std::map<std::string, CorrectionCoefficients> by_device;
  std::vector<std::string> reference_set;
  std::string config_hash;
  int fold = -1;

  void save(const std::string& path) const;
  static CorrectionTable load(const std::string& path);
};

}  // namespace lungsc

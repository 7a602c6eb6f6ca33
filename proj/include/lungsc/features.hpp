#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lungsc/dsp.hpp"

namespace lungsc {

struct SegmentSpec {
  double length_s = 8.0;
  double overlap_fraction = 0.0;  // 0 for cycles, 0.5 for recordings
  int sample_rate_hz = 16000;

  int target_len() const;  // length_s * sample_rate_hz, validated integral
};

struct SpectralConfig {
  int nfft = 512;
  int hop = 256;  // nfft/2, 50% window overlap
  int n_mels = 50;
  double fmin_hz = 0.0;
  double fmax_hz = 0.0;  // 0 means Nyquist
  int sample_rate_hz = 16000;
  double warp_factor = 1.0;
  double warp_fhi_hz = 3500.0;
  std::string window = "hann_periodic";
  double floor_mag = 1e-10;

  double fmax_or_nyquist() const {
    return fmax_hz > 0.0 ? fmax_hz : sample_rate_hz / 2.0;
  }
  void validate() const;
};

// Streaming (count, mean, M2) moments with a defined merge, so training-set
// statistics can be accumulated in parallel and reduced.
struct NormStats {
  int64_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x);
  void add_all(std::span<const double> xs);
  void merge(const NormStats& other);
  double variance() const { return count > 0 ? m2 / count : 0.0; }
  double stddev() const;
};

struct LogMelFeature {
  std::vector<double> values;  // n_mels x n_frames, row-major
  int n_mels = 0;
  int n_frames = 0;
  bool normalized = false;
  std::string segment_id;
  std::string device;

  double& at(int mel, int frame) { return values[static_cast<size_t>(mel) * n_frames + frame]; }
  double at(int mel, int frame) const { return values[static_cast<size_t>(mel) * n_frames + frame]; }
};

enum class InputLayout { replicate3, rgb_upscaled2x };

InputLayout input_layout_from_string(const std::string& s);
std::string to_string(InputLayout layout);

struct ModelInput {
  std::vector<double> values;  // 3 x H x W, row-major
  int height = 0;
  int width = 0;
  InputLayout layout = InputLayout::replicate3;

  double at(int c, int y, int x) const {
    return values[(static_cast<size_t>(c) * height + y) * width + x];
  }
};

// Mirror padding without repeating the edge sample, bouncing as often as
// needed: [1,2,3] -> 1,2,3,2,1,2,3,... The first samples are unchanged.
std::vector<double> reflect_pad(std::span<const double> samples, size_t target_len);

// Fixed-length segmentation. Full windows advance by hop = L*(1-overlap);
// whatever tail they leave uncovered becomes one final reflect-padded
// segment. A short input yields a single padded segment.
struct Segment {
  std::vector<double> samples;
  size_t start = 0;    // start index in the source
  size_t src_len = 0;  // unpadded sample count
};
std::vector<Segment> segment(std::span<const double> samples, const SegmentSpec& spec);

// Hann-windowed magnitude STFT, frames fully inside the input (no centering).
Stft stft_magnitude(std::span<const double> samples, const SpectralConfig& cfg);

// Triangular mel filters, [n_mels x nfft/2+1] row-major. warp_factor != 1
// remaps the band edges through the piecewise-linear VTLP map (breakpoint
// warp_fhi_hz) before the triangles are built.
std::vector<double> mel_filterbank(const SpectralConfig& cfg);

// The VTLP frequency map itself (exposed for tests).
double vtlp_warp_frequency(double f, double alpha, double fhi, double nyquist);

// log(max(bank * mags, floor)); normalization is applied separately.
LogMelFeature logmel(const Stft& mags, std::span<const double> bank,
                     const SpectralConfig& cfg);

// (x - mean) / std with frozen training statistics.
void normalize(LogMelFeature& feat, const NormStats& stats);

ModelInput to_model_input(const LogMelFeature& feat, InputLayout layout);

}  // namespace lungsc

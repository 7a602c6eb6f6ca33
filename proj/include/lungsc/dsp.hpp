#pragma once

#include <complex>
#include <span>
#include <vector>

namespace lungsc {

// Forward real FFT, half spectrum: returns n/2+1 unnormalized bins.
std::vector<std::complex<double>> rfft(std::span<const double> x);

// Inverse of rfft for an n-point real signal (1/n normalization).
std::vector<double> irfft(std::span<const std::complex<double>> spec, int n);

// Periodic Hann window of length n: 0.5 * (1 - cos(2*pi*i/n)).
std::vector<double> hann_window(int n);

// Band-limited resampling (windowed-sinc interpolation).
// Output length is round(n * sr_out / sr_in); sr_in == sr_out is identity.
std::vector<double> resample(std::span<const double> samples, int sr_in,
                             int sr_out);

// Framed STFT without centering: frame t covers samples [t*hop, t*hop+nfft).
// Output is row-major [nfft/2+1 x n_frames] magnitudes.
struct Stft {
  std::vector<double> mag;  // bins x frames, row-major
  int bins = 0;
  int frames = 0;

  double& at(int bin, int frame) { return mag[static_cast<size_t>(bin) * frames + frame]; }
  double at(int bin, int frame) const { return mag[static_cast<size_t>(bin) * frames + frame]; }
};

// Complex STFT used by the phase vocoder; layout matches Stft.
struct StftComplex {
  std::vector<std::complex<double>> values;
  int bins = 0;
  int frames = 0;

  std::complex<double>& at(int bin, int frame) {
    return values[static_cast<size_t>(bin) * frames + frame];
  }
  std::complex<double> at(int bin, int frame) const {
    return values[static_cast<size_t>(bin) * frames + frame];
  }
};

StftComplex stft_complex(std::span<const double> samples, int nfft, int hop);

// Windowed overlap-add inverse with window-square normalization.
std::vector<double> istft(const StftComplex& spec, int nfft, int hop);

}  // namespace lungsc

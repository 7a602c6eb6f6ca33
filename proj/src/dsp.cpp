#include "lungsc/dsp.hpp"

#include <algorithm>
#include <cmath>

#include <unsupported/Eigen/FFT>

#include "lungsc/error.hpp"

namespace lungsc {

std::vector<std::complex<double>> rfft(std::span<const double> x) {
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> in(x.begin(), x.end());
  std::vector<std::complex<double>> out;
  fft.fwd(out, in);
  return out;
}

std::vector<double> irfft(std::span<const std::complex<double>> spec, int n) {
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> in(spec.begin(), spec.end());
  std::vector<double> out;
  fft.inv(out, in, n);
  return out;
}

std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    w[static_cast<size_t>(i)] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / n));
  return w;
}

std::vector<double> resample(std::span<const double> samples, int sr_in,
                             int sr_out) {
  if (sr_in <= 0 || sr_out <= 0) throw EmptyInput("sample rates must be positive");
  if (sr_in == sr_out) return std::vector<double>(samples.begin(), samples.end());
  const size_t n = samples.size();
  if (n == 0) return {};

  const double ratio = static_cast<double>(sr_out) / sr_in;
  const size_t m = static_cast<size_t>(std::llround(static_cast<double>(n) * ratio));

  // Windowed-sinc kernel. Cutoff sits just below the smaller Nyquist so
  // downsampling is anti-aliased; H is the kernel half-width in input samples.
  const double band = std::min(1.0, ratio);
  const double fc = 0.945 * 0.5 * band;  // cycles per input sample
  const double half_width = std::ceil(16.0 / band);
  const int hw = static_cast<int>(half_width);

  std::vector<double> out(m);
  for (size_t i = 0; i < m; ++i) {
    const double t = static_cast<double>(i) / ratio;  // position in input samples
    const int center = static_cast<int>(std::floor(t));
    double acc = 0.0;
    double ksum = 0.0;
    for (int k = center - hw; k <= center + hw + 1; ++k) {
      if (k < 0 || k >= static_cast<int>(n)) continue;
      const double d = t - k;
      const double h = (std::abs(d) < 1e-12)
                           ? 2.0 * fc
                           : std::sin(2.0 * M_PI * fc * d) / (M_PI * d);
      const double u = std::clamp(d / (half_width + 1.0), -1.0, 1.0);
      const double w = 0.5 * (1.0 + std::cos(M_PI * u));
      acc += samples[static_cast<size_t>(k)] * h * w;
      ksum += h * w;
    }
    // Kernel samples sum to ~1; dividing pins DC gain and fixes edge truncation.
    out[i] = (std::abs(ksum) > 1e-9) ? acc / ksum : acc;
  }
  return out;
}

StftComplex stft_complex(std::span<const double> samples, int nfft, int hop) {
  if (static_cast<int>(samples.size()) < nfft)
    throw SegmentTooShort("need at least nfft=" + std::to_string(nfft) +
                          " samples, got " + std::to_string(samples.size()));
  const int n = static_cast<int>(samples.size());
  const int frames = 1 + (n - nfft) / hop;
  const int bins = nfft / 2 + 1;
  const std::vector<double> w = hann_window(nfft);

  StftComplex out;
  out.bins = bins;
  out.frames = frames;
  out.values.resize(static_cast<size_t>(bins) * frames);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> frame(static_cast<size_t>(nfft));
  std::vector<std::complex<double>> spec;
  for (int t = 0; t < frames; ++t) {
    const double* src = samples.data() + static_cast<size_t>(t) * hop;
    for (int i = 0; i < nfft; ++i) frame[static_cast<size_t>(i)] = src[i] * w[static_cast<size_t>(i)];
    fft.fwd(spec, frame);
    for (int b = 0; b < bins; ++b) out.at(b, t) = spec[static_cast<size_t>(b)];
  }
  return out;
}

std::vector<double> istft(const StftComplex& spec, int nfft, int hop) {
  const int frames = spec.frames;
  const int n = (frames - 1) * hop + nfft;
  const std::vector<double> w = hann_window(nfft);

  std::vector<double> out(static_cast<size_t>(n), 0.0);
  std::vector<double> wsum(static_cast<size_t>(n), 0.0);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> col(static_cast<size_t>(spec.bins));
  std::vector<double> frame;
  for (int t = 0; t < frames; ++t) {
    for (int b = 0; b < spec.bins; ++b) col[static_cast<size_t>(b)] = spec.at(b, t);
    fft.inv(frame, col, nfft);
    const size_t off = static_cast<size_t>(t) * hop;
    for (int i = 0; i < nfft; ++i) {
      out[off + i] += frame[static_cast<size_t>(i)] * w[static_cast<size_t>(i)];
      wsum[off + i] += w[static_cast<size_t>(i)] * w[static_cast<size_t>(i)];
    }
  }
  for (size_t i = 0; i < out.size(); ++i)
    if (wsum[i] > 1e-12) out[i] /= wsum[i];
  return out;
}

}  // namespace lungsc

#include "lungsc/features.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "lungsc/error.hpp"

namespace lungsc {

namespace {

// HTK mel scale
double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// viridis colormap, 32 anchor points interpolated linearly; enough fidelity
// for feature images while keeping the table small.
constexpr double kViridis[33][3] = {
    {0.267004, 0.004874, 0.329415}, {0.277018, 0.050344, 0.375715},
    {0.282327, 0.094955, 0.417331}, {0.282884, 0.135920, 0.453427},
    {0.278826, 0.175490, 0.483397}, {0.270595, 0.214069, 0.507052},
    {0.258965, 0.251537, 0.524736}, {0.244972, 0.287675, 0.537260},
    {0.229739, 0.322361, 0.545706}, {0.214298, 0.355619, 0.551184},
    {0.199430, 0.387607, 0.554642}, {0.185556, 0.418570, 0.556753},
    {0.172719, 0.448791, 0.557885}, {0.160665, 0.478540, 0.558115},
    {0.149039, 0.508051, 0.557250}, {0.137770, 0.537492, 0.554906},
    {0.127568, 0.566949, 0.550556}, {0.120565, 0.596422, 0.543611},
    {0.120638, 0.625828, 0.533488}, {0.132268, 0.655014, 0.519661},
    {0.157851, 0.683765, 0.501686}, {0.196571, 0.711827, 0.479221},
    {0.246070, 0.738910, 0.452024}, {0.304148, 0.764704, 0.419943},
    {0.369214, 0.788888, 0.382914}, {0.440137, 0.811138, 0.340967},
    {0.515992, 0.831158, 0.294279}, {0.595839, 0.848717, 0.243329},
    {0.678489, 0.863742, 0.189503}, {0.762373, 0.876424, 0.137064},
    {0.845561, 0.887322, 0.099702}, {0.926106, 0.897330, 0.104071},
    {0.993248, 0.906157, 0.143936}};

void viridis(double v, double rgb[3]) {
  v = std::clamp(v, 0.0, 1.0) * 32.0;
  const int i = std::min(31, static_cast<int>(v));
  const double a = v - i;
  for (int c = 0; c < 3; ++c)
    rgb[c] = kViridis[i][c] * (1.0 - a) + kViridis[i + 1][c] * a;
}

}  // namespace

int SegmentSpec::target_len() const {
  const double exact = length_s * sample_rate_hz;
  const double rounded = std::round(exact);
  if (length_s <= 0 || sample_rate_hz <= 0 || std::abs(exact - rounded) > 1e-6)
    throw ConfigError("segment length_s * sample_rate must be a positive integer");
  return static_cast<int>(rounded);
}

void SpectralConfig::validate() const {
  if (nfft <= 0 || (nfft & (nfft - 1)) != 0)
    throw ConfigError("nfft must be a positive power of two");
  if (hop != nfft / 2) throw ConfigError("hop must equal nfft/2");
  if (n_mels <= 0 || n_mels >= nfft / 2 + 1)
    throw ConfigError("n_mels must be in (0, nfft/2+1)");
  if (fmin_hz < 0 || fmin_hz >= fmax_or_nyquist())
    throw ConfigError("need 0 <= fmin < fmax");
  if (fmax_or_nyquist() > sample_rate_hz / 2.0 + 1e-9)
    throw ConfigError("fmax exceeds Nyquist");
}

void NormStats::add(double x) {
  count += 1;
  const double delta = x - mean;
  mean += delta / static_cast<double>(count);
  m2 += delta * (x - mean);
}

void NormStats::add_all(std::span<const double> xs) {
  for (double x : xs) add(x);
}

void NormStats::merge(const NormStats& other) {
  if (other.count == 0) return;
  if (count == 0) {
    *this = other;
    return;
  }
  const double na = static_cast<double>(count);
  const double nb = static_cast<double>(other.count);
  const double delta = other.mean - mean;
  mean += delta * nb / (na + nb);
  m2 += other.m2 + delta * delta * na * nb / (na + nb);
  count += other.count;
}

double NormStats::stddev() const {
  const double v = variance();
  return v > 0 ? std::sqrt(v) : 1.0;
}

InputLayout input_layout_from_string(const std::string& s) {
  if (s == "replicate3") return InputLayout::replicate3;
  if (s == "rgb_upscaled2x") return InputLayout::rgb_upscaled2x;
  throw ConfigError("unknown input layout '" + s + "'");
}

std::string to_string(InputLayout layout) {
  return layout == InputLayout::replicate3 ? "replicate3" : "rgb_upscaled2x";
}

std::vector<double> reflect_pad(std::span<const double> samples, size_t target_len) {
  const size_t n = samples.size();
  if (n == 0) throw EmptyInput("reflect_pad on empty signal");
  if (target_len < n) throw EmptyInput("target shorter than input");

  std::vector<double> out(target_len);
  std::copy(samples.begin(), samples.end(), out.begin());
  if (n == 1) {
    std::fill(out.begin() + 1, out.end(), samples[0]);
    return out;
  }
  const size_t period = 2 * n - 2;
  for (size_t i = n; i < target_len; ++i) {
    size_t j = i % period;
    if (j >= n) j = period - j;
    out[i] = samples[j];
  }
  return out;
}

std::vector<Segment> segment(std::span<const double> samples, const SegmentSpec& spec) {
  const size_t n = samples.size();
  if (n == 0) throw EmptyInput("segment on empty signal");
  const size_t len = static_cast<size_t>(spec.target_len());
  if (spec.overlap_fraction < 0.0 || spec.overlap_fraction >= 1.0)
    throw ConfigError("overlap_fraction must be in [0, 1)");
  const size_t hop = std::max<size_t>(
      1, static_cast<size_t>(std::llround(static_cast<double>(len) *
                                          (1.0 - spec.overlap_fraction))));

  std::vector<Segment> out;
  size_t covered = 0;  // rightmost sample index (exclusive) any segment reaches
  for (size_t start = 0; start + len <= n; start += hop) {
    Segment s;
    s.start = start;
    s.src_len = len;
    s.samples.assign(samples.begin() + static_cast<std::ptrdiff_t>(start),
                     samples.begin() + static_cast<std::ptrdiff_t>(start + len));
    out.push_back(std::move(s));
    covered = start + len;
  }
  if (covered < n) {
    Segment s;
    s.start = covered;
    s.src_len = n - covered;
    s.samples = reflect_pad(samples.subspan(covered), len);
    out.push_back(std::move(s));
  }
  return out;
}

Stft stft_magnitude(std::span<const double> samples, const SpectralConfig& cfg) {
  cfg.validate();
  const StftComplex spec = stft_complex(samples, cfg.nfft, cfg.hop);
  Stft out;
  out.bins = spec.bins;
  out.frames = spec.frames;
  out.mag.resize(spec.values.size());
  for (size_t i = 0; i < spec.values.size(); ++i) out.mag[i] = std::abs(spec.values[i]);
  return out;
}

double vtlp_warp_frequency(double f, double alpha, double fhi, double nyquist) {
  const double breakpoint = fhi * std::min(alpha, 1.0) / alpha;
  if (f <= breakpoint) return alpha * f;
  const double hi = fhi * std::min(alpha, 1.0);
  return nyquist - (nyquist - hi) / (nyquist - breakpoint) * (nyquist - f);
}

std::vector<double> mel_filterbank(const SpectralConfig& cfg) {
  cfg.validate();
  if (cfg.warp_factor < 0.8 || cfg.warp_factor > 1.25)
    throw InvalidWarp("warp_factor " + std::to_string(cfg.warp_factor) +
                      " outside [0.8, 1.25]");

  const int bins = cfg.nfft / 2 + 1;
  const double nyquist = cfg.sample_rate_hz / 2.0;
  const double mel_lo = hz_to_mel(cfg.fmin_hz);
  const double mel_hi = hz_to_mel(cfg.fmax_or_nyquist());

  // band edges in Hz, then the VTLP remap when warping
  std::vector<double> edges(static_cast<size_t>(cfg.n_mels) + 2);
  for (size_t i = 0; i < edges.size(); ++i) {
    double f = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                      (cfg.n_mels + 1));
    if (cfg.warp_factor != 1.0)
      f = vtlp_warp_frequency(f, cfg.warp_factor, cfg.warp_fhi_hz, nyquist);
    edges[i] = f;
  }

  std::vector<double> bank(static_cast<size_t>(cfg.n_mels) * bins, 0.0);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double f0 = edges[static_cast<size_t>(m)];
    const double f1 = edges[static_cast<size_t>(m) + 1];
    const double f2 = edges[static_cast<size_t>(m) + 2];
    for (int b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * cfg.sample_rate_hz / cfg.nfft;
      double w = 0.0;
      if (f > f0 && f < f2) {
        w = (f <= f1) ? (f - f0) / std::max(f1 - f0, 1e-12)
                      : (f2 - f) / std::max(f2 - f1, 1e-12);
      }
      bank[static_cast<size_t>(m) * bins + b] = std::max(0.0, w);
    }
  }
  return bank;
}

LogMelFeature logmel(const Stft& mags, std::span<const double> bank,
                     const SpectralConfig& cfg) {
  const int bins = cfg.nfft / 2 + 1;
  if (mags.bins != bins ||
      bank.size() != static_cast<size_t>(cfg.n_mels) * bins)
    throw ShapeMismatch("logmel: bank is " + std::to_string(bank.size()) +
                        " values, stack has " + std::to_string(mags.bins) +
                        " bins");

  using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const MatRM> B(bank.data(), cfg.n_mels, bins);
  Eigen::Map<const MatRM> M(mags.mag.data(), mags.bins, mags.frames);

  LogMelFeature feat;
  feat.n_mels = cfg.n_mels;
  feat.n_frames = mags.frames;
  feat.values.resize(static_cast<size_t>(cfg.n_mels) * mags.frames);
  Eigen::Map<MatRM> out(feat.values.data(), cfg.n_mels, mags.frames);
  out = B * M;
  for (double& v : feat.values) v = std::log(std::max(v, cfg.floor_mag));
  return feat;
}

void normalize(LogMelFeature& feat, const NormStats& stats) {
  const double mu = stats.mean;
  const double sd = stats.stddev();
  for (double& v : feat.values) v = (v - mu) / sd;
  feat.normalized = true;
}

ModelInput to_model_input(const LogMelFeature& feat, InputLayout layout) {
  ModelInput input;
  input.layout = layout;
  if (layout == InputLayout::replicate3) {
    input.height = feat.n_mels;
    input.width = feat.n_frames;
    input.values.resize(3 * feat.values.size());
    for (int c = 0; c < 3; ++c)
      std::copy(feat.values.begin(), feat.values.end(),
                input.values.begin() + static_cast<std::ptrdiff_t>(c * feat.values.size()));
    return input;
  }

  // rgb_upscaled2x: min-max scale, colormap, then 2x bilinear enlargement
  double lo = feat.values.empty() ? 0.0 : feat.values[0];
  double hi = lo;
  for (double v : feat.values) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double range = (hi - lo) > 1e-12 ? (hi - lo) : 1.0;

  const int h0 = feat.n_mels, w0 = feat.n_frames;
  std::vector<double> rgb0(static_cast<size_t>(3) * h0 * w0);
  for (int y = 0; y < h0; ++y)
    for (int x = 0; x < w0; ++x) {
      double col[3];
      viridis((feat.at(y, x) - lo) / range, col);
      for (int c = 0; c < 3; ++c)
        rgb0[(static_cast<size_t>(c) * h0 + y) * w0 + x] = col[c];
    }

  input.height = 2 * h0;
  input.width = 2 * w0;
  input.values.resize(static_cast<size_t>(3) * input.height * input.width);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < input.height; ++y)
      for (int x = 0; x < input.width; ++x) {
        // align-corners bilinear sampling of the half-resolution image
        const double sy = (h0 > 1) ? static_cast<double>(y) * (h0 - 1) / (input.height - 1) : 0.0;
        const double sx = (w0 > 1) ? static_cast<double>(x) * (w0 - 1) / (input.width - 1) : 0.0;
        const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
        const int y1 = std::min(y0 + 1, h0 - 1), x1 = std::min(x0 + 1, w0 - 1);
        const double ay = sy - y0, ax = sx - x0;
        auto px = [&](int yy, int xx) {
          return rgb0[(static_cast<size_t>(c) * h0 + yy) * w0 + xx];
        };
        const double v = px(y0, x0) * (1 - ay) * (1 - ax) + px(y0, x1) * (1 - ay) * ax +
                         px(y1, x0) * ay * (1 - ax) + px(y1, x1) * ay * ax;
        input.values[(static_cast<size_t>(c) * input.height + y) * input.width + x] = v;
      }
  return input;
}

}  // namespace lungsc

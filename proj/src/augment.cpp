#include "lungsc/augment.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <sstream>

#include "lungsc/error.hpp"

namespace lungsc {

namespace {

std::string fmt(double v) {
  // max_digits10 so a chain's text form re-executes bit-identically
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

uint64_t unit_stream(const std::string& unit_id) {
  uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : unit_id) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

void AugmentPlan::validate() const {
  auto chk = [](double p) {
    if (p < 0.0 || p > 1.0) throw ConfigError("op probability outside [0,1]");
  };
  chk(time_ops.prob_volume);
  chk(time_ops.prob_noise);
  chk(time_ops.prob_pitch);
  chk(time_ops.prob_speed);
  if (vtlp.alpha_low > vtlp.alpha_high) throw ConfigError("vtlp alpha_low must be <= alpha_high");
  for (const auto& [label, mult] : class_multipliers)
    if (mult < 1) throw ConfigError("class multiplier must be >= 1");
}

std::string OpChain::str() const {
  std::string out;
  auto add = [&](const std::string& s) {
    if (!out.empty()) out += "+";
    out += s;
  };
  for (const auto& op : time_ops) {
    switch (op.kind) {
      case TimeOp::Kind::stretch: add("stretch(" + fmt(op.a) + ")"); break;
      case TimeOp::Kind::volume: add("vol(" + fmt(op.a) + ")"); break;
      case TimeOp::Kind::noise:
        add("noise(" + fmt(op.a) + ";" + std::to_string(op.noise_seed) + ")");
        break;
      case TimeOp::Kind::pitch: add("pitch(" + fmt(op.a) + ")"); break;
      case TimeOp::Kind::speed: add("speed(" + fmt(op.a) + ")"); break;
    }
  }
  if (has_vtlp) add("vtlp(" + fmt(vtlp_alpha) + ";" + fmt(vtlp_fhi_hz) + ")");
  if (flip) add("flip");
  return out.empty() ? "orig" : out;
}

OpChain OpChain::parse(const std::string& text) {
  OpChain chain;
  if (text.empty() || text == "orig") return chain;
  std::istringstream in(text);
  std::string tok;
  while (std::getline(in, tok, '+')) {
    const size_t lp = tok.find('(');
    const std::string name = tok.substr(0, lp);
    std::vector<double> args;
    uint64_t seed_arg = 0;
    if (lp != std::string::npos) {
      const size_t rp = tok.rfind(')');
      std::istringstream as(tok.substr(lp + 1, rp - lp - 1));
      std::string a;
      int idx = 0;
      while (std::getline(as, a, ';')) {
        if (name == "noise" && idx == 1) {
          seed_arg = std::stoull(a);
        } else {
          args.push_back(std::stod(a));
        }
        ++idx;
      }
    }
    auto a0 = [&]() { return args.empty() ? 0.0 : args[0]; };
    if (name == "stretch") {
      chain.time_ops.push_back({TimeOp::Kind::stretch, a0(), 0});
    } else if (name == "vol") {
      chain.time_ops.push_back({TimeOp::Kind::volume, a0(), 0});
    } else if (name == "noise") {
      chain.time_ops.push_back({TimeOp::Kind::noise, a0(), seed_arg});
    } else if (name == "pitch") {
      chain.time_ops.push_back({TimeOp::Kind::pitch, a0(), 0});
    } else if (name == "speed") {
      chain.time_ops.push_back({TimeOp::Kind::speed, a0(), 0});
    } else if (name == "vtlp") {
      chain.has_vtlp = true;
      chain.vtlp_alpha = args.size() > 0 ? args[0] : 1.0;
      chain.vtlp_fhi_hz = args.size() > 1 ? args[1] : 3500.0;
    } else if (name == "flip") {
      chain.flip = true;
    } else {
      throw ConfigError("unknown op '" + name + "' in chain '" + text + "'");
    }
  }
  return chain;
}

std::vector<double> time_stretch(std::span<const double> samples, double factor,
                                 int sample_rate_hz) {
  if (factor < 0.8 || factor > 1.25)
    throw InvalidFactor("time stretch factor " + std::to_string(factor) +
                        " outside [0.8, 1.25]");
  (void)sample_rate_hz;
  if (samples.empty()) throw EmptyInput("time_stretch on empty signal");

  const int nfft = 512;
  const int hop = nfft / 4;
  // keep at least two analysis frames
  std::vector<double> padded;
  std::span<const double> x = samples;
  if (static_cast<int>(samples.size()) < nfft + hop) {
    padded = reflect_pad(samples, static_cast<size_t>(nfft + hop));
    x = padded;
  }

  const StftComplex spec = stft_complex(x, nfft, hop);
  const int bins = spec.bins;
  const int out_frames =
      std::max(2, static_cast<int>(std::ceil(static_cast<double>(spec.frames) / factor)));

  StftComplex out;
  out.bins = bins;
  out.frames = out_frames;
  out.values.resize(static_cast<size_t>(bins) * out_frames);

  // nominal per-hop phase advance of each bin
  std::vector<double> advance(static_cast<size_t>(bins));
  for (int b = 0; b < bins; ++b)
    advance[static_cast<size_t>(b)] = 2.0 * M_PI * b * hop / nfft;

  std::vector<double> phase(static_cast<size_t>(bins));
  for (int b = 0; b < bins; ++b) phase[static_cast<size_t>(b)] = std::arg(spec.at(b, 0));

  for (int t = 0; t < out_frames; ++t) {
    const double pos = t * factor;
    const int f0 = std::min(static_cast<int>(pos), spec.frames - 1);
    const int f1 = std::min(f0 + 1, spec.frames - 1);
    const double a = pos - f0;
    for (int b = 0; b < bins; ++b) {
      const double mag =
          (1.0 - a) * std::abs(spec.at(b, f0)) + a * std::abs(spec.at(b, f1));
      out.at(b, t) = std::polar(mag, phase[static_cast<size_t>(b)]);
      // accumulate the wrapped inter-frame delta on top of the nominal advance
      double delta = std::arg(spec.at(b, f1)) - std::arg(spec.at(b, f0)) -
                     advance[static_cast<size_t>(b)];
      delta -= 2.0 * M_PI * std::round(delta / (2.0 * M_PI));
      phase[static_cast<size_t>(b)] += advance[static_cast<size_t>(b)] + delta;
    }
  }

  std::vector<double> y = istft(out, nfft, hop);
  const size_t want = static_cast<size_t>(
      std::llround(static_cast<double>(samples.size()) / factor));
  if (y.size() > want) y.resize(std::max<size_t>(want, 1));
  return y;
}

std::vector<double> pitch_shift(std::span<const double> samples, double semitones,
                                int sample_rate_hz) {
  const double k = std::pow(2.0, semitones / 12.0);
  // stretch to duration*k, then resample back to the original duration;
  // frequencies end up scaled by k
  std::vector<double> stretched = time_stretch(samples, 1.0 / k, sample_rate_hz);
  const int virtual_sr = static_cast<int>(std::lround(sample_rate_hz * k));
  std::vector<double> out = resample(stretched, virtual_sr, sample_rate_hz);
  if (out.size() > samples.size()) out.resize(samples.size());
  if (out.size() < samples.size() && !out.empty()) out = reflect_pad(out, samples.size());
  return out;
}

std::vector<double> adjust_speed(std::span<const double> samples, double factor) {
  if (factor <= 0) throw InvalidFactor("speed factor must be positive");
  const int base = 1 << 20;  // only the ratio matters
  return resample(samples, static_cast<int>(std::lround(base * factor)), base);
}

std::vector<double> adjust_volume(std::span<const double> samples, double gain_db) {
  const double g = std::pow(10.0, gain_db / 20.0);
  std::vector<double> out(samples.begin(), samples.end());
  for (double& v : out) v *= g;
  return out;
}

std::vector<double> add_noise(std::span<const double> samples, double snr_db, Rng& rng) {
  double power = 0.0;
  for (double v : samples) power += v * v;
  power /= std::max<size_t>(samples.size(), 1);
  const double noise_power = power / std::pow(10.0, snr_db / 10.0);
  const double sigma = std::sqrt(std::max(noise_power, 0.0));
  std::vector<double> out(samples.begin(), samples.end());
  for (double& v : out) v += sigma * rng.normal();
  return out;
}

std::vector<double> apply_time_ops(std::span<const double> samples, const OpChain& chain,
                                   int sample_rate_hz) {
  std::vector<double> out(samples.begin(), samples.end());
  for (const auto& op : chain.time_ops) {
    switch (op.kind) {
      case OpChain::TimeOp::Kind::stretch:
        out = time_stretch(out, op.a, sample_rate_hz);
        break;
      case OpChain::TimeOp::Kind::volume:
        out = adjust_volume(out, op.a);
        break;
      case OpChain::TimeOp::Kind::noise: {
        Rng rng(op.noise_seed);
        out = add_noise(out, op.a, rng);
        break;
      }
      case OpChain::TimeOp::Kind::pitch:
        out = pitch_shift(out, op.a, sample_rate_hz);
        break;
      case OpChain::TimeOp::Kind::speed:
        out = adjust_speed(out, op.a);
        break;
    }
  }
  return out;
}

OpChain draw_time_domain_chain(const AugmentPlan& plan, Rng& rng) {
  const TimeDomainOps& ops = plan.time_ops;
  OpChain chain;
  using Kind = OpChain::TimeOp::Kind;
  if (rng.bernoulli(ops.prob_volume))
    chain.time_ops.push_back({Kind::volume, rng.uniform(ops.gain_db_low, ops.gain_db_high), 0});
  if (rng.bernoulli(ops.prob_noise))
    chain.time_ops.push_back(
        {Kind::noise, rng.uniform(ops.snr_db_low, ops.snr_db_high), rng.next_u64() >> 32});
  if (rng.bernoulli(ops.prob_pitch))
    chain.time_ops.push_back(
        {Kind::pitch, rng.uniform(ops.pitch_semitones_low, ops.pitch_semitones_high), 0});
  if (rng.bernoulli(ops.prob_speed))
    chain.time_ops.push_back({Kind::speed, rng.uniform(ops.speed_low, ops.speed_high), 0});
  return chain;
}

std::vector<double> random_time_domain(std::span<const double> samples,
                                       const AugmentPlan& plan, int sample_rate_hz,
                                       Rng& rng, OpChain* chain_out) {
  plan.validate();
  OpChain chain = draw_time_domain_chain(plan, rng);
  if (chain_out) *chain_out = chain;
  return apply_time_ops(samples, chain, sample_rate_hz);
}

std::vector<double> vtlp_bank(const SpectralConfig& base, const VtlpRange& range, Rng& rng,
                              double* alpha_out, double* fhi_out) {
  const double alpha = rng.uniform(range.alpha_low, range.alpha_high);
  const double fhi = rng.uniform(range.fhi_low_hz, range.fhi_high_hz);
  if (alpha_out) *alpha_out = alpha;
  if (fhi_out) *fhi_out = fhi;
  SpectralConfig cfg = base;
  cfg.warp_factor = alpha;
  cfg.warp_fhi_hz = fhi;
  return mel_filterbank(cfg);
}

LogMelFeature flip_frequency(const LogMelFeature& feat) {
  LogMelFeature out = feat;
  for (int m = 0; m < feat.n_mels; ++m)
    for (int t = 0; t < feat.n_frames; ++t)
      out.at(m, t) = feat.at(feat.n_mels - 1 - m, t);
  return out;
}

AugmentPlan build_balance_plan(const std::map<int, int64_t>& class_counts, Task task,
                               uint64_t seed) {
  AugmentPlan plan;
  plan.seed = seed;
  const bool alsc = (task == Task::alsc4 || task == Task::alsc2 || task == Task::crackle2);
  for (const auto& [label, count] : class_counts) {
    if (count <= 0) continue;  // nothing to multiply
    if (alsc) {
      // wheeze and crackle+wheeze get a stretched copy
      const bool doubled = (task == Task::alsc4) && (label == 2 || label == 3);
      plan.class_multipliers[label] = doubled ? 2 : 1;
    } else {
      plan.class_multipliers[label] = 2;
    }
  }
  plan.random_ops_enabled = !alsc;
  plan.vtlp_enabled = true;
  plan.flip_enabled = alsc;
  return plan;
}

std::vector<ManifestRow> expand_balance_plan(const std::vector<ManifestRow>& train_rows,
                                             const AugmentPlan& plan) {
  plan.validate();
  std::vector<std::pair<ManifestRow, OpChain>> staged;
  staged.reserve(train_rows.size() * 2);

  // stage 1: originals plus stretched copies per the class multipliers
  for (const auto& row : train_rows) {
    staged.emplace_back(row, OpChain{});
    auto it = plan.class_multipliers.find(row.label);
    const int mult = (it == plan.class_multipliers.end()) ? 1 : it->second;
    for (int c = 1; c < mult; ++c) {
      Rng rng = Rng::child(plan.seed, unit_stream(row.unit_id) + static_cast<uint64_t>(c));
      OpChain chain;
      chain.time_ops.push_back({OpChain::TimeOp::Kind::stretch,
                                rng.uniform(plan.stretch_low, plan.stretch_high), 0});
      if (plan.random_ops_enabled) {
        OpChain extra = draw_time_domain_chain(plan, rng);
        for (const auto& op : extra.time_ops) chain.time_ops.push_back(op);
      }
      ManifestRow copy = row;
      copy.unit_id = row.unit_id + "~st" + std::to_string(c);
      copy.source_id = row.unit_id;
      staged.emplace_back(std::move(copy), std::move(chain));
    }
  }

  // stage 2: a VTLP copy of everything so far
  if (plan.vtlp_enabled) {
    const size_t n = staged.size();
    for (size_t i = 0; i < n; ++i) {
      ManifestRow copy = staged[i].first;
      OpChain chain = staged[i].second;
      Rng rng = Rng::child(plan.seed ^ 0x77a9ULL, unit_stream(copy.unit_id));
      chain.has_vtlp = true;
      chain.vtlp_alpha = rng.uniform(plan.vtlp.alpha_low, plan.vtlp.alpha_high);
      chain.vtlp_fhi_hz = rng.uniform(plan.vtlp.fhi_low_hz, plan.vtlp.fhi_high_hz);
      copy.source_id = copy.source_id.empty() ? copy.unit_id : copy.source_id;
      copy.unit_id += "~vtlp";
      staged.emplace_back(std::move(copy), std::move(chain));
    }
  }

  // stage 3: a flipped copy of the final set
  if (plan.flip_enabled) {
    const size_t n = staged.size();
    for (size_t i = 0; i < n; ++i) {
      ManifestRow copy = staged[i].first;
      OpChain chain = staged[i].second;
      chain.flip = true;
      copy.source_id = copy.source_id.empty() ? copy.unit_id : copy.source_id;
      copy.unit_id += "~flip";
      staged.emplace_back(std::move(copy), std::move(chain));
    }
  }

  std::vector<ManifestRow> out;
  out.reserve(staged.size());
  for (auto& [row, chain] : staged) {
    row.provenance = chain.str();
    out.push_back(std::move(row));
  }
  return out;
}

int64_t planned_row_count(const std::map<int, int64_t>& class_counts, const AugmentPlan& plan) {
  int64_t base = 0;
  for (const auto& [label, count] : class_counts) {
    auto it = plan.class_multipliers.find(label);
    const int mult = (it == plan.class_multipliers.end()) ? 1 : it->second;
    base += count * mult;
  }
  if (plan.vtlp_enabled) base *= 2;
  if (plan.flip_enabled) base *= 2;
  return base;
}

}  // namespace lungsc

#include <doctest.h>

#include <cmath>
#include <vector>

#include "lungsc/augment.hpp"
#include "lungsc/dsp.hpp"
#include "lungsc/error.hpp"

using namespace lungsc;

namespace {

std::vector<double> tone(double freq, int sr, double seconds) {
  std::vector<double> x(static_cast<size_t>(sr * seconds));
  for (size_t t = 0; t < x.size(); ++t)
    x[t] = std::sin(2.0 * M_PI * freq * static_cast<double>(t) / sr);
  return x;
}

// FFT-peak oracle: dominant frequency in Hz over the middle of the signal
double dominant_freq(const std::vector<double>& x, int sr) {
  const size_t n = std::min<size_t>(x.size(), 8192);
  const size_t off = (x.size() - n) / 2;
  std::vector<double> mid(x.begin() + static_cast<std::ptrdiff_t>(off),
                          x.begin() + static_cast<std::ptrdiff_t>(off + n));
  const auto spec = rfft(mid);
  size_t best = 1;
  for (size_t b = 2; b < spec.size(); ++b)
    if (std::abs(spec[b]) > std::abs(spec[best])) best = b;
  return static_cast<double>(best) * sr / static_cast<double>(n);
}

}  // namespace

TEST_CASE("time stretch factor 1.0 keeps the length within one hop") {
  const auto x = tone(300.0, 16000, 1.0);
  const auto y = time_stretch(x, 1.0, 16000);
  CHECK(std::abs(static_cast<long>(y.size()) - static_cast<long>(x.size())) <= 128);
}

TEST_CASE("time stretch factor 1.1 shortens an 8 s signal to about 7.27 s") {
  const auto x = tone(200.0, 4000, 8.0);
  const auto y = time_stretch(x, 1.1, 4000);
  const double seconds = static_cast<double>(y.size()) / 4000.0;
  CHECK(seconds == doctest::Approx(8.0 / 1.1).epsilon(0.01));
}

TEST_CASE("time stretch preserves pitch within 2 percent") {
  const auto x = tone(440.0, 16000, 2.0);
  for (double factor : {0.9, 1.1}) {
    const auto y = time_stretch(x, factor, 16000);
    const double f = dominant_freq(y, 16000);
    CHECK(std::abs(f - 440.0) / 440.0 < 0.02);
  }
}

TEST_CASE("time stretch rejects factors outside [0.8, 1.25]") {
  const auto x = tone(100.0, 4000, 1.0);
  CHECK_THROWS_AS(time_stretch(x, 0.5, 4000), InvalidFactor);
  CHECK_THROWS_AS(time_stretch(x, 1.5, 4000), InvalidFactor);
}

TEST_CASE("pitch shift moves the dominant frequency and keeps the length") {
  const auto x = tone(440.0, 16000, 1.5);
  const auto up = pitch_shift(x, 2.0, 16000);
  CHECK(up.size() == x.size());
  const double expected = 440.0 * std::pow(2.0, 2.0 / 12.0);
  CHECK(dominant_freq(up, 16000) == doctest::Approx(expected).epsilon(0.03));
}

TEST_CASE("speed adjust scales duration and pitch together") {
  const auto x = tone(300.0, 8000, 2.0);
  const auto y = adjust_speed(x, 1.25);
  CHECK(static_cast<double>(y.size()) ==
        doctest::Approx(static_cast<double>(x.size()) / 1.25).epsilon(0.01));
  CHECK(dominant_freq(y, 8000) == doctest::Approx(300.0 * 1.25).epsilon(0.03));
}

TEST_CASE("volume gain of +6 dB doubles the amplitude within 1e-6") {
  const auto x = tone(100.0, 4000, 0.5);
  const auto y = adjust_volume(x, 6.0205999132796239);  // 20 log10(2)
  for (size_t i = 0; i < x.size(); ++i)
    CHECK(y[i] == doctest::Approx(2.0 * x[i]).epsilon(1e-6));
}

TEST_CASE("noise addition hits the requested SNR") {
  const auto x = tone(200.0, 8000, 2.0);
  Rng rng(17);
  const double snr_db = 20.0;
  const auto y = add_noise(x, snr_db, rng);
  double noise_power = 0.0, signal_power = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    noise_power += (y[i] - x[i]) * (y[i] - x[i]);
    signal_power += x[i] * x[i];
  }
  const double measured = 10.0 * std::log10(signal_power / noise_power);
  CHECK(measured == doctest::Approx(snr_db).epsilon(0.05));
}

TEST_CASE("random_time_domain with zero probabilities is the identity") {
  AugmentPlan plan;
  plan.time_ops.prob_volume = 0.0;
  plan.time_ops.prob_noise = 0.0;
  plan.time_ops.prob_pitch = 0.0;
  plan.time_ops.prob_speed = 0.0;
  const auto x = tone(150.0, 4000, 0.5);
  Rng rng(4);
  OpChain chain;
  const auto y = random_time_domain(x, plan, 4000, rng, &chain);
  CHECK(y == x);
  CHECK(chain.empty());
}

TEST_CASE("random_time_domain with volume prob 1 applies gain") {
  AugmentPlan plan;
  plan.time_ops.prob_volume = 1.0;
  plan.time_ops.prob_noise = 0.0;
  plan.time_ops.prob_pitch = 0.0;
  plan.time_ops.prob_speed = 0.0;
  plan.time_ops.gain_db_low = plan.time_ops.gain_db_high = 6.0205999132796239;
  const auto x = tone(150.0, 4000, 0.5);
  Rng rng(4);
  const auto y = random_time_domain(x, plan, 4000, rng);
  for (size_t i = 0; i < x.size(); ++i)
    CHECK(y[i] == doctest::Approx(2.0 * x[i]).epsilon(1e-6));
}

TEST_CASE("seeded random_time_domain is reproducible") {
  AugmentPlan plan;
  const auto x = tone(150.0, 4000, 1.0);
  Rng rng1(99), rng2(99);
  OpChain c1, c2;
  const auto y1 = random_time_domain(x, plan, 4000, rng1, &c1);
  const auto y2 = random_time_domain(x, plan, 4000, rng2, &c2);
  CHECK(y1 == y2);
  CHECK(c1.str() == c2.str());
}

TEST_CASE("op chains round-trip through text and re-execute identically") {
  AugmentPlan plan;
  const auto x = tone(220.0, 4000, 1.0);
  Rng rng(31);
  OpChain chain;
  const auto y = random_time_domain(x, plan, 4000, rng, &chain);
  const OpChain parsed = OpChain::parse(chain.str());
  CHECK(parsed.str() == chain.str());
  const auto z = apply_time_ops(x, parsed, 4000);
  CHECK(z == y);
}

TEST_CASE("vtlp degenerate range returns the canonical bank") {
  SpectralConfig cfg;
  cfg.n_mels = 40;
  cfg.sample_rate_hz = 16000;
  VtlpRange range;
  range.alpha_low = range.alpha_high = 1.0;
  Rng rng(5);
  double alpha = 0.0;
  const auto bank = vtlp_bank(cfg, range, rng, &alpha);
  CHECK(alpha == 1.0);
  CHECK(bank == mel_filterbank(cfg));
}

TEST_CASE("vtlp draw delegates exactly to mel_filterbank") {
  SpectralConfig cfg;
  cfg.n_mels = 40;
  cfg.sample_rate_hz = 16000;
  VtlpRange range;
  Rng rng(6);
  double alpha = 0.0, fhi = 0.0;
  const auto bank = vtlp_bank(cfg, range, rng, &alpha, &fhi);
  CHECK(alpha >= range.alpha_low);
  CHECK(alpha <= range.alpha_high);
  SpectralConfig warped = cfg;
  warped.warp_factor = alpha;
  warped.warp_fhi_hz = fhi;
  CHECK(bank == mel_filterbank(warped));
}

TEST_CASE("vtlp draws are deterministic under a fixed seed") {
  SpectralConfig cfg;
  cfg.n_mels = 30;
  cfg.sample_rate_hz = 16000;
  VtlpRange range;
  Rng a(8), b(8);
  double alpha1 = 0, alpha2 = 0;
  vtlp_bank(cfg, range, a, &alpha1);
  vtlp_bank(cfg, range, b, &alpha2);
  CHECK(alpha1 == alpha2);
}

TEST_CASE("ALSC balance plan doubles wheeze and both classes") {
  // class counts from the 4-class cycle taxonomy
  std::map<int, int64_t> counts = {{0, 3642}, {1, 1864}, {2, 886}, {3, 506}};
  const auto plan = build_balance_plan(counts, Task::alsc4, 1);
  CHECK(plan.class_multipliers.at(0) == 1);
  CHECK(plan.class_multipliers.at(1) == 1);
  CHECK(plan.class_multipliers.at(2) == 2);
  CHECK(plan.class_multipliers.at(3) == 2);
  CHECK(plan.vtlp_enabled);
  CHECK(plan.flip_enabled);
  CHECK_FALSE(plan.random_ops_enabled);

  // 886 wheeze cycles schedule 886 stretched copies
  std::vector<ManifestRow> rows;
  for (int i = 0; i < 886; ++i) {
    ManifestRow r;
    r.unit_id = "w" + std::to_string(i);
    r.label = 2;
    rows.push_back(r);
  }
  AugmentPlan wheeze_only = plan;
  wheeze_only.vtlp_enabled = false;
  wheeze_only.flip_enabled = false;
  const auto expanded = expand_balance_plan(rows, wheeze_only);
  CHECK(expanded.size() == 1772);
}

TEST_CASE("RDC balance plan doubles every class with randomized ops") {
  std::map<int, int64_t> counts = {{0, 30}, {1, 200}, {2, 80}};
  const auto plan = build_balance_plan(counts, Task::rdc3, 1);
  for (const auto& [label, mult] : plan.class_multipliers) CHECK(mult == 2);
  CHECK(plan.random_ops_enabled);
  CHECK_FALSE(plan.flip_enabled);
}

TEST_CASE("zero-count classes are ignored by the plan") {
  std::map<int, int64_t> counts = {{0, 10}, {1, 0}};
  const auto plan = build_balance_plan(counts, Task::alsc4, 1);
  CHECK(plan.class_multipliers.count(1) == 0);
}

TEST_CASE("expansion matches the closed-form count and keeps labels/devices") {
  std::map<int, int64_t> counts = {{0, 7}, {1, 4}, {2, 3}, {3, 2}};
  std::vector<ManifestRow> rows;
  int n = 0;
  for (const auto& [label, count] : counts)
    for (int i = 0; i < count; ++i) {
      ManifestRow r;
      r.unit_id = "u" + std::to_string(n++);
      r.label = label;
      r.device = (n % 2) ? "devA" : "devB";
      rows.push_back(r);
    }
  AugmentPlan plan = build_balance_plan(counts, Task::alsc4, 5);
  const auto expanded = expand_balance_plan(rows, plan);
  CHECK(static_cast<int64_t>(expanded.size()) == planned_row_count(counts, plan));
  // (7+4+2*3+2*2) * 2 (vtlp) * 2 (flip) = 84
  CHECK(expanded.size() == 84);

  std::map<std::string, const ManifestRow*> originals;
  for (const auto& r : rows) originals[r.unit_id] = &r;
  std::map<int, int64_t> out_counts;
  for (const auto& r : expanded) {
    ++out_counts[r.label];
    const std::string source = r.source_id.empty() ? r.unit_id : r.source_id;
    REQUIRE(originals.count(source) == 1);
    CHECK(r.label == originals[source]->label);
    CHECK(r.device == originals[source]->device);
  }
  for (const auto& [label, count] : counts) CHECK(out_counts[label] >= count);
}

TEST_CASE("expansion is deterministic and augmented rows carry parameters") {
  std::vector<ManifestRow> rows(3);
  for (int i = 0; i < 3; ++i) {
    rows[static_cast<size_t>(i)].unit_id = "u" + std::to_string(i);
    rows[static_cast<size_t>(i)].label = 2;
  }
  AugmentPlan plan = build_balance_plan({{2, 3}}, Task::alsc4, 77);
  const auto a = expand_balance_plan(rows, plan);
  const auto b = expand_balance_plan(rows, plan);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].unit_id == b[i].unit_id);
    CHECK(a[i].provenance == b[i].provenance);
  }
  bool saw_stretch = false, saw_vtlp = false, saw_flip = false;
  for (const auto& r : a) {
    const OpChain chain = OpChain::parse(r.provenance);
    for (const auto& op : chain.time_ops)
      if (op.kind == OpChain::TimeOp::Kind::stretch) {
        saw_stretch = true;
        CHECK(op.a >= plan.stretch_low);
        CHECK(op.a <= plan.stretch_high);
      }
    if (chain.has_vtlp) {
      saw_vtlp = true;
      CHECK(chain.vtlp_alpha >= plan.vtlp.alpha_low);
      CHECK(chain.vtlp_alpha <= plan.vtlp.alpha_high);
    }
    saw_flip = saw_flip || chain.flip;
  }
  CHECK(saw_stretch);
  CHECK(saw_vtlp);
  CHECK(saw_flip);
}

#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "lungsc/features.hpp"
#include "lungsc/ingest.hpp"
#include "lungsc/rng.hpp"

namespace lungsc {

struct VtlpRange {
  double alpha_low = 0.9;
  double alpha_high = 1.1;
  double fhi_low_hz = 3200.0;
  double fhi_high_hz = 3800.0;
};

struct TimeDomainOps {
  double prob_volume = 0.5;
  double prob_noise = 0.5;
  double prob_pitch = 0.5;
  double prob_speed = 0.5;
  double gain_db_low = -6.0, gain_db_high = 6.0;
  double snr_db_low = 20.0, snr_db_high = 40.0;
  double pitch_semitones_low = -2.0, pitch_semitones_high = 2.0;
  double speed_low = 0.9, speed_high = 1.1;
};

struct AugmentPlan {
  std::map<int, int> class_multipliers;  // label -> total copies incl. the original
  TimeDomainOps time_ops;
  bool random_ops_enabled = false;  // randomized ops on the stretched copies (RDC style)
  VtlpRange vtlp;
  bool vtlp_enabled = true;
  bool flip_enabled = false;
  double stretch_low = 0.9, stretch_high = 1.1;
  uint64_t seed = 0;

  void validate() const;
};

// A manifest row's augmentation recipe. The textual form is a '+'-joined op
// chain with ';'-separated parameters, e.g.
//   "stretch(0.93)+vol(2.1)+noise(25;1234567)+vtlp(1.05;3412.5)+flip"
// It records every drawn parameter (noise carries its sub-seed), so
// re-executing a chain on the source audio is bit-reproducible.
struct OpChain {
  struct TimeOp {
    enum class Kind { stretch, volume, noise, pitch, speed };
    Kind kind;
    double a = 0.0;  // factor / gain dB / SNR dB / semitones
    uint64_t noise_seed = 0;
  };
  std::vector<TimeOp> time_ops;
  bool has_vtlp = false;
  double vtlp_alpha = 1.0;
  double vtlp_fhi_hz = 3500.0;
  bool flip = false;

  bool empty() const { return time_ops.empty() && !has_vtlp && !flip; }
  std::string str() const;
  static OpChain parse(const std::string& text);
};

// Pitch-preserving duration change (phase vocoder). factor > 1 shortens:
// output duration is ~1/factor of the input, within one analysis hop.
std::vector<double> time_stretch(std::span<const double> samples, double factor,
                                 int sample_rate_hz);

// Pitch shift by semitones at constant duration (stretch + resample).
std::vector<double> pitch_shift(std::span<const double> samples, double semitones,
                                int sample_rate_hz);

// Playback-speed change: duration and pitch both scale.
std::vector<double> adjust_speed(std::span<const double> samples, double factor);

std::vector<double> adjust_volume(std::span<const double> samples, double gain_db);

std::vector<double> add_noise(std::span<const double> samples, double snr_db, Rng& rng);

// Applies the chain's time-domain ops in order.
std::vector<double> apply_time_ops(std::span<const double> samples, const OpChain& chain,
                                   int sample_rate_hz);

// Draws the randomized time-domain ops (each applied independently with its
// probability) into a chain.
OpChain draw_time_domain_chain(const AugmentPlan& plan, Rng& rng);

// Draw-and-apply in one step; the applied chain is returned through `chain`.
std::vector<double> random_time_domain(std::span<const double> samples,
                                       const AugmentPlan& plan, int sample_rate_hz,
                                       Rng& rng, OpChain* chain = nullptr);

// Draws alpha ~ U(alpha_low, alpha_high), fhi ~ U(fhi_low, fhi_high) and
// returns the warped filterbank for `base`.
std::vector<double> vtlp_bank(const SpectralConfig& base, const VtlpRange& range, Rng& rng,
                              double* alpha_out = nullptr, double* fhi_out = nullptr);

// Reverses the mel axis; frames and label untouched.
LogMelFeature flip_frequency(const LogMelFeature& feat);

// Class-balancing recipe: the ALSC tasks double wheeze and crackle+wheeze
// by time stretching, then VTLP-copy everything and flip the final set; the
// RDC tasks double every class and run the randomized ops on the copies.
AugmentPlan build_balance_plan(const std::map<int, int64_t>& class_counts, Task task,
                               uint64_t seed);

// Expands training-manifest rows according to the plan, drawing every
// parameter now so the output manifest is a complete, reproducible recipe.
std::vector<ManifestRow> expand_balance_plan(const std::vector<ManifestRow>& train_rows,
                                             const AugmentPlan& plan);

// The closed-form row count expand_balance_plan must produce.
int64_t planned_row_count(const std::map<int, int64_t>& class_counts, const AugmentPlan& plan);

}  // namespace lungsc

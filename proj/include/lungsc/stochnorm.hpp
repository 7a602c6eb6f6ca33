#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "lungsc/rng.hpp"
#include "lungsc/tensor.hpp"

namespace lungsc {

struct StochNormConfig {
  double p = 0.5;       // probability of the batch-statistics branch
  double alpha = 0.1;   // moving-statistics update rate, in (0,1)
  double eps = 1e-5;

  void validate() const;
};

// Per-channel state of a stochastic normalization site: learnable scale and
// shift plus the moving statistics both branches are built from.
struct StochNormState {
  std::vector<double> gamma;
  std::vector<double> beta;
  std::vector<double> moving_mean;
  std::vector<double> moving_var;
  StochNormConfig cfg;

  int64_t channels() const { return static_cast<int64_t>(gamma.size()); }

  // gamma=1, beta=0, moving mean 0 / var 1.
  static StochNormState identity(int64_t channels, const StochNormConfig& cfg);

  // Copies scale/shift/moving statistics verbatim from a pre-trained
  // batch-normalization site; alpha/p/eps come from cfg.
  static StochNormState from_pretrained(std::span<const double> gamma,
                                        std::span<const double> beta,
                                        std::span<const double> moving_mean,
                                        std::span<const double> moving_var,
                                        const StochNormConfig& cfg);
};

// Everything the training-mode forward produces, including the caches the
// backward pass needs. x is normalized per channel over all non-channel
// dimensions of an [N, C, ...] tensor.
struct StochNormForward {
  Tensor y;
  std::vector<uint8_t> branch_mask;  // s per channel: 1 = batch branch
  std::vector<double> batch_mean;
  std::vector<double> batch_var;     // biased (divide by m)
  std::vector<double> pre_moving_mean;  // the values z_hat_0 was built from
  std::vector<double> pre_moving_var;
};

// Two-branch training forward: z0 from the (pre-update) moving statistics,
// z1 from the batch statistics, one Bernoulli(p) draw per channel, then
// y = gamma * ((1-s) z0 + s z1) + beta. The moving statistics are updated
// afterwards. Requires batch size >= 2.
StochNormForward stochnorm_forward_train(const Tensor& x, StochNormState& state, Rng& rng);

// Pure fixed-mask variant: same computation for a given branch mask, no
// Bernoulli draw and no moving-statistics update.
StochNormForward stochnorm_forward_masked(const Tensor& x, const StochNormState& state,
                                          std::span<const uint8_t> mask);

// Deterministic inference: y = gamma * (x - mean) / sqrt(var + eps) + beta.
Tensor stochnorm_forward_eval(const Tensor& x, const StochNormState& state);

// Exponential update: m <- m + alpha (batch - m), for mean and variance.
void stochnorm_update_moving(StochNormState& state, std::span<const double> batch_mean,
                             std::span<const double> batch_var);

// Analytic backward for a fixed mask. Gradients do not flow through the
// moving statistics. dgamma/dbeta are accumulated into the given vectors.
Tensor stochnorm_backward(const Tensor& x, const Tensor& grad_y,
                          const StochNormForward& fwd, const StochNormState& state,
                          std::vector<double>& dgamma, std::vector<double>& dbeta);

}  // namespace lungsc

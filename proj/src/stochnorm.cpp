#include "lungsc/stochnorm.hpp"

#include <cmath>

#include "lungsc/error.hpp"

namespace lungsc {

void StochNormConfig::validate() const {
  if (p < 0.0 || p > 1.0) throw ConfigError("stochnorm.p must be in [0, 1]");
  if (alpha <= 0.0 || alpha >= 1.0) throw ConfigError("stochnorm.alpha must be in (0, 1)");
  if (eps <= 0.0) throw ConfigError("stochnorm.eps must be positive");
}

StochNormState StochNormState::identity(int64_t channels, const StochNormConfig& cfg) {
  cfg.validate();
  StochNormState s;
  s.gamma.assign(static_cast<size_t>(channels), 1.0);
  s.beta.assign(static_cast<size_t>(channels), 0.0);
  s.moving_mean.assign(static_cast<size_t>(channels), 0.0);
  s.moving_var.assign(static_cast<size_t>(channels), 1.0);
  s.cfg = cfg;
  return s;
}

StochNormState StochNormState::from_pretrained(std::span<const double> gamma,
                                               std::span<const double> beta,
                                               std::span<const double> moving_mean,
                                               std::span<const double> moving_var,
                                               const StochNormConfig& cfg) {
  cfg.validate();
  const size_t c = gamma.size();
  if (beta.size() != c || moving_mean.size() != c || moving_var.size() != c)
    throw ShapeMismatch("pre-trained normalization parameters disagree on channel count");
  StochNormState s;
  s.gamma.assign(gamma.begin(), gamma.end());
  s.beta.assign(beta.begin(), beta.end());
  s.moving_mean.assign(moving_mean.begin(), moving_mean.end());
  s.moving_var.assign(moving_var.begin(), moving_var.end());
  s.cfg = cfg;
  return s;
}

namespace {

struct ChannelView {
  int64_t batch;     // N
  int64_t channels;  // C
  int64_t inner;     // product of spatial dims
  int64_t per_channel() const { return batch * inner; }
};

ChannelView view_of(const Tensor& x, int64_t state_channels) {
  if (x.ndim() < 2) throw ShapeMismatch("stochnorm input must be at least 2-D [N, C, ...]");
  ChannelView v;
  v.batch = x.shape[0];
  v.channels = x.shape[1];
  v.inner = 1;
  for (size_t i = 2; i < x.ndim(); ++i) v.inner *= x.shape[i];
  if (v.channels != state_channels)
    throw ShapeMismatch("input has " + std::to_string(v.channels) + " channels, state has " +
                        std::to_string(state_channels));
  return v;
}

inline size_t index_of(const ChannelView& v, int64_t n, int64_t c, int64_t i) {
  return static_cast<size_t>((n * v.channels + c) * v.inner + i);
}

}  // namespace

StochNormForward stochnorm_forward_masked(const Tensor& x, const StochNormState& state,
                                          std::span<const uint8_t> mask) {
  state.cfg.validate();
  const ChannelView v = view_of(x, state.channels());
  if (v.batch < 2)
    throw BatchTooSmall("training forward needs batch size >= 2, got " +
                        std::to_string(v.batch));
  if (static_cast<int64_t>(mask.size()) != v.channels)
    throw ShapeMismatch("branch mask has " + std::to_string(mask.size()) + " entries, need " +
                        std::to_string(v.channels));

  const int64_t m = v.per_channel();
  StochNormForward fwd;
  fwd.y = Tensor(x.shape);
  fwd.branch_mask.assign(mask.begin(), mask.end());
  fwd.batch_mean.resize(static_cast<size_t>(v.channels));
  fwd.batch_var.resize(static_cast<size_t>(v.channels));
  fwd.pre_moving_mean = state.moving_mean;
  fwd.pre_moving_var = state.moving_var;

  for (int64_t c = 0; c < v.channels; ++c) {
    double mean = 0.0;
    for (int64_t n = 0; n < v.batch; ++n)
      for (int64_t i = 0; i < v.inner; ++i) mean += x.data[index_of(v, n, c, i)];
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (int64_t n = 0; n < v.batch; ++n)
      for (int64_t i = 0; i < v.inner; ++i) {
        const double d = x.data[index_of(v, n, c, i)] - mean;
        var += d * d;
      }
    var /= static_cast<double>(m);  // biased, Eq.-style
    fwd.batch_mean[static_cast<size_t>(c)] = mean;
    fwd.batch_var[static_cast<size_t>(c)] = var;

    const uint8_t s = mask[static_cast<size_t>(c)];
    const double mu = s ? mean : state.moving_mean[static_cast<size_t>(c)];
    const double sigma2 = s ? var : state.moving_var[static_cast<size_t>(c)];
    const double denom = std::sqrt(sigma2 + state.cfg.eps);
    const double g = state.gamma[static_cast<size_t>(c)];
    const double b = state.beta[static_cast<size_t>(c)];
    for (int64_t n = 0; n < v.batch; ++n)
      for (int64_t i = 0; i < v.inner; ++i) {
        const size_t idx = index_of(v, n, c, i);
        fwd.y.data[idx] = g * (x.data[idx] - mu) / denom + b;
      }
  }
  return fwd;
}

StochNormForward stochnorm_forward_train(const Tensor& x, StochNormState& state, Rng& rng) {
  state.cfg.validate();
  const ChannelView v = view_of(x, state.channels());
  std::vector<uint8_t> mask(static_cast<size_t>(v.channels));
  for (auto& s : mask) s = rng.bernoulli(state.cfg.p) ? 1 : 0;
  StochNormForward fwd = stochnorm_forward_masked(x, state, mask);
  stochnorm_update_moving(state, fwd.batch_mean, fwd.batch_var);
  return fwd;
}

Tensor stochnorm_forward_eval(const Tensor& x, const StochNormState& state) {
  const ChannelView v = view_of(x, state.channels());
  Tensor y(x.shape);
  for (int64_t c = 0; c < v.channels; ++c) {
    const double denom = std::sqrt(state.moving_var[static_cast<size_t>(c)] + state.cfg.eps);
    const double g = state.gamma[static_cast<size_t>(c)];
    const double mu = state.moving_mean[static_cast<size_t>(c)];
    const double b = state.beta[static_cast<size_t>(c)];
    for (int64_t n = 0; n < v.batch; ++n)
      for (int64_t i = 0; i < v.inner; ++i) {
        const size_t idx = index_of(v, n, c, i);
        y.data[idx] = g * (x.data[idx] - mu) / denom + b;
      }
  }
  return y;
}

void stochnorm_update_moving(StochNormState& state, std::span<const double> batch_mean,
                             std::span<const double> batch_var) {
  state.cfg.validate();
  if (batch_mean.size() != state.gamma.size() || batch_var.size() != state.gamma.size())
    throw ShapeMismatch("batch statistics disagree with state channel count");
  const double a = state.cfg.alpha;
  for (size_t c = 0; c < state.gamma.size(); ++c) {
    state.moving_mean[c] += a * (batch_mean[c] - state.moving_mean[c]);
    state.moving_var[c] += a * (batch_var[c] - state.moving_var[c]);
  }
}

Tensor stochnorm_backward(const Tensor& x, const Tensor& grad_y,
                          const StochNormForward& fwd, const StochNormState& state,
                          std::vector<double>& dgamma, std::vector<double>& dbeta) {
  const ChannelView v = view_of(x, state.channels());
  if (!grad_y.same_shape(x)) throw ShapeMismatch("grad/input shapes differ");
  const int64_t m = v.per_channel();
  Tensor dx(x.shape);

  for (int64_t c = 0; c < v.channels; ++c) {
    const size_t sc = static_cast<size_t>(c);
    const uint8_t s = fwd.branch_mask[sc];
    const double g = state.gamma[sc];
    const double mu = s ? fwd.batch_mean[sc] : fwd.pre_moving_mean[sc];
    const double sigma2 = s ? fwd.batch_var[sc] : fwd.pre_moving_var[sc];
    const double denom = std::sqrt(sigma2 + state.cfg.eps);

    double sum_dy = 0.0;
    double sum_dy_zhat = 0.0;
    for (int64_t n = 0; n < v.batch; ++n)
      for (int64_t i = 0; i < v.inner; ++i) {
        const size_t idx = index_of(v, n, c, i);
        const double zhat = (x.data[idx] - mu) / denom;
        sum_dy += grad_y.data[idx];
        sum_dy_zhat += grad_y.data[idx] * zhat;
      }
    dgamma[sc] += sum_dy_zhat;
    dbeta[sc] += sum_dy;

    if (!s) {
      // moving statistics are constants: straight rescale
      for (int64_t n = 0; n < v.batch; ++n)
        for (int64_t i = 0; i < v.inner; ++i) {
          const size_t idx = index_of(v, n, c, i);
          dx.data[idx] = g * grad_y.data[idx] / denom;
        }
    } else {
      // batch branch: mean and variance depend on x
      // dx_i = g/denom * (dy_i - mean(dy) - zhat_i * mean(dy*zhat))
      const double mean_dy = sum_dy / static_cast<double>(m);
      const double mean_dy_zhat = sum_dy_zhat / static_cast<double>(m);
      for (int64_t n = 0; n < v.batch; ++n)
        for (int64_t i = 0; i < v.inner; ++i) {
          const size_t idx = index_of(v, n, c, i);
          const double zhat = (x.data[idx] - mu) / denom;
          dx.data[idx] = g / denom * (grad_y.data[idx] - mean_dy - zhat * mean_dy_zhat);
        }
    }
  }
  return dx;
}

}  // namespace lungsc

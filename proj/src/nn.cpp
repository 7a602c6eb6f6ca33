#include "lungsc/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "lungsc/error.hpp"

namespace lungsc::nn {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

namespace {

int64_t conv_out(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// im2col for one sample: [C*k*k, OH*OW] row-major
void im2col(const Tensor& x, int64_t n, int64_t k, int64_t stride, int64_t pad,
            int64_t oh, int64_t ow, double* col) {
  const int64_t C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int64_t cols = oh * ow;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t ky = 0; ky < k; ++ky)
      for (int64_t kx = 0; kx < k; ++kx) {
        double* row = col + ((c * k + ky) * k + kx) * cols;
        for (int64_t y = 0; y < oh; ++y) {
          const int64_t sy = y * stride - pad + ky;
          for (int64_t xo = 0; xo < ow; ++xo) {
            const int64_t sx = xo * stride - pad + kx;
            row[y * ow + xo] = (sy >= 0 && sy < H && sx >= 0 && sx < W)
                                   ? x.at4(n, c, sy, sx)
                                   : 0.0;
          }
        }
      }
}

void col2im_add(const double* col, int64_t k, int64_t stride, int64_t pad, int64_t oh,
                int64_t ow, Tensor& dx, int64_t n) {
  const int64_t C = dx.shape[1], H = dx.shape[2], W = dx.shape[3];
  const int64_t cols = oh * ow;
  for (int64_t c = 0; c < C; ++c)
    for (int64_t ky = 0; ky < k; ++ky)
      for (int64_t kx = 0; kx < k; ++kx) {
        const double* row = col + ((c * k + ky) * k + kx) * cols;
        for (int64_t y = 0; y < oh; ++y) {
          const int64_t sy = y * stride - pad + ky;
          if (sy < 0 || sy >= H) continue;
          for (int64_t xo = 0; xo < ow; ++xo) {
            const int64_t sx = xo * stride - pad + kx;
            if (sx < 0 || sx >= W) continue;
            dx.at4(n, c, sy, sx) += row[y * ow + xo];
          }
        }
      }
}

}  // namespace

void init_uniform_fanin(Tensor& t, int64_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<int64_t>(fan_in, 1)));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t stride, int64_t pad,
               bool with_bias)
    : weight({out_ch, in_ch, kernel, kernel}),
      wgrad({out_ch, in_ch, kernel, kernel}),
      in_ch_(in_ch),
      out_ch_(out_ch),
      k_(kernel),
      stride_(stride),
      pad_(pad),
      has_bias_(with_bias) {
  if (with_bias) {
    bias = Tensor({out_ch});
    bgrad = Tensor({out_ch});
  }
}

Tensor Conv2d::forward(const Tensor& x, bool training) {
  if (x.ndim() != 4 || x.shape[1] != in_ch_)
    throw ShapeMismatch("conv expects [N," + std::to_string(in_ch_) + ",H,W], got " +
                        x.shape_str());
  const int64_t N = x.shape[0];
  const int64_t oh = conv_out(x.shape[2], k_, stride_, pad_);
  const int64_t ow = conv_out(x.shape[3], k_, stride_, pad_);
  if (oh <= 0 || ow <= 0) throw ShapeMismatch("conv output would be empty for " + x.shape_str());
  if (training) x_ = x;

  Tensor y({N, out_ch_, oh, ow});
  const int64_t patch = in_ch_ * k_ * k_;
  std::vector<double> col(static_cast<size_t>(patch * oh * ow));
  CMapRM W(weight.data.data(), out_ch_, patch);
  for (int64_t n = 0; n < N; ++n) {
    im2col(x, n, k_, stride_, pad_, oh, ow, col.data());
    CMapRM C(col.data(), patch, oh * ow);
    MapRM Y(y.data.data() + n * out_ch_ * oh * ow, out_ch_, oh * ow);
    Y.noalias() = W * C;
    if (has_bias_)
      for (int64_t o = 0; o < out_ch_; ++o) Y.row(o).array() += bias.data[static_cast<size_t>(o)];
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  const Tensor& x = x_;
  const int64_t N = x.shape[0];
  const int64_t oh = grad_out.shape[2], ow = grad_out.shape[3];
  const int64_t patch = in_ch_ * k_ * k_;

  Tensor dx(x.shape);
  std::vector<double> col(static_cast<size_t>(patch * oh * ow));
  std::vector<double> dcol(static_cast<size_t>(patch * oh * ow));
  CMapRM W(weight.data.data(), out_ch_, patch);
  MapRM dW(wgrad.data.data(), out_ch_, patch);
  for (int64_t n = 0; n < N; ++n) {
    im2col(x, n, k_, stride_, pad_, oh, ow, col.data());
    CMapRM C(col.data(), patch, oh * ow);
    CMapRM dY(grad_out.data.data() + n * out_ch_ * oh * ow, out_ch_, oh * ow);
    dW.noalias() += dY * C.transpose();
    MapRM dC(dcol.data(), patch, oh * ow);
    dC.noalias() = W.transpose() * dY;
    col2im_add(dcol.data(), k_, stride_, pad_, oh, ow, dx, n);
    if (has_bias_)
      for (int64_t o = 0; o < out_ch_; ++o)
        bgrad.data[static_cast<size_t>(o)] += dY.row(o).sum();
  }
  return dx;
}

void Conv2d::register_params(const std::string& prefix, const std::string& group,
                             std::vector<ParamRef>& out) {
  out.push_back({prefix + "weight", &weight.data, &wgrad.data, weight.shape, group});
  if (has_bias_) out.push_back({prefix + "bias", &bias.data, &bgrad.data, bias.shape, group});
}

// ------------------------------------------------------------ BatchNorm2d

BatchNorm2d::BatchNorm2d(int64_t channels, double eps_in, double momentum_in)
    : gamma(static_cast<size_t>(channels), 1.0),
      beta(static_cast<size_t>(channels), 0.0),
      running_mean(static_cast<size_t>(channels), 0.0),
      running_var(static_cast<size_t>(channels), 1.0),
      dgamma(static_cast<size_t>(channels), 0.0),
      dbeta(static_cast<size_t>(channels), 0.0),
      eps(eps_in),
      momentum(momentum_in),
      channels_(channels) {}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
  if (x.ndim() < 2 || x.shape[1] != channels_)
    throw ShapeMismatch("batchnorm channel mismatch for " + x.shape_str());
  const int64_t N = x.shape[0], C = channels_;
  int64_t inner = 1;
  for (size_t i = 2; i < x.ndim(); ++i) inner *= x.shape[i];
  const int64_t m = N * inner;

  Tensor y(x.shape);
  if (!training) {
    for (int64_t c = 0; c < C; ++c) {
      const double denom = std::sqrt(running_var[static_cast<size_t>(c)] + eps);
      const double g = gamma[static_cast<size_t>(c)], mu = running_mean[static_cast<size_t>(c)],
                   b = beta[static_cast<size_t>(c)];
      for (int64_t n = 0; n < N; ++n)
        for (int64_t i = 0; i < inner; ++i) {
          const size_t idx = static_cast<size_t>((n * C + c) * inner + i);
          y.data[idx] = g * (x.data[idx] - mu) / denom + b;
        }
    }
    return y;
  }

  if (N < 2) throw BatchTooSmall("batchnorm training needs batch >= 2");
  x_ = x;
  mean_.assign(static_cast<size_t>(C), 0.0);
  var_.assign(static_cast<size_t>(C), 0.0);
  for (int64_t c = 0; c < C; ++c) {
    double mu = 0.0;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t i = 0; i < inner; ++i)
        mu += x.data[static_cast<size_t>((n * C + c) * inner + i)];
    mu /= static_cast<double>(m);
    double v = 0.0;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t i = 0; i < inner; ++i) {
        const double d = x.data[static_cast<size_t>((n * C + c) * inner + i)] - mu;
        v += d * d;
      }
    v /= static_cast<double>(m);  // biased, same convention as the moving store
    mean_[static_cast<size_t>(c)] = mu;
    var_[static_cast<size_t>(c)] = v;
    const double denom = std::sqrt(v + eps);
    const double g = gamma[static_cast<size_t>(c)], b = beta[static_cast<size_t>(c)];
    for (int64_t n = 0; n < N; ++n)
      for (int64_t i = 0; i < inner; ++i) {
        const size_t idx = static_cast<size_t>((n * C + c) * inner + i);
        y.data[idx] = g * (x.data[idx] - mu) / denom + b;
      }
    running_mean[static_cast<size_t>(c)] += momentum * (mu - running_mean[static_cast<size_t>(c)]);
    running_var[static_cast<size_t>(c)] += momentum * (v - running_var[static_cast<size_t>(c)]);
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
  const Tensor& x = x_;
  const int64_t N = x.shape[0], C = channels_;
  int64_t inner = 1;
  for (size_t i = 2; i < x.ndim(); ++i) inner *= x.shape[i];
  const int64_t m = N * inner;

  Tensor dx(x.shape);
  for (int64_t c = 0; c < C; ++c) {
    const size_t sc = static_cast<size_t>(c);
    const double mu = mean_[sc];
    const double denom = std::sqrt(var_[sc] + eps);
    double sum_dy = 0.0, sum_dy_zhat = 0.0;
    for (int64_t n = 0; n < N; ++n)
      for (int64_t i = 0; i < inner; ++i) {
        const size_t idx = static_cast<size_t>((n * C + c) * inner + i);
        const double zhat = (x.data[idx] - mu) / denom;
        sum_dy += grad_out.data[idx];
        sum_dy_zhat += grad_out.data[idx] * zhat;
      }
    dgamma[sc] += sum_dy_zhat;
    dbeta[sc] += sum_dy;
    const double g = gamma[sc];
    const double mean_dy = sum_dy / static_cast<double>(m);
    const double mean_dy_zhat = sum_dy_zhat / static_cast<double>(m);
    for (int64_t n = 0; n < N; ++n)
      for (int64_t i = 0; i < inner; ++i) {
        const size_t idx = static_cast<size_t>((n * C + c) * inner + i);
        const double zhat = (x.data[idx] - mu) / denom;
        dx.data[idx] = g / denom * (grad_out.data[idx] - mean_dy - zhat * mean_dy_zhat);
      }
  }
  return dx;
}

void BatchNorm2d::register_params(const std::string& prefix, const std::string& group,
                                  std::vector<ParamRef>& out) {
  const std::vector<int64_t> shape = {channels_};
  out.push_back({prefix + "weight", &gamma, &dgamma, shape, group});
  out.push_back({prefix + "bias", &beta, &dbeta, shape, group});
  out.push_back({prefix + "running_mean", &running_mean, nullptr, shape, group});
  out.push_back({prefix + "running_var", &running_var, nullptr, shape, group});
}

// ------------------------------------------------------------ StochNorm2d

StochNorm2d::StochNorm2d(int64_t channels, const StochNormConfig& cfg, uint64_t seed,
                         int64_t layer_id)
    : state(StochNormState::identity(channels, cfg)),
      dgamma(static_cast<size_t>(channels), 0.0),
      dbeta(static_cast<size_t>(channels), 0.0),
      seed_(seed),
      layer_id_(layer_id) {}

Tensor StochNorm2d::forward(const Tensor& x, bool training) {
  if (!training) return stochnorm_forward_eval(x, state);
  x_ = x;
  // branch draws are seeded per (layer id, step): reproducible regardless
  // of how many other layers consumed randomness this step
  Rng rng = Rng::child(splitmix64(seed_) ^ static_cast<uint64_t>(layer_id_),
                       static_cast<uint64_t>(step));
  ++step;
  fwd_ = stochnorm_forward_train(x, state, rng);
  return fwd_.y;
}

Tensor StochNorm2d::backward(const Tensor& grad_out) {
  return stochnorm_backward(x_, grad_out, fwd_, state, dgamma, dbeta);
}

void StochNorm2d::register_params(const std::string& prefix, const std::string& group,
                                  std::vector<ParamRef>& out) {
  const std::vector<int64_t> shape = {state.channels()};
  out.push_back({prefix + "weight", &state.gamma, &dgamma, shape, group});
  out.push_back({prefix + "bias", &state.beta, &dbeta, shape, group});
  out.push_back({prefix + "running_mean", &state.moving_mean, nullptr, shape, group});
  out.push_back({prefix + "running_var", &state.moving_var, nullptr, shape, group});
}

// ------------------------------------------------------------------ ReLU

Tensor ReLU::forward(const Tensor& x, bool training) {
  Tensor y = x;
  if (training) mask_.assign(x.data.size(), 0);
  for (size_t i = 0; i < y.data.size(); ++i) {
    if (y.data[i] > 0) {
      if (training) mask_[i] = 1;
    } else {
      y.data[i] = 0.0;
    }
  }
  return y;
}

Tensor ReLU::backward(const Tensor& grad_out) {
  Tensor dx = grad_out;
  for (size_t i = 0; i < dx.data.size(); ++i)
    if (!mask_[i]) dx.data[i] = 0.0;
  return dx;
}

// -------------------------------------------------------------- MaxPool2d

MaxPool2d::MaxPool2d(int64_t kernel, int64_t stride, int64_t pad)
    : k_(kernel), stride_(stride), pad_(pad) {}

Tensor MaxPool2d::forward(const Tensor& x, bool training) {
  const int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int64_t oh = conv_out(H, k_, stride_, pad_);
  const int64_t ow = conv_out(W, k_, stride_, pad_);
  if (oh <= 0 || ow <= 0) throw ShapeMismatch("maxpool output would be empty for " + x.shape_str());
  Tensor y({N, C, oh, ow});
  in_shape_ = x.shape;
  if (training) argmax_.assign(static_cast<size_t>(N * C * oh * ow), -1);

  size_t oidx = 0;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t y0 = 0; y0 < oh; ++y0)
        for (int64_t x0 = 0; x0 < ow; ++x0, ++oidx) {
          double best = -std::numeric_limits<double>::infinity();
          int64_t best_idx = -1;
          for (int64_t ky = 0; ky < k_; ++ky) {
            const int64_t sy = y0 * stride_ - pad_ + ky;
            if (sy < 0 || sy >= H) continue;
            for (int64_t kx = 0; kx < k_; ++kx) {
              const int64_t sx = x0 * stride_ - pad_ + kx;
              if (sx < 0 || sx >= W) continue;
              const double v = x.at4(n, c, sy, sx);
              if (v > best) {
                best = v;
                best_idx = ((n * C + c) * H + sy) * W + sx;
              }
            }
          }
          y.data[oidx] = best;
          if (training) argmax_[oidx] = best_idx;
        }
  return y;
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
  Tensor dx(in_shape_);
  for (size_t i = 0; i < grad_out.data.size(); ++i)
    if (argmax_[i] >= 0) dx.data[static_cast<size_t>(argmax_[i])] += grad_out.data[i];
  return dx;
}

// ---------------------------------------------------------- GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& x, bool) {
  const int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  in_shape_ = x.shape;
  Tensor y({N, C});
  const double scale = 1.0 / static_cast<double>(H * W);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int64_t i = 0; i < H * W; ++i)
        acc += x.data[static_cast<size_t>((n * C + c) * H * W + i)];
      y.at2(n, c) = acc * scale;
    }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
  const int64_t N = in_shape_[0], C = in_shape_[1], H = in_shape_[2], W = in_shape_[3];
  Tensor dx(in_shape_);
  const double scale = 1.0 / static_cast<double>(H * W);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const double g = grad_out.at2(n, c) * scale;
      for (int64_t i = 0; i < H * W; ++i)
        dx.data[static_cast<size_t>((n * C + c) * H * W + i)] = g;
    }
  return dx;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(int64_t in_dim, int64_t out_dim)
    : weight({out_dim, in_dim}), bias({out_dim}), wgrad({out_dim, in_dim}), bgrad({out_dim}) {}

Tensor Linear::forward(const Tensor& x, bool training) {
  if (x.ndim() != 2 || x.shape[1] != weight.shape[1])
    throw ShapeMismatch("linear expects [N," + std::to_string(weight.shape[1]) + "], got " +
                        x.shape_str());
  if (training) x_ = x;
  const int64_t N = x.shape[0];
  Tensor y({N, weight.shape[0]});
  CMapRM X(x.data.data(), N, x.shape[1]);
  CMapRM W(weight.data.data(), weight.shape[0], weight.shape[1]);
  MapRM Y(y.data.data(), N, weight.shape[0]);
  Y.noalias() = X * W.transpose();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < weight.shape[0]; ++o) y.at2(n, o) += bias.data[static_cast<size_t>(o)];
  return y;
}

Tensor Linear::backward(const Tensor& grad_out) {
  const int64_t N = x_.shape[0];
  CMapRM X(x_.data.data(), N, x_.shape[1]);
  CMapRM dY(grad_out.data.data(), N, weight.shape[0]);
  MapRM dW(wgrad.data.data(), weight.shape[0], weight.shape[1]);
  dW.noalias() += dY.transpose() * X;
  for (int64_t o = 0; o < weight.shape[0]; ++o)
    bgrad.data[static_cast<size_t>(o)] += dY.col(o).sum();
  Tensor dx(x_.shape);
  MapRM dX(dx.data.data(), N, x_.shape[1]);
  CMapRM W(weight.data.data(), weight.shape[0], weight.shape[1]);
  dX.noalias() = dY * W;
  return dx;
}

void Linear::register_params(const std::string& prefix, const std::string& group,
                             std::vector<ParamRef>& out) {
  out.push_back({prefix + "weight", &weight.data, &wgrad.data, weight.shape, group});
  out.push_back({prefix + "bias", &bias.data, &bgrad.data, bias.shape, group});
}

// ------------------------------------------------------------- Sequential

void Sequential::add(std::string name, std::unique_ptr<Layer> layer) {
  layers_.emplace_back(std::move(name), std::move(layer));
}

Tensor Sequential::forward(const Tensor& x, bool training) {
  Tensor cur = x;
  for (auto& [name, layer] : layers_) cur = layer->forward(cur, training);
  return cur;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor cur = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = it->second->backward(cur);
  return cur;
}

void Sequential::register_params(const std::string& prefix, const std::string& group,
                                 std::vector<ParamRef>& out) {
  for (auto& [name, layer] : layers_)
    layer->register_params(prefix + name + ".", group, out);
}

Layer* Sequential::at(const std::string& name) {
  for (auto& [n, layer] : layers_)
    if (n == name) return layer.get();
  return nullptr;
}

// ------------------------------------------------------------- BasicBlock

BasicBlock::BasicBlock(int64_t in_ch, int64_t out_ch, int64_t stride, const NormFactory& norm)
    : conv1_(in_ch, out_ch, 3, stride, 1, false),
      bn1_(norm(out_ch)),
      conv2_(out_ch, out_ch, 3, 1, 1, false),
      bn2_(norm(out_ch)) {
  if (stride != 1 || in_ch != out_ch) {
    down_conv_ = std::make_unique<Conv2d>(in_ch, out_ch, 1, stride, 0, false);
    down_norm_ = norm(out_ch);
  }
}

Tensor BasicBlock::forward(const Tensor& x, bool training) {
  if (training) x_ = x;
  Tensor out = conv1_.forward(x, training);
  out = bn1_->forward(out, training);
  out = relu1_.forward(out, training);
  out = conv2_.forward(out, training);
  out = bn2_->forward(out, training);
  Tensor shortcut = x;
  if (down_conv_) {
    shortcut = down_conv_->forward(x, training);
    shortcut = down_norm_->forward(shortcut, training);
  }
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += shortcut.data[i];
  return relu2_.forward(out, training);
}

Tensor BasicBlock::backward(const Tensor& grad_out) {
  Tensor g = relu2_.backward(grad_out);
  // g splits into the residual path and the shortcut
  Tensor gb = bn2_->backward(g);
  gb = conv2_.backward(gb);
  gb = relu1_.backward(gb);
  gb = bn1_->backward(gb);
  gb = conv1_.backward(gb);
  Tensor gs = g;
  if (down_conv_) {
    gs = down_norm_->backward(gs);
    gs = down_conv_->backward(gs);
  }
  for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += gs.data[i];
  return gb;
}

void BasicBlock::register_params(const std::string& prefix, const std::string& group,
                                 std::vector<ParamRef>& out) {
  conv1_.register_params(prefix + "conv1.", group, out);
  bn1_->register_params(prefix + "bn1.", group, out);
  conv2_.register_params(prefix + "conv2.", group, out);
  bn2_->register_params(prefix + "bn2.", group, out);
  if (down_conv_) {
    down_conv_->register_params(prefix + "downsample.0.", group, out);
    down_norm_->register_params(prefix + "downsample.1.", group, out);
  }
}

// ------------------------------------------------------------- Bottleneck

Bottleneck::Bottleneck(int64_t in_ch, int64_t mid_ch, int64_t stride, const NormFactory& norm)
    : conv1_(in_ch, mid_ch, 1, 1, 0, false),
      bn1_(norm(mid_ch)),
      conv2_(mid_ch, mid_ch, 3, stride, 1, false),
      bn2_(norm(mid_ch)),
      conv3_(mid_ch, mid_ch * expansion, 1, 1, 0, false),
      bn3_(norm(mid_ch * expansion)) {
  if (stride != 1 || in_ch != mid_ch * expansion) {
    down_conv_ = std::make_unique<Conv2d>(in_ch, mid_ch * expansion, 1, stride, 0, false);
    down_norm_ = norm(mid_ch * expansion);
  }
}

Tensor Bottleneck::forward(const Tensor& x, bool training) {
  if (training) x_ = x;
  Tensor out = conv1_.forward(x, training);
  out = bn1_->forward(out, training);
  out = relu1_.forward(out, training);
  out = conv2_.forward(out, training);
  out = bn2_->forward(out, training);
  out = relu2_.forward(out, training);
  out = conv3_.forward(out, training);
  out = bn3_->forward(out, training);
  Tensor shortcut = x;
  if (down_conv_) {
    shortcut = down_conv_->forward(x, training);
    shortcut = down_norm_->forward(shortcut, training);
  }
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += shortcut.data[i];
  return relu3_.forward(out, training);
}

Tensor Bottleneck::backward(const Tensor& grad_out) {
  Tensor g = relu3_.backward(grad_out);
  Tensor gb = bn3_->backward(g);
  gb = conv3_.backward(gb);
  gb = relu2_.backward(gb);
  gb = bn2_->backward(gb);
  gb = conv2_.backward(gb);
  gb = relu1_.backward(gb);
  gb = bn1_->backward(gb);
  gb = conv1_.backward(gb);
  Tensor gs = g;
  if (down_conv_) {
    gs = down_norm_->backward(gs);
    gs = down_conv_->backward(gs);
  }
  for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += gs.data[i];
  return gb;
}

void Bottleneck::register_params(const std::string& prefix, const std::string& group,
                                 std::vector<ParamRef>& out) {
  conv1_.register_params(prefix + "conv1.", group, out);
  bn1_->register_params(prefix + "bn1.", group, out);
  conv2_.register_params(prefix + "conv2.", group, out);
  bn2_->register_params(prefix + "bn2.", group, out);
  conv3_.register_params(prefix + "conv3.", group, out);
  bn3_->register_params(prefix + "bn3.", group, out);
  if (down_conv_) {
    down_conv_->register_params(prefix + "downsample.0.", group, out);
    down_norm_->register_params(prefix + "downsample.1.", group, out);
  }
}

// ------------------------------------------------------------------- Sgd

void Sgd::step(const std::vector<ParamRef>& params,
               const std::map<std::string, double>& lr_by_group) {
  for (const auto& p : params) {
    if (!p.grad) continue;  // buffer
    auto lr_it = lr_by_group.find(p.group);
    if (lr_it == lr_by_group.end()) continue;  // frozen group
    const double lr = lr_it->second;
    auto& v = velocity_[p.value];
    if (v.size() != p.value->size()) v.assign(p.value->size(), 0.0);
    for (size_t i = 0; i < p.value->size(); ++i) {
      v[i] = momentum_ * v[i] + (*p.grad)[i];
      (*p.value)[i] -= lr * v[i];
    }
  }
}

void Sgd::zero_grad(const std::vector<ParamRef>& params) {
  for (const auto& p : params)
    if (p.grad) std::fill(p.grad->begin(), p.grad->end(), 0.0);
}

}  // namespace lungsc::nn

#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "lungsc/stochnorm.hpp"
#include "lungsc/tensor.hpp"

namespace lungsc::nn {

// Named view onto a parameter or buffer. Buffers (running statistics) have
// grad == nullptr; the optimizer skips them, import/export includes them.
struct ParamRef {
  std::string name;
  std::vector<double>* value = nullptr;
  std::vector<double>* grad = nullptr;
  std::vector<int64_t> shape;
  std::string group;  // "backbone", "head_target", "head_source"
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, bool training) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void register_params(const std::string& prefix, const std::string& group,
                               std::vector<ParamRef>& out) = 0;
};

class Conv2d : public Layer {
 public:
  Conv2d(int64_t in_ch, int64_t out_ch, int64_t kernel, int64_t stride, int64_t pad,
         bool bias);

  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void register_params(const std::string& prefix, const std::string& group,
                       std::vector<ParamRef>& out) override;

  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out] (empty when bias is off)
  Tensor wgrad, bgrad;

 private:
  int64_t in_ch_, out_ch_, k_, stride_, pad_;
  bool has_bias_;
  Tensor x_;  // training cache
};

class BatchNorm2d : public Layer {
 public:
  explicit BatchNorm2d(int64_t channels, double eps = 1e-5, double momentum = 0.1);

  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void register_params(const std::string& prefix, const std::string& group,
                       std::vector<ParamRef>& out) override;

  std::vector<double> gamma, beta, running_mean, running_var;
  std::vector<double> dgamma, dbeta;
  double eps, momentum;

 private:
  int64_t channels_;
  Tensor x_;
  std::vector<double> mean_, var_;
};

class StochNorm2d : public Layer {
 public:
  StochNorm2d(int64_t channels, const StochNormConfig& cfg, uint64_t seed, int64_t layer_id);

  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void register_params(const std::string& prefix, const std::string& group,
                       std::vector<ParamRef>& out) override;

  StochNormState state;
  std::vector<double> dgamma, dbeta;
  int64_t step = 0;

 private:
  uint64_t seed_;
  int64_t layer_id_;
  Tensor x_;
  StochNormForward fwd_;
};

class ReLU : public Layer {
 public:
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void register_params(const std::string&, const std::string&, std::vector<ParamRef>&) override {}

 private:
  std::vector<uint8_t> mask_;
};

class MaxPool2d : public Layer {
 public:
  MaxPool2d(int64_t kernel, int64_t stride, int64_t pad);
  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void register_params(const std::string&, const std::string&, std::vector<ParamRef>&) override {}

 private:
  int64_t k_, stride_, pad_;
  std::vector<int64_t> argmax_;
  std::vector<int64_t> in_shape_;
};

class GlobalAvgPool : public Layer {
 public:
  Tensor forward(const Tensor& x, bool training) override;  // [N,C,H,W] -> [N,C]
  Tensor backward(const Tensor& grad_out) override;
  void register_params(const std::string&, const std::string&, std::vector<ParamRef>&) override {}

 private:
  std::vector<int64_t> in_shape_;
};

class Linear : public Layer {
 public:
  Linear(int64_t in_dim, int64_t out_dim);

  Tensor forward(const Tensor& x, bool training) override;  // [N,D] -> [N,K]
  Tensor backward(const Tensor& grad_out) override;
  void register_params(const std::string& prefix, const std::string& group,
                       std::vector<ParamRef>& out) override;

  Tensor weight;  // [out, in]
  Tensor bias;    // [out]
  Tensor wgrad, bgrad;
  int64_t in_dim() const { return weight.shape[1]; }
  int64_t out_dim() const { return weight.shape[0]; }

 private:
  Tensor x_;
};

class Sequential : public Layer {
 public:
  Sequential() = default;
  void add(std::string name, std::unique_ptr<Layer> layer);

  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void register_params(const std::string& prefix, const std::string& group,
                       std::vector<ParamRef>& out) override;

  Layer* at(const std::string& name);

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Layer>>> layers_;
};

// Builds the normalization layer for a site; lets the residual blocks stay
// agnostic of the norm kind. The factory is called with the channel count.
using NormFactory = std::function<std::unique_ptr<Layer>(int64_t channels)>;

// conv3x3-norm-relu-conv3x3-norm plus identity/projection shortcut.
class BasicBlock : public Layer {
 public:
  BasicBlock(int64_t in_ch, int64_t out_ch, int64_t stride, const NormFactory& norm);

  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void register_params(const std::string& prefix, const std::string& group,
                       std::vector<ParamRef>& out) override;

  static constexpr int64_t expansion = 1;

 private:
  Conv2d conv1_;
  std::unique_ptr<Layer> bn1_;
  Conv2d conv2_;
  std::unique_ptr<Layer> bn2_;
  std::unique_ptr<Conv2d> down_conv_;
  std::unique_ptr<Layer> down_norm_;
  ReLU relu1_, relu2_;
  Tensor x_;
};

// 1x1-3x3-1x1 bottleneck with expansion 4.
class Bottleneck : public Layer {
 public:
  Bottleneck(int64_t in_ch, int64_t mid_ch, int64_t stride, const NormFactory& norm);

  Tensor forward(const Tensor& x, bool training) override;
  Tensor backward(const Tensor& grad_out) override;
  void register_params(const std::string& prefix, const std::string& group,
                       std::vector<ParamRef>& out) override;

  static constexpr int64_t expansion = 4;

 private:
  Conv2d conv1_;
  std::unique_ptr<Layer> bn1_;
  Conv2d conv2_;
  std::unique_ptr<Layer> bn2_;
  Conv2d conv3_;
  std::unique_ptr<Layer> bn3_;
  std::unique_ptr<Conv2d> down_conv_;
  std::unique_ptr<Layer> down_norm_;
  ReLU relu1_, relu2_, relu3_;
  Tensor x_;
};

// SGD with momentum; velocity is keyed by the parameter storage so groups
// can be rebuilt freely.
class Sgd {
 public:
  explicit Sgd(double momentum) : momentum_(momentum) {}

  void step(const std::vector<ParamRef>& params,
            const std::map<std::string, double>& lr_by_group);
  static void zero_grad(const std::vector<ParamRef>& params);

 private:
  double momentum_;
  std::map<const std::vector<double>*, std::vector<double>> velocity_;
};

// Seeded zero-mean uniform fan-in init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
void init_uniform_fanin(Tensor& t, int64_t fan_in, Rng& rng);

}  // namespace lungsc::nn

#pragma once

#include <string>

#include "cloudmamba/nn/parameters.hpp"
#include "cloudmamba/ops.hpp"

namespace cloudmamba::nn {

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore& ps, const std::string& name, int in_channels, int out_channels, ag::ConvSpec spec,
         bool with_bias = true);

  ag::Var operator()(const ag::Var& x) const;

  int in_channels() const noexcept { return in_; }
  int out_channels() const noexcept { return out_; }
  const ag::ConvSpec& spec() const noexcept { return spec_; }
  ag::Var weight;
  ag::Var bias;

 private:
  int in_ = 0;
  int out_ = 0;
  ag::ConvSpec spec_;
};

// 3×3 convolution, stride 1, padding = dilation (spatial size preserved).
Conv2d same_conv3x3(ParameterStore& ps, const std::string& name, int in, int out, int dilation = 1);
Conv2d pointwise_conv(ParameterStore& ps, const std::string& name, int in, int out);

class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& ps, const std::string& name, int in_features, int out_features, bool with_bias = true);

  ag::Var operator()(const ag::Var& x) const { return ag::linear(x, weight, bias); }

  ag::Var weight;
  ag::Var bias;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& ps, const std::string& name, int channels);

  ag::Var operator()(const ag::Var& x) const { return ag::layer_norm(x, gamma, beta); }

  ag::Var gamma;
  ag::Var beta;
};

class DepthwiseConv2d {
 public:
  DepthwiseConv2d() = default;
  DepthwiseConv2d(ParameterStore& ps, const std::string& name, int channels, int kernel = 3);

  ag::Var operator()(const ag::Var& x) const { return ag::depthwise_conv2d(x, weight, bias, kernel_); }

  ag::Var weight;
  ag::Var bias;

 private:
  int kernel_ = 3;
};

class TransposedConv2x2 {
 public:
  TransposedConv2x2() = default;
  TransposedConv2x2(ParameterStore& ps, const std::string& name, int in_channels, int out_channels);

  ag::Var operator()(const ag::Var& x) const { return ag::conv_transpose2x2(x, weight, bias); }

  ag::Var weight;
  ag::Var bias;
};

}  // namespace cloudmamba::nn

#include "cloudmamba/nn/layers.hpp"

#include <cmath>

namespace cloudmamba::nn {

Conv2d::Conv2d(ParameterStore& ps, const std::string& name, int in_channels, int out_channels, ag::ConvSpec spec,
               bool with_bias)
    : in_(in_channels), out_(out_channels), spec_(spec) {
  if (in_channels < 1 || out_channels < 1) throw ShapeError("Conv2d '" + name + "': channel counts must be >= 1");
  const int fan_in = spec.kernel * spec.kernel * in_channels;
  weight = ps.normal(name + ".weight", {fan_in, out_channels}, std::sqrt(2.0 / fan_in));
  if (with_bias) bias = ps.constant(name + ".bias", {out_channels}, 0);
}

ag::Var Conv2d::operator()(const ag::Var& x) const {
  if (x.value().rank() != 3 || x.value().channels() != in_) {
    throw ShapeError("conv expects " + std::to_string(in_) + " input channels, got " + shape_string(x.shape()));
  }
  return ag::conv2d(x, weight, bias, spec_);
}

Conv2d same_conv3x3(ParameterStore& ps, const std::string& name, int in, int out, int dilation) {
  return Conv2d(ps, name, in, out, ag::ConvSpec{3, 1, dilation, dilation});
}

Conv2d pointwise_conv(ParameterStore& ps, const std::string& name, int in, int out) {
  return Conv2d(ps, name, in, out, ag::ConvSpec{1, 1, 0, 1});
}

Linear::Linear(ParameterStore& ps, const std::string& name, int in_features, int out_features, bool with_bias) {
  weight = ps.normal(name + ".weight", {in_features, out_features}, 1.0 / std::sqrt(static_cast<Real>(in_features)));
  if (with_bias) bias = ps.constant(name + ".bias", {out_features}, 0);
}

LayerNorm::LayerNorm(ParameterStore& ps, const std::string& name, int channels) {
  gamma = ps.constant(name + ".gamma", {channels}, 1);
  beta = ps.constant(name + ".beta", {channels}, 0);
}

DepthwiseConv2d::DepthwiseConv2d(ParameterStore& ps, const std::string& name, int channels, int kernel)
    : kernel_(kernel) {
  weight = ps.normal(name + ".weight", {kernel * kernel, channels}, std::sqrt(2.0 / (kernel * kernel)) * 0.5);
  bias = ps.constant(name + ".bias", {channels}, 0);
}

TransposedConv2x2::TransposedConv2x2(ParameterStore& ps, const std::string& name, int in_channels, int out_channels) {
  weight = ps.normal(name + ".weight", {in_channels, 4 * out_channels}, std::sqrt(1.0 / in_channels));
  bias = ps.constant(name + ".bias", {out_channels}, 0);
}

}  // namespace cloudmamba::nn

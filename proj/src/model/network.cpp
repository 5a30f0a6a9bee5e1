#include "cloudmamba/model/network.hpp"

#include <algorithm>

#include "cloudmamba/model/refine.hpp"

namespace cloudmamba::model {

int ModelConfig::channels_at(int level) const {
  if (level < 0 || level > levels) throw ConfigError("level " + std::to_string(level) + " outside [0, L]");
  return std::min(base_channels << level, max_channels);
}

void ModelConfig::validate() const {
  if (levels < 1 || levels > 10) throw ConfigError("levels (L) must be in [1, 10], got " + std::to_string(levels));
  if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
  if (max_channels < base_channels) throw ConfigError("max_channels must be >= base_channels");
  if (state_dim < 1) throw ConfigError("state_dim must be >= 1");
  if (input_bands < 1) throw ConfigError("input_bands must be >= 1");
  nn::DSMambaConfig{dilations, base_channels, mamba}.validate();
}

void ModelConfig::check_input(int height, int width, int bands) const {
  const int m = required_multiple();
  if (height < m || width < m || height % m != 0 || width % m != 0) {
    throw ConfigError("input " + std::to_string(height) + "x" + std::to_string(width) +
                      " must have height and width divisible by " + std::to_string(m) + " (2^L with L=" +
                      std::to_string(levels) + ")");
  }
  if (bands != input_bands) {
    throw ShapeError("input has " + std::to_string(bands) + " bands, model expects " + std::to_string(input_bands));
  }
}

namespace {

// 1×1 prediction head. Weights start small so initial probabilities sit
// near 0.5 instead of saturating the sigmoid.
nn::Conv2d prediction_head(nn::ParameterStore& ps, const std::string& name, int in_channels) {
  nn::Conv2d head = nn::pointwise_conv(ps, name, in_channels, 1);
  for (auto& w : head.weight.mutable_value().storage()) w *= 0.1;
  return head;
}

}  // namespace

Decoder::Decoder(nn::ParameterStore& ps, const std::string& name, const ModelConfig& cfg, bool aux)
    : levels_(cfg.levels) {
  for (int l = 1; l <= cfg.levels; ++l) {
    const std::string lvl = name + ".level" + std::to_string(l);
    const int c = cfg.channels_at(l - 1);
    up.emplace_back(ps, lvl + ".up", cfg.channels_at(l), c);
    fuse1.emplace_back(ps, lvl + ".res1", 2 * c, c);
    fuse2.emplace_back(ps, lvl + ".res2", c, c);
    if (aux) aux_heads.push_back(prediction_head(ps, lvl + ".aux_head", c));
  }
  head = prediction_head(ps, name + ".head", cfg.channels_at(0));
}

Decoder::Result Decoder::operator()(const ag::Var& bottleneck, const std::vector<ag::Var>& skips) const {
  if (static_cast<int>(skips.size()) != levels_) {
    throw ShapeError("decoder expects " + std::to_string(levels_) + " skip features, got " +
                     std::to_string(skips.size()));
  }
  Result r;
  r.features.resize(levels_);
  ag::Var prev = bottleneck;
  for (int i = levels_ - 1; i >= 0; --i) {
    ag::Var upsampled = up[i](prev);
    if (upsampled.value().height() != skips[i].value().height() || upsampled.value().width() != skips[i].value().width()) {
      throw ShapeError("decoder level " + std::to_string(i + 1) + ": upsampled " + shape_string(upsampled.shape()) +
                       " does not match skip " + shape_string(skips[i].shape()));
    }
    prev = fuse2[i](fuse1[i](ag::concat_channels({upsampled, skips[i]})));
    r.features[i] = prev;
  }
  r.probability = ag::sigmoid(head(r.features[0]));
  for (std::size_t i = 0; i < aux_heads.size(); ++i) r.aux.push_back(ag::sigmoid(aux_heads[i](r.features[i])));
  return r;
}

CloudMambaNet::CloudMambaNet(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), params_(seed) {
  cfg_.validate();
  stem = nn::same_conv3x3(params_, "encoder.stem", cfg_.input_bands, cfg_.channels_at(0));
  for (int l = 1; l <= cfg_.levels; ++l) {
    const std::string lvl = "encoder.level" + std::to_string(l);
    const int c = cfg_.channels_at(l - 1);
    hpb.emplace_back(params_, lvl + ".hpb", nn::DSMambaConfig{cfg_.dilations, c, cfg_.mamba}, cfg_.state_dim);
    downsample.emplace_back(params_, lvl + ".down", c, cfg_.channels_at(l), ag::ConvSpec{3, 2, 1, 1});
  }
  decoder = Decoder(params_, "decoder", cfg_, /*aux=*/true);
  if (cfg_.use_refiner) refiner_ = std::make_unique<Refiner>(params_, cfg_);
}

CloudMambaNet::~CloudMambaNet() = default;

const Refiner& CloudMambaNet::refiner() const {
  if (!refiner_) throw ConfigError("model was built without a refiner (use_refiner = false)");
  return *refiner_;
}

void CloudMambaNet::set_scan_mode(nn::ScanMode m) {
  for (auto& b : hpb) b.set_scan_mode(m);
}

FeaturePyramid CloudMambaNet::encode(const Tensor& image) const {
  if (image.rank() != 3) throw ShapeError("image must be H×W×C, got " + shape_string(image.shape()));
  cfg_.check_input(image.height(), image.width(), image.channels());
  FeaturePyramid pyr;
  ag::Var f = stem(ag::Var(image));
  for (int l = 0; l < cfg_.levels; ++l) {
    ag::Var s = hpb[l](f);
    pyr.skips.push_back(s);
    f = downsample[l](s);
  }
  pyr.bottleneck = f;
  return pyr;
}

StageOneOutput CloudMambaNet::decode(const FeaturePyramid& pyramid) const {
  if (!pyramid.bottleneck.defined() || pyramid.bottleneck.value().channels() != cfg_.channels_at(cfg_.levels)) {
    throw ShapeError("feature pyramid bottleneck does not match the model configuration");
  }
  for (int l = 0; l < static_cast<int>(pyramid.skips.size()); ++l) {
    if (pyramid.skips[l].value().channels() != cfg_.channels_at(l)) {
      throw ShapeError("skip " + std::to_string(l + 1) + " has " + std::to_string(pyramid.skips[l].value().channels()) +
                       " channels, expected " + std::to_string(cfg_.channels_at(l)));
    }
  }
  auto r = decoder(pyramid.bottleneck, pyramid.skips);
  StageOneOutput out;
  out.coarse = r.probability;
  out.decoder_features = std::move(r.features);
  out.aux = std::move(r.aux);
  out.pyramid = pyramid;
  return out;
}

StageOneOutput CloudMambaNet::forward_coarse(const Tensor& image) const { return decode(encode(image)); }

std::vector<StageOneOutput> CloudMambaNet::forward_coarse(const std::vector<Tensor>& batch) const {
  std::vector<StageOneOutput> out;
  out.reserve(batch.size());
  for (const auto& img : batch) out.push_back(forward_coarse(img));
  return out;
}

}  // namespace cloudmamba::model

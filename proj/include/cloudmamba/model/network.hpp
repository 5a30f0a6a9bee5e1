#pragma once

// Stage one: initial conv, L encoder levels (HPB + stride-2 conv), L decoder
// levels (transposed conv, skip concat, two residual blocks), a coarse head
// and one deep-supervision head per decoder level.

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "cloudmamba/nn/blocks.hpp"

namespace cloudmamba::model {

struct ModelConfig {
  int levels = 5;           // L
  int base_channels = 16;   // C0
  int max_channels = 256;   // C_max
  int state_dim = 8;        // N
  int input_bands = 4;      // C_in
  std::array<int, 3> dilations{1, 2, 4};
  nn::MambaVariant mamba = nn::MambaVariant::kFused;
  bool use_refiner = true;

  // C_l = min(C0·2^l, C_max); level-l skips carry C_{l-1} channels.
  int channels_at(int level) const;
  int required_multiple() const { return 1 << levels; }
  void validate() const;
  // ConfigError naming the required multiple when H or W is not divisible by 2^L.
  void check_input(int height, int width, int bands) const;

  bool operator==(const ModelConfig&) const = default;
};

struct FeaturePyramid {
  std::vector<ag::Var> skips;  // S^1..S^L, S^l at H/2^(l-1)
  ag::Var bottleneck;          // F^L at H/2^L
};

struct StageOneOutput {
  ag::Var coarse;                         // P_c, H×W×1
  std::vector<ag::Var> decoder_features;  // F_dec^1..F_dec^L
  std::vector<ag::Var> aux;               // P^1..P^L
  FeaturePyramid pyramid;
};

// Decoder body shared by stage one and the refiner: level l consumes
// TransConv(previous) ‖ skip^l and emits F_dec^l.
class Decoder {
 public:
  Decoder() = default;
  Decoder(nn::ParameterStore& ps, const std::string& name, const ModelConfig& cfg, bool aux_heads);

  struct Result {
    std::vector<ag::Var> features;  // index 0 is level 1 (full resolution)
    ag::Var probability;
    std::vector<ag::Var> aux;
  };

  Result operator()(const ag::Var& bottleneck, const std::vector<ag::Var>& skips) const;

  std::vector<nn::TransposedConv2x2> up;
  std::vector<nn::ResBlock> fuse1;
  std::vector<nn::ResBlock> fuse2;
  nn::Conv2d head;
  std::vector<nn::Conv2d> aux_heads;

 private:
  int levels_ = 0;
};

class Refiner;

class CloudMambaNet {
 public:
  CloudMambaNet(const ModelConfig& cfg, std::uint64_t seed);
  ~CloudMambaNet();
  CloudMambaNet(const CloudMambaNet&) = delete;
  CloudMambaNet& operator=(const CloudMambaNet&) = delete;

  FeaturePyramid encode(const Tensor& image) const;
  StageOneOutput decode(const FeaturePyramid& pyramid) const;
  StageOneOutput forward_coarse(const Tensor& image) const;
  std::vector<StageOneOutput> forward_coarse(const std::vector<Tensor>& batch) const;

  const ModelConfig& config() const noexcept { return cfg_; }
  nn::ParameterStore& parameters() noexcept { return params_; }
  const nn::ParameterStore& parameters() const noexcept { return params_; }
  const Refiner& refiner() const;
  void set_scan_mode(nn::ScanMode m);

  nn::Conv2d stem;
  std::vector<nn::HybridPerceptionBlock> hpb;
  std::vector<nn::Conv2d> downsample;
  Decoder decoder;

 private:
  ModelConfig cfg_;
  nn::ParameterStore params_;
  std::unique_ptr<Refiner> refiner_;
};

}  // namespace cloudmamba::model

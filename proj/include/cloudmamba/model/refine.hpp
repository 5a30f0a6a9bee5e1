#pragma once

// Stage two: uncertainty estimate, acceptance mask, decoder-feature
// aggregation, uncertainty modulation, refinement decoder, binarization and
// the acceptance-guided fusion of the two masks.

#include <vector>

#include "cloudmamba/model/network.hpp"

namespace cloudmamba::model {

struct ThresholdConfig {
  Real gamma = 0.4;        // uncertainty threshold, (0, 1]
  Real tau_coarse = 0.5;   // τ_c
  Real tau_refined = 0.5;  // τ_r

  void validate() const;
  bool operator==(const ThresholdConfig&) const = default;
};

// U = 1 - 2|P - 0.5|. DomainError for probabilities outside [0, 1].
UncertaintyMap uncertainty_map(const ProbabilityMap& p);

// M = 1 where U < gamma (strict).
BinaryMask acceptance_mask(const UncertaintyMap& u, Real gamma);

// 1 where P > tau (strict).
BinaryMask binarize(const ProbabilityMap& p, Real tau);

// Ŷ = M ⊙ Ŷ_c + (1 - M) ⊙ Ŷ_r. DomainError on non-binary input.
BinaryMask fuse_masks(const BinaryMask& accept, const BinaryMask& coarse, const BinaryMask& refined);

// Multiplies a feature map by U resampled (bilinear) to its resolution.
// U is a constant gain; gradients do not reach stage one through it.
ag::Var modulate(const ag::Var& feature, const UncertaintyMap& u);

class Refiner {
 public:
  Refiner(nn::ParameterStore& ps, const ModelConfig& cfg);

  // Resizes F_dec^1..F_dec^L to the bottleneck resolution, concatenates and
  // maps back to the bottleneck width with a 1×1 conv.
  ag::Var aggregate(const std::vector<ag::Var>& decoder_features) const;

  // Refined probability map from uncertainty-modulated features.
  ag::Var refine(const ag::Var& modulated_bottleneck, const std::vector<ag::Var>& modulated_skips) const;

  nn::Conv2d aggregator;
  Decoder decoder;

 private:
  int levels_ = 0;
};

struct StagePipelineOutput {
  ProbabilityMap coarse;    // P_c
  UncertaintyMap uncertainty;  // U
  BinaryMask acceptance;    // M
  ProbabilityMap refined;   // P_r
  BinaryMask coarse_mask;   // Ŷ_c
  BinaryMask refined_mask;  // Ŷ_r
  BinaryMask fused;         // Ŷ
};

struct TrainingForward {
  StageOneOutput stage_one;
  UncertaintyMap uncertainty;
  ag::Var refined;  // undefined when the model has no refiner
};

// Differentiable two-stage pass used by the trainer.
TrainingForward forward_train(const CloudMambaNet& net, const Tensor& image);

// Full inference bundle. Without a refiner P_r mirrors P_c.
StagePipelineOutput forward_full(const CloudMambaNet& net, const Tensor& image, const ThresholdConfig& thresholds);

// Thresholding, uncertainty and fusion given already computed P_c and P_r.
StagePipelineOutput assemble_stages(ProbabilityMap coarse, ProbabilityMap refined, const ThresholdConfig& thresholds);

}  // namespace cloudmamba::model

#pragma once

#include <vector>

#include "cloudmamba/nn/parameters.hpp"
#include "cloudmamba/pipeline/config.hpp"

namespace cloudmamba::pipeline {

// lr_min + ½(lr0 - lr_min)(1 + cos(π·epoch/epochs)) with lr_min = lr0·floor
// and a 0-based epoch, so the first epoch runs at lr0.
Real cosine_lr(Real lr0, Real floor_factor, int epoch, int epochs);

// AdamW with decoupled weight decay over every parameter of a store, in
// registration order. Moments are kept per parameter.
class AdamW {
 public:
  AdamW(const nn::ParameterStore& params, const OptimizerConfig& cfg);

  // One update with the gradients currently held by the parameters.
  // Parameters without a gradient are left untouched.
  void step(Real lr);
  long steps() const noexcept { return t_; }

 private:
  const nn::ParameterStore& params_;
  OptimizerConfig cfg_;
  std::vector<std::vector<Real>> m_;
  std::vector<std::vector<Real>> v_;
  long t_ = 0;
};

}  // namespace cloudmamba::pipeline

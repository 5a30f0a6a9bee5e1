#pragma once

// Segmentation objectives. Every loss takes a probability map P (H×W×1 Var)
// and a binary label of the same spatial size. The Grid overloads evaluate
// the same code path without recording a graph.

#include <string>
#include <vector>

#include "cloudmamba/autograd.hpp"
#include "cloudmamba/tensor.hpp"

namespace cloudmamba::loss {

inline constexpr Real kProbabilityClamp = 1e-7;

struct LossConfig {
  Real lambda_bce = 1;
  Real lambda_dice = 1;
  Real dice_eps = 1;
  // α_1..α_L; empty means α_l = 2^-(l-1).
  std::vector<Real> aux_weights;
  bool supervise_refiner = true;

  Real aux_weight(int level) const;  // 1-based level
  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

ag::Var bce_loss(const ag::Var& p, const BinaryMask& y);
ag::Var dice_loss(const ag::Var& p, const BinaryMask& y, Real eps);
ag::Var seg_loss(const ag::Var& p, const BinaryMask& y, const LossConfig& cfg);

// Σ_l α_l · seg_loss(P^l, Y↓l); P^l must be at H/2^(l-1).
ag::Var deep_supervision_loss(const std::vector<ag::Var>& aux, const BinaryMask& y, const LossConfig& cfg);

Real bce_loss(const ProbabilityMap& p, const BinaryMask& y);
Real dice_loss(const ProbabilityMap& p, const BinaryMask& y, Real eps);
Real seg_loss(const ProbabilityMap& p, const BinaryMask& y, const LossConfig& cfg);
Real deep_supervision_loss(const std::vector<ProbabilityMap>& aux, const BinaryMask& y, const LossConfig& cfg);

// Nearest-neighbour reduction by `factor`: out(y, x) = in(y·factor, x·factor).
BinaryMask downsample_nearest(const BinaryMask& mask, int factor);

struct LossTerm {
  std::string name;
  Real value = 0;
};

struct LossBreakdown {
  ag::Var total;
  std::vector<LossTerm> terms;  // coarse, [refined], deep_supervision
};

// seg(P_c) + [supervise_refiner] seg(P_r) + deep supervision. `refined` may
// be undefined when the model has no refiner.
LossBreakdown total_loss(const ag::Var& coarse, const ag::Var& refined, const std::vector<ag::Var>& aux,
                         const BinaryMask& y, const LossConfig& cfg);

}  // namespace cloudmamba::loss

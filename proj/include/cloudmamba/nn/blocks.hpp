#pragma once

// Residual conv block, S6/SS2D layers, gated Mamba block, dual-scale Mamba
// block and the CNN-SSM hybrid perception block. Every block maps
// H×W×C → H×W×C except ResBlock with a channel change.

#include <array>
#include <string>

#include "cloudmamba/nn/layers.hpp"
#include "cloudmamba/ssm/selective_scan.hpp"

namespace cloudmamba::nn {

inline constexpr Real kLeakySlope = 0.01;

// x + LeakyReLU(LN(Conv3×3(x))). When the channel count changes the skip
// path is a 1×1 projection.
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(ParameterStore& ps, const std::string& name, int in_channels, int out_channels);

  ag::Var operator()(const ag::Var& x) const;

  Conv2d conv;
  LayerNorm norm;
  Conv2d projection;  // only when in != out

 private:
  bool project_ = false;
};

// One selective-scan layer over an L×D sequence. A is parameterised as
// -exp(a_log), so it stays strictly negative under any update.
class S6Layer {
 public:
  S6Layer() = default;
  S6Layer(ParameterStore& ps, const std::string& name, int channels, int state_dim);

  // `order` as in ag::selective_scan: rows of u are visited in that order.
  ag::Var operator()(const ag::Var& u, const std::vector<int>& order = {}) const;

  // Current weights in the plain-kernel representation.
  ssm::SSMParams<Real> export_params() const;
  int channels() const noexcept { return channels_; }
  int state_dim() const noexcept { return state_dim_; }
  int dt_rank() const noexcept { return dt_rank_; }

  Linear x_proj;   // D → R + 2N (Δ low-rank, B, C), no bias
  Linear dt_proj;  // R → D with bias
  ag::Var a_log;   // D×N

 private:
  int channels_ = 0;
  int state_dim_ = 0;
  int dt_rank_ = 0;
};

enum class ScanMode {
  kSelective,
  kIdentity,  // test seam: every direction passes its sequence through unchanged
};

// Cross-scan, one independent S6 layer per direction, cross-merge.
class SS2D {
 public:
  SS2D() = default;
  SS2D(ParameterStore& ps, const std::string& name, int channels, int state_dim);

  ag::Var operator()(const ag::Var& x) const;

  std::array<S6Layer, 4> directions;
  ScanMode mode = ScanMode::kSelective;
};

// out = Linear_out(LN(SS2D(SiLU(DWConv(Linear_main(LN(x)))))) ⊙ SiLU(Linear_gate(LN(x))))
class MambaBlock {
 public:
  MambaBlock() = default;
  MambaBlock(ParameterStore& ps, const std::string& name, int channels, int state_dim, int expand = 2);

  ag::Var operator()(const ag::Var& x) const;
  void set_scan_mode(ScanMode m) { ss2d.mode = m; }

  LayerNorm norm_in;
  Linear main_proj;
  Linear gate_proj;
  DepthwiseConv2d dwconv;
  SS2D ss2d;
  LayerNorm norm_out;
  Linear out_proj;
};

enum class MambaVariant {
  kNone,      // residual blocks only (pure CNN ablation)
  kPlain,     // single-scale Mamba on F_cnn with residual
  kSeparate,  // each scale through its own Mamba block, fused afterwards
  kFused,     // dual-scale concat into one Mamba block
};

std::string to_string(MambaVariant v);
MambaVariant parse_mamba_variant(const std::string& s);

struct DSMambaConfig {
  std::array<int, 3> dilations{1, 2, 4};
  int channels = 16;
  MambaVariant variant = MambaVariant::kFused;

  void validate() const;
};

class DualScaleMamba {
 public:
  DualScaleMamba() = default;
  DualScaleMamba(ParameterStore& ps, const std::string& name, const DSMambaConfig& cfg, int state_dim);

  ag::Var operator()(const ag::Var& x) const;
  // F_large before fusion with the small-scale branch.
  ag::Var large_scale(const ag::Var& x) const;
  void set_scan_mode(ScanMode m);

  const DSMambaConfig& config() const noexcept { return cfg_; }

  std::array<Conv2d, 3> dilated;
  Conv2d reduce;  // 3C → C
  MambaBlock mamba;        // fused / plain / small branch of separate
  MambaBlock mamba_large;  // separate only
  Conv2d out_proj;         // back to C before the residual add

 private:
  DSMambaConfig cfg_;
};

class HybridPerceptionBlock {
 public:
  HybridPerceptionBlock() = default;
  HybridPerceptionBlock(ParameterStore& ps, const std::string& name, const DSMambaConfig& cfg, int state_dim);

  ag::Var operator()(const ag::Var& x) const;
  void set_scan_mode(ScanMode m) { ds_mamba.set_scan_mode(m); }

  ResBlock res1;
  ResBlock res2;
  DualScaleMamba ds_mamba;

 private:
  bool with_mamba_ = true;
};

}  // namespace cloudmamba::nn

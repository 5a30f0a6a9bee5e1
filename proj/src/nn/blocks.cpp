#include "cloudmamba/nn/blocks.hpp"

#include <cmath>

#include "cloudmamba/ssm/cross_scan.hpp"

namespace cloudmamba::nn {

// ---------------------------------------------------------------------------
// ResBlock

ResBlock::ResBlock(ParameterStore& ps, const std::string& name, int in_channels, int out_channels)
    : conv(same_conv3x3(ps, name + ".conv", in_channels, out_channels)),
      norm(ps, name + ".norm", out_channels),
      project_(in_channels != out_channels) {
  if (project_) projection = pointwise_conv(ps, name + ".proj", in_channels, out_channels);
}

ag::Var ResBlock::operator()(const ag::Var& x) const {
  ag::Var body = ag::leaky_relu(norm(conv(x)), kLeakySlope);
  return ag::add(project_ ? projection(x) : x, body);
}

// ---------------------------------------------------------------------------
// S6Layer

S6Layer::S6Layer(ParameterStore& ps, const std::string& name, int channels, int state_dim)
    : channels_(channels), state_dim_(state_dim), dt_rank_(ssm::default_dt_rank(channels)) {
  if (channels < 1 || state_dim < 1) throw InvalidParameter("S6Layer '" + name + "': channels and state_dim must be >= 1");
  x_proj = Linear(ps, name + ".x_proj", channels, dt_rank_ + 2 * state_dim, /*with_bias=*/false);
  dt_proj.weight = ps.normal(name + ".dt_proj.weight", {dt_rank_, channels}, 0.1 / std::sqrt(Real(dt_rank_)));

  Tensor bias({channels});
  std::uniform_real_distribution<Real> unit(0, 1);
  const Real lo = std::log(0.03), hi = std::log(0.1);
  for (auto& b : bias.storage()) {
    const Real dt = std::exp(lo + (hi - lo) * unit(ps.rng()));
    b = dt + std::log(-std::expm1(-dt));
  }
  dt_proj.bias = ps.add(name + ".dt_proj.bias", std::move(bias));

  Tensor a({channels, state_dim});
  for (int d = 0; d < channels; ++d)
    for (int n = 0; n < state_dim; ++n) a[static_cast<std::size_t>(d) * state_dim + n] = std::log(Real(n + 1));
  a_log = ps.add(name + ".a_log", std::move(a));
}

ag::Var S6Layer::operator()(const ag::Var& u, const std::vector<int>& order) const {
  if (u.value().rank() != 2 || u.value().dim(1) != channels_) {
    throw ShapeError("S6 layer expects L×" + std::to_string(channels_) + " input, got " + shape_string(u.shape()));
  }
  ag::Var proj = x_proj(u);
  ag::Var dt_low = ag::slice_channels(proj, 0, dt_rank_);
  ag::Var B = ag::slice_channels(proj, dt_rank_, state_dim_);
  ag::Var C = ag::slice_channels(proj, dt_rank_ + state_dim_, state_dim_);
  ag::Var delta = ag::softplus(dt_proj(dt_low));
  ag::Var A = ag::scale(ag::exp(a_log), -1);
  return ag::selective_scan(u, delta, A, B, C, order);
}

ssm::SSMParams<Real> S6Layer::export_params() const {
  ssm::SSMParams<Real> p;
  p.channels = channels_;
  p.state_dim = state_dim_;
  p.dt_rank = dt_rank_;
  const int D = channels_, N = state_dim_, R = dt_rank_, width = R + 2 * N;
  const Tensor& w = x_proj.weight.value();
  p.delta_down.resize(static_cast<std::size_t>(D) * R);
  p.B_proj.resize(static_cast<std::size_t>(D) * N);
  p.C_proj.resize(static_cast<std::size_t>(D) * N);
  for (int d = 0; d < D; ++d) {
    const Real* row = w.data() + static_cast<std::size_t>(d) * width;
    for (int r = 0; r < R; ++r) p.delta_down[static_cast<std::size_t>(d) * R + r] = row[r];
    for (int n = 0; n < N; ++n) {
      p.B_proj[static_cast<std::size_t>(d) * N + n] = row[R + n];
      p.C_proj[static_cast<std::size_t>(d) * N + n] = row[R + N + n];
    }
  }
  p.delta_up = dt_proj.weight.value().storage();
  p.delta_bias = dt_proj.bias.value().storage();
  p.A.resize(a_log.value().size());
  for (std::size_t i = 0; i < p.A.size(); ++i) p.A[i] = -std::exp(a_log.value()[i]);
  return p;
}

// ---------------------------------------------------------------------------
// SS2D

SS2D::SS2D(ParameterStore& ps, const std::string& name, int channels, int state_dim) {
  for (int k = 0; k < 4; ++k) directions[k] = S6Layer(ps, name + ".dir" + std::to_string(k), channels, state_dim);
}

ag::Var SS2D::operator()(const ag::Var& x) const {
  const Tensor& xv = x.value();
  if (xv.rank() != 3) throw ShapeError("SS2D expects an H×W×C map, got " + shape_string(xv.shape()));
  const int H = xv.height(), W = xv.width(), C = xv.channels();
  if (mode == ScanMode::kIdentity) return ag::scale(x, 4);
  // Projections are row-wise, so they commute with the direction
  // permutation; only the recurrence itself follows the scan order. Merging
  // back into pixel order is then a plain sum.
  ag::Var flat = ag::reshape(x, {H * W, C});
  ag::Var merged;
  for (int k = 0; k < 4; ++k) {
    ag::Var y = directions[k](flat, ssm::scan_order(ssm::kScanDirections[k], H, W));
    merged = k == 0 ? y : ag::add(merged, y);
  }
  return ag::reshape(merged, {H, W, C});
}

// ---------------------------------------------------------------------------
// MambaBlock

MambaBlock::MambaBlock(ParameterStore& ps, const std::string& name, int channels, int state_dim, int expand) {
  if (expand < 1) throw InvalidParameter("Mamba expansion factor must be >= 1");
  const int inner = channels * expand;
  norm_in = LayerNorm(ps, name + ".norm_in", channels);
  main_proj = Linear(ps, name + ".main_proj", channels, inner);
  gate_proj = Linear(ps, name + ".gate_proj", channels, inner);
  dwconv = DepthwiseConv2d(ps, name + ".dwconv", inner, 3);
  ss2d = SS2D(ps, name + ".ss2d", inner, state_dim);
  norm_out = LayerNorm(ps, name + ".norm_out", inner);
  out_proj = Linear(ps, name + ".out_proj", inner, channels);
}

ag::Var MambaBlock::operator()(const ag::Var& x) const {
  ag::Var h = norm_in(x);
  ag::Var main = ag::silu(dwconv(main_proj(h)));
  main = norm_out(ss2d(main));
  ag::Var gate = ag::silu(gate_proj(h));
  return out_proj(ag::mul(main, gate));
}

// ---------------------------------------------------------------------------
// DualScaleMamba

std::string to_string(MambaVariant v) {
  switch (v) {
    case MambaVariant::kNone: return "none";
    case MambaVariant::kPlain: return "plain";
    case MambaVariant::kSeparate: return "separate";
    case MambaVariant::kFused: return "fused";
  }
  return "fused";
}

MambaVariant parse_mamba_variant(const std::string& s) {
  if (s == "none") return MambaVariant::kNone;
  if (s == "plain") return MambaVariant::kPlain;
  if (s == "separate") return MambaVariant::kSeparate;
  if (s == "fused") return MambaVariant::kFused;
  throw ConfigError("unknown mamba variant '" + s + "' (expected none|plain|separate|fused)");
}

void DSMambaConfig::validate() const {
  if (channels < 1) throw ConfigError("DS-Mamba channels must be >= 1");
  for (int d : dilations)
    if (d < 1) throw ConfigError("dilation rates must be positive");
  if (!(dilations[0] <= dilations[1] && dilations[1] <= dilations[2])) {
    throw ConfigError("dilation rates must be non-decreasing (d1 <= d2 <= d3)");
  }
}

DualScaleMamba::DualScaleMamba(ParameterStore& ps, const std::string& name, const DSMambaConfig& cfg, int state_dim)
    : cfg_(cfg) {
  cfg.validate();
  const int C = cfg.channels;
  switch (cfg.variant) {
    case MambaVariant::kNone:
      break;
    case MambaVariant::kPlain:
      mamba = MambaBlock(ps, name + ".mamba", C, state_dim);
      out_proj = pointwise_conv(ps, name + ".out_proj", C, C);
      break;
    case MambaVariant::kSeparate:
    case MambaVariant::kFused:
      for (int i = 0; i < 3; ++i) {
        dilated[i] = same_conv3x3(ps, name + ".dilated" + std::to_string(i), C, C, cfg.dilations[i]);
      }
      reduce = pointwise_conv(ps, name + ".reduce", 3 * C, C);
      if (cfg.variant == MambaVariant::kFused) {
        mamba = MambaBlock(ps, name + ".mamba", 2 * C, state_dim);
      } else {
        mamba = MambaBlock(ps, name + ".mamba_small", C, state_dim);
        mamba_large = MambaBlock(ps, name + ".mamba_large", C, state_dim);
      }
      out_proj = pointwise_conv(ps, name + ".out_proj", 2 * C, C);
      break;
  }
}

ag::Var DualScaleMamba::large_scale(const ag::Var& x) const {
  return reduce(ag::concat_channels({dilated[0](x), dilated[1](x), dilated[2](x)}));
}

ag::Var DualScaleMamba::operator()(const ag::Var& x) const {
  if (x.value().rank() != 3 || x.value().channels() != cfg_.channels) {
    throw ShapeError("DS-Mamba expects " + std::to_string(cfg_.channels) + " channels, got " + shape_string(x.shape()));
  }
  switch (cfg_.variant) {
    case MambaVariant::kNone:
      return x;
    case MambaVariant::kPlain:
      return ag::add(x, out_proj(mamba(x)));
    case MambaVariant::kSeparate: {
      ag::Var small = mamba(x);
      ag::Var large = mamba_large(large_scale(x));
      return ag::add(x, out_proj(ag::concat_channels({small, large})));
    }
    case MambaVariant::kFused:
      break;
  }
  ag::Var fused = ag::concat_channels({x, large_scale(x)});
  return ag::add(x, out_proj(mamba(fused)));
}

void DualScaleMamba::set_scan_mode(ScanMode m) {
  mamba.set_scan_mode(m);
  mamba_large.set_scan_mode(m);
}

// ---------------------------------------------------------------------------
// HybridPerceptionBlock

HybridPerceptionBlock::HybridPerceptionBlock(ParameterStore& ps, const std::string& name, const DSMambaConfig& cfg,
                                             int state_dim)
    : res1(ps, name + ".res1", cfg.channels, cfg.channels),
      res2(ps, name + ".res2", cfg.channels, cfg.channels),
      with_mamba_(cfg.variant != MambaVariant::kNone) {
  if (with_mamba_) ds_mamba = DualScaleMamba(ps, name + ".ds_mamba", cfg, state_dim);
}

ag::Var HybridPerceptionBlock::operator()(const ag::Var& x) const {
  ag::Var f = res2(res1(x));
  return with_mamba_ ? ds_mamba(f) : f;
}

}  // namespace cloudmamba::nn

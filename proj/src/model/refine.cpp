#include "cloudmamba/model/refine.hpp"

#include <cmath>

namespace cloudmamba::model {

namespace {

void check_unit_interval(Real v, const char* what) {
  if (!(v > 0 && v < 1)) throw ConfigError(std::string(what) + " must lie strictly inside (0, 1), got " + std::to_string(v));
}

void check_binary(const BinaryMask& m, const char* what) {
  for (auto v : m.data)
    if (v > 1) throw DomainError(std::string(what) + " is not binary (found value " + std::to_string(int(v)) + ")");
}

ProbabilityMap probability_grid(const ag::Var& p) { return to_grid(p.value()); }

}  // namespace

void ThresholdConfig::validate() const {
  // γ = 1 is allowed: it accepts every pixel except P_c = 0.5 exactly, which
  // reproduces the single-stage result.
  if (!(gamma > 0 && gamma <= 1)) throw ConfigError("gamma must lie in (0, 1], got " + std::to_string(gamma));
  check_unit_interval(tau_coarse, "tau_coarse");
  check_unit_interval(tau_refined, "tau_refined");
}

UncertaintyMap uncertainty_map(const ProbabilityMap& p) {
  UncertaintyMap u(p.height, p.width);
  for (std::size_t i = 0; i < p.data.size(); ++i) {
    const Real v = p.data[i];
    if (!(v >= 0 && v <= 1)) throw DomainError("probability " + std::to_string(v) + " outside [0, 1]");
    u.data[i] = 1 - 2 * std::abs(v - Real(0.5));
  }
  return u;
}

BinaryMask acceptance_mask(const UncertaintyMap& u, Real gamma) {
  BinaryMask m(u.height, u.width);
  for (std::size_t i = 0; i < u.data.size(); ++i) m.data[i] = u.data[i] < gamma ? 1 : 0;
  return m;
}

BinaryMask binarize(const ProbabilityMap& p, Real tau) {
  BinaryMask m(p.height, p.width);
  for (std::size_t i = 0; i < p.data.size(); ++i) m.data[i] = p.data[i] > tau ? 1 : 0;
  return m;
}

BinaryMask fuse_masks(const BinaryMask& accept, const BinaryMask& coarse, const BinaryMask& refined) {
  if (!accept.same_shape(coarse) || !accept.same_shape(refined)) {
    throw ShapeError("fuse_masks: acceptance, coarse and refined masks differ in shape");
  }
  check_binary(accept, "acceptance mask");
  check_binary(coarse, "coarse mask");
  check_binary(refined, "refined mask");
  BinaryMask out(accept.height, accept.width);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = accept.data[i] ? coarse.data[i] : refined.data[i];
  return out;
}

ag::Var modulate(const ag::Var& feature, const UncertaintyMap& u) {
  const Tensor& f = feature.value();
  if (f.rank() != 3) throw ShapeError("modulate expects an H×W×C feature, got " + shape_string(f.shape()));
  for (Real v : u.data)
    if (!(v >= 0 && v <= 1)) throw DomainError("uncertainty " + std::to_string(v) + " outside [0, 1]");
  Tensor gain = to_tensor(u);
  if (u.height != f.height() || u.width != f.width()) gain = ag::resize_bilinear(gain, f.height(), f.width());
  return ag::mul_map(feature, gain);
}

Refiner::Refiner(nn::ParameterStore& ps, const ModelConfig& cfg) : levels_(cfg.levels) {
  int total = 0;
  for (int l = 0; l < cfg.levels; ++l) total += cfg.channels_at(l);
  aggregator = nn::pointwise_conv(ps, "refiner.aggregator", total, cfg.channels_at(cfg.levels));
  decoder = Decoder(ps, "refiner.decoder", cfg, /*aux=*/false);
}

ag::Var Refiner::aggregate(const std::vector<ag::Var>& decoder_features) const {
  if (decoder_features.empty()) throw ShapeError("aggregate: empty decoder feature list");
  if (static_cast<int>(decoder_features.size()) != levels_) {
    throw ShapeError("aggregate: expected " + std::to_string(levels_) + " decoder levels, got " +
                     std::to_string(decoder_features.size()));
  }
  // F_dec^1 is at full resolution; the bottleneck sits 2^L below it.
  const int h = decoder_features[0].value().height() >> levels_;
  const int w = decoder_features[0].value().width() >> levels_;
  std::vector<ag::Var> resized;
  resized.reserve(decoder_features.size());
  for (const auto& f : decoder_features) resized.push_back(ag::resize_bilinear(f, h, w));
  return aggregator(ag::concat_channels(resized));
}

ag::Var Refiner::refine(const ag::Var& modulated_bottleneck, const std::vector<ag::Var>& modulated_skips) const {
  return decoder(modulated_bottleneck, modulated_skips).probability;
}

TrainingForward forward_train(const CloudMambaNet& net, const Tensor& image) {
  TrainingForward out;
  out.stage_one = net.forward_coarse(image);
  out.uncertainty = uncertainty_map(probability_grid(out.stage_one.coarse));
  if (!net.config().use_refiner) return out;
  const Refiner& r = net.refiner();
  ag::Var agg = modulate(r.aggregate(out.stage_one.decoder_features), out.uncertainty);
  std::vector<ag::Var> skips;
  skips.reserve(out.stage_one.pyramid.skips.size());
  for (const auto& s : out.stage_one.pyramid.skips) skips.push_back(modulate(s, out.uncertainty));
  out.refined = r.refine(agg, skips);
  return out;
}

StagePipelineOutput assemble_stages(ProbabilityMap coarse, ProbabilityMap refined, const ThresholdConfig& t) {
  t.validate();
  if (!coarse.same_shape(refined)) throw ShapeError("coarse and refined probability maps differ in shape");
  StagePipelineOutput out;
  out.uncertainty = uncertainty_map(coarse);
  for (Real v : refined.data)
    if (!(v >= 0 && v <= 1)) throw DomainError("refined probability " + std::to_string(v) + " outside [0, 1]");
  out.acceptance = acceptance_mask(out.uncertainty, t.gamma);
  out.coarse_mask = binarize(coarse, t.tau_coarse);
  out.refined_mask = binarize(refined, t.tau_refined);
  out.fused = fuse_masks(out.acceptance, out.coarse_mask, out.refined_mask);
  out.coarse = std::move(coarse);
  out.refined = std::move(refined);
  return out;
}

StagePipelineOutput forward_full(const CloudMambaNet& net, const Tensor& image, const ThresholdConfig& thresholds) {
  ag::NoGradGuard no_grad;
  TrainingForward f = forward_train(net, image);
  ProbabilityMap coarse = probability_grid(f.stage_one.coarse);
  ProbabilityMap refined = f.refined.defined() ? probability_grid(f.refined) : coarse;
  return assemble_stages(std::move(coarse), std::move(refined), thresholds);
}

}  // namespace cloudmamba::model

#include "cloudmamba/loss.hpp"

#include <algorithm>
#include <cmath>

#include "cloudmamba/ops.hpp"

namespace cloudmamba::loss {
namespace {

void check_pair(const Tensor& p, const BinaryMask& y, const char* op) {
  if (p.rank() != 3 || p.channels() != 1 || p.height() != y.height || p.width() != y.width) {
    throw ShapeError(std::string(op) + ": prediction " + shape_string(p.shape()) + " does not match label " +
                     std::to_string(y.height) + "x" + std::to_string(y.width));
  }
  for (auto v : y.data)
    if (v > 1) throw DomainError(std::string(op) + ": label is not binary");
}

ag::Var constant(const ProbabilityMap& p) { return ag::Var(to_tensor(p)); }

}  // namespace

Real LossConfig::aux_weight(int level) const {
  if (level < 1) throw ConfigError("deep-supervision level must be >= 1");
  if (aux_weights.empty()) return std::ldexp(Real(1), -(level - 1));
  if (level > static_cast<int>(aux_weights.size())) {
    throw ConfigError("no deep-supervision weight configured for level " + std::to_string(level));
  }
  return aux_weights[level - 1];
}

void LossConfig::validate() const {
  if (!(lambda_bce >= 0) || !(lambda_dice >= 0)) throw ConfigError("loss weights lambda_bce/lambda_dice must be >= 0");
  if (!(dice_eps > 0)) throw ConfigError("dice_eps must be > 0");
  for (Real a : aux_weights)
    if (!(a >= 0)) throw ConfigError("deep-supervision weights must be >= 0");
}

ag::Var bce_loss(const ag::Var& p, const BinaryMask& y) {
  const Tensor& pv = p.value();
  check_pair(pv, y, "bce_loss");
  const std::size_t n = pv.size();
  Real acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Real q = std::clamp(pv[i], kProbabilityClamp, 1 - kProbabilityClamp);
    acc -= y.data[i] ? std::log(q) : std::log1p(-q);
  }
  auto labels = std::make_shared<const std::vector<std::uint8_t>>(y.data);
  return ag::make_result(Tensor::scalar(acc / Real(n)), {p}, [labels, n](ag::Node& self) {
    const auto& pp = self.parents[0];
    Tensor g(pp->value.shape());
    const Real scale = self.grad[0] / Real(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Real v = pp->value[i];
      // The clamp is flat outside its range.
      if (v < kProbabilityClamp || v > 1 - kProbabilityClamp) continue;
      g[i] = scale * ((*labels)[i] ? -1 / v : 1 / (1 - v));
    }
    ag::accumulate(pp, std::move(g));
  });
}

ag::Var dice_loss(const ag::Var& p, const BinaryMask& y, Real eps) {
  if (!(eps > 0)) throw ConfigError("dice_eps must be > 0");
  const Tensor& pv = p.value();
  check_pair(pv, y, "dice_loss");
  Real spy = 0, sp = 0, sy = 0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    spy += pv[i] * y.data[i];
    sp += pv[i];
    sy += y.data[i];
  }
  const Real num = 2 * spy + eps, den = sp + sy + eps;
  auto labels = std::make_shared<const std::vector<std::uint8_t>>(y.data);
  return ag::make_result(Tensor::scalar(1 - num / den), {p}, [labels, num, den](ag::Node& self) {
    const auto& pp = self.parents[0];
    Tensor g(pp->value.shape());
    const Real gy = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = -gy * (2 * (*labels)[i] * den - num) / (den * den);
    ag::accumulate(pp, std::move(g));
  });
}

ag::Var seg_loss(const ag::Var& p, const BinaryMask& y, const LossConfig& cfg) {
  return ag::weighted_sum({bce_loss(p, y), dice_loss(p, y, cfg.dice_eps)}, {cfg.lambda_bce, cfg.lambda_dice});
}

BinaryMask downsample_nearest(const BinaryMask& mask, int factor) {
  if (factor < 1) throw InvalidParameter("downsample factor must be >= 1");
  if (mask.height % factor != 0 || mask.width % factor != 0) {
    throw ShapeError("label " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                     " is not divisible by " + std::to_string(factor));
  }
  BinaryMask out(mask.height / factor, mask.width / factor);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.at(y, x) = mask.at(y * factor, x * factor);
  return out;
}

ag::Var deep_supervision_loss(const std::vector<ag::Var>& aux, const BinaryMask& y, const LossConfig& cfg) {
  if (aux.empty()) throw ShapeError("deep_supervision_loss: no auxiliary predictions");
  std::vector<ag::Var> terms;
  std::vector<Real> weights;
  for (std::size_t i = 0; i < aux.size(); ++i) {
    const int level = static_cast<int>(i) + 1;
    const int factor = 1 << i;
    const Tensor& pv = aux[i].value();
    if (pv.rank() != 3 || pv.height() * factor != y.height || pv.width() * factor != y.width) {
      throw ShapeError("deep supervision level " + std::to_string(level) + ": prediction " + shape_string(pv.shape()) +
                       " is not at 1/" + std::to_string(factor) + " of the label resolution");
    }
    terms.push_back(seg_loss(aux[i], downsample_nearest(y, factor), cfg));
    weights.push_back(cfg.aux_weight(level));
  }
  return ag::weighted_sum(terms, weights);
}

Real bce_loss(const ProbabilityMap& p, const BinaryMask& y) {
  ag::NoGradGuard guard;
  return bce_loss(constant(p), y).value()[0];
}

Real dice_loss(const ProbabilityMap& p, const BinaryMask& y, Real eps) {
  ag::NoGradGuard guard;
  return dice_loss(constant(p), y, eps).value()[0];
}

Real seg_loss(const ProbabilityMap& p, const BinaryMask& y, const LossConfig& cfg) {
  ag::NoGradGuard guard;
  return seg_loss(constant(p), y, cfg).value()[0];
}

Real deep_supervision_loss(const std::vector<ProbabilityMap>& aux, const BinaryMask& y, const LossConfig& cfg) {
  ag::NoGradGuard guard;
  std::vector<ag::Var> vars;
  for (const auto& p : aux) vars.push_back(constant(p));
  return deep_supervision_loss(vars, y, cfg).value()[0];
}

LossBreakdown total_loss(const ag::Var& coarse, const ag::Var& refined, const std::vector<ag::Var>& aux,
                         const BinaryMask& y, const LossConfig& cfg) {
  cfg.validate();
  LossBreakdown out;
  std::vector<ag::Var> parts;
  auto add = [&](const char* name, ag::Var v) {
    out.terms.push_back({name, v.value()[0]});
    parts.push_back(std::move(v));
  };
  add("coarse", seg_loss(coarse, y, cfg));
  if (cfg.supervise_refiner && refined.defined()) add("refined", seg_loss(refined, y, cfg));
  add("deep_supervision", deep_supervision_loss(aux, y, cfg));
  out.total = ag::weighted_sum(parts, std::vector<Real>(parts.size(), Real(1)));
  return out;
}

}  // namespace cloudmamba::loss

#include "cloudmamba/pipeline/optim.hpp"

#include <cmath>
#include <numbers>

namespace cloudmamba::pipeline {

Real cosine_lr(Real lr0, Real floor_factor, int epoch, int epochs) {
  if (epochs < 1 || epoch < 0 || epoch >= epochs) {
    throw InvalidParameter("cosine_lr: epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(epochs) + ")");
  }
  const Real lr_min = lr0 * floor_factor;
  return lr_min + 0.5 * (lr0 - lr_min) * (1 + std::cos(std::numbers::pi * epoch / epochs));
}

AdamW::AdamW(const nn::ParameterStore& params, const OptimizerConfig& cfg) : params_(params), cfg_(cfg) {
  for (const auto& p : params_.entries()) {
    m_.emplace_back(p.var.value().size(), 0.0);
    v_.emplace_back(p.var.value().size(), 0.0);
  }
}

void AdamW::step(Real lr) {
  ++t_;
  const Real b1 = cfg_.beta1, b2 = cfg_.beta2;
  const Real c1 = 1 - std::pow(b1, Real(t_)), c2 = 1 - std::pow(b2, Real(t_));
  const auto& entries = params_.entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    ag::Var var = entries[k].var;
    if (!var.has_grad()) continue;
    const Tensor& g = var.node()->grad;
    Tensor& w = var.mutable_value();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const Real update = (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
      w[i] -= lr * (update + cfg_.weight_decay * w[i]);
    }
  }
}

}  // namespace cloudmamba::pipeline

#include "uniemo/optim.hpp"

#include <cmath>
#include <numbers>

namespace uniemo {

double learning_rate(const OptimConfig& config, std::int64_t step) {
  const std::int64_t w = config.warmup_steps;
  if (step < w) {
    return config.base_lr * static_cast<double>(step + 1) / static_cast<double>(w + 1);
  }
  if (!config.cosine) return config.base_lr;
  const std::int64_t span = config.total_steps - w;
  if (span <= 0) return 0.0;
  const double progress = std::min(1.0, static_cast<double>(step - w) / static_cast<double>(span));
  return config.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

bool AdamW::decays(const Parameter& p) {
  if (p.value.rank() < 2) return false;
  const std::string_view n = p.name;
  return !(n.ends_with("_token"));
}

AdamW::AdamW(std::vector<Parameter*> params, const OptimConfig& config)
    : params_(std::move(params)), config_(config) {
  for (const Parameter* p : params_) {
    if (!p->trainable) throw Error("frozen parameter " + p->name + " given to the optimizer");
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    if (p.grad.empty()) continue;
    if (p.grad.size() != p.value.size()) throw Error("gradient shape mismatch for " + p.name);
    const double decay = decays(p) ? lr * config_.weight_decay : 0.0;
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p.value[i] -= decay * p.value[i] + lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

}  // namespace uniemo

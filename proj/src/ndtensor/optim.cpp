#include "genrm/ndtensor/optim.hpp"

#include <cmath>
#include <iostream>
#include <numbers>

namespace genrm::nd {

double lr_at(std::size_t step, const AdamWConfig& config) {
  if (config.schedule == Schedule::kConstant) return config.lr_max;
  const double total = static_cast<double>(config.total_steps);
  if (step > config.total_steps) {
    std::cerr << "warning: lr_at step " << step << " beyond total_steps "
              << config.total_steps << ", using 0\n";
    return 0.0;
  }
  const double s = static_cast<double>(step);
  const double warmup = config.warmup_fraction * total;
  if (s < warmup) return config.lr_max * s / warmup;
  const double decay = total - warmup;
  if (decay <= 0.0) return config.lr_max;
  const double progress = (s - warmup) / decay;
  return config.lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
  if (config_.warmup_fraction < 0.0 || config_.warmup_fraction > 1.0) {
    throw std::invalid_argument("warmup_fraction must lie in [0, 1]");
  }
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamW::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

StepStats AdamW::step() {
  double sq = 0.0;
  for (const Tensor& p : params_) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) {
      if (!std::isfinite(g)) throw NonFiniteGradient("non-finite gradient; step rejected");
      sq += g * g;
    }
  }
  StepStats stats;
  stats.grad_norm = std::sqrt(sq);
  double clip = 1.0;
  if (config_.clip_norm > 0.0 && stats.grad_norm > config_.clip_norm) {
    clip = config_.clip_norm / stats.grad_norm;
    stats.clipped = true;
  }

  ++t_;
  const double lr = lr_at(t_, config_);
  stats.lr = lr;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double decay = 1.0 - lr * config_.weight_decay;

  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto w = params_[k].mutable_data();
    std::span<const double> g;
    if (params_[k].has_grad()) g = params_[k].grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i] * clip;
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      w[i] *= decay;
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
  }
  return stats;
}

}  // namespace genrm::nd

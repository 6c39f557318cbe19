#include "mapo/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace mapo {

AdamW::AdamW(std::size_t num_parameters, AdamWConfig config, std::vector<bool> decay_mask)
    : config_(config), decay_mask_(std::move(decay_mask)), m_(num_parameters, 0.0), v_(num_parameters, 0.0) {
  if (!decay_mask_.empty() && decay_mask_.size() != num_parameters) {
    throw std::invalid_argument("decay mask size mismatch");
  }
  if (config_.learning_rate < 0.0 || config_.epsilon <= 0.0 || config_.weight_decay < 0.0) {
    throw std::invalid_argument("invalid AdamW configuration");
  }
}

void AdamW::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) throw std::invalid_argument("AdamW size mismatch");
  ++steps_;
  if (config_.learning_rate == 0.0) return;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * grads[i];
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * grads[i] * grads[i];
    const double update = (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + config_.epsilon);
    const bool decay = decay_mask_.empty() || decay_mask_[i];
    params[i] -= config_.learning_rate * (update + (decay ? config_.weight_decay * params[i] : 0.0));
  }
}

double l2_norm(std::span<const double> values) {
  double s = 0.0;
  for (double v : values) s += v * v;
  return std::sqrt(s);
}

double clip_grad_norm(std::span<double> grads, double max_norm) {
  const double norm = l2_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (double& g : grads) g *= scale;
  }
  return norm;
}

}  // namespace mapo

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mapo {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-5;
  double weight_decay = 0.1;
};

/// Adam with decoupled weight decay. Decay applies only where `decay_mask`
/// is true (matrices, not gains or biases).
class AdamW {
 public:
  AdamW(std::size_t num_parameters, AdamWConfig config, std::vector<bool> decay_mask = {});

  void step(std::span<double> params, std::span<const double> grads);
  std::size_t steps() const { return steps_; }
  const AdamWConfig& config() const { return config_; }

 private:
  AdamWConfig config_;
  std::vector<bool> decay_mask_;
  std::vector<double> m_, v_;
  std::size_t steps_ = 0;
};

double l2_norm(std::span<const double> values);

/// Rescales `grads` in place so its L2 norm is at most max_norm; returns
/// the norm before clipping.
double clip_grad_norm(std::span<double> grads, double max_norm);

}  // namespace mapo

#include "mapo/rl_losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mapo/errors.hpp"

namespace mapo {

void LossWeights::validate() const {
  for (double v : {alpha1, alpha2, alpha3, beta_kl, beta1, beta2, beta3, pretrain_coef, gamma1, gamma2, gamma3,
                   discount_gamma, gae_lambda, clip_epsilon, entropy_coef, value_coef, max_grad_norm, lambda_pos,
                   lambda_neg}) {
    if (!std::isfinite(v)) throw ConfigError("loss weights must be finite");
  }
  if (!(discount_gamma > 0.0 && discount_gamma <= 1.0)) throw ConfigError("discount gamma must be in (0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("GAE lambda must be in [0, 1]");
  if (!(clip_epsilon > 0.0)) throw ConfigError("clip parameter must be > 0");
  if (ppo_epochs == 0) throw ConfigError("PPO epochs must be positive");
  if (mini_batch_size == 0) throw ConfigError("mini batch size must be positive");
  if (max_grad_norm < 0.0) throw ConfigError("max gradient norm must be >= 0");
}

void compute_advantages(std::span<const double> rewards, std::span<const double> values, double gamma,
                        double lambda, std::span<double> advantages, std::span<double> value_targets) {
  const std::size_t n = rewards.size();
  if (values.size() != n || advantages.size() != n || value_targets.size() != n) {
    throw std::invalid_argument("compute_advantages: length mismatch");
  }
  double running = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double v_next = t + 1 < n ? values[t + 1] : 0.0;
    const double delta = rewards[t] + gamma * v_next - values[t];
    running = delta + gamma * lambda * running;
    advantages[t] = running;
    value_targets[t] = rewards[t] + v_next;
  }
}

void compute_advantages(RolloutBatch& batch, const LossWeights& w) {
  for (auto& ep : batch.episodes) {
    const std::size_t n = ep.transitions.size();
    std::vector<double> r(n), v(n), a(n), target(n);
    for (std::size_t t = 0; t < n; ++t) {
      r[t] = ep.transitions[t].reward;
      v[t] = ep.transitions[t].value_estimate;
    }
    compute_advantages(r, v, w.discount_gamma, w.gae_lambda, a, target);
    for (std::size_t t = 0; t < n; ++t) {
      ep.transitions[t].advantage = a[t];
      ep.transitions[t].value_target = target[t];
    }
  }
}

TermGradient policy_loss_terms(std::span<const double> logprob, std::span<const double> reference_logprob,
                               std::span<const double> advantages, std::span<const double> entropy,
                               const LossWeights& w) {
  const std::size_t n = logprob.size();
  if (reference_logprob.size() != n || advantages.size() != n || entropy.size() != n) {
    throw std::invalid_argument("policy_loss: length mismatch");
  }
  TermGradient out;
  out.d_logprob.assign(n, 0.0);
  out.d_entropy.assign(n, 0.0);
  if (n == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double rho = std::exp(logprob[t] - reference_logprob[t]);
    const double a = advantages[t];
    const double unclipped = rho * a;
    double surrogate = unclipped;
    bool ratio_active = true;
    if (w.use_clipping) {
      const double clipped = std::clamp(rho, 1.0 - w.clip_epsilon, 1.0 + w.clip_epsilon) * a;
      if (clipped < unclipped) {
        surrogate = clipped;
        ratio_active = rho >= 1.0 - w.clip_epsilon && rho <= 1.0 + w.clip_epsilon;
      }
    }
    out.value -= surrogate * inv_n;
    if (ratio_active) out.d_logprob[t] = -unclipped * inv_n;
    out.value -= w.entropy_coef * entropy[t] * inv_n;
    out.d_entropy[t] = -w.entropy_coef * inv_n;
  }
  return out;
}

double policy_loss(const RolloutBatch& batch, const LossWeights& w) {
  std::vector<double> lp, ref, adv, ent;
  for (const auto& ep : batch.episodes) {
    for (const auto& t : ep.transitions) {
      lp.push_back(t.actor_logprob);
      ref.push_back(t.frozen_logprob);
      adv.push_back(t.advantage);
      ent.push_back(t.entropy);
    }
  }
  return policy_loss_terms(lp, ref, adv, ent, w).value;
}

TermGradient value_loss_terms(std::span<const double> values, std::span<const double> targets, const LossWeights& w) {
  if (values.size() != targets.size()) throw std::invalid_argument("value_loss: length mismatch");
  TermGradient out;
  out.d_logprob.assign(values.size(), 0.0);
  if (values.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(values.size());
  for (std::size_t t = 0; t < values.size(); ++t) {
    const double diff = values[t] - targets[t];
    out.value += w.value_coef * diff * diff * inv_n;
    out.d_logprob[t] = 2.0 * w.value_coef * diff * inv_n;
  }
  return out;
}

double value_loss(const RolloutBatch& batch, const LossWeights& w) {
  std::vector<double> v, target;
  for (const auto& ep : batch.episodes) {
    for (const auto& t : ep.transitions) {
      v.push_back(t.value_estimate);
      target.push_back(t.value_target);
    }
  }
  return value_loss_terms(v, target, w).value;
}

TermGradient reward_expectation_terms(std::span<const double> terminal_rewards,
                                      std::span<const std::vector<double>> episode_logprobs) {
  const std::size_t n = terminal_rewards.size();
  if (episode_logprobs.size() != n) throw std::invalid_argument("reward_expectation_loss: length mismatch");
  TermGradient out;
  if (n == 0) return out;
  double mean = 0.0;
  for (double r : terminal_rewards) mean += r;
  mean /= static_cast<double>(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t e = 0; e < n; ++e) {
    const double centered = terminal_rewards[e] - mean;
    double total = 0.0;
    for (double lp : episode_logprobs[e]) {
      total += lp;
      out.d_logprob.push_back(-centered * inv_n);
    }
    out.value -= centered * total * inv_n;
  }
  return out;
}

double reward_expectation_loss(const RolloutBatch& batch) {
  std::vector<double> rewards;
  std::vector<std::vector<double>> lps;
  for (const auto& ep : batch.episodes) {
    rewards.push_back(ep.terminal_reward);
    std::vector<double> lp;
    for (const auto& t : ep.transitions) lp.push_back(t.actor_logprob);
    lps.push_back(std::move(lp));
  }
  return reward_expectation_terms(rewards, lps).value;
}

double combined_policy_loss(const LossWeights& w, double l_pg, double l_v, double l_r) {
  return w.alpha1 * l_pg + w.alpha2 * l_v + w.alpha3 * l_r;
}

TermGradient kl_sampled_terms(std::span<const double> logprob, std::span<const double> frozen_logprob,
                              const LossWeights& w) {
  if (logprob.size() != frozen_logprob.size()) throw std::invalid_argument("kl_sft_loss: length mismatch");
  TermGradient out;
  out.d_logprob.assign(logprob.size(), 0.0);
  if (logprob.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(logprob.size());
  for (std::size_t t = 0; t < logprob.size(); ++t) {
    out.value += w.beta_kl * (logprob[t] - frozen_logprob[t]) * inv_n;
    out.d_logprob[t] = w.beta_kl * inv_n;
  }
  return out;
}

TermGradient kl_exact_terms(std::span<const std::vector<double>> log_probs,
                            std::span<const std::vector<double>> frozen_log_probs, const LossWeights& w) {
  if (log_probs.size() != frozen_log_probs.size()) throw std::invalid_argument("kl_sft_loss: length mismatch");
  TermGradient out;
  out.d_entropy.assign(log_probs.size(), 0.0);
  if (log_probs.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(log_probs.size());
  for (std::size_t t = 0; t < log_probs.size(); ++t) {
    out.value += w.beta_kl * kl_divergence(log_probs[t], frozen_log_probs[t]) * inv_n;
    out.d_entropy[t] = w.beta_kl * inv_n;
  }
  return out;
}

double kl_sft_loss(const RolloutBatch& batch, const LossWeights& w) {
  bool rows = w.kl_estimator == KlEstimator::exact_per_state;
  for (const auto& ep : batch.episodes) {
    rows = rows && ep.actor_log_probs.size() == ep.transitions.size() &&
           ep.frozen_log_probs.size() == ep.transitions.size();
  }
  if (rows) {
    std::vector<std::vector<double>> p, q;
    for (const auto& ep : batch.episodes) {
      p.insert(p.end(), ep.actor_log_probs.begin(), ep.actor_log_probs.end());
      q.insert(q.end(), ep.frozen_log_probs.begin(), ep.frozen_log_probs.end());
    }
    return kl_exact_terms(p, q, w).value;
  }
  std::vector<double> lp, frozen;
  for (const auto& ep : batch.episodes) {
    for (const auto& t : ep.transitions) {
      lp.push_back(t.actor_logprob);
      frozen.push_back(t.frozen_logprob);
    }
  }
  return kl_sampled_terms(lp, frozen, w).value;
}

double rrmf_normalized_logprob(const SequenceLogProb& logprob) {
  if (logprob.per_token.empty()) throw std::invalid_argument("rrmf_normalized_logprob: empty response");
  return logprob.total / static_cast<double>(logprob.per_token.size());
}

double rrmf_normalized_logprob(const CausalLM& model, const TokenSequence& x, const TokenSequence& y) {
  if (y.token_ids.empty()) throw std::invalid_argument("rrmf_normalized_logprob: empty response");
  return rrmf_normalized_logprob(model.sequence_logprob(x, y));
}

std::size_t best_response_index(std::span<const double> rewards) {
  if (rewards.empty()) throw std::invalid_argument("best_response_index: no rewards");
  return static_cast<std::size_t>(std::max_element(rewards.begin(), rewards.end()) - rewards.begin());
}

TermGradient rrmf_rank_terms(std::span<const double> rewards, std::span<const double> normalized_logprobs,
                             const LossWeights& w) {
  const std::size_t n = rewards.size();
  if (normalized_logprobs.size() != n) throw std::invalid_argument("rrmf_rank_loss: length mismatch");
  if (n < 2) throw std::invalid_argument("rrmf_rank_loss: need at least 2 responses");
  const std::size_t best = best_response_index(rewards);
  TermGradient out;
  out.d_logprob.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!(rewards[i] < rewards[j])) continue;
      const double gap = normalized_logprobs[i] - normalized_logprobs[j];
      if (gap <= 0.0) continue;
      const double weight = j == best ? w.lambda_pos : w.lambda_neg;
      out.value += weight * gap;
      out.d_logprob[i] += weight;
      out.d_logprob[j] -= weight;
    }
  }
  return out;
}

double rrmf_rank_loss(std::span<const double> rewards, std::span<const double> normalized_logprobs,
                      const LossWeights& w) {
  return rrmf_rank_terms(rewards, normalized_logprobs, w).value;
}

double rrmf_best_ce_loss(const CausalLM& model, const TokenSequence& x, const TokenSequence& best) {
  return -model.sequence_logprob(x, best).total;
}

double sft_approx_loss(const LossWeights& w, double l_kl, double l_ft, double l_rank) {
  return w.beta1 * l_kl + w.beta2 * l_ft + w.beta3 * l_rank;
}

double pretrain_loss(const CausalLM& model, std::span<const TokenSequence> sequences, const LossWeights& w) {
  if (sequences.empty()) throw std::invalid_argument("pretrain_loss: empty batch");
  const std::vector<TokenId> bos{Vocabulary::bos};
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& s : sequences) {
    const auto lp = model.sequence_logprob(TokenSequence{bos, {}}, s);
    nll -= lp.total;
    tokens += lp.per_token.size();
  }
  return w.pretrain_coef * nll / static_cast<double>(tokens);
}

double joint_loss(const LossWeights& w, double l_rho, double l_sft, double l_pre) {
  return w.gamma1 * l_rho + w.gamma2 * l_sft + w.gamma3 * l_pre;
}

}  // namespace mapo

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mapo/language_model.hpp"

namespace mapo {

/// How the KL-to-SFT penalty is estimated at visited states.
enum class KlEstimator {
  /// Mean of log pi(y_t) - log pi_sft(y_t) over sampled tokens.
  sampled_log_ratio,
  /// Mean of the full KL(pi(.|s_t) || pi_sft(.|s_t)) over visited states.
  exact_per_state,
};

/// Which policy the importance ratio compares against.
enum class RatioReference {
  /// Actor snapshot taken when the rollout was collected.
  behavior,
  /// The frozen SFT model for the whole run.
  frozen_sft,
};

struct LossWeights {
  double alpha1 = 1.0, alpha2 = 1.0, alpha3 = 1.0;
  double beta_kl = 1.0;
  double beta1 = 1.0, beta2 = 1.0, beta3 = 1.0;
  double pretrain_coef = 1.0;
  double gamma1 = 1.0, gamma2 = 1.0, gamma3 = 1.0;
  double discount_gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_epsilon = 0.2;
  double entropy_coef = 0.005;
  double value_coef = 0.5;
  std::size_t ppo_epochs = 20;
  double max_grad_norm = 0.5;
  std::size_t mini_batch_size = 32;
  double lambda_pos = 1.0;
  double lambda_neg = 1.0;
  /// false selects the unclipped ratio * advantage surrogate.
  bool use_clipping = true;
  KlEstimator kl_estimator = KlEstimator::exact_per_state;
  RatioReference ratio_reference = RatioReference::behavior;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct Transition {
  TokenId token = 0;
  double actor_logprob = 0.0;
  double frozen_logprob = 0.0;
  double entropy = 0.0;
  double value_estimate = 0.0;
  double reward = 0.0;
  double advantage = 0.0;
  double value_target = 0.0;
};

struct Episode {
  TokenSequence x;
  TokenSequence y;
  std::string original;
  /// Index of the prompt the episode was sampled for.
  std::size_t group = 0;
  std::vector<Transition> transitions;
  double terminal_reward = 0.0;
  /// Next-token log-prob rows at collection time, one per transition.
  std::vector<std::vector<double>> actor_log_probs;
  std::vector<std::vector<double>> frozen_log_probs;
};

struct RolloutBatch {
  std::vector<Episode> episodes;
  std::size_t dropped = 0;
};

/// Generalized advantage estimation for one episode. V_next past the final
/// step is 0. advantage_t = sum_l (gamma*lambda)^l delta_{t+l} with
/// delta_t = r_t + gamma V_{t+1} - V_t; value_target_t = r_t + V_{t+1}.
void compute_advantages(std::span<const double> rewards, std::span<const double> values, double gamma,
                        double lambda, std::span<double> advantages, std::span<double> value_targets);
void compute_advantages(RolloutBatch& batch, const LossWeights& w);

/// Value of a loss term plus its derivative with respect to each per-token
/// input it depends on.
struct TermGradient {
  double value = 0.0;
  std::vector<double> d_logprob;
  std::vector<double> d_entropy;
};

/// mean_t -min(rho_t A_t, clip(rho_t, 1-eps, 1+eps) A_t) - entropy_coef * mean_t H_t
/// with rho_t = exp(logprob_t - reference_logprob_t).
TermGradient policy_loss_terms(std::span<const double> logprob, std::span<const double> reference_logprob,
                               std::span<const double> advantages, std::span<const double> entropy,
                               const LossWeights& w);
/// Batch form using rho = exp(actor_logprob - frozen_logprob).
double policy_loss(const RolloutBatch& batch, const LossWeights& w);

/// value_coef * mean_t (V_t - target_t)^2; d_logprob holds d/dV_t.
TermGradient value_loss_terms(std::span<const double> values, std::span<const double> targets, const LossWeights& w);
double value_loss(const RolloutBatch& batch, const LossWeights& w);

/// -mean_e (R_e - mean R) * sum_t logprob_{e,t}. `episode_logprobs[e]` holds
/// the per-token log-probs of episode e; gradients are returned flattened.
TermGradient reward_expectation_terms(std::span<const double> terminal_rewards,
                                      std::span<const std::vector<double>> episode_logprobs);
double reward_expectation_loss(const RolloutBatch& batch);

double combined_policy_loss(const LossWeights& w, double l_pg, double l_v, double l_r);

/// beta_kl * mean_t (logprob_t - frozen_logprob_t)
TermGradient kl_sampled_terms(std::span<const double> logprob, std::span<const double> frozen_logprob,
                              const LossWeights& w);
/// beta_kl * mean over states of KL(p_t || q_t) for log-prob rows p_t, q_t.
/// d_logprob is empty: the per-state weight beta_kl / N is returned in d_entropy
/// and applied with CompletionGradient::add_kl.
TermGradient kl_exact_terms(std::span<const std::vector<double>> log_probs,
                            std::span<const std::vector<double>> frozen_log_probs, const LossWeights& w);
/// Uses the exact estimator when the episodes carry log-prob rows and the
/// weights ask for it, the sampled estimator otherwise.
double kl_sft_loss(const RolloutBatch& batch, const LossWeights& w);

/// total log-prob / token count.
double rrmf_normalized_logprob(const SequenceLogProb& logprob);
double rrmf_normalized_logprob(const CausalLM& model, const TokenSequence& x, const TokenSequence& y);

/// Index of the highest reward; ties resolve to the lowest index.
std::size_t best_response_index(std::span<const double> rewards);

/// sum over pairs with r_i < r_j of weight_ij * max(0, p_i - p_j), where
/// weight_ij is lambda_pos when j is the best response and lambda_neg
/// otherwise. d_logprob holds d/dp_i.
TermGradient rrmf_rank_terms(std::span<const double> rewards, std::span<const double> normalized_logprobs,
                             const LossWeights& w);
double rrmf_rank_loss(std::span<const double> rewards, std::span<const double> normalized_logprobs,
                      const LossWeights& w);

/// -sum_t log p(y'_t | x, y'_<t) for the best response.
double rrmf_best_ce_loss(const CausalLM& model, const TokenSequence& x, const TokenSequence& best);

double sft_approx_loss(const LossWeights& w, double l_kl, double l_ft, double l_rank);

/// pretrain_coef * (sum of token NLLs) / (token count) over the sequences.
double pretrain_loss(const CausalLM& model, std::span<const TokenSequence> sequences, const LossWeights& w);

double joint_loss(const LossWeights& w, double l_rho, double l_sft, double l_pre);

}  // namespace mapo

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mapo/language_model.hpp"
#include "mapo/reward_model.hpp"
#include "mapo/rl_losses.hpp"
#include "mapo/text_metrics.hpp"
#include "mapo/warmup.hpp"

namespace mapo {

/// One RL environment: the rewriter input (task prefix + original prompt)
/// and the original prompt the reward model conditions on.
struct RlPrompt {
  std::string input;
  std::string original;
};

std::vector<RlPrompt> rl_prompts_from(std::span<const WarmupRecord> records);

struct RlConfig {
  LossWeights weights;
  std::size_t steps = 200;
  std::size_t prompts_per_step = 2;
  /// Responses sampled per prompt; they form one RRMF group.
  std::size_t rrmf_k = 4;
  double actor_learning_rate = 2e-5;
  double critic_learning_rate = 1e-5;
  double weight_decay = 0.1;
  double adam_epsilon = 1e-5;
  GenerationParams rollout_params{.temperature = 1.0, .max_tokens = 24, .seed = 0};
  /// Standardize advantages over each rollout batch.
  bool whiten_advantages = true;
  /// Divide the centered terminal rewards of the score-function term by
  /// their batch standard deviation.
  bool normalize_rewards = true;
  /// Pretrain sequences drawn for each minibatch.
  std::size_t pretrain_per_minibatch = 4;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const RlConfig&) const = default;
};

/// Samples `samples_per_prompt` responses per prompt from the actor and
/// records per-token actor/frozen log-probs, critic values and the terminal
/// reward-model score. Episodes whose generation fails are dropped and
/// counted. Response seeds derive from params.seed, the prompt index and the
/// sample index.
RolloutBatch collect_rollouts(const PolicyHandle& actor, const PolicyHandle& frozen_sft, const CausalLM& critic,
                              const RewardModel& reward, std::span<const RlPrompt> prompts,
                              const GenerationParams& params, std::size_t samples_per_prompt = 1);

/// Rescales advantages over all transitions to mean 0 and standard deviation
/// 1; leaves them unchanged when the standard deviation is 0.
void whiten_advantages(RolloutBatch& batch);

/// Critic values V(s_t) for each response token.
std::vector<double> critic_values(const CausalLM& critic, const TokenSequence& x, const TokenSequence& y);

struct JointTerms {
  double l_pg = 0.0, l_v = 0.0, l_rexp = 0.0, l_kl = 0.0, l_rank = 0.0, l_ft = 0.0, l_pre = 0.0;
  double l_rho = 0.0, l_sft = 0.0, l_joint = 0.0;
};

/// Evaluates the joint objective on a set of episodes (whole RRMF groups)
/// plus pretrain sequences under the current actor and critic, and
/// accumulates gradients into `actor_grads` / `critic_grads` when they are
/// non-empty. `reference_logprob` supplies the importance-ratio denominator
/// per episode and transition. Throws NonFiniteLossError naming the first
/// non-finite term.
/// `normalize_rewards` standardizes the terminal rewards used by the
/// score-function term.
JointTerms joint_objective(const CausalLM& actor, const CausalLM& critic, std::span<const Episode> episodes,
                           std::span<const std::vector<double>> reference_logprob,
                           std::span<const TokenSequence> pretrain, const LossWeights& w,
                           std::span<double> actor_grads = {}, std::span<double> critic_grads = {},
                           bool normalize_rewards = false);

struct RlStepMetrics {
  std::size_t step = 0;
  double mean_reward = 0.0;
  double kl_per_token = 0.0;
  JointTerms terms;
  std::size_t dropped = 0;

  nlohmann::json to_json() const;
};

using RlStepCallback = std::function<void(const RlStepMetrics&, const CausalLM& actor, const CausalLM& critic)>;

/// PPO + RRMF training loop. Each step collects rrmf_k responses for
/// prompts_per_step prompts, computes advantages, then runs ppo_epochs passes
/// over minibatches of whole groups, clipping each gradient at max_grad_norm.
std::vector<RlStepMetrics> train_rl(const PolicyHandle& actor, CausalLM& critic, const PolicyHandle& frozen_sft,
                                    const RewardModel& reward, std::span<const RlPrompt> prompts,
                                    std::span<const TokenSequence> pretrain, const RlConfig& config,
                                    const RlStepCallback& on_step = {});

/// Critic initialised from the SFT model with a zeroed value head.
CausalLM make_critic(const CausalLM& sft);

/// Tokenizes general-task text into pretrain sequences (words + <eos>) and
/// keeps a deterministic `fraction` of them (at least one when any exist).
std::vector<TokenSequence> sample_pretrain_sequences(const CausalLM& model, std::span<const std::string> texts,
                                                     double fraction, std::uint64_t seed);

/// Rewrites one prompt with the trained actor.
std::string optimize_prompt(const PolicyHandle& actor, TaskKind task, std::string_view original,
                            const GenerationParams& params = {});

/// Mean reward-model score of the actor's responses.
double mean_reward_score(const PolicyHandle& actor, const RewardModel& reward, std::span<const RlPrompt> prompts,
                         const GenerationParams& params);

/// Mean of log pi(y_t) - log pi_sft(y_t) over tokens sampled from the actor.
double sampled_kl_per_token(const PolicyHandle& actor, const PolicyHandle& frozen_sft,
                            std::span<const RlPrompt> prompts, const GenerationParams& params,
                            std::size_t samples_per_prompt);

}  // namespace mapo

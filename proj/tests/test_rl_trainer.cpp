#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

#include "fixtures.hpp"

#include "mapo/errors.hpp"
#include "mapo/rl_trainer.hpp"

using namespace mapo;

namespace {

struct Setup {
  std::shared_ptr<CausalLM> sft;
  PolicyHandle actor;
  PolicyHandle frozen;
  CausalLM critic{nullptr, Transformer{}};
  RewardModel reward;
  std::vector<RlPrompt> prompts;
};

Setup copy_setup() {
  auto sft = fixtures::copy_model(1);
  auto actor_lm = std::make_shared<CausalLM>(*sft);
  RewardModel rm(*sft);
  fixtures::perturb(rm.parameters(), 0.3, 11);
  Setup s{sft, PolicyHandle::from_model(PolicyRole::actor, actor_lm),
          PolicyHandle::from_model(PolicyRole::frozen_sft, std::make_shared<CausalLM>(*sft)), make_critic(*sft),
          std::move(rm), {}};
  for (const char* p : {"a b", "c d e", "f a", "b b c"}) {
    s.prompts.push_back({format_rewriter_input(TaskKind::generation, p), p});
  }
  return s;
}

RlConfig quick_config() {
  RlConfig cfg;
  cfg.steps = 3;
  cfg.prompts_per_step = 2;
  cfg.rrmf_k = 2;
  cfg.weights.ppo_epochs = 2;
  cfg.weights.mini_batch_size = 4;
  cfg.rollout_params = {.temperature = 1.0, .max_tokens = 6, .seed = 0};
  cfg.seed = 1;
  return cfg;
}

}  // namespace

TEST_CASE("rollouts from identical policies have equal log-probs") {
  auto s = copy_setup();
  const auto batch = collect_rollouts(s.actor, s.frozen, s.critic, s.reward, s.prompts,
                                      {.temperature = 1.0, .max_tokens = 6, .seed = 3}, 2);
  CHECK(batch.episodes.size() == 8);
  CHECK(batch.dropped == 0);
  for (const auto& ep : batch.episodes) {
    REQUIRE_FALSE(ep.transitions.empty());
    for (const auto& tr : ep.transitions) CHECK(tr.actor_logprob == tr.frozen_logprob);
    CHECK(ep.transitions.back().reward == ep.terminal_reward);
    CHECK(ep.terminal_reward == s.reward.score(ep.original, ep.y.text));
  }
  CHECK(batch.episodes[2].group == 1);
}

TEST_CASE("forced vocabulary gives zero log-probs and a reward-model reward") {
  auto lm = std::make_shared<CausalLM>(fixtures::deterministic_lm(5, Vocabulary::eos));
  const auto actor = PolicyHandle::from_model(PolicyRole::actor, lm);
  const auto frozen = clone_frozen(actor);
  RewardModel rm(*lm);
  fixtures::perturb(rm.parameters(), 0.5, 2);
  const std::vector<RlPrompt> prompts{{"w0", "w0"}};
  const auto batch = collect_rollouts(actor, frozen, make_critic(*lm), rm, prompts, {.temperature = 1.0, .max_tokens = 4});
  REQUIRE(batch.episodes.size() == 1);
  for (const auto& tr : batch.episodes[0].transitions) CHECK(tr.actor_logprob == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(batch.episodes[0].terminal_reward == rm.score("w0", ""));
}

TEST_CASE("whitening standardizes advantages") {
  RolloutBatch b;
  b.episodes.resize(2);
  for (double a : {1.0, 2.0, 3.0}) b.episodes[0].transitions.push_back({.advantage = a});
  b.episodes[1].transitions.push_back({.advantage = 10.0});
  whiten_advantages(b);
  double sum = 0, sq = 0;
  for (const auto& ep : b.episodes) {
    for (const auto& tr : ep.transitions) sum += tr.advantage, sq += tr.advantage * tr.advantage;
  }
  CHECK(sum / 4 == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(sq / 4 == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("critic starts at zero") {
  auto s = copy_setup();
  const auto x = s.sft->encode_prompt("a b");
  const auto y = s.sft->encode_completion("a b");
  for (double v : critic_values(s.critic, x, y)) CHECK(v == 0.0);
}

TEST_CASE("non-finite terms are named") {
  auto s = copy_setup();
  auto batch = collect_rollouts(s.actor, s.frozen, s.critic, s.reward, s.prompts, {.temperature = 1.0, .max_tokens = 6}, 1);
  std::vector<std::vector<double>> ref;
  for (const auto& ep : batch.episodes) {
    std::vector<double> row;
    for (const auto& tr : ep.transitions) row.push_back(tr.actor_logprob);
    ref.push_back(row);
  }
  batch.episodes[0].terminal_reward = std::numeric_limits<double>::quiet_NaN();
  try {
    joint_objective(s.actor.lm(), s.critic, batch.episodes, ref, {}, LossWeights{});
    FAIL("expected NonFiniteLossError");
  } catch (const NonFiniteLossError& e) {
    CHECK(e.component() == "l_rexp");
  }
}

TEST_CASE("zero RL steps leave the actor unchanged") {
  auto s = copy_setup();
  auto cfg = quick_config();
  cfg.steps = 0;
  const std::vector<double> before(s.actor.lm().parameters().begin(), s.actor.lm().parameters().end());
  const auto metrics = train_rl(s.actor, s.critic, s.frozen, s.reward, s.prompts, {}, cfg);
  CHECK(metrics.empty());
  CHECK(std::equal(before.begin(), before.end(), s.actor.lm().parameters().begin()));
}

TEST_CASE("training logs every step and is deterministic") {
  auto a = copy_setup(), b = copy_setup();
  const auto cfg = quick_config();
  const auto ma = train_rl(a.actor, a.critic, a.frozen, a.reward, a.prompts, {}, cfg);
  const auto mb = train_rl(b.actor, b.critic, b.frozen, b.reward, b.prompts, {}, cfg);
  REQUIRE(ma.size() == 3);
  for (std::size_t i = 0; i < ma.size(); ++i) CHECK(ma[i].to_json() == mb[i].to_json());
  CHECK(std::equal(a.actor.lm().parameters().begin(), a.actor.lm().parameters().end(),
                   b.actor.lm().parameters().begin()));
  const auto j = ma.back().to_json();
  for (const char* key : {"step", "mean_reward", "kl_per_token", "l_pg", "l_v", "l_kl", "l_rank", "l_ft", "l_joint"}) {
    CHECK(j.contains(key));
  }
}

TEST_CASE("a dominant KL penalty keeps the actor on the SFT model") {
  auto s = copy_setup();
  auto cfg = quick_config();
  cfg.steps = 15;
  cfg.actor_learning_rate = 1e-3;
  cfg.weights.beta_kl = 100.0;
  train_rl(s.actor, s.critic, s.frozen, s.reward, s.prompts, {}, cfg);
  const double kl = sampled_kl_per_token(s.actor, s.frozen, s.prompts, {.temperature = 1.0, .max_tokens = 6, .seed = 9}, 4);
  CHECK(kl < 0.05);
}

TEST_CASE("pretrain sampling keeps a deterministic fraction") {
  auto s = copy_setup();
  std::vector<std::string> texts;
  for (int i = 0; i < 100; ++i) texts.push_back(i % 2 ? "a b" : "c d e");
  const auto ten = sample_pretrain_sequences(*s.sft, texts, 0.1, 4);
  CHECK(ten.size() == 10);
  CHECK(ten == sample_pretrain_sequences(*s.sft, texts, 0.1, 4));
  CHECK(sample_pretrain_sequences(*s.sft, std::vector<std::string>{"a"}, 0.1, 4).size() == 1);
  CHECK(sample_pretrain_sequences(*s.sft, texts, 0.0, 4).empty());
}

TEST_CASE("optimize_prompt") {
  auto s = copy_setup();
  CHECK(optimize_prompt(s.actor, TaskKind::generation, "c d e") == "c d e");
  CHECK(optimize_prompt(s.actor, TaskKind::generation, "f a", {.max_tokens = 8}) ==
        optimize_prompt(s.actor, TaskKind::generation, "f a", {.max_tokens = 8}));
}

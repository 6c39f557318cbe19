#include "fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mapo/rl_trainer.hpp"
#include "mapo/rng.hpp"
#include "mapo/sft.hpp"

#ifndef MAPO_SOURCE_DIR
#error "MAPO_SOURCE_DIR must be defined"
#endif

namespace fixtures {

using namespace mapo;

std::shared_ptr<const Vocabulary> vocabulary(const std::vector<std::string>& words) {
  nlohmann::json j;
  std::vector<std::string> all{Vocabulary().word(0), Vocabulary().word(1), Vocabulary().word(2), Vocabulary().word(3)};
  all.insert(all.end(), words.begin(), words.end());
  j["words"] = all;
  return std::make_shared<const Vocabulary>(Vocabulary::from_json(j));
}

CausalLM tiny_lm(std::shared_ptr<const Vocabulary> vocab, std::uint64_t seed, std::size_t d_model,
                 std::size_t context) {
  ModelConfig cfg;
  cfg.vocab_size = vocab->size();
  cfg.d_model = d_model;
  cfg.n_layer = 2;
  cfg.n_head = 2;
  cfg.d_ff = 2 * d_model;
  cfg.context = context;
  return CausalLM(std::move(vocab), cfg, seed);
}

namespace {

std::vector<std::string> numbered(const std::string& stem, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(stem + std::to_string(i));
  return out;
}

}  // namespace

CausalLM uniform_lm(std::size_t vocab_size) {
  auto vocab = vocabulary(numbered("w", vocab_size - Vocabulary::num_special));
  CausalLM lm = tiny_lm(vocab, 1);
  lm.network().zero_output_head();
  return lm;
}

CausalLM deterministic_lm(std::size_t vocab_size, TokenId token) {
  CausalLM lm = uniform_lm(vocab_size);
  lm.parameters()[lm.network().layout().b_out + token] = 1e3;
  return lm;
}

void perturb(std::span<double> params, double scale, std::uint64_t seed) {
  CounterRng rng(seed, 0x70657274);
  for (double& p : params) p += scale * rng.normal();
}

GradientCheck check_gradient(const std::string& name, std::span<double> params, const std::function<double()>& loss,
                             const std::vector<double>& analytic, std::size_t count, std::uint64_t seed, double h) {
  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    if (std::abs(analytic[i]) > 1e-6) live.push_back(i);
  }
  CounterRng rng(seed, 0x67726164);
  rng.shuffle(std::span<std::size_t>(live));
  live.resize(std::min(count, live.size()));
  GradientCheck out{name, live.size(), 0.0};
  for (std::size_t i : live) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = loss();
    params[i] = saved - h;
    const double down = loss();
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-8});
    out.max_relative_error = std::max(out.max_relative_error, std::abs(numeric - analytic[i]) / denom);
  }
  return out;
}

std::vector<GradientCheck> gradient_suite(std::uint64_t seed, std::size_t coordinates) {
  const std::vector<std::string> words{"red", "green", "blue", "cat", "dog", "runs", "sits", "fast", "slow", "the"};
  auto vocab = vocabulary(words);
  std::vector<GradientCheck> results;

  // SFT cross-entropy.
  {
    CausalLM lm = tiny_lm(vocab, seed);
    const std::vector<SftExample> batch{{"the red cat", "the cat runs", TaskKind::generation},
                                        {"blue dog", "dog sits slow", TaskKind::generation},
                                        {"green", "fast", TaskKind::generation}};
    std::vector<double> grads(lm.parameters().size(), 0.0), scratch;
    sft_step(lm, batch, grads);
    results.push_back(check_gradient(
        "sft_cross_entropy", lm.parameters(), [&] { return sft_step(lm, batch, scratch).loss; }, grads, coordinates,
        seed));
  }

  // Pairwise ranking loss.
  {
    RewardModel rm(tiny_lm(vocab, seed + 1));
    perturb(rm.parameters(), 0.05, seed + 2);
    RankingPairBatch batch;
    batch.k = 3;
    batch.items = {{"the cat", "red cat runs", "dog"}, {"the cat", "red cat runs", "slow"}, {"the cat", "dog", "slow"}};
    std::vector<double> grads(rm.parameters().size(), 0.0);
    pairwise_ranking_loss(rm, batch, grads);
    results.push_back(check_gradient(
        "ranking_loss", rm.parameters(), [&] { return pairwise_ranking_loss(rm, batch); }, grads, coordinates,
        seed));
  }

  // Joint-objective components over real rollouts.
  auto actor_lm = std::make_shared<CausalLM>(tiny_lm(vocab, seed + 3));
  perturb(actor_lm->parameters(), 0.05, seed + 4);
  auto frozen_lm = std::make_shared<CausalLM>(*actor_lm);
  perturb(frozen_lm->parameters(), 0.05, seed + 5);
  CausalLM critic = make_critic(*actor_lm);
  perturb(critic.parameters(), 0.05, seed + 6);
  RewardModel rm(*actor_lm);
  perturb(rm.parameters(), 0.2, seed + 7);

  const auto actor = PolicyHandle::from_model(PolicyRole::actor, actor_lm);
  const auto frozen = PolicyHandle::from_model(PolicyRole::frozen_sft, frozen_lm);
  const std::vector<RlPrompt> prompts{{"the red cat", "the red cat"}, {"blue dog sits", "blue dog sits"}};
  RolloutBatch batch =
      collect_rollouts(actor, frozen, critic, rm, prompts, GenerationParams{.temperature = 1.0, .max_tokens = 6, .seed = seed}, 3);
  LossWeights base;
  compute_advantages(batch, base);

  std::vector<std::vector<double>> reference;
  CounterRng noise(seed, 0x726566);
  for (const auto& ep : batch.episodes) {
    std::vector<double> row;
    for (const auto& tr : ep.transitions) row.push_back(tr.actor_logprob + 0.05 * noise.normal());
    reference.push_back(std::move(row));
  }
  const std::vector<TokenSequence> pretrain{actor_lm->encode_completion("the cat runs fast"),
                                            actor_lm->encode_completion("green dog")};

  struct Component {
    std::string name;
    std::function<void(LossWeights&)> enable;
    bool critic = false;
  };
  const std::vector<Component> components{
      {"l_pg", [](LossWeights& w) { w.gamma1 = w.alpha1 = 1.0; }},
      {"l_v", [](LossWeights& w) { w.gamma1 = w.alpha2 = 1.0; }, true},
      {"l_reward_expectation", [](LossWeights& w) { w.gamma1 = w.alpha3 = 1.0; }},
      {"l_kl_sft", [](LossWeights& w) { w.gamma2 = w.beta1 = 1.0; }},
      {"l_kl_sft_sampled",
       [](LossWeights& w) {
         w.gamma2 = w.beta1 = 1.0;
         w.kl_estimator = KlEstimator::sampled_log_ratio;
       }},
      {"l_rank", [](LossWeights& w) { w.gamma2 = w.beta3 = 1.0; }},
      {"l_ft", [](LossWeights& w) { w.gamma2 = w.beta2 = 1.0; }},
      {"l_sft_combined", [](LossWeights& w) { w.gamma2 = w.beta1 = w.beta2 = w.beta3 = 1.0; }},
      {"l_pre", [](LossWeights& w) { w.gamma3 = 1.0; }},
  };
  for (const auto& c : components) {
    LossWeights w = base;
    w.alpha1 = w.alpha2 = w.alpha3 = 0.0;
    w.beta1 = w.beta2 = w.beta3 = 0.0;
    w.gamma1 = w.gamma2 = w.gamma3 = 0.0;
    c.enable(w);
    std::vector<double> actor_grads(actor_lm->parameters().size(), 0.0);
    std::vector<double> critic_grads(critic.parameters().size(), 0.0);
    joint_objective(*actor_lm, critic, batch.episodes, reference, pretrain, w, actor_grads, critic_grads);
    auto loss = [&] { return joint_objective(*actor_lm, critic, batch.episodes, reference, pretrain, w).l_joint; };
    if (c.critic) {
      results.push_back(check_gradient(c.name, critic.parameters(), loss, critic_grads, coordinates, seed));
    } else {
      results.push_back(check_gradient(c.name, actor_lm->parameters(), loss, actor_grads, coordinates, seed));
    }
  }
  return results;
}

PlantedFixture planted_ordering(std::size_t sequences, std::uint64_t seed, bool flip_labels) {
  const auto good = numbered("good", 4);
  const auto filler = numbered("filler", 12);
  std::vector<std::string> words = good;
  words.insert(words.end(), filler.begin(), filler.end());
  PlantedFixture fx;
  fx.vocab = vocabulary(words);
  CounterRng rng(seed, 0x706c616e);
  constexpr std::size_t kCandidates = 5;
  constexpr std::size_t kLength = 6;
  std::vector<RankingPairBatch> all;
  for (std::size_t s = 0; s < sequences; ++s) {
    std::string x;
    for (std::size_t i = 0; i < 4; ++i) x += (i ? " " : "") + filler[rng.index(filler.size())];
    // Candidate c carries exactly c planted words.
    std::vector<std::string> ys;
    for (std::size_t c = 0; c < kCandidates; ++c) {
      std::vector<std::string> toks;
      for (std::size_t i = 0; i < kLength; ++i) {
        toks.push_back(i < c ? good[rng.index(good.size())] : filler[rng.index(filler.size())]);
      }
      rng.shuffle(std::span<std::string>(toks));
      std::string y;
      for (const auto& t : toks) y += (y.empty() ? "" : " ") + t;
      ys.push_back(y);
    }
    RankingPairBatch batch;
    batch.k = kCandidates;
    for (std::size_t hi = 0; hi < kCandidates; ++hi) {
      for (std::size_t lo = 0; lo < hi; ++lo) {
        if (flip_labels) batch.items.push_back({x, ys[lo], ys[hi]});
        else batch.items.push_back({x, ys[hi], ys[lo]});
      }
    }
    fx.total_pairs += batch.items.size();
    all.push_back(std::move(batch));
  }
  const std::size_t n_train = all.size() * 4 / 5;
  fx.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
  fx.heldout.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train), all.end());
  return fx;
}

RewardModel planted_reward_model(const PlantedFixture& fx, std::uint64_t seed) {
  return RewardModel(tiny_lm(fx.vocab, seed, 16, 24));
}

SftConfig planted_trainer_config() {
  SftConfig cfg;
  cfg.epochs = 20;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 4;
  cfg.gradient_accumulation_steps = 1;
  cfg.weight_decay = 0.1;
  cfg.adam_epsilon = 1e-5;
  cfg.seed = 1;
  return cfg;
}

std::vector<std::string> copy_words() { return {"a", "b", "c", "d", "e", "f"}; }

std::shared_ptr<CausalLM> copy_model(std::uint64_t seed) {
  const auto words = copy_words();
  std::vector<std::string> corpus{format_rewriter_input(TaskKind::generation, "")};
  corpus.insert(corpus.end(), words.begin(), words.end());
  const auto vocab = std::make_shared<const Vocabulary>(Vocabulary::build(corpus));
  auto lm = std::make_shared<CausalLM>(tiny_lm(vocab, seed, 32, 64));
  CounterRng rng(seed, 0x636f7079);
  std::vector<SftExample> data;
  for (std::size_t i = 0; i < 200; ++i) {
    std::string s;
    const std::size_t len = 1 + rng.index(4);
    for (std::size_t j = 0; j < len; ++j) s += (j ? " " : "") + words[rng.index(words.size())];
    data.push_back({format_rewriter_input(TaskKind::generation, s), s, TaskKind::generation});
  }
  SftConfig cfg;
  cfg.epochs = 30;
  cfg.learning_rate = 3e-3;
  cfg.batch_size = 8;
  cfg.gradient_accumulation_steps = 1;
  cfg.seed = seed;
  train_sft(PolicyHandle::from_model(PolicyRole::actor, lm), data, cfg);
  return lm;
}

fs::path source_dir() { return fs::path(MAPO_SOURCE_DIR); }

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("mapo_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

PipelineConfig toy_pipeline_config(const fs::path& run_dir) {
  PipelineConfig cfg = load_config(source_dir() / "configs" / "toy.ini");
  cfg.paths.run_dir = run_dir.string();
  cfg.paths.prompts = (source_dir() / cfg.paths.prompts).string();
  cfg.paths.general = (source_dir() / cfg.paths.general).string();
  return cfg;
}

}  // namespace fixtures

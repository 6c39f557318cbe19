#include "mapo/rl_trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "mapo/errors.hpp"
#include "mapo/optimizer.hpp"
#include "mapo/rng.hpp"
#include "mapo/sft.hpp"

namespace mapo {

std::vector<RlPrompt> rl_prompts_from(std::span<const WarmupRecord> records) {
  std::vector<RlPrompt> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    out.push_back({format_rewriter_input(r.pair.task, r.pair.original), r.pair.original});
  }
  return out;
}

void RlConfig::validate() const {
  weights.validate();
  if (prompts_per_step == 0) throw ConfigError("prompts_per_step must be positive");
  if (rrmf_k == 0) throw ConfigError("rrmf_k must be positive");
  for (double v : {actor_learning_rate, critic_learning_rate, weight_decay, adam_epsilon}) {
    if (!std::isfinite(v) || v < 0.0) throw ConfigError("RL optimizer settings must be finite and >= 0");
  }
  if (!(adam_epsilon > 0.0)) throw ConfigError("adam epsilon must be > 0");
  rollout_params.validate();
}

std::vector<double> critic_values(const CausalLM& critic, const TokenSequence& x, const TokenSequence& y) {
  std::vector<TokenId> input = x.token_ids;
  input.insert(input.end(), y.token_ids.begin(), y.token_ids.end() - 1);
  const auto cache = critic.network().forward(input, input.size());
  return {cache.scalars.begin() + static_cast<std::ptrdiff_t>(x.token_ids.size() - 1), cache.scalars.end()};
}

RolloutBatch collect_rollouts(const PolicyHandle& actor, const PolicyHandle& frozen_sft, const CausalLM& critic,
                              const RewardModel& reward, std::span<const RlPrompt> prompts,
                              const GenerationParams& params, std::size_t samples_per_prompt) {
  if (prompts.empty()) throw std::invalid_argument("collect_rollouts: no prompts");
  params.validate();
  const CausalLM& pi = actor.lm();
  const CausalLM& ref = frozen_sft.lm();
  RolloutBatch batch;
  for (std::size_t j = 0; j < prompts.size(); ++j) {
    for (std::size_t i = 0; i < samples_per_prompt; ++i) {
      try {
        Episode ep;
        ep.group = j;
        ep.original = prompts[j].original;
        ep.x = pi.encode_prompt(prompts[j].input);
        GenerationParams p = params;
        p.seed = CounterRng::mix(params.seed, j, i);
        ep.y = pi.generate(ep.x, p);
        const auto actor_pass = pi.evaluate(ep.x.token_ids, ep.y.token_ids);
        const auto frozen_pass = ref.evaluate(ep.x.token_ids, ep.y.token_ids);
        const auto values = critic_values(critic, ep.x, ep.y);
        ep.terminal_reward = reward.score(ep.original, ep.y.text);
        if (!std::isfinite(ep.terminal_reward)) throw Error("non-finite reward score");
        const std::size_t n = ep.y.token_ids.size();
        for (std::size_t t = 0; t < n; ++t) {
          Transition tr;
          tr.token = ep.y.token_ids[t];
          tr.actor_logprob = actor_pass.token_logprob[t];
          tr.frozen_logprob = frozen_pass.token_logprob[t];
          tr.entropy = actor_pass.entropy[t];
          tr.value_estimate = values[t];
          tr.reward = t + 1 == n ? ep.terminal_reward : 0.0;
          ep.transitions.push_back(tr);
        }
        ep.actor_log_probs = actor_pass.log_probs;
        ep.frozen_log_probs = frozen_pass.log_probs;
        batch.episodes.push_back(std::move(ep));
      } catch (const Error&) {
        ++batch.dropped;
      }
    }
  }
  return batch;
}

void whiten_advantages(RolloutBatch& batch) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& ep : batch.episodes) {
    for (const auto& t : ep.transitions) {
      sum += t.advantage;
      ++n;
    }
  }
  if (n < 2) return;
  const double mean = sum / static_cast<double>(n);
  for (const auto& ep : batch.episodes) {
    for (const auto& t : ep.transitions) sq += (t.advantage - mean) * (t.advantage - mean);
  }
  const double sd = std::sqrt(sq / static_cast<double>(n));
  if (sd == 0.0) return;
  for (auto& ep : batch.episodes) {
    for (auto& t : ep.transitions) t.advantage = (t.advantage - mean) / sd;
  }
}

namespace {

void require_finite(const char* name, double v) {
  if (!std::isfinite(v)) throw NonFiniteLossError(name, v);
}

}  // namespace

JointTerms joint_objective(const CausalLM& actor, const CausalLM& critic, std::span<const Episode> episodes,
                           std::span<const std::vector<double>> reference_logprob,
                           std::span<const TokenSequence> pretrain, const LossWeights& w,
                           std::span<double> actor_grads, std::span<double> critic_grads,
                           bool normalize_rewards) {
  if (episodes.empty()) throw std::invalid_argument("joint_objective: no episodes");
  if (reference_logprob.size() != episodes.size()) throw std::invalid_argument("joint_objective: reference mismatch");
  const bool want_grads = !actor_grads.empty();
  const std::size_t V = actor.network().config().vocab_size;

  std::vector<CompletionPass> passes;
  std::vector<ForwardCache> critic_caches;
  passes.reserve(episodes.size());
  std::vector<double> lp, ref, adv, ent, vals, targets, frozen_lp;
  std::vector<std::vector<double>> rows, frozen_rows, episode_lp;
  std::vector<double> terminal;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const auto& ep = episodes[e];
    passes.push_back(actor.evaluate(ep.x.token_ids, ep.y.token_ids));
    const auto& pass = passes.back();
    std::vector<TokenId> input = ep.x.token_ids;
    input.insert(input.end(), ep.y.token_ids.begin(), ep.y.token_ids.end() - 1);
    critic_caches.push_back(critic.network().forward(input, input.size()));
    const auto& cc = critic_caches.back();
    for (std::size_t t = 0; t < ep.transitions.size(); ++t) {
      lp.push_back(pass.token_logprob[t]);
      ref.push_back(reference_logprob[e].at(t));
      adv.push_back(ep.transitions[t].advantage);
      ent.push_back(pass.entropy[t]);
      vals.push_back(cc.scalars[ep.x.token_ids.size() - 1 + t]);
      targets.push_back(ep.transitions[t].value_target);
      frozen_lp.push_back(ep.transitions[t].frozen_logprob);
      rows.push_back(pass.log_probs[t]);
      frozen_rows.push_back(ep.frozen_log_probs.at(t));
    }
    episode_lp.push_back(pass.token_logprob);
    terminal.push_back(ep.terminal_reward);
  }

  if (normalize_rewards && terminal.size() > 1) {
    const double mean = std::accumulate(terminal.begin(), terminal.end(), 0.0) / static_cast<double>(terminal.size());
    double ss = 0.0;
    for (double r : terminal) ss += (r - mean) * (r - mean);
    const double sd = std::sqrt(ss / static_cast<double>(terminal.size()));
    if (sd > 0.0) {
      for (double& r : terminal) r = (r - mean) / sd;
    }
  }

  JointTerms out;
  const auto pg = policy_loss_terms(lp, ref, adv, ent, w);
  const auto vl = value_loss_terms(vals, targets, w);
  const auto rexp = reward_expectation_terms(terminal, episode_lp);
  const bool exact = w.kl_estimator == KlEstimator::exact_per_state;
  const auto kl = exact ? kl_exact_terms(rows, frozen_rows, w) : kl_sampled_terms(lp, frozen_lp, w);
  out.l_pg = pg.value;
  out.l_v = vl.value;
  out.l_rexp = rexp.value;
  out.l_kl = kl.value;

  // RRMF over groups of responses to the same prompt.
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t e = 0; e < episodes.size(); ++e) groups[episodes[e].group].push_back(e);
  const double inv_groups = 1.0 / static_cast<double>(groups.size());
  std::vector<double> d_seq_norm(episodes.size(), 0.0);  // d/d(normalized logprob)
  std::vector<double> d_seq_total(episodes.size(), 0.0);  // d/d(total logprob)
  for (const auto& [g, members] : groups) {
    std::vector<double> r, p;
    for (std::size_t e : members) {
      r.push_back(episodes[e].terminal_reward);
      double total = 0.0;
      for (double v : passes[e].token_logprob) total += v;
      p.push_back(total / static_cast<double>(passes[e].token_logprob.size()));
    }
    const std::size_t best = members[best_response_index(r)];
    double best_total = 0.0;
    for (double v : passes[best].token_logprob) best_total += v;
    out.l_ft -= best_total * inv_groups;
    d_seq_total[best] -= inv_groups;
    if (members.size() >= 2) {
      const auto rank = rrmf_rank_terms(r, p, w);
      out.l_rank += rank.value * inv_groups;
      for (std::size_t m = 0; m < members.size(); ++m) d_seq_norm[members[m]] += rank.d_logprob[m] * inv_groups;
    }
  }

  std::size_t pre_tokens = 0;
  std::vector<CompletionPass> pre_passes;
  const std::vector<TokenId> bos{Vocabulary::bos};
  for (const auto& s : pretrain) {
    pre_passes.push_back(actor.evaluate(bos, s.token_ids));
    for (double v : pre_passes.back().token_logprob) out.l_pre -= v;
    pre_tokens += s.token_ids.size();
  }
  if (pre_tokens > 0) out.l_pre *= w.pretrain_coef / static_cast<double>(pre_tokens);

  require_finite("l_pg", out.l_pg);
  require_finite("l_v", out.l_v);
  require_finite("l_rexp", out.l_rexp);
  require_finite("l_kl", out.l_kl);
  require_finite("l_rank", out.l_rank);
  require_finite("l_ft", out.l_ft);
  require_finite("l_pre", out.l_pre);
  out.l_rho = combined_policy_loss(w, out.l_pg, out.l_v, out.l_rexp);
  out.l_sft = sft_approx_loss(w, out.l_kl, out.l_ft, out.l_rank);
  out.l_joint = joint_loss(w, out.l_rho, out.l_sft, out.l_pre);
  require_finite("l_joint", out.l_joint);
  if (!want_grads) return out;

  const double c_pg = w.gamma1 * w.alpha1;
  const double c_v = w.gamma1 * w.alpha2;
  const double c_rexp = w.gamma1 * w.alpha3;
  const double c_kl = w.gamma2 * w.beta1;
  const double c_ft = w.gamma2 * w.beta2;
  const double c_rank = w.gamma2 * w.beta3;
  std::size_t f = 0;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const auto& pass = passes[e];
    const std::size_t n = pass.token_logprob.size();
    CompletionGradient g(pass, V);
    std::vector<double> dscalars(critic_caches[e].length, 0.0);
    for (std::size_t t = 0; t < n; ++t, ++f) {
      double d = c_pg * pg.d_logprob[f] + c_rexp * rexp.d_logprob[f];
      d += c_ft * d_seq_total[e] + c_rank * d_seq_norm[e] / static_cast<double>(n);
      if (!exact) d += c_kl * kl.d_logprob[f];
      if (d != 0.0) g.add_token_logprob(t, d);
      if (pg.d_entropy[f] != 0.0) g.add_entropy(t, c_pg * pg.d_entropy[f]);
      if (exact && c_kl != 0.0) g.add_kl(t, c_kl * kl.d_entropy[f], frozen_rows[f]);
      dscalars[episodes[e].x.token_ids.size() - 1 + t] = c_v * vl.d_logprob[f];
    }
    actor.backward(pass, g, actor_grads);
    if (!critic_grads.empty()) critic.network().backward(critic_caches[e], {}, dscalars, critic_grads);
  }
  if (pre_tokens > 0 && w.gamma3 * w.pretrain_coef != 0.0) {
    const double d = -w.gamma3 * w.pretrain_coef / static_cast<double>(pre_tokens);
    for (const auto& pass : pre_passes) {
      CompletionGradient g(pass, V);
      for (std::size_t t = 0; t < pass.token_logprob.size(); ++t) g.add_token_logprob(t, d);
      actor.backward(pass, g, actor_grads);
    }
  }
  return out;
}

nlohmann::json RlStepMetrics::to_json() const {
  return {{"step", step},
          {"mean_reward", mean_reward},
          {"kl_per_token", kl_per_token},
          {"l_pg", terms.l_pg},
          {"l_v", terms.l_v},
          {"l_rexp", terms.l_rexp},
          {"l_kl", terms.l_kl},
          {"l_rank", terms.l_rank},
          {"l_ft", terms.l_ft},
          {"l_pre", terms.l_pre},
          {"l_joint", terms.l_joint}};
}

namespace {

void accumulate(JointTerms& sum, const JointTerms& t, double scale) {
  sum.l_pg += scale * t.l_pg;
  sum.l_v += scale * t.l_v;
  sum.l_rexp += scale * t.l_rexp;
  sum.l_kl += scale * t.l_kl;
  sum.l_rank += scale * t.l_rank;
  sum.l_ft += scale * t.l_ft;
  sum.l_pre += scale * t.l_pre;
  sum.l_rho += scale * t.l_rho;
  sum.l_sft += scale * t.l_sft;
  sum.l_joint += scale * t.l_joint;
}

}  // namespace

std::vector<RlStepMetrics> train_rl(const PolicyHandle& actor, CausalLM& critic, const PolicyHandle& frozen_sft,
                                    const RewardModel& reward, std::span<const RlPrompt> prompts,
                                    std::span<const TokenSequence> pretrain, const RlConfig& config,
                                    const RlStepCallback& on_step) {
  config.validate();
  if (prompts.empty()) throw std::invalid_argument("train_rl: no prompts");
  CausalLM& pi = actor.mutable_lm();
  const LossWeights& w = config.weights;
  AdamW actor_opt(pi.parameters().size(),
                  {config.actor_learning_rate, 0.9, 0.999, config.adam_epsilon, config.weight_decay},
                  pi.network().decay_mask());
  AdamW critic_opt(critic.parameters().size(),
                   {config.critic_learning_rate, 0.9, 0.999, config.adam_epsilon, config.weight_decay},
                   critic.network().decay_mask());
  std::vector<double> actor_grads(pi.parameters().size());
  std::vector<double> critic_grads(critic.parameters().size());

  std::vector<std::size_t> order(prompts.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = prompts.size();
  std::size_t pass_index = 0;

  std::vector<RlStepMetrics> log;
  for (std::size_t step = 1; step <= config.steps; ++step) {
    std::vector<RlPrompt> chosen;
    for (std::size_t i = 0; i < config.prompts_per_step; ++i) {
      if (cursor == order.size()) {
        CounterRng(config.seed, 0x726c0000ULL + pass_index++).shuffle(std::span<std::size_t>(order));
        cursor = 0;
      }
      chosen.push_back(prompts[order[cursor++]]);
    }
    GenerationParams rp = config.rollout_params;
    rp.seed = CounterRng::mix(config.seed, 0x726f6c6cULL, step);
    RolloutBatch batch = collect_rollouts(actor, frozen_sft, critic, reward, chosen, rp, config.rrmf_k);

    RlStepMetrics m;
    m.step = step;
    m.dropped = batch.dropped;
    if (batch.episodes.empty()) {
      log.push_back(m);
      if (on_step) on_step(m, pi, critic);
      continue;
    }
    compute_advantages(batch, w);
    if (config.whiten_advantages) whiten_advantages(batch);
    std::size_t tokens = 0;
    for (const auto& ep : batch.episodes) {
      m.mean_reward += ep.terminal_reward;
      for (const auto& t : ep.transitions) {
        m.kl_per_token += t.actor_logprob - t.frozen_logprob;
        ++tokens;
      }
    }
    m.mean_reward /= static_cast<double>(batch.episodes.size());
    m.kl_per_token /= static_cast<double>(std::max<std::size_t>(tokens, 1));

    std::vector<std::vector<double>> reference(batch.episodes.size());
    for (std::size_t e = 0; e < batch.episodes.size(); ++e) {
      for (const auto& t : batch.episodes[e].transitions) {
        reference[e].push_back(w.ratio_reference == RatioReference::behavior ? t.actor_logprob : t.frozen_logprob);
      }
    }

    std::map<std::size_t, std::vector<std::size_t>> group_map;
    for (std::size_t e = 0; e < batch.episodes.size(); ++e) group_map[batch.episodes[e].group].push_back(e);
    std::vector<std::vector<std::size_t>> groups;
    for (auto& [g, members] : group_map) groups.push_back(std::move(members));
    const std::size_t groups_per_mb = std::max<std::size_t>(1, w.mini_batch_size / config.rrmf_k);

    std::size_t evaluations = 0;
    JointTerms sum;
    for (std::size_t epoch = 0; epoch < w.ppo_epochs; ++epoch) {
      CounterRng rng(config.seed, CounterRng::mix(step, epoch, 0x70706fULL));
      rng.shuffle(std::span<std::vector<std::size_t>>(groups));
      for (std::size_t start = 0; start < groups.size(); start += groups_per_mb) {
        std::vector<Episode> mb;
        std::vector<std::vector<double>> mb_ref;
        for (std::size_t gi = start; gi < std::min(groups.size(), start + groups_per_mb); ++gi) {
          for (std::size_t e : groups[gi]) {
            mb.push_back(batch.episodes[e]);
            mb_ref.push_back(reference[e]);
          }
        }
        std::vector<TokenSequence> pre;
        for (std::size_t i = 0; i < config.pretrain_per_minibatch && !pretrain.empty(); ++i) {
          pre.push_back(pretrain[rng.index(pretrain.size())]);
        }
        std::fill(actor_grads.begin(), actor_grads.end(), 0.0);
        std::fill(critic_grads.begin(), critic_grads.end(), 0.0);
        const auto terms = joint_objective(pi, critic, mb, mb_ref, pre, w, actor_grads, critic_grads,
                                           config.normalize_rewards);
        accumulate(sum, terms, 1.0);
        ++evaluations;
        if (w.max_grad_norm > 0.0) {
          clip_grad_norm(actor_grads, w.max_grad_norm);
          clip_grad_norm(critic_grads, w.max_grad_norm);
        }
        actor_opt.step(pi.parameters(), actor_grads);
        critic_opt.step(critic.parameters(), critic_grads);
      }
    }
    accumulate(m.terms, sum, 1.0 / static_cast<double>(evaluations));
    log.push_back(m);
    if (on_step) on_step(m, pi, critic);
  }
  return log;
}

CausalLM make_critic(const CausalLM& sft) {
  CausalLM critic = sft;
  critic.network().zero_scalar_head();
  return critic;
}

std::vector<TokenSequence> sample_pretrain_sequences(const CausalLM& model, std::span<const std::string> texts,
                                                     double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw std::invalid_argument("pretrain fraction must be in [0, 1]");
  std::vector<std::size_t> idx(texts.size());
  std::iota(idx.begin(), idx.end(), 0);
  CounterRng(seed, 0x707265ULL).shuffle(std::span<std::size_t>(idx));
  std::size_t keep = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(texts.size())));
  if (keep == 0 && fraction > 0.0 && !texts.empty()) keep = 1;
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  std::vector<TokenSequence> out;
  for (std::size_t i : idx) {
    auto seq = model.encode_completion(texts[i]);
    if (seq.token_ids.size() + 1 > model.context()) continue;
    out.push_back(std::move(seq));
  }
  return out;
}

std::string optimize_prompt(const PolicyHandle& actor, TaskKind task, std::string_view original,
                            const GenerationParams& params) {
  return generate_text(actor, format_rewriter_input(task, original), params);
}

double mean_reward_score(const PolicyHandle& actor, const RewardModel& reward, std::span<const RlPrompt> prompts,
                         const GenerationParams& params) {
  if (prompts.empty()) throw std::invalid_argument("mean_reward_score: no prompts");
  double sum = 0.0;
  for (const auto& p : prompts) sum += reward.score(p.original, generate_text(actor, p.input, params));
  return sum / static_cast<double>(prompts.size());
}

double sampled_kl_per_token(const PolicyHandle& actor, const PolicyHandle& frozen_sft,
                            std::span<const RlPrompt> prompts, const GenerationParams& params,
                            std::size_t samples_per_prompt) {
  const CausalLM& pi = actor.lm();
  const CausalLM& ref = frozen_sft.lm();
  double sum = 0.0;
  std::size_t tokens = 0;
  for (std::size_t j = 0; j < prompts.size(); ++j) {
    const auto x = pi.encode_prompt(prompts[j].input);
    for (std::size_t i = 0; i < samples_per_prompt; ++i) {
      GenerationParams p = params;
      p.seed = CounterRng::mix(params.seed, j, i);
      const auto y = pi.generate(x, p);
      const auto a = pi.evaluate(x.token_ids, y.token_ids);
      const auto b = ref.evaluate(x.token_ids, y.token_ids);
      for (std::size_t t = 0; t < y.token_ids.size(); ++t) sum += a.token_logprob[t] - b.token_logprob[t];
      tokens += y.token_ids.size();
    }
  }
  if (tokens == 0) throw std::invalid_argument("sampled_kl_per_token: no samples");
  return sum / static_cast<double>(tokens);
}

}  // namespace mapo

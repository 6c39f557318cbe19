#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "oracles.hpp"

#include "mapo/rl_losses.hpp"
#include "mapo/rng.hpp"

using namespace mapo;

namespace {

std::vector<double> gae(const std::vector<double>& r, const std::vector<double>& v, double gamma, double lambda) {
  std::vector<double> adv(r.size()), targets(r.size());
  compute_advantages(r, v, gamma, lambda, adv, targets);
  return adv;
}

Episode episode_with(const std::vector<double>& lp, const std::vector<double>& frozen, double reward) {
  Episode ep;
  for (std::size_t t = 0; t < lp.size(); ++t) {
    Transition tr;
    tr.actor_logprob = lp[t];
    tr.frozen_logprob = frozen[t];
    ep.transitions.push_back(tr);
  }
  ep.terminal_reward = reward;
  if (!ep.transitions.empty()) ep.transitions.back().reward = reward;
  return ep;
}

}  // namespace

TEST_CASE("advantages") {
  CHECK(gae({1.0, 0.0}, {0.3, 0.5}, 0.99, 0.0)[0] == doctest::Approx(1.195).epsilon(1e-12));
  for (double a : gae({0, 0, 0}, {0, 0, 0}, 0.99, 0.95)) CHECK(a == 0.0);

  CounterRng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> r(1 + rng.index(8)), v(r.size());
    for (auto& x : r) x = rng.normal();
    for (auto& x : v) x = rng.normal();
    const auto got = gae(r, v, 0.99, 0.95);
    const auto want = oracle::gae(r, v, 0.99, 0.95);
    for (std::size_t t = 0; t < r.size(); ++t) CHECK(got[t] == doctest::Approx(want[t]).epsilon(1e-12));
  }

  std::vector<double> adv(2), targets(2);
  compute_advantages(std::vector<double>{1.0, 2.0}, std::vector<double>{0.3, 0.5}, 0.99, 0.95, adv, targets);
  CHECK(targets[0] == doctest::Approx(1.5));
  CHECK(targets[1] == doctest::Approx(2.0));
}

TEST_CASE("policy loss") {
  LossWeights w;
  const std::vector<double> ent{0.4, 0.6};
  SUBCASE("unit ratio") {
    const std::vector<double> lp{-1.0, -2.0}, adv{1.0, 3.0};
    const auto t = policy_loss_terms(lp, lp, adv, ent, w);
    CHECK(t.value == doctest::Approx(-2.0 - w.entropy_coef * 0.5).epsilon(1e-12));
  }
  SUBCASE("zero advantage keeps only the entropy term") {
    const std::vector<double> lp{-1.0, -2.0}, ref{-1.5, -1.0}, adv{0.0, 0.0};
    CHECK(policy_loss_terms(lp, ref, adv, ent, w).value == doctest::Approx(-w.entropy_coef * 0.5).epsilon(1e-12));
  }
  SUBCASE("clipping") {
    const std::vector<double> lp{std::log(1.5)}, ref{0.0}, none{0.0};
    const auto pos = policy_loss_terms(lp, ref, std::vector<double>{1.0}, none, w);
    CHECK(pos.value == doctest::Approx(-1.2).epsilon(1e-12));
    CHECK(pos.d_logprob[0] == 0.0);
    const auto neg = policy_loss_terms(lp, ref, std::vector<double>{-1.0}, none, w);
    CHECK(neg.value == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(neg.d_logprob[0] == doctest::Approx(1.5).epsilon(1e-12));
    LossWeights raw = w;
    raw.use_clipping = false;
    CHECK(policy_loss_terms(lp, ref, std::vector<double>{1.0}, none, raw).value == doctest::Approx(-1.5));
  }
  SUBCASE("batch form uses the frozen log-probs") {
    RolloutBatch b;
    b.episodes.push_back(episode_with({-1.0, -1.0}, {-1.0, -1.0}, 0.0));
    b.episodes[0].transitions[0].advantage = 2.0;
    b.episodes[0].transitions[1].advantage = 4.0;
    CHECK(policy_loss(b, w) == doctest::Approx(-3.0).epsilon(1e-12));
  }
}

TEST_CASE("value loss") {
  LossWeights w;
  CHECK(value_loss_terms(std::vector<double>{0.2}, std::vector<double>{1.0}, w).value ==
        doctest::Approx(0.32).epsilon(1e-12));
  CHECK(value_loss_terms(std::vector<double>{0.7, 0.1}, std::vector<double>{0.7, 0.1}, w).value == 0.0);
  LossWeights twice = w;
  twice.value_coef = 2 * w.value_coef;
  CHECK(value_loss_terms(std::vector<double>{0.2}, std::vector<double>{1.0}, twice).value ==
        doctest::Approx(0.64).epsilon(1e-12));
}

TEST_CASE("reward expectation") {
  const std::vector<std::vector<double>> lps{{-1.0, -2.0}, {-0.5}};
  CHECK(reward_expectation_terms(std::vector<double>{3.0, 3.0}, lps).value == 0.0);
  const auto t = reward_expectation_terms(std::vector<double>{0.0, 1.0}, lps);
  const double sum_low = -3.0, sum_high = -0.5;
  // mean over the two episodes of the centered weights (-0.5, +0.5)
  CHECK(t.value == doctest::Approx(-0.25 * (sum_high - sum_low)).epsilon(1e-12));
  REQUIRE(t.d_logprob.size() == 3);
  CHECK(t.d_logprob[2] < 0.0);
  CHECK(t.d_logprob[0] > 0.0);
}

TEST_CASE("loss combinations") {
  LossWeights w;
  w.alpha1 = 0.5, w.alpha2 = 0.25, w.alpha3 = 0.25;
  CHECK(combined_policy_loss(w, 2, 4, 8) == doctest::Approx(4.0));
  w.alpha1 = 1, w.alpha2 = 0, w.alpha3 = 0;
  CHECK(combined_policy_loss(w, 2, 4, 8) == 2.0);
  w.beta1 = 0.1, w.beta2 = 0.2, w.beta3 = 0.3;
  CHECK(sft_approx_loss(w, 1, 2, 3) == doctest::Approx(1.4));
  CHECK(sft_approx_loss(w, 0, 0, 0) == 0.0);
  w.gamma1 = 0.6, w.gamma2 = 0.3, w.gamma3 = 0.1;
  CHECK(joint_loss(w, 1, 2, 3) == doctest::Approx(1.5));
  w.gamma1 = 1, w.gamma2 = 0, w.gamma3 = 0;
  CHECK(joint_loss(w, 7, 2, 3) == 7.0);
}

TEST_CASE("KL to the SFT model") {
  LossWeights w;
  const double analytic = 0.8 * std::log(1.6) + 0.2 * std::log(0.4);
  SUBCASE("exact two-point") {
    const std::vector<std::vector<double>> p{{std::log(0.8), std::log(0.2)}}, q{{std::log(0.5), std::log(0.5)}};
    CHECK(kl_exact_terms(p, q, w).value == doctest::Approx(analytic).epsilon(1e-12));
  }
  SUBCASE("sampled exhaustively") {
    std::vector<double> lp, frozen;
    for (int i = 0; i < 8; ++i) lp.push_back(std::log(0.8)), frozen.push_back(std::log(0.5));
    for (int i = 0; i < 2; ++i) lp.push_back(std::log(0.2)), frozen.push_back(std::log(0.5));
    CHECK(kl_sampled_terms(lp, frozen, w).value == doctest::Approx(analytic).epsilon(1e-12));
  }
  SUBCASE("batch form") {
    RolloutBatch b;
    b.episodes.push_back(episode_with({-1.0, -0.2}, {-1.0, -0.2}, 0.0));
    CHECK(kl_sft_loss(b, w) == 0.0);
    b.episodes.push_back(episode_with({-0.1}, {-2.0}, 0.0));
    CHECK(kl_sft_loss(b, w) > 0.0);
    LossWeights off = w;
    off.beta_kl = 0.0;
    CHECK(kl_sft_loss(b, off) == 0.0);
  }
}

TEST_CASE("RRMF terms") {
  CHECK(rrmf_normalized_logprob(SequenceLogProb{{-1, -2, -1, -2}, -6}) == doctest::Approx(-1.5));
  const auto uniform = fixtures::uniform_lm(4);
  const auto x = TokenSequence{{Vocabulary::bos}, ""};
  CHECK(rrmf_normalized_logprob(uniform, x, TokenSequence{{1}, ""}) == doctest::Approx(std::log(0.25)));
  CHECK(rrmf_normalized_logprob(uniform, x, TokenSequence{{1, 2, 3}, ""}) == doctest::Approx(std::log(0.25)));
  const auto forced = fixtures::deterministic_lm(5, 4);
  CHECK(rrmf_normalized_logprob(forced, x, TokenSequence{{4, 4}, ""}) == doctest::Approx(0.0).epsilon(1e-12));

  CHECK(best_response_index(std::vector<double>{0.2, 0.9, 0.9}) == 1);

  LossWeights w;
  CHECK(rrmf_rank_loss(std::vector<double>{0.2, 0.9}, std::vector<double>{-1.0, -0.5}, w) == 0.0);
  CHECK(rrmf_rank_loss(std::vector<double>{0.2, 0.9}, std::vector<double>{-0.5, -1.0}, w) == doctest::Approx(0.5));
  CHECK(rrmf_rank_loss(std::vector<double>{0.4, 0.4}, std::vector<double>{-0.5, -1.0}, w) == 0.0);

  w.lambda_pos = 2.0;
  w.lambda_neg = 1.8;
  // pairs (0,1) -> lambda_neg, (0,2) and (1,2) -> lambda_pos since response 2 is best
  const std::vector<double> r{0.1, 0.5, 0.9}, p{-0.2, -0.6, -1.0};
  CHECK(rrmf_rank_loss(r, p, w) == doctest::Approx(1.8 * 0.4 + 2.0 * 0.8 + 2.0 * 0.4));

  CHECK(rrmf_best_ce_loss(uniform, x, TokenSequence{{1, 2, 3}, ""}) == doctest::Approx(3.0 * std::log(4.0)));
  CHECK(rrmf_best_ce_loss(forced, x, TokenSequence{{4, 4, 4}, ""}) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("pretrain loss") {
  LossWeights w;
  w.pretrain_coef = 0.7;
  const auto uniform = fixtures::uniform_lm(8);
  const std::vector<TokenSequence> seqs{{{4, 5, 6, 7, 2}, ""}};
  CHECK(pretrain_loss(uniform, seqs, w) == doctest::Approx(0.7 * 5.0 * std::log(8.0) / 5.0).epsilon(1e-12));
  w.pretrain_coef = 0.0;
  CHECK(pretrain_loss(uniform, seqs, w) == 0.0);
  w.pretrain_coef = 1.0;
  const auto forced = fixtures::deterministic_lm(5, 4);
  CHECK(pretrain_loss(forced, std::vector<TokenSequence>{{{4, 4, 4}, ""}}, w) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("loss weights validation") {
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  w.clip_epsilon = -0.1;
  CHECK_THROWS(w.validate());
  w = LossWeights{};
  w.discount_gamma = 1.5;
  CHECK_THROWS(w.validate());
}

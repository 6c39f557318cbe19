#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"

#include "mapo/errors.hpp"
#include "mapo/language_model.hpp"
#include "mapo/optimizer.hpp"
#include "mapo/rng.hpp"
#include "mapo/stub_models.hpp"

using namespace mapo;

TEST_CASE("counter rng is a pure function of seed, stream and counter") {
  CounterRng a(3, 4), b(3, 4), c(3, 5);
  const auto x = a();
  CHECK(x == b());
  CHECK(x != c());
  CHECK(CounterRng::mix(3, 4, 0) == x);
  for (int i = 0; i < 1000; ++i) {
    const double u = a.uniform();
    CHECK((u >= 0.0 && u < 1.0));
  }
}

TEST_CASE("vocabulary encodes, decodes and serializes") {
  const std::vector<std::string> corpus{"b a a", "c a b"};
  const auto v = Vocabulary::build(corpus);
  CHECK(v.size() == Vocabulary::num_special + 3);
  CHECK(v.word(Vocabulary::num_special) == "a");
  CHECK(v.id("zzz") == Vocabulary::unk);
  const auto ids = v.encode("a c");
  CHECK(v.decode(ids) == "a c");
  CHECK(Vocabulary::from_json(v.to_json()) == v);
}

TEST_CASE("log_softmax and kl_divergence") {
  const std::vector<double> logits{1.0, 2.0, 3.0};
  const auto lp = log_softmax(logits);
  double total = 0.0;
  for (double x : lp) total += std::exp(x);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(kl_divergence(lp, lp) == doctest::Approx(0.0));
  const std::vector<double> p{std::log(0.8), std::log(0.2)}, q{std::log(0.5), std::log(0.5)};
  CHECK(kl_divergence(p, q) == doctest::Approx(0.8 * std::log(1.6) + 0.2 * std::log(0.4)).epsilon(1e-12));
}

TEST_CASE("sequence_logprob on degenerate and uniform models") {
  SUBCASE("forced token") {
    const auto lm = fixtures::deterministic_lm(5, 4);
    const auto lp = lm.sequence_logprob(lm.encode_prompt("w0"), TokenSequence{{4, 4, 4}, ""});
    for (double x : lp.per_token) CHECK(x == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("uniform vocab 4") {
    const auto lm = fixtures::uniform_lm(4);
    const auto lp = lm.sequence_logprob(TokenSequence{{Vocabulary::bos}, ""}, TokenSequence{{1, 2, 3}, ""});
    CHECK(lp.total == doctest::Approx(3.0 * std::log(0.25)).epsilon(1e-12));
  }
}

TEST_CASE("sequence_logprob matches step-by-step softmax enumeration") {
  auto vocab = fixtures::vocabulary({"x", "y", "z"});
  auto lm = fixtures::tiny_lm(vocab, 4);
  fixtures::perturb(lm.parameters(), 0.1, 9);
  const auto prompt = lm.encode_prompt("x y");
  const auto completion = lm.encode_completion("z x");
  const auto lp = lm.sequence_logprob(prompt, completion);
  std::vector<TokenId> ctx = prompt.token_ids;
  double total = 0.0;
  for (std::size_t i = 0; i < completion.token_ids.size(); ++i) {
    const auto cache = lm.network().forward(ctx, ctx.size() - 1);
    const std::size_t V = vocab->size();
    std::vector<double> row(cache.logits.end() - static_cast<std::ptrdiff_t>(V), cache.logits.end());
    double z = 0.0;
    for (double l : row) z += std::exp(l);
    const double expected = row[completion.token_ids[i]] - std::log(z);
    CHECK(lp.per_token[i] == doctest::Approx(expected).epsilon(1e-10));
    total += expected;
    ctx.push_back(completion.token_ids[i]);
  }
  CHECK(lp.total == doctest::Approx(total).epsilon(1e-10));
}

TEST_CASE("generation is deterministic and guards the context window") {
  auto vocab = fixtures::vocabulary({"x", "y", "z"});
  auto lm = fixtures::tiny_lm(vocab, 2, 8, 16);
  const auto prompt = lm.encode_prompt("x y");
  const GenerationParams greedy{.temperature = 0.0, .max_tokens = 8, .seed = 1};
  CHECK(lm.generate(prompt, greedy) == lm.generate(prompt, greedy));
  const GenerationParams sampled{.temperature = 1.0, .max_tokens = 8, .seed = 5};
  CHECK(lm.generate(prompt, sampled) == lm.generate(prompt, sampled));
  CHECK_THROWS_AS(lm.generate(lm.encode_prompt("x y z x y z x y z x y z x y"), greedy), ContextOverflowError);
  CHECK_THROWS_AS((GenerationParams{.temperature = -1.0}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((GenerationParams{.max_tokens = 0}.validate()), std::invalid_argument);
}

TEST_CASE("copy fixture echoes its input") {
  const auto lm = fixtures::copy_model(1);
  const auto actor = PolicyHandle::from_model(PolicyRole::actor, lm);
  const auto prompt = lm->encode_prompt(format_rewriter_input(TaskKind::generation, "a b"));
  CHECK(generate(actor, prompt, {.max_tokens = 8}).text == "a b");
}

TEST_CASE("clone_frozen is isolated from the source") {
  auto vocab = fixtures::vocabulary({"x", "y"});
  auto src = std::make_shared<CausalLM>(fixtures::tiny_lm(vocab, 3));
  const auto actor = PolicyHandle::from_model(PolicyRole::actor, src);
  const auto frozen = clone_frozen(actor);
  CHECK(frozen.role == PolicyRole::frozen_sft);
  CHECK_FALSE(frozen.trainable());
  const auto x = src->encode_prompt("x");
  const auto y = src->encode_completion("y x");
  const double before = sequence_logprob(frozen, x, y).total;
  fixtures::perturb(src->parameters(), 0.5, 1);
  CHECK(sequence_logprob(frozen, x, y).total == before);
  CHECK(sequence_logprob(actor, x, y).total != before);
}

TEST_CASE("stub paraphraser is deterministic and keeps content") {
  const auto oracle = PolicyHandle::from_text(PolicyRole::oracle, std::make_shared<StubParaphraser>());
  const std::string original = "summarize the main points of the article";
  const auto a = paraphrase(oracle, original, 3, {.seed = 7});
  CHECK(a == paraphrase(oracle, original, 3, {.seed = 7}));
  CHECK(paraphrase(oracle, original, 1).size() == 1);
  for (const auto& s : a) {
    CHECK(s != original);
    CHECK(content_token_overlap(original, s) >= 0.8);
  }
  CHECK(StubParaphraser().complete("not an instruction", {}) == "not an instruction");
}

TEST_CASE("hidden template target returns template words in template order") {
  HiddenTemplateTarget target("alpha beta gamma");
  CHECK(target.complete("gamma x alpha", {}) == "alpha gamma");
  CHECK(target.complete("nothing here", {}).empty());
}

TEST_CASE("adamw and gradient clipping") {
  std::vector<double> g{3.0, 4.0};
  CHECK(clip_grad_norm(g, 1.0) == doctest::Approx(5.0));
  CHECK(l2_norm(g) == doctest::Approx(1.0));
  // One step from fresh moments: the bias-corrected update is lr * g / (|g| + eps).
  std::vector<double> p{1.0, 1.0};
  AdamW opt(2, {.learning_rate = 0.1, .epsilon = 1e-5, .weight_decay = 0.5}, {true, false});
  const std::vector<double> grad{0.0, 2.0};
  opt.step(p, grad);
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 * 0.5).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(1.0 - 0.1 * 2.0 / (2.0 + 1e-5)).epsilon(1e-12));
}

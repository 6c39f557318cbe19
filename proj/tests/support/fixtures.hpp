#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mapo/config.hpp"
#include "mapo/language_model.hpp"
#include "mapo/reward_model.hpp"

namespace fixtures {

namespace fs = std::filesystem;

/// Vocabulary holding the special tokens plus `words` in the given order.
std::shared_ptr<const mapo::Vocabulary> vocabulary(const std::vector<std::string>& words);

/// Small transformer sized to the vocabulary.
mapo::CausalLM tiny_lm(std::shared_ptr<const mapo::Vocabulary> vocab, std::uint64_t seed, std::size_t d_model = 8,
                       std::size_t context = 32);

/// Model whose next-token distribution is uniform over `vocab_size` ids.
mapo::CausalLM uniform_lm(std::size_t vocab_size);

/// Model that puts (numerically) all mass on `token` at every position.
mapo::CausalLM deterministic_lm(std::size_t vocab_size, mapo::TokenId token);

void perturb(std::span<double> params, double scale, std::uint64_t seed);

struct GradientCheck {
  std::string name;
  std::size_t coordinates = 0;
  double max_relative_error = 0.0;
};

/// Compares `analytic` with central differences of `loss` on `count`
/// coordinates drawn from those with a non-negligible analytic gradient.
GradientCheck check_gradient(const std::string& name, std::span<double> params,
                             const std::function<double()>& loss, const std::vector<double>& analytic,
                             std::size_t count, std::uint64_t seed, double h = 1e-5);

/// SFT cross-entropy, pairwise ranking loss and every joint-objective
/// component on a toy LM.
std::vector<GradientCheck> gradient_suite(std::uint64_t seed, std::size_t coordinates = 20);

/// Ranking data whose preference is the count of planted "good" words in
/// the response.
struct PlantedFixture {
  std::shared_ptr<const mapo::Vocabulary> vocab;
  std::vector<mapo::RankingPairBatch> train;
  std::vector<mapo::RankingPairBatch> heldout;
  std::size_t total_pairs = 0;
};
PlantedFixture planted_ordering(std::size_t sequences, std::uint64_t seed, bool flip_labels = false);
mapo::RewardModel planted_reward_model(const PlantedFixture& fx, std::uint64_t seed);
mapo::SftConfig planted_trainer_config();

/// Toy LM fine-tuned to echo its input for generation-task prompts.
std::shared_ptr<mapo::CausalLM> copy_model(std::uint64_t seed);
std::vector<std::string> copy_words();

/// The bundled toy configuration with absolute data paths and `run_dir`.
mapo::PipelineConfig toy_pipeline_config(const fs::path& run_dir);

fs::path source_dir();
fs::path scratch_dir(const std::string& name);

}  // namespace fixtures

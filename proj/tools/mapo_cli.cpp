#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mapo/config.hpp"
#include "mapo/errors.hpp"
#include "mapo/pipeline.hpp"

namespace {

constexpr int kUsageError = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model-adaptive prompt optimization pipeline"};
  app.require_subcommand(1);

  std::string config_path = "mapo.ini";
  std::optional<std::uint64_t> seed;
  bool force = false;
  app.add_option("--config", config_path, "Pipeline config file")->capture_default_str();
  app.add_option("--seed", seed, "Override every stage seed");
  app.add_flag("--force", force, "Rerun a completed stage");

  auto* warmup = app.add_subcommand("warmup", "Build the warm-up dataset");
  auto* sft = app.add_subcommand("sft", "Supervised fine-tuning of the rewriter");
  auto* reward = app.add_subcommand("reward", "Train the reward model");
  auto* rl = app.add_subcommand("rl", "Reinforcement learning of the rewriter");
  auto* eval = app.add_subcommand("eval", "Evaluate original, SFT and RL prompts");
  auto* optimize = app.add_subcommand("optimize", "Rewrite one prompt");
  std::string prompt;
  std::string task_name = "generation";
  optimize->add_option("--prompt", prompt, "Prompt to rewrite")->required();
  optimize->add_option("--task", task_name, "qa, classification or generation")
      ->capture_default_str()
      ->check(CLI::Validator(
          [](std::string& value) -> std::string {
            return mapo::parse_task(value) ? std::string{} : "unknown task '" + value + "'";
          },
          "TASK"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    auto config = mapo::load_config(config_path);
    if (seed) config.set_seed(*seed);
    const mapo::StageOptions options{force};
    if (*warmup) mapo::cmd_warmup(config, options);
    if (*sft) mapo::cmd_sft(config, options);
    if (*reward) mapo::cmd_reward(config, options);
    if (*rl) mapo::cmd_rl(config, options);
    if (*eval) mapo::cmd_eval(config, options);
    if (*optimize) std::cout << mapo::cmd_optimize(config, prompt, *mapo::parse_task(task_name)) << '\n';
  } catch (const mapo::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

#include "mapo/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <set>
#include <type_traits>
#include <sstream>
#include <variant>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "mapo/errors.hpp"

namespace mapo {

namespace {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "seed fields are stored as size_t");

using FieldRef = std::variant<double*, std::size_t*, int*, bool*, std::string*, KlEstimator*,
                              RatioReference*>;

struct Field {
  std::string section;
  std::string key;
  FieldRef ref;
};

std::vector<Field> fields(PipelineConfig& c) {
  auto& wb = c.warmup.builder;
  auto& st = c.sft.trainer;
  auto& rt = c.reward.trainer;
  auto& rl = c.rl.trainer;
  auto& w = rl.weights;
  return {
      {"paths", "run_dir", &c.paths.run_dir},
      {"paths", "prompts", &c.paths.prompts},
      {"paths", "general", &c.paths.general},

      {"endpoints", "oracle", &c.endpoints.oracle},
      {"endpoints", "target", &c.endpoints.target},
      {"endpoints", "target_template", &c.endpoints.target_template},
      {"endpoints", "timeout_seconds", &c.endpoints.timeout_seconds},
      {"endpoints", "max_attempts", &c.endpoints.max_attempts},
      {"endpoints", "max_in_flight", &c.endpoints.max_in_flight},

      {"seeds", "warmup", &c.seeds.warmup},
      {"seeds", "sft", &c.seeds.sft},
      {"seeds", "reward", &c.seeds.reward},
      {"seeds", "rl", &c.seeds.rl},
      {"seeds", "eval", &c.seeds.eval},

      {"warmup", "num_candidates", &wb.num_candidates},
      {"warmup", "retry_budget", &wb.retry_budget},
      {"warmup", "ranking_band", &wb.ranking_band},
      {"warmup", "oracle_temperature", &wb.oracle_params.temperature},
      {"warmup", "oracle_max_tokens", &wb.oracle_params.max_tokens},
      {"warmup", "target_temperature", &wb.target_params.temperature},
      {"warmup", "target_max_tokens", &wb.target_params.max_tokens},
      {"warmup", "train_fraction", &c.warmup.train_fraction},
      {"warmup", "validation_fraction", &c.warmup.validation_fraction},
      {"warmup", "test_fraction", &c.warmup.test_fraction},

      {"model", "vocab_size", &c.sft.model.vocab_size},
      {"model", "d_model", &c.sft.model.d_model},
      {"model", "n_layer", &c.sft.model.n_layer},
      {"model", "n_head", &c.sft.model.n_head},
      {"model", "d_ff", &c.sft.model.d_ff},
      {"model", "context", &c.sft.model.context},

      {"sft", "epochs", &st.epochs},
      {"sft", "learning_rate", &st.learning_rate},
      {"sft", "batch_size", &st.batch_size},
      {"sft", "Gradient Accumulation Steps", &st.gradient_accumulation_steps},
      {"sft", "Weight Decay", &st.weight_decay},
      {"sft", "Adam Optimizer Epsilon", &st.adam_epsilon},
      {"sft", "checkpoint_every", &c.sft.checkpoint_every},

      {"reward", "epochs", &rt.epochs},
      {"reward", "learning_rate", &rt.learning_rate},
      {"reward", "batch_size", &rt.batch_size},
      {"reward", "Gradient Accumulation Steps", &rt.gradient_accumulation_steps},
      {"reward", "Weight Decay", &rt.weight_decay},
      {"reward", "Adam Optimizer Epsilon", &rt.adam_epsilon},

      {"rl", "steps", &rl.steps},
      {"rl", "prompts_per_step", &rl.prompts_per_step},
      {"rl", "rrmf_k", &rl.rrmf_k},
      {"rl", "Learning Rate for Actor Model", &rl.actor_learning_rate},
      {"rl", "Learning Rate for Critic Model", &rl.critic_learning_rate},
      {"rl", "Weight Decay", &rl.weight_decay},
      {"rl", "Adam Optimizer Epsilon", &rl.adam_epsilon},
      {"rl", "Entropy Coefficient", &w.entropy_coef},
      {"rl", "Value Loss Coefficient", &w.value_coef},
      {"rl", "Mini Batch Size", &w.mini_batch_size},
      {"rl", "Positive Lambda Coefficient", &w.lambda_pos},
      {"rl", "Negative Lambda Coefficient", &w.lambda_neg},
      {"rl", "GAMMA", &w.discount_gamma},
      {"rl", "GAE Lambda", &w.gae_lambda},
      {"rl", "Max Gradient Norm", &w.max_grad_norm},
      {"rl", "PPO Epochs", &w.ppo_epochs},
      {"rl", "Clip Parameter", &w.clip_epsilon},
      {"rl", "alpha1", &w.alpha1},
      {"rl", "alpha2", &w.alpha2},
      {"rl", "alpha3", &w.alpha3},
      {"rl", "beta_kl", &w.beta_kl},
      {"rl", "beta1", &w.beta1},
      {"rl", "beta2", &w.beta2},
      {"rl", "beta3", &w.beta3},
      {"rl", "pretrain_coef", &w.pretrain_coef},
      {"rl", "gamma1", &w.gamma1},
      {"rl", "gamma2", &w.gamma2},
      {"rl", "gamma3", &w.gamma3},
      {"rl", "use_clipping", &w.use_clipping},
      {"rl", "kl_estimator", &w.kl_estimator},
      {"rl", "ratio_reference", &w.ratio_reference},
      {"rl", "rollout_temperature", &rl.rollout_params.temperature},
      {"rl", "rollout_max_tokens", &rl.rollout_params.max_tokens},
      {"rl", "whiten_advantages", &rl.whiten_advantages},
      {"rl", "normalize_rewards", &rl.normalize_rewards},
      {"rl", "pretrain_per_minibatch", &rl.pretrain_per_minibatch},
      {"rl", "pretrain_fraction", &c.rl.pretrain_fraction},
      {"rl", "checkpoint_every", &c.rl.checkpoint_every},

      {"eval", "rewriter_temperature", &c.eval.rewriter_params.temperature},
      {"eval", "rewriter_max_tokens", &c.eval.rewriter_params.max_tokens},
      {"eval", "target_temperature", &c.eval.target_params.temperature},
      {"eval", "target_max_tokens", &c.eval.target_params.max_tokens},
      {"eval", "kl_samples", &c.eval.kl_samples},
      {"eval", "top_k_words", &c.eval.top_k_words},
  };
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
T parse_integer(const std::string& text, const std::string& where) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ConfigError(where + ": expected an integer, got '" + text + "'");
  }
  return value;
}

double parse_double(const std::string& text, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size() || !std::isfinite(v)) {
    throw ConfigError(where + ": expected a finite number, got '" + text + "'");
  }
  return v;
}

struct Assign {
  const std::string& text;
  const std::string& where;
  void operator()(double* p) const { *p = parse_double(text, where); }
  void operator()(std::size_t* p) const { *p = parse_integer<std::size_t>(text, where); }
  void operator()(int* p) const { *p = parse_integer<int>(text, where); }
  void operator()(bool* p) const {
    if (text == "true") *p = true;
    else if (text == "false") *p = false;
    else throw ConfigError(where + ": expected true or false, got '" + text + "'");
  }
  void operator()(std::string* p) const { *p = text; }
  void operator()(KlEstimator* p) const {
    if (text == "exact") *p = KlEstimator::exact_per_state;
    else if (text == "sampled") *p = KlEstimator::sampled_log_ratio;
    else throw ConfigError(where + ": expected exact or sampled, got '" + text + "'");
  }
  void operator()(RatioReference* p) const {
    if (text == "behavior") *p = RatioReference::behavior;
    else if (text == "frozen_sft") *p = RatioReference::frozen_sft;
    else throw ConfigError(where + ": expected behavior or frozen_sft, got '" + text + "'");
  }
};

struct Render {
  std::string operator()(double* p) const { return format_double(*p); }
  std::string operator()(std::size_t* p) const { return std::to_string(*p); }
  std::string operator()(int* p) const { return std::to_string(*p); }
  std::string operator()(bool* p) const { return *p ? "true" : "false"; }
  std::string operator()(std::string* p) const { return *p; }
  std::string operator()(KlEstimator* p) const { return *p == KlEstimator::exact_per_state ? "exact" : "sampled"; }
  std::string operator()(RatioReference* p) const {
    return *p == RatioReference::behavior ? "behavior" : "frozen_sft";
  }
};

}  // namespace

PipelineConfig::PipelineConfig() {
  rl.trainer.weights.lambda_pos = 2.0;
  rl.trainer.weights.lambda_neg = 1.8;
}

void PipelineConfig::validate() const {
  if (paths.run_dir.empty()) throw ConfigError("paths.run_dir must be set");
  const double total = warmup.train_fraction + warmup.validation_fraction + warmup.test_fraction;
  for (double f : {warmup.train_fraction, warmup.validation_fraction, warmup.test_fraction}) {
    if (!(f >= 0.0)) throw ConfigError("warmup split fractions must be >= 0");
  }
  if (std::fabs(total - 1.0) > 1e-9) throw ConfigError("warmup split fractions must sum to 1");
  if (warmup.builder.num_candidates == 0) throw ConfigError("warmup.num_candidates must be positive");
  if (endpoints.max_attempts < 1) throw ConfigError("endpoints.max_attempts must be >= 1");
  if (endpoints.max_in_flight == 0) throw ConfigError("endpoints.max_in_flight must be positive");
  if (!(endpoints.timeout_seconds > 0.0)) throw ConfigError("endpoints.timeout_seconds must be > 0");
  if (endpoints.target == "hidden_template" && endpoints.target_template.empty()) {
    throw ConfigError("endpoints.target_template is required for the hidden_template target");
  }
  try {
    warmup.builder.oracle_params.validate();
    warmup.builder.target_params.validate();
    eval.rewriter_params.validate();
    eval.target_params.validate();
    sft.model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  sft.trainer.validate();
  reward.trainer.validate();
  rl.trainer.validate();
  if (!(rl.pretrain_fraction >= 0.0 && rl.pretrain_fraction <= 1.0)) {
    throw ConfigError("rl.pretrain_fraction must be in [0, 1]");
  }
  if (eval.top_k_words == 0) throw ConfigError("eval.top_k_words must be positive");
}

void PipelineConfig::set_seed(std::uint64_t seed) {
  seeds.warmup = seeds.sft = seeds.reward = seeds.rl = seeds.eval = seed;
}

PipelineConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  PipelineConfig config;
  std::map<std::pair<std::string, std::string>, FieldRef> known;
  for (auto& f : fields(config)) known.emplace(std::pair{f.section, f.key}, f.ref);
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("config: key '" + section + "' must appear inside a [section]");
    }
    for (const auto& [key, value] : body) {
      auto it = known.find({section, key});
      const std::string where = section + "." + key;
      if (it == known.end()) throw ConfigError("config: unknown key " + where);
      std::visit(Assign{value.data(), where}, it->second);
    }
  }
  config.validate();
  return config;
}

PipelineConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_config(read_file(path));
}

std::string serialize_config(const PipelineConfig& config) {
  PipelineConfig copy = config;
  std::ostringstream os;
  std::string section;
  for (auto& f : fields(copy)) {
    if (f.section != section) {
      if (!section.empty()) os << '\n';
      section = f.section;
      os << '[' << section << "]\n";
    }
    os << f.key << " = " << std::visit(Render{}, f.ref) << '\n';
  }
  return os.str();
}

std::string config_hash(const PipelineConfig& config) { return sha256_hex(serialize_config(config)); }

}  // namespace mapo

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mapo/vocabulary.hpp"

namespace mapo {

struct ModelConfig {
  std::size_t vocab_size = 64;
  std::size_t d_model = 32;
  std::size_t n_layer = 2;
  std::size_t n_head = 4;
  std::size_t d_ff = 128;
  std::size_t context = 64;

  /// Throws std::invalid_argument outside the toy envelope
  /// (vocab <= 256, d_model <= 64, context <= 64).
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

/// Offsets of every tensor inside the flat parameter vector.
struct ParameterLayout {
  struct Block {
    std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w_1, b_1, w_2, b_2;
  };
  std::size_t wte = 0, wpe = 0;
  std::vector<Block> blocks;
  std::size_t lnf_g = 0, lnf_b = 0, w_out = 0, b_out = 0, head_w = 0, head_b = 0;
  std::size_t total = 0;

  explicit ParameterLayout(const ModelConfig& cfg);
  ParameterLayout() = default;
};

/// Intermediate activations of one forward pass, kept for backward.
struct ForwardCache {
  struct Block {
    std::vector<double> x_in, ln1, ln1_mean, ln1_rstd, qkv, att, att_out;
    std::vector<double> x_mid, ln2, ln2_mean, ln2_rstd, h_pre, h_act;
  };
  std::size_t length = 0;
  std::vector<TokenId> tokens;
  std::vector<Block> blocks;
  std::vector<double> x_final, lnf, lnf_mean, lnf_rstd;
  /// length x vocab_size; rows before `logits_from` are left zero.
  std::vector<double> logits;
  std::size_t logits_from = 0;
  /// Scalar-head output per position.
  std::vector<double> scalars;
};

/// Pre-LayerNorm decoder-only transformer with two output heads: a
/// vocabulary projection and a scalar projection used by value and reward
/// models. Parameters live in one flat vector so cloning, checkpointing and
/// optimizer steps are plain vector operations.
class Transformer {
 public:
  Transformer() = default;
  Transformer(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const ParameterLayout& layout() const { return layout_; }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  std::size_t num_parameters() const { return params_.size(); }

  /// True for matrices subject to weight decay.
  const std::vector<bool>& decay_mask() const { return decay_mask_; }

  /// Runs the network on `tokens`; logits are computed for rows
  /// [logits_from, length). Throws ContextOverflowError when the input is
  /// longer than the context window.
  ForwardCache forward(std::span<const TokenId> tokens, std::size_t logits_from = 0) const;

  /// Accumulates parameter gradients into `grads`. `dlogits` is either empty
  /// or length x vocab_size; `dscalars` is either empty or one per position.
  void backward(const ForwardCache& cache, std::span<const double> dlogits,
                std::span<const double> dscalars, std::span<double> grads) const;

  void zero_scalar_head();
  void zero_output_head();

 private:
  ModelConfig config_;
  ParameterLayout layout_;
  std::vector<double> params_;
  std::vector<bool> decay_mask_;
};

}  // namespace mapo

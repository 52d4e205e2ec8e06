#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unlearn/autodiff.hpp"
#include "unlearn/token_logprobs.hpp"
#include "unlearn/tokens.hpp"

namespace unlearn {

struct ModelConfig {
  std::size_t vocab_size = kByteVocabSize;
  std::size_t context_length = 128;
  std::size_t embed_dim = 64;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t mlp_ratio = 4;
  std::uint64_t rng_seed = 1;

  // Throws ConfigError naming the offending field.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// True when parameter names and shapes agree; the init seed is ignored.
bool same_architecture(const ModelConfig& a, const ModelConfig& b);

struct NamedParameter {
  std::string name;
  Var value;
};

// Teacher-forced scores for one response.
struct ScoredResponse {
  Var token_logprobs;    // [|y|]
  Var log_distribution;  // [|y|, V], full log-softmax rows at the scored positions
};

// Decoder-only transformer: learned token and position embeddings, pre-norm
// blocks (causal multi-head attention + GELU MLP), final norm, output projection.
class PolicyModel {
 public:
  explicit PolicyModel(const ModelConfig& config);

  PolicyModel(PolicyModel&&) noexcept = default;
  PolicyModel& operator=(PolicyModel&&) noexcept = default;
  PolicyModel(const PolicyModel&) = delete;
  PolicyModel& operator=(const PolicyModel&) = delete;

  // Deep copy; parameters keep their requires-grad flags.
  PolicyModel clone() const;

  const ModelConfig& config() const noexcept { return config_; }
  const std::vector<NamedParameter>& parameters() const noexcept { return params_; }
  std::vector<NamedParameter>& parameters() noexcept { return params_; }
  const Var& parameter(const std::string& name) const;
  std::size_t parameter_count() const;
  bool frozen() const noexcept { return frozen_; }

  // Logits [T, V] for every position of `tokens`.
  Var logits(std::span<const TokenId> tokens) const;
  // Logits [1, V] for the last position only.
  Var last_logits(std::span<const TokenId> tokens) const;

  // Scores `response` conditioned on `prompt` (teacher forcing). The prompt must
  // be non-empty when the response is, and |prompt| + |response| <= context_length.
  ScoredResponse score(std::span<const TokenId> prompt, std::span<const TokenId> response) const;

  void zero_grad();
  // Copies parameter values from `other` (same config required).
  void copy_values_from(const PolicyModel& other);

 private:
  friend PolicyModel snapshot_frozen(const PolicyModel& model);

  struct CloneTag {};
  PolicyModel(const PolicyModel& other, CloneTag);

  Var hidden_states(std::span<const TokenId> tokens) const;
  Var head(const Var& hidden) const;
  void check_tokens(std::span<const TokenId> tokens) const;

  ModelConfig config_;
  std::vector<NamedParameter> params_;
  bool frozen_ = false;

  struct Layer {
    Var ln1_gain, ln1_bias, qkv_w, qkv_b, proj_w, proj_b;
    Var ln2_gain, ln2_bias, fc_w, fc_b, out_w, out_b;
  };
  Var tok_emb_, pos_emb_, final_gain_, final_bias_, head_w_, head_b_;
  std::vector<Layer> layers_;

  void bind_handles();
};

// Deep copy whose parameters never receive gradients.
PolicyModel snapshot_frozen(const PolicyModel& model);

// Response-token log-probabilities for a batch, without recording a graph.
TokenLogProbs forward_logprobs(const PolicyModel& model, std::span<const TokenSeq> prompts,
                               std::span<const TokenSeq> responses);

// Greedy continuation of `prompt`: argmax at every step, ties to the lowest id.
// Stops after `max_new` tokens or when `stop` is produced (not included).
TokenSeq greedy_decode(const PolicyModel& model, std::span<const TokenId> prompt,
                       std::size_t max_new, std::optional<TokenId> stop = kEos);

}  // namespace unlearn

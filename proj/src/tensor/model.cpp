#include "unlearn/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "unlearn/error.hpp"
#include "unlearn/ops.hpp"

namespace unlearn {

bool same_architecture(const ModelConfig& a, const ModelConfig& b) {
  ModelConfig x = a;
  x.rng_seed = b.rng_seed;
  return x == b;
}

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("model.vocab_size", "vocab_size must be >= 2");
  if (context_length < 2) {
    throw ConfigError("model.context_length", "context_length must be >= 2");
  }
  if (embed_dim == 0) throw ConfigError("model.embed_dim", "embed_dim must be positive");
  if (num_heads == 0 || embed_dim % num_heads != 0) {
    throw ConfigError("model.num_heads", "embed_dim must be divisible by num_heads");
  }
  if (num_layers == 0) throw ConfigError("model.num_layers", "num_layers must be positive");
  if (mlp_ratio == 0) throw ConfigError("model.mlp_ratio", "mlp_ratio must be positive");
}

void TokenLogProbs::validate() const {
  if (has_reference() && reference.size() != target.size()) {
    fail(ErrorKind::kAlignment, "reference has " + std::to_string(reference.size()) +
                                    " samples, target has " + std::to_string(target.size()));
  }
  for (std::size_t s = 0; s < target.size(); ++s) {
    if (has_reference() && reference[s].size() != target[s].size()) {
      fail(ErrorKind::kAlignment, "reference sample " + std::to_string(s) + " is misaligned");
    }
    for (double v : target[s]) {
      if (!std::isfinite(v) || v > 0.0) {
        fail(ErrorKind::kDomain, "log-probability must be finite and <= 0");
      }
    }
    if (has_reference()) {
      for (double v : reference[s]) {
        if (!std::isfinite(v) || v > 0.0) {
          fail(ErrorKind::kDomain, "reference log-probability must be finite and <= 0");
        }
      }
    }
  }
}

PolicyModel::PolicyModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(config_.rng_seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  const std::size_t c = config_.embed_dim;
  const std::size_t v = config_.vocab_size;
  const std::size_t hidden = c * config_.mlp_ratio;
  auto weight = [&](std::string name, Shape shape) {
    Tensor t(std::move(shape));
    for (double& x : t.values()) x = normal(rng);
    params_.push_back({std::move(name), Var::leaf(std::move(t), true)});
  };
  auto constant = [&](std::string name, std::size_t n, double value) {
    params_.push_back({std::move(name), Var::leaf(Tensor(Shape{n}, value), true)});
  };
  weight("token_embedding", {v, c});
  weight("position_embedding", {config_.context_length, c});
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    constant(p + "ln1.gain", c, 1.0);
    constant(p + "ln1.bias", c, 0.0);
    weight(p + "attn.qkv.weight", {c, 3 * c});
    constant(p + "attn.qkv.bias", 3 * c, 0.0);
    weight(p + "attn.proj.weight", {c, c});
    constant(p + "attn.proj.bias", c, 0.0);
    constant(p + "ln2.gain", c, 1.0);
    constant(p + "ln2.bias", c, 0.0);
    weight(p + "mlp.fc.weight", {c, hidden});
    constant(p + "mlp.fc.bias", hidden, 0.0);
    weight(p + "mlp.proj.weight", {hidden, c});
    constant(p + "mlp.proj.bias", c, 0.0);
  }
  constant("final_norm.gain", c, 1.0);
  constant("final_norm.bias", c, 0.0);
  weight("output.weight", {c, v});
  constant("output.bias", v, 0.0);
  bind_handles();
}

void PolicyModel::bind_handles() {
  std::size_t i = 0;
  auto next = [&]() -> Var { return params_.at(i++).value; };
  tok_emb_ = next();
  pos_emb_ = next();
  layers_.clear();
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    Layer layer;
    layer.ln1_gain = next();
    layer.ln1_bias = next();
    layer.qkv_w = next();
    layer.qkv_b = next();
    layer.proj_w = next();
    layer.proj_b = next();
    layer.ln2_gain = next();
    layer.ln2_bias = next();
    layer.fc_w = next();
    layer.fc_b = next();
    layer.out_w = next();
    layer.out_b = next();
    layers_.push_back(layer);
  }
  final_gain_ = next();
  final_bias_ = next();
  head_w_ = next();
  head_b_ = next();
}

PolicyModel::PolicyModel(const PolicyModel& other, CloneTag)
    : config_(other.config_), frozen_(other.frozen_) {
  params_.reserve(other.params_.size());
  for (const auto& p : other.params_) {
    params_.push_back({p.name, Var::leaf(p.value.value(), p.value.requires_grad())});
  }
  bind_handles();
}

PolicyModel PolicyModel::clone() const { return PolicyModel(*this, CloneTag{}); }

const Var& PolicyModel::parameter(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.value;
  }
  fail(ErrorKind::kInput, "no parameter named '" + name + "'");
}

std::size_t PolicyModel::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.value.size();
  return total;
}

void PolicyModel::check_tokens(std::span<const TokenId> tokens) const {
  if (tokens.size() > config_.context_length) {
    fail(ErrorKind::kLength, "sequence of " + std::to_string(tokens.size()) +
                                 " tokens exceeds context_length " +
                                 std::to_string(config_.context_length));
  }
  for (TokenId t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= config_.vocab_size) {
      fail(ErrorKind::kVocabulary, "token id " + std::to_string(t) +
                                       " outside vocabulary of size " +
                                       std::to_string(config_.vocab_size));
    }
  }
}

Var PolicyModel::hidden_states(std::span<const TokenId> tokens) const {
  check_tokens(tokens);
  Var x = ops::add_rows(ops::embedding(tok_emb_, tokens), pos_emb_, tokens.size());
  for (const Layer& layer : layers_) {
    Var h = ops::layer_norm(x, layer.ln1_gain, layer.ln1_bias);
    h = ops::causal_self_attention(ops::linear(h, layer.qkv_w, layer.qkv_b), config_.num_heads);
    x = ops::add(x, ops::linear(h, layer.proj_w, layer.proj_b));
    h = ops::layer_norm(x, layer.ln2_gain, layer.ln2_bias);
    h = ops::gelu(ops::linear(h, layer.fc_w, layer.fc_b));
    x = ops::add(x, ops::linear(h, layer.out_w, layer.out_b));
  }
  return x;
}

Var PolicyModel::head(const Var& hidden) const {
  return ops::linear(ops::layer_norm(hidden, final_gain_, final_bias_), head_w_, head_b_);
}

Var PolicyModel::logits(std::span<const TokenId> tokens) const {
  if (tokens.empty()) fail(ErrorKind::kInput, "logits of an empty sequence");
  return head(hidden_states(tokens));
}

Var PolicyModel::last_logits(std::span<const TokenId> tokens) const {
  if (tokens.empty()) fail(ErrorKind::kInput, "logits of an empty sequence");
  Var hidden = hidden_states(tokens);
  return head(ops::slice_rows(hidden, tokens.size() - 1, tokens.size()));
}

ScoredResponse PolicyModel::score(std::span<const TokenId> prompt,
                                  std::span<const TokenId> response) const {
  const std::size_t v = config_.vocab_size;
  if (response.empty()) {
    return {Var::constant(Tensor(Shape{0})), Var::constant(Tensor(Shape{0, v}))};
  }
  if (prompt.empty()) {
    fail(ErrorKind::kInput, "scoring needs at least one prompt token (e.g. BOS)");
  }
  const std::size_t total = prompt.size() + response.size();
  if (total > config_.context_length) {
    fail(ErrorKind::kLength, "prompt+response of " + std::to_string(total) +
                                 " tokens exceeds context_length " +
                                 std::to_string(config_.context_length));
  }
  check_tokens(response);
  TokenSeq input(prompt.begin(), prompt.end());
  input.insert(input.end(), response.begin(), response.end() - 1);
  Var hidden = hidden_states(input);
  // Row p predicts input[p + 1]; response token j sits at row |x| - 1 + j.
  Var rows = ops::slice_rows(hidden, prompt.size() - 1, input.size());
  Var log_dist = ops::log_softmax(head(rows));
  Var picked = ops::pick(log_dist, response);
  return {picked, log_dist};
}

void PolicyModel::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

void PolicyModel::copy_values_from(const PolicyModel& other) {
  if (!same_architecture(other.config_, config_)) {
    fail(ErrorKind::kCompatibility, "copy_values_from: model architectures differ");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    params_[i].value.mutable_value() = other.params_[i].value.value();
  }
}

PolicyModel snapshot_frozen(const PolicyModel& model) {
  PolicyModel copy = model.clone();
  for (auto& p : copy.params_) p.value.set_requires_grad(false);
  copy.frozen_ = true;
  return copy;
}

TokenLogProbs forward_logprobs(const PolicyModel& model, std::span<const TokenSeq> prompts,
                               std::span<const TokenSeq> responses) {
  if (prompts.size() != responses.size()) {
    fail(ErrorKind::kAlignment, "forward_logprobs: " + std::to_string(prompts.size()) +
                                    " prompts vs " + std::to_string(responses.size()) +
                                    " responses");
  }
  NoGradGuard guard;
  TokenLogProbs out;
  out.target.reserve(prompts.size());
  for (std::size_t s = 0; s < prompts.size(); ++s) {
    const auto scored = model.score(prompts[s], responses[s]);
    const auto values = scored.token_logprobs.value().values();
    out.target.emplace_back(values.begin(), values.end());
  }
  return out;
}

TokenSeq greedy_decode(const PolicyModel& model, std::span<const TokenId> prompt,
                       std::size_t max_new, std::optional<TokenId> stop) {
  if (prompt.empty()) fail(ErrorKind::kInput, "greedy_decode needs a non-empty prompt");
  const std::size_t ctx = model.config().context_length;
  if (prompt.size() > ctx) {
    fail(ErrorKind::kLength, "prompt of " + std::to_string(prompt.size()) +
                                 " tokens exceeds context_length " + std::to_string(ctx));
  }
  NoGradGuard guard;
  TokenSeq tokens(prompt.begin(), prompt.end());
  TokenSeq generated;
  for (std::size_t step = 0; step < max_new; ++step) {
    const std::size_t start = tokens.size() > ctx ? tokens.size() - ctx : 0;
    std::span<const TokenId> window(tokens.data() + start, tokens.size() - start);
    Var logits = model.last_logits(window);
    const std::size_t v = model.config().vocab_size;
    const double* last = logits.value().data();
    const auto best = static_cast<TokenId>(std::max_element(last, last + v) - last);
    if (stop && best == *stop) break;
    generated.push_back(best);
    tokens.push_back(best);
  }
  return generated;
}

}  // namespace unlearn

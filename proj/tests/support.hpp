#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "unlearn/error.hpp"
#include "unlearn/model.hpp"
#include "unlearn/tokens.hpp"

namespace unlearn::testing {

// Small model for fast gradient and training tests.
inline ModelConfig tiny_config(std::uint64_t seed = 3) {
  ModelConfig c;
  c.context_length = 24;
  c.embed_dim = 16;
  c.num_layers = 2;
  c.num_heads = 2;
  c.mlp_ratio = 2;
  c.rng_seed = seed;
  return c;
}

inline TokenSeq random_tokens(std::mt19937_64& rng, std::size_t n, TokenId vocab = 256) {
  TokenSeq out(n);
  for (auto& t : out) t = static_cast<TokenId>(rng() % static_cast<std::uint64_t>(vocab));
  return out;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / scale;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("unlearn_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Zeroes every parameter so all logits are equal.
inline void make_uniform(PolicyModel& model) {
  for (auto& p : model.parameters()) p.value.mutable_value().fill(0.0);
}

// Kind of the unlearn::Error thrown by `fn`, or nullopt if it returns normally.
inline std::optional<ErrorKind> error_kind(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

}  // namespace unlearn::testing

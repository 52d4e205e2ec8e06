#pragma once

#include <cstddef>
#include <vector>

namespace unlearn {

// Per-sample response-token log-probabilities log z_i = log pi(y_i | x, y_<i),
// with optional index-aligned log-probabilities under a frozen reference.
struct TokenLogProbs {
  std::vector<std::vector<double>> target;
  std::vector<std::vector<double>> reference;  // empty when absent

  std::size_t num_samples() const noexcept { return target.size(); }
  bool has_reference() const noexcept { return !reference.empty(); }
  std::size_t length(std::size_t sample) const { return target.at(sample).size(); }

  // Checks log-probs are <= 0 and finite, and reference alignment.
  void validate() const;
};

}  // namespace unlearn

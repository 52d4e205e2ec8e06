#pragma once

#include <optional>
#include <span>
#include <vector>

#include "unlearn/model.hpp"

namespace unlearn {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::optional<double> clip_norm;  // global L2 cap, off when empty
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;
};

// Global L2 norm over all parameter gradients; parameters without a gradient count as zero.
double global_grad_norm(std::span<const NamedParameter> params);

// One bias-corrected Adam update from the parameters' accumulated gradients.
// Returns the gradient norm measured before clipping. A non-finite gradient throws
// NumericError naming the parameter and leaves every parameter untouched.
double adam_step(std::span<NamedParameter> params, AdamState& state, const AdamOptions& options);

}  // namespace unlearn

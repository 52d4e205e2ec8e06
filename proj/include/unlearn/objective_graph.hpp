#pragma once

#include <span>
#include <vector>

#include "unlearn/autodiff.hpp"
#include "unlearn/objectives.hpp"

// Differentiable counterparts of the objectives, built over per-sample token
// log-prob Vars so that gradients reach the policy parameters.
namespace unlearn {

using Reference = std::vector<std::vector<double>>;

// Plain values of the token log-prob Vars, paired with `reference`.
TokenLogProbs token_values(std::span<const Var> token_lp, const Reference& reference = {});

// Batch-mean loss for every single-batch family. The reverse reference 1 - z used by
// CaTNiP and CaTNiP-noTok carries no gradient, and clamping passes gradients straight through.
Var graph_loss(const ObjectiveConfig& cfg, std::span<const Var> token_lp,
               const Reference& reference = {});

Var graph_dpo(std::span<const Var> win, std::span<const Var> lose, const Reference& ref_win,
              const Reference& ref_lose, double beta);

// Mean over rows of KL(target || ref); rows are log-distributions.
Var graph_kl_retain(const Var& logp_target, const Tensor& logp_ref);

}  // namespace unlearn

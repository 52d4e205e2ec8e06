#pragma once

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "unlearn/tensor.hpp"
#include "unlearn/token_logprobs.hpp"

namespace unlearn {

enum class Family { kGA, kKLRetain, kDPO, kNPO, kSimNPO, kCatnip, kCatnipRef, kCatnipNoTok };

std::string_view to_string(Family family);
// Throws ConfigError("objective.family") for unknown names.
Family parse_family(std::string_view name);
std::span<const Family> all_families();

// True for families whose per-sample loss is a mean over per-token terms.
bool is_tokenized(Family family);
// True for families that need reference log-probs from a frozen model.
bool needs_reference(Family family);

struct ObjectiveConfig {
  Family family = Family::kCatnip;
  double beta = 1.0;
  double gamma = 0.0;
  double retain_lambda = 0.0;
  double clamp_eps = 1e-7;
  std::size_t token_stride = 1;

  void validate() const;
  bool operator==(const ObjectiveConfig&) const = default;
};

struct LossBreakdown {
  Family family = Family::kGA;
  // Tokenized families: one entry per response token. Sequence families: one per sample.
  std::vector<std::vector<double>> margins;
  std::vector<std::vector<double>> weights;
  std::vector<double> sample_losses;
  double mean_loss = 0.0;

  // Mean over every recorded weight.
  double mean_weight() const;
};

double sigmoid(double x);
double softplus(double x);

// Indices 0, k, 2k, ... below `length`.
std::vector<std::size_t> stride_positions(std::size_t length, std::size_t stride);

// Token weight beta * z^beta / (z^beta + (1-z)^beta); domain error outside (0, 1).
double token_weight(double beta, double z);

LossBreakdown loss_ga(const TokenLogProbs& lp);

// Rows of `logp_target` and `logp_ref` are log-distributions over the vocabulary.
double loss_kl_retain(const Tensor& logp_target, const Tensor& logp_ref);

// Win and lose batches are contrastive pairs, each with its own reference.
LossBreakdown loss_dpo(const TokenLogProbs& win, const TokenLogProbs& lose, double beta);

LossBreakdown loss_npo(const TokenLogProbs& lp, double beta);
LossBreakdown loss_simnpo(const TokenLogProbs& lp, double beta, double gamma);
LossBreakdown loss_catnip(const TokenLogProbs& lp, double beta, std::size_t stride,
                          double clamp_eps = 1e-7);
LossBreakdown loss_catnip_ref(const TokenLogProbs& lp, double beta, std::size_t stride,
                              double clamp_eps = 1e-7);
LossBreakdown loss_catnip_notok(const TokenLogProbs& lp, double beta, double clamp_eps = 1e-7);

// Dispatches on cfg.family for the single-batch families (not DPO or KL-retain).
LossBreakdown compute_loss(const ObjectiveConfig& cfg, const TokenLogProbs& lp);

std::vector<std::pair<double, double>> gradient_weight_curve(double beta,
                                                             std::span<const double> grid);
// Interior grid k/(n+1), k = 1..n.
std::vector<double> uniform_open_grid(std::size_t n);
// CSV with header z,w,beta; one block of rows per beta.
std::string weight_curve_csv(std::span<const double> betas, std::span<const double> grid);

double policy_rank_probability(double z_target, double z_ref, double beta);

}  // namespace unlearn

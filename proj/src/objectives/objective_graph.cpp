#include "unlearn/objective_graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "unlearn/error.hpp"
#include "unlearn/ops.hpp"

namespace unlearn {
namespace {

double row_sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

Var batch_mean(const std::vector<Var>& per_sample) { return ops::mean(ops::concat(per_sample)); }

Var clamped(const Var& lp, double eps) {
  return ops::clamp_straight_through(lp, std::log(eps), std::log1p(-eps));
}

// log(1 - z) from clamped log z, as a constant.
Var reverse_reference(const Var& clamped_lp) {
  Tensor rev = clamped_lp.value();
  for (double& v : rev.values()) v = std::log1p(-std::exp(v));
  return Var::constant(std::move(rev));
}

void check_reference(const Reference& ref, std::size_t n, std::string_view what) {
  if (ref.empty()) {
    throw ConfigError("train.reference", fmt::format("{} requires reference log-probs", what));
  }
  if (ref.size() != n) {
    fail(ErrorKind::kAlignment,
         fmt::format("{}: {} reference rows for {} samples", what, ref.size(), n));
  }
}

Var reference_tensor(const std::vector<double>& row, std::size_t n, double eps) {
  if (row.size() != n) fail(ErrorKind::kAlignment, "reference row length mismatch");
  Tensor t = Tensor::vector(row);
  const double lo = std::log(eps);
  const double hi = std::log1p(-eps);
  for (double& v : t.values()) v = std::clamp(v, lo, hi);
  return Var::constant(std::move(t));
}

}  // namespace

TokenLogProbs token_values(std::span<const Var> token_lp, const Reference& reference) {
  TokenLogProbs lp;
  for (const Var& v : token_lp) {
    const auto vals = v.value().values();
    lp.target.emplace_back(vals.begin(), vals.end());
  }
  lp.reference = reference;
  return lp;
}

Var graph_loss(const ObjectiveConfig& cfg, std::span<const Var> token_lp,
               const Reference& reference) {
  cfg.validate();
  if (token_lp.empty()) fail(ErrorKind::kInput, "empty batch");
  const double beta = cfg.beta;
  if (needs_reference(cfg.family)) {
    check_reference(reference, token_lp.size(), to_string(cfg.family));
  }
  std::vector<Var> losses;
  losses.reserve(token_lp.size());
  for (std::size_t s = 0; s < token_lp.size(); ++s) {
    const Var& lp = token_lp[s];
    const std::size_t n = lp.size();
    if (n == 0 && cfg.family != Family::kGA) {
      fail(ErrorKind::kInput, fmt::format("sample {}: empty response leaves no tokens to score", s));
    }
    switch (cfg.family) {
      case Family::kGA:
        losses.push_back(n == 0 ? Var::constant(Tensor::scalar(0.0)) : ops::sum(lp));
        break;
      case Family::kNPO: {
        const Var r = ops::add_scalar(ops::sum(lp), -row_sum(reference[s]));
        losses.push_back(ops::scale(ops::softplus(ops::scale(r, beta)), 2.0 / beta));
        break;
      }
      case Family::kSimNPO: {
        const Var a = ops::scale(ops::sum(lp), beta / static_cast<double>(n));
        losses.push_back(
            ops::scale(ops::softplus(ops::add_scalar(a, cfg.gamma)), 2.0 / beta));
        break;
      }
      case Family::kCatnip:
      case Family::kCatnipRef: {
        const Var lz = clamped(lp, cfg.clamp_eps);
        const Var base = cfg.family == Family::kCatnip
                             ? reverse_reference(lz)
                             : reference_tensor(reference[s], n, cfg.clamp_eps);
        const Var u = ops::scale(ops::sub(lz, base), beta);
        const auto picks = stride_positions(n, cfg.token_stride);
        losses.push_back(ops::mean(ops::softplus(ops::gather(u, picks))));
        break;
      }
      case Family::kCatnipNoTok: {
        const Var lz = clamped(lp, cfg.clamp_eps);
        const Var margin = ops::sum(ops::sub(lz, reverse_reference(lz)));
        losses.push_back(ops::softplus(ops::scale(margin, beta / static_cast<double>(n))));
        break;
      }
      case Family::kDPO:
      case Family::kKLRetain:
        throw ConfigError("objective.family",
                          fmt::format("{} is not a single-batch objective", to_string(cfg.family)));
    }
  }
  return batch_mean(losses);
}

Var graph_dpo(std::span<const Var> win, std::span<const Var> lose, const Reference& ref_win,
              const Reference& ref_lose, double beta) {
  if (!(beta > 0.0)) throw ConfigError("objective.beta", "beta must be positive");
  if (win.empty()) fail(ErrorKind::kInput, "empty batch");
  if (win.size() != lose.size()) {
    fail(ErrorKind::kAlignment,
         fmt::format("DPO pair batches differ in size: {} vs {}", win.size(), lose.size()));
  }
  check_reference(ref_win, win.size(), "DPO");
  check_reference(ref_lose, lose.size(), "DPO");
  std::vector<Var> losses;
  for (std::size_t s = 0; s < win.size(); ++s) {
    const double ref_margin = row_sum(ref_win[s]) - row_sum(ref_lose[s]);
    const Var m = ops::add_scalar(ops::sub(ops::sum(win[s]), ops::sum(lose[s])), -ref_margin);
    losses.push_back(ops::scale(ops::softplus(ops::scale(m, -beta)), 1.0 / beta));
  }
  return batch_mean(losses);
}

Var graph_kl_retain(const Var& logp_target, const Tensor& logp_ref) {
  if (logp_target.shape() != logp_ref.shape() || logp_ref.rank() != 2) {
    fail(ErrorKind::kAlignment,
         fmt::format("KL inputs must be matching [positions, vocab] tensors, got {} and {}",
                     shape_string(logp_target.shape()), shape_string(logp_ref.shape())));
  }
  const std::size_t rows = logp_ref.dim(0);
  if (rows == 0) return Var::constant(Tensor::scalar(0.0));
  const Var diff = ops::sub(logp_target, Var::constant(logp_ref));
  const Var terms = ops::mul(ops::exp(logp_target), diff);
  return ops::scale(ops::sum(terms), 1.0 / static_cast<double>(rows));
}

}  // namespace unlearn

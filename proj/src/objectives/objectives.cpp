#include "unlearn/objectives.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "unlearn/error.hpp"

namespace unlearn {
namespace {

constexpr std::array<Family, 8> kFamilies = {
    Family::kGA,     Family::kKLRetain, Family::kDPO,       Family::kNPO,
    Family::kSimNPO, Family::kCatnip,   Family::kCatnipRef, Family::kCatnipNoTok};

void require_samples(const TokenLogProbs& lp, std::string_view what) {
  if (lp.num_samples() == 0) fail(ErrorKind::kInput, std::string(what) + ": empty batch");
  lp.validate();
}

void require_reference(const TokenLogProbs& lp, std::string_view what) {
  if (!lp.has_reference()) {
    throw ConfigError("train.reference", std::string(what) + " requires reference log-probs");
  }
}

void require_beta(double beta) {
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw ConfigError("objective.beta", "beta must be a positive finite number");
  }
}

void finish(LossBreakdown& out) {
  out.mean_loss = std::accumulate(out.sample_losses.begin(), out.sample_losses.end(), 0.0) /
                  static_cast<double>(out.sample_losses.size());
}

double sequence_sum(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0);
}

// Clamped log z and log(1 - z) for one token.
std::pair<double, double> clamped_logs(double log_z, double eps) {
  const double lo = std::log(eps);
  const double hi = std::log1p(-eps);
  const double lz = std::clamp(log_z, lo, hi);
  return {lz, std::log1p(-std::exp(lz))};
}

// Shared plumbing for the tokenized families; `margin` maps (sample, token) to u_i.
template <typename Margin>
LossBreakdown tokenized_loss(Family family, const TokenLogProbs& lp, double beta,
                             std::size_t stride, Margin margin) {
  LossBreakdown out;
  out.family = family;
  for (std::size_t s = 0; s < lp.num_samples(); ++s) {
    const std::size_t n = lp.length(s);
    const auto picks = stride_positions(n, stride);
    if (picks.empty()) {
      fail(ErrorKind::kInput, fmt::format("sample {}: empty response leaves no tokens to score", s));
    }
    std::vector<double> u(n), w(n);
    for (std::size_t i = 0; i < n; ++i) {
      u[i] = margin(s, i);
      w[i] = beta * sigmoid(u[i]);
    }
    double total = 0.0;
    for (std::size_t i : picks) total += softplus(u[i]);
    out.sample_losses.push_back(total / static_cast<double>(picks.size()));
    out.margins.push_back(std::move(u));
    out.weights.push_back(std::move(w));
  }
  finish(out);
  return out;
}

}  // namespace

std::string_view to_string(Family family) {
  switch (family) {
    case Family::kGA: return "GA";
    case Family::kKLRetain: return "KL-retain";
    case Family::kDPO: return "DPO";
    case Family::kNPO: return "NPO";
    case Family::kSimNPO: return "SimNPO";
    case Family::kCatnip: return "CaTNiP";
    case Family::kCatnipRef: return "CaTNiP-ref";
    case Family::kCatnipNoTok: return "CaTNiP-noTok";
  }
  return "GA";
}

Family parse_family(std::string_view name) {
  for (Family f : kFamilies) {
    if (to_string(f) == name) return f;
  }
  throw ConfigError("objective.family", fmt::format("unknown objective family '{}'", name));
}

std::span<const Family> all_families() { return kFamilies; }

bool is_tokenized(Family family) {
  return family == Family::kCatnip || family == Family::kCatnipRef;
}

bool needs_reference(Family family) {
  return family == Family::kDPO || family == Family::kNPO || family == Family::kCatnipRef;
}

void ObjectiveConfig::validate() const {
  if (family != Family::kGA && family != Family::kKLRetain) require_beta(beta);
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) {
    throw ConfigError("objective.gamma", "gamma must be >= 0");
  }
  if (!(retain_lambda >= 0.0) || !std::isfinite(retain_lambda)) {
    throw ConfigError("objective.retain_lambda", "retain_lambda must be >= 0");
  }
  if (!(clamp_eps > 0.0 && clamp_eps <= 1e-3)) {
    throw ConfigError("objective.clamp_eps", "clamp_eps must be in (0, 1e-3]");
  }
  if (token_stride == 0) throw ConfigError("objective.token_stride", "token_stride must be >= 1");
}

double LossBreakdown::mean_weight() const {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& row : weights) {
    total += std::accumulate(row.begin(), row.end(), 0.0);
    count += row.size();
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

std::vector<std::size_t> stride_positions(std::size_t length, std::size_t stride) {
  if (stride == 0) throw ConfigError("objective.token_stride", "token_stride must be >= 1");
  std::vector<std::size_t> picks;
  for (std::size_t i = 0; i < length; i += stride) picks.push_back(i);
  return picks;
}

double token_weight(double beta, double z) {
  require_beta(beta);
  if (!(z > 0.0 && z < 1.0)) fail(ErrorKind::kDomain, fmt::format("z={} outside (0, 1)", z));
  return beta * sigmoid(beta * (std::log(z) - std::log1p(-z)));
}

LossBreakdown loss_ga(const TokenLogProbs& lp) {
  require_samples(lp, "loss_ga");
  LossBreakdown out;
  out.family = Family::kGA;
  for (const auto& row : lp.target) {
    out.sample_losses.push_back(sequence_sum(row));
    out.margins.push_back({});
    out.weights.emplace_back(row.size(), 1.0);
  }
  finish(out);
  return out;
}

double loss_kl_retain(const Tensor& logp_target, const Tensor& logp_ref) {
  if (logp_target.shape() != logp_ref.shape() || logp_target.rank() != 2) {
    fail(ErrorKind::kAlignment,
         fmt::format("KL inputs must be matching [positions, vocab] tensors, got {} and {}",
                     shape_string(logp_target.shape()), shape_string(logp_ref.shape())));
  }
  const std::size_t rows = logp_target.dim(0);
  const std::size_t cols = logp_target.dim(1);
  if (rows == 0) return 0.0;
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double lt = logp_target.at(r, c);
      total += std::exp(lt) * (lt - logp_ref.at(r, c));
    }
  }
  return total / static_cast<double>(rows);
}

LossBreakdown loss_dpo(const TokenLogProbs& win, const TokenLogProbs& lose, double beta) {
  require_beta(beta);
  require_samples(win, "loss_dpo");
  require_samples(lose, "loss_dpo");
  require_reference(win, "DPO");
  require_reference(lose, "DPO");
  if (win.num_samples() != lose.num_samples()) {
    fail(ErrorKind::kAlignment, fmt::format("DPO pair batches differ in size: {} vs {}",
                                            win.num_samples(), lose.num_samples()));
  }
  LossBreakdown out;
  out.family = Family::kDPO;
  for (std::size_t s = 0; s < win.num_samples(); ++s) {
    const double m = (sequence_sum(win.target[s]) - sequence_sum(win.reference[s])) -
                     (sequence_sum(lose.target[s]) - sequence_sum(lose.reference[s]));
    out.margins.push_back({beta * m});
    out.weights.push_back({sigmoid(-beta * m)});
    out.sample_losses.push_back(softplus(-beta * m) / beta);
  }
  finish(out);
  return out;
}

LossBreakdown loss_npo(const TokenLogProbs& lp, double beta) {
  require_beta(beta);
  require_reference(lp, "NPO");
  require_samples(lp, "loss_npo");
  LossBreakdown out;
  out.family = Family::kNPO;
  for (std::size_t s = 0; s < lp.num_samples(); ++s) {
    const double r = sequence_sum(lp.target[s]) - sequence_sum(lp.reference[s]);
    out.margins.push_back({beta * r});
    out.weights.push_back({2.0 * sigmoid(beta * r)});
    out.sample_losses.push_back(2.0 / beta * softplus(beta * r));
  }
  finish(out);
  return out;
}

LossBreakdown loss_simnpo(const TokenLogProbs& lp, double beta, double gamma) {
  require_beta(beta);
  require_samples(lp, "loss_simnpo");
  LossBreakdown out;
  out.family = Family::kSimNPO;
  for (std::size_t s = 0; s < lp.num_samples(); ++s) {
    const std::size_t n = lp.length(s);
    if (n == 0) fail(ErrorKind::kInput, fmt::format("sample {}: empty response", s));
    const double a = beta / static_cast<double>(n) * sequence_sum(lp.target[s]);
    out.margins.push_back({a});
    out.weights.push_back({2.0 * sigmoid(a) / static_cast<double>(n)});
    out.sample_losses.push_back(2.0 / beta * softplus(a + gamma));
  }
  finish(out);
  return out;
}

LossBreakdown loss_catnip(const TokenLogProbs& lp, double beta, std::size_t stride,
                          double clamp_eps) {
  require_beta(beta);
  require_samples(lp, "loss_catnip");
  return tokenized_loss(Family::kCatnip, lp, beta, stride, [&](std::size_t s, std::size_t i) {
    const auto [lz, l1mz] = clamped_logs(lp.target[s][i], clamp_eps);
    return beta * (lz - l1mz);
  });
}

LossBreakdown loss_catnip_ref(const TokenLogProbs& lp, double beta, std::size_t stride,
                              double clamp_eps) {
  require_beta(beta);
  require_reference(lp, "CaTNiP-ref");
  require_samples(lp, "loss_catnip_ref");
  return tokenized_loss(Family::kCatnipRef, lp, beta, stride, [&](std::size_t s, std::size_t i) {
    const double lz = clamped_logs(lp.target[s][i], clamp_eps).first;
    const double lref = clamped_logs(lp.reference[s][i], clamp_eps).first;
    return beta * (lz - lref);
  });
}

LossBreakdown loss_catnip_notok(const TokenLogProbs& lp, double beta, double clamp_eps) {
  require_beta(beta);
  require_samples(lp, "loss_catnip_notok");
  LossBreakdown out;
  out.family = Family::kCatnipNoTok;
  for (std::size_t s = 0; s < lp.num_samples(); ++s) {
    const std::size_t n = lp.length(s);
    if (n == 0) {
      fail(ErrorKind::kInput, fmt::format("sample {}: empty response leaves no tokens to score", s));
    }
    double total = 0.0;
    for (double l : lp.target[s]) {
      const auto [lz, l1mz] = clamped_logs(l, clamp_eps);
      total += lz - l1mz;
    }
    const double u = beta / static_cast<double>(n) * total;
    out.margins.push_back({u});
    out.weights.push_back({beta * sigmoid(u)});
    out.sample_losses.push_back(softplus(u));
  }
  finish(out);
  return out;
}

LossBreakdown compute_loss(const ObjectiveConfig& cfg, const TokenLogProbs& lp) {
  switch (cfg.family) {
    case Family::kGA: return loss_ga(lp);
    case Family::kNPO: return loss_npo(lp, cfg.beta);
    case Family::kSimNPO: return loss_simnpo(lp, cfg.beta, cfg.gamma);
    case Family::kCatnip: return loss_catnip(lp, cfg.beta, cfg.token_stride, cfg.clamp_eps);
    case Family::kCatnipRef:
      return loss_catnip_ref(lp, cfg.beta, cfg.token_stride, cfg.clamp_eps);
    case Family::kCatnipNoTok: return loss_catnip_notok(lp, cfg.beta, cfg.clamp_eps);
    case Family::kDPO:
    case Family::kKLRetain: break;
  }
  throw ConfigError("objective.family",
                    fmt::format("{} is not a single-batch objective", to_string(cfg.family)));
}

std::vector<std::pair<double, double>> gradient_weight_curve(double beta,
                                                             std::span<const double> grid) {
  std::vector<std::pair<double, double>> curve;
  curve.reserve(grid.size());
  for (double z : grid) curve.emplace_back(z, token_weight(beta, z));
  return curve;
}

std::vector<double> uniform_open_grid(std::size_t n) {
  std::vector<double> grid(n);
  for (std::size_t k = 0; k < n; ++k) {
    grid[k] = static_cast<double>(k + 1) / static_cast<double>(n + 1);
  }
  return grid;
}

std::string weight_curve_csv(std::span<const double> betas, std::span<const double> grid) {
  std::string out = "z,w,beta\n";
  for (double beta : betas) {
    for (const auto& [z, w] : gradient_weight_curve(beta, grid)) {
      out += fmt::format("{},{},{}\n", z, w, beta);
    }
  }
  return out;
}

double policy_rank_probability(double z_target, double z_ref, double beta) {
  require_beta(beta);
  for (double z : {z_target, z_ref}) {
    if (!(z > 0.0 && z < 1.0)) fail(ErrorKind::kDomain, fmt::format("z={} outside (0, 1)", z));
  }
  return sigmoid(beta * (std::log(z_target) - std::log(z_ref)));
}

}  // namespace unlearn

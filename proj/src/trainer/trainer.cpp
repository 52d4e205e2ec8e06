#include "unlearn/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "unlearn/checkpoint.hpp"
#include "unlearn/error.hpp"
#include "unlearn/io.hpp"
#include "unlearn/objective_graph.hpp"
#include "unlearn/ops.hpp"
#include "unlearn/tokenizer.hpp"

#ifndef UNLEARN_VERSION
#define UNLEARN_VERSION "0.1.0"
#endif

namespace unlearn {
namespace {

// Reshuffles once per epoch; batches are consecutive slices of the permutation.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
      : n_(n), batch_size_(batch_size), rng_(seed), order_(n) {}

  std::vector<std::size_t> batch(std::size_t step) {
    const std::size_t per_epoch = (n_ + batch_size_ - 1) / batch_size_;
    const std::size_t within = step % per_epoch;
    if (within == 0) reshuffle();
    const std::size_t begin = within * batch_size_;
    const std::size_t end = std::min(n_, begin + batch_size_);
    return {order_.begin() + static_cast<std::ptrdiff_t>(begin),
            order_.begin() + static_cast<std::ptrdiff_t>(end)};
  }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), 0);
    for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[rng_() % i]);
  }

  std::size_t n_;
  std::size_t batch_size_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
};

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

nlohmann::json to_json(const ObjectiveConfig& o) {
  return {{"family", std::string(to_string(o.family))},
          {"beta", o.beta},
          {"gamma", o.gamma},
          {"retain_lambda", o.retain_lambda},
          {"clamp_eps", o.clamp_eps},
          {"token_stride", o.token_stride}};
}

bool should_log(const TrainConfig& cfg, std::size_t step, std::size_t total) {
  return step % cfg.log_every == 0 || step + 1 == total;
}

// Runs one step body and tags numeric failures with the step index.
template <typename Body>
StepRecord run_step(std::size_t step, Body body) {
  try {
    StepRecord rec = body();
    rec.step = step;
    if (!std::isfinite(rec.loss)) {
      throw NumericError(static_cast<long>(step), fmt::format("step {}: loss is not finite", step));
    }
    return rec;
  } catch (const NumericError& e) {
    if (e.step() == static_cast<long>(step)) throw;
    throw NumericError(static_cast<long>(step),
                       fmt::format("training diverged at step {}: {}", step, e.what()));
  }
}

PolicyModel make_reference(const PolicyModel& model, const TrainConfig& cfg) {
  if (cfg.reference == "none") {
    throw ConfigError("train.reference",
                      fmt::format("objective {} with retain_lambda={} needs a reference model",
                                  to_string(cfg.objective.family), cfg.objective.retain_lambda));
  }
  if (cfg.reference == "snapshot") return snapshot_frozen(model);
  PolicyModel loaded = load_checkpoint(cfg.reference);
  if (!same_architecture(loaded.config(), model.config())) {
    fail(ErrorKind::kCompatibility,
         fmt::format("reference checkpoint '{}' has a different model config", cfg.reference));
  }
  return snapshot_frozen(loaded);
}

}  // namespace

std::string_view to_string(Phase phase) {
  return phase == Phase::kPretrain ? "pretrain" : "unlearn";
}

Phase parse_phase(std::string_view name) {
  if (name == "pretrain") return Phase::kPretrain;
  if (name == "unlearn") return Phase::kUnlearn;
  throw ConfigError("train.phase", fmt::format("unknown phase '{}'", name));
}

void TrainConfig::validate() const {
  objective.validate();
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("train.learning_rate", "learning_rate must be >= 0");
  }
  if (!(epochs >= 0.0) || !std::isfinite(epochs)) {
    throw ConfigError("train.epochs", "epochs must be >= 0");
  }
  if (batch_size == 0) throw ConfigError("train.batch_size", "batch_size must be >= 1");
  if (grad_clip_norm && !(*grad_clip_norm > 0.0)) {
    throw ConfigError("train.grad_clip_norm", "grad_clip_norm must be positive");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) {
    throw ConfigError("train.adam_beta1", "adam_beta1 must be in [0, 1)");
  }
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("train.adam_beta2", "adam_beta2 must be in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps", "adam_eps must be positive");
  if (log_every == 0) throw ConfigError("train.log_every", "log_every must be >= 1");
  if (reference.empty()) throw ConfigError("train.reference", "reference must not be empty");
}

std::size_t TrainConfig::steps_per_epoch(std::size_t num_samples) const {
  return (num_samples + batch_size - 1) / batch_size;
}

std::size_t TrainConfig::total_steps(std::size_t num_samples) const {
  return static_cast<std::size_t>(
      std::floor(epochs * static_cast<double>(steps_per_epoch(num_samples)) + 1e-9));
}

AdamOptions TrainConfig::adam() const {
  return {learning_rate, adam_beta1, adam_beta2, adam_eps, grad_clip_norm};
}

nlohmann::json to_json(const TrainConfig& cfg) {
  nlohmann::json j = {{"phase", std::string(to_string(cfg.phase))},
                      {"objective", to_json(cfg.objective)},
                      {"learning_rate", cfg.learning_rate},
                      {"epochs", cfg.epochs},
                      {"batch_size", cfg.batch_size},
                      {"grad_clip_norm", nullptr},
                      {"adam_beta1", cfg.adam_beta1},
                      {"adam_beta2", cfg.adam_beta2},
                      {"adam_eps", cfg.adam_eps},
                      {"rng_seed", cfg.rng_seed},
                      {"checkpoint_dir", cfg.checkpoint_dir},
                      {"log_every", cfg.log_every},
                      {"reference", cfg.reference},
                      {"summed_retain", cfg.summed_retain},
                      {"dpo_positive", cfg.dpo_positive}};
  if (cfg.grad_clip_norm) j["grad_clip_norm"] = *cfg.grad_clip_norm;
  return j;
}

std::string config_hash(const TrainConfig& cfg) { return hex_digest(fnv1a(to_json(cfg).dump())); }

std::string RunLog::to_csv() const {
  std::string out = "step,phase,loss,mean_weight,grad_norm\n";
  for (const auto& r : records) {
    out += fmt::format("{},{},{},{},{}\n", r.step, to_string(r.phase), r.loss, r.mean_weight,
                       r.grad_norm);
  }
  return out;
}

std::string_view version_string() { return UNLEARN_VERSION; }

nlohmann::json run_manifest(const TrainConfig& cfg, const RunLog& log,
                            const nlohmann::json& final_metrics) {
  nlohmann::json metrics = final_metrics;
  if (!log.records.empty()) metrics["final_loss"] = log.records.back().loss;
  metrics["steps"] = log.steps;
  return {{"version", std::string(version_string())},
          {"config", to_json(cfg)},
          {"config_hash", log.config_hash},
          {"seed", cfg.rng_seed},
          {"wall_seconds", log.wall_seconds},
          {"final_metrics", metrics}};
}

void write_run_files(const std::filesystem::path& dir, const TrainConfig& cfg, const RunLog& log,
                     const nlohmann::json& final_metrics) {
  std::filesystem::create_directories(dir);
  write_file_atomic(dir / "log.csv", log.to_csv());
  write_file_atomic(dir / "run.json", run_manifest(cfg, log, final_metrics).dump(2) + "\n");
}

RunLog pretrain(PolicyModel& model, const std::vector<Sample>& samples, const TrainConfig& cfg,
                const StepCallback& on_step) {
  cfg.validate();
  if (cfg.phase != Phase::kPretrain) throw ConfigError("train.phase", "pretrain needs phase=pretrain");
  if (samples.empty()) fail(ErrorKind::kInput, "pretrain corpus is empty");
  if (model.frozen()) fail(ErrorKind::kInput, "cannot train a frozen model");

  const auto start = std::chrono::steady_clock::now();
  RunLog log;
  log.config_hash = config_hash(cfg);
  log.steps = cfg.total_steps(samples.size());
  BatchSampler sampler(samples.size(), cfg.batch_size, cfg.rng_seed);
  AdamState state;
  const AdamOptions adam = cfg.adam();

  for (std::size_t step = 0; step < log.steps; ++step) {
    const auto batch = sampler.batch(step);
    StepRecord rec = run_step(step, [&] {
      model.zero_grad();
      std::vector<Var> sums;
      std::size_t tokens = 0;
      for (std::size_t i : batch) {
        const auto scored = model.score(samples[i].prompt_tokens, samples[i].response_tokens);
        if (!scored.token_logprobs.defined()) continue;
        sums.push_back(ops::sum(scored.token_logprobs));
        tokens += samples[i].response_tokens.size();
      }
      if (tokens == 0) fail(ErrorKind::kInput, "batch has no response tokens");
      const Var loss = ops::scale(ops::sum(ops::concat(sums)), -1.0 / static_cast<double>(tokens));
      StepRecord r;
      r.phase = Phase::kPretrain;
      r.loss = r.unlearn_loss = loss.value().item();
      r.mean_weight = 1.0;
      backward(loss);
      r.grad_norm = adam_step(model.parameters(), state, adam);
      return r;
    });
    if (should_log(cfg, step, log.steps)) log.records.push_back(rec);
    if (on_step) on_step(step, model);
  }
  model.zero_grad();
  log.wall_seconds = elapsed_seconds(start);
  if (!cfg.checkpoint_dir.empty()) {
    save_checkpoint(model, cfg.checkpoint_dir);
    write_run_files(cfg.checkpoint_dir, cfg, log);
  }
  return log;
}

RunLog unlearn(PolicyModel& model, const std::vector<Sample>& forget,
               const std::vector<Sample>& retain, const TrainConfig& cfg,
               const StepCallback& on_step) {
  cfg.validate();
  if (cfg.phase != Phase::kUnlearn) throw ConfigError("train.phase", "unlearn needs phase=unlearn");
  const ObjectiveConfig& obj = cfg.objective;
  if (obj.family == Family::kKLRetain) {
    throw ConfigError("objective.family",
                      "KL-retain is a retain term; combine it through objective.retain_lambda");
  }
  if (forget.empty()) fail(ErrorKind::kInput, "forget set is empty");
  const double lambda = obj.retain_lambda;
  if (lambda > 0.0 && retain.empty()) {
    throw ConfigError("objective.retain_lambda", "retain_lambda > 0 requires a retain set");
  }
  if (model.frozen()) fail(ErrorKind::kInput, "cannot train a frozen model");

  const auto start = std::chrono::steady_clock::now();
  RunLog log;
  log.config_hash = config_hash(cfg);
  log.steps = cfg.total_steps(forget.size());

  // Taken once, before any update.
  std::optional<PolicyModel> reference;
  if (needs_reference(obj.family) || lambda > 0.0) reference = make_reference(model, cfg);
  if (reference) log.reference_hash_start = model_hash(*reference);

  const TokenSeq positive = encode(cfg.dpo_positive);
  TokenSeq positive_tokens = positive;
  positive_tokens.push_back(kEos);

  std::vector<std::optional<std::vector<double>>> ref_forget(forget.size());
  std::vector<std::optional<std::vector<double>>> ref_positive(forget.size());
  std::vector<std::optional<Tensor>> ref_retain(retain.size());
  auto ref_logprobs = [&](std::optional<std::vector<double>>& slot, const TokenSeq& prompt,
                          const TokenSeq& response) -> const std::vector<double>& {
    if (!slot) {
      NoGradGuard guard;
      const auto scored = reference->score(prompt, response);
      const auto vals = scored.token_logprobs.value().values();
      slot.emplace(vals.begin(), vals.end());
    }
    return *slot;
  };

  BatchSampler sampler(forget.size(), cfg.batch_size, cfg.rng_seed);
  std::size_t retain_cursor = 0;
  AdamState state;
  const AdamOptions adam = cfg.adam();

  auto forget_loss = [&](const std::vector<std::size_t>& batch, StepRecord& rec) {
    std::vector<Var> lps;
    Reference refs;
    for (std::size_t i : batch) {
      lps.push_back(model.score(forget[i].prompt_tokens, forget[i].response_tokens).token_logprobs);
      if (reference) {
        refs.push_back(ref_logprobs(ref_forget[i], forget[i].prompt_tokens,
                                    forget[i].response_tokens));
      }
    }
    if (obj.family == Family::kDPO) {
      std::vector<Var> win;
      Reference ref_win;
      for (std::size_t i : batch) {
        win.push_back(model.score(forget[i].prompt_tokens, positive_tokens).token_logprobs);
        ref_win.push_back(ref_logprobs(ref_positive[i], forget[i].prompt_tokens, positive_tokens));
      }
      const Var loss = graph_dpo(win, lps, ref_win, refs, obj.beta);
      rec.mean_weight = loss_dpo(token_values(win, ref_win), token_values(lps, refs), obj.beta)
                            .mean_weight();
      return loss;
    }
    const Var loss = graph_loss(obj, lps, refs);
    rec.mean_weight = compute_loss(obj, token_values(lps, refs)).mean_weight();
    return loss;
  };

  auto retain_loss = [&] {
    std::vector<Var> terms;
    const std::size_t count = std::min(cfg.batch_size, retain.size());
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t i = retain_cursor;
      retain_cursor = (retain_cursor + 1) % retain.size();
      if (retain[i].response_tokens.empty()) continue;
      if (!ref_retain[i]) {
        NoGradGuard guard;
        ref_retain[i] =
            reference->score(retain[i].prompt_tokens, retain[i].response_tokens)
                .log_distribution.value();
      }
      const auto scored = model.score(retain[i].prompt_tokens, retain[i].response_tokens);
      terms.push_back(graph_kl_retain(scored.log_distribution, *ref_retain[i]));
    }
    if (terms.empty()) fail(ErrorKind::kInput, "retain batch has no response tokens");
    return ops::mean(ops::concat(terms));
  };

  for (std::size_t step = 0; step < log.steps; ++step) {
    const auto batch = sampler.batch(step);
    StepRecord rec = run_step(step, [&] {
      StepRecord r;
      r.phase = Phase::kUnlearn;
      model.zero_grad();
      const Var lu = forget_loss(batch, r);
      r.unlearn_loss = lu.value().item();
      if (lambda > 0.0 && cfg.summed_retain) {
        const Var lr = retain_loss();
        r.retain_loss = lr.value().item();
        backward(ops::add(lu, ops::scale(lr, lambda)));
        r.grad_norm = adam_step(model.parameters(), state, adam);
      } else {
        backward(lu);
        r.grad_norm = adam_step(model.parameters(), state, adam);
        if (lambda > 0.0) {
          model.zero_grad();
          const Var lr = retain_loss();
          r.retain_loss = lr.value().item();
          backward(ops::scale(lr, lambda));
          adam_step(model.parameters(), state, adam);
        }
      }
      r.loss = r.unlearn_loss + lambda * r.retain_loss;
      return r;
    });
    if (should_log(cfg, step, log.steps)) log.records.push_back(rec);
    if (on_step) on_step(step, model);
  }
  model.zero_grad();
  if (reference) log.reference_hash_end = model_hash(*reference);
  log.wall_seconds = elapsed_seconds(start);
  if (!cfg.checkpoint_dir.empty()) {
    save_checkpoint(model, cfg.checkpoint_dir);
    write_run_files(cfg.checkpoint_dir, cfg, log);
  }
  return log;
}

}  // namespace unlearn

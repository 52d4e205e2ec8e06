#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "unlearn/adam.hpp"
#include "unlearn/corpus.hpp"
#include "unlearn/model.hpp"
#include "unlearn/objectives.hpp"

namespace unlearn {

enum class Phase { kPretrain, kUnlearn };

std::string_view to_string(Phase phase);
Phase parse_phase(std::string_view name);

struct TrainConfig {
  Phase phase = Phase::kPretrain;
  ObjectiveConfig objective;
  double learning_rate = 1e-3;
  double epochs = 1.0;  // fractional values truncate the last pass
  std::size_t batch_size = 8;
  std::optional<double> grad_clip_norm;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t rng_seed = 0;
  std::string checkpoint_dir;  // empty: no checkpoint written
  std::size_t log_every = 1;
  // "snapshot" (frozen copy at unlearn start), "none", or a checkpoint directory.
  std::string reference = "none";
  // Combine forget and retain losses in one update instead of alternating updates.
  bool summed_retain = false;
  // Preferred response paired with each forget sample by DPO.
  std::string dpo_positive = " unknown";

  void validate() const;
  std::size_t steps_per_epoch(std::size_t num_samples) const;
  std::size_t total_steps(std::size_t num_samples) const;
  AdamOptions adam() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
// 16 hex digits over the canonical JSON echo.
std::string config_hash(const TrainConfig& cfg);

struct StepRecord {
  std::size_t step = 0;
  Phase phase = Phase::kPretrain;
  double loss = 0.0;  // unlearn_loss + retain_lambda * retain_loss
  double mean_weight = 0.0;
  double grad_norm = 0.0;
  double unlearn_loss = 0.0;
  double retain_loss = 0.0;
};

struct RunLog {
  std::vector<StepRecord> records;
  std::size_t steps = 0;
  double wall_seconds = 0.0;
  std::string config_hash;
  // Hashes of the frozen reference before the first and after the last step; empty without one.
  std::string reference_hash_start;
  std::string reference_hash_end;

  // Header step,phase,loss,mean_weight,grad_norm.
  std::string to_csv() const;
};

// Version string embedded in run manifests.
std::string_view version_string();

nlohmann::json run_manifest(const TrainConfig& cfg, const RunLog& log,
                            const nlohmann::json& final_metrics = nlohmann::json::object());

// Called after every completed step with the step index and the updated model.
using StepCallback = std::function<void(std::size_t step, const PolicyModel& model)>;

// Token-mean NLL minimization. Writes a checkpoint plus run files when cfg.checkpoint_dir is set.
RunLog pretrain(PolicyModel& model, const std::vector<Sample>& samples, const TrainConfig& cfg,
                const StepCallback& on_step = {});

// Minimizes the configured objective over `forget`, mixing in retain_lambda * KL on `retain`.
RunLog unlearn(PolicyModel& model, const std::vector<Sample>& forget,
               const std::vector<Sample>& retain, const TrainConfig& cfg,
               const StepCallback& on_step = {});

// Writes log.csv and run.json into `dir`.
void write_run_files(const std::filesystem::path& dir, const TrainConfig& cfg, const RunLog& log,
                     const nlohmann::json& final_metrics = nlohmann::json::object());

}  // namespace unlearn

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "unlearn/config.hpp"
#include "unlearn/eval.hpp"

namespace unlearn {

// Environment variable naming the default output root.
inline constexpr const char* kOutputRootEnv = "UNLEARN_OUT_ROOT";

struct RunSpec {
  std::string subcommand;
  std::optional<std::filesystem::path> config_path;
  std::vector<std::string> overrides;
  std::optional<std::filesystem::path> out_dir;
  bool force = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> data_dir;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> baseline;
  std::vector<std::filesystem::path> checkpoints;
  std::vector<std::string> names;
  std::vector<std::string> methods;
  std::vector<double> betas = {0.5, 1.0, 2.0, 5.0};
  std::size_t grid_size = 1001;
  std::size_t sample_index = 0;
};

// Defaults, then the config file, then overrides, then the seed flag.
AppConfig resolve_config(const RunSpec& spec);

// Explicit --out, else $UNLEARN_OUT_ROOT/<subcommand>, else runs/<subcommand>.
std::filesystem::path resolve_out_dir(const RunSpec& spec);
// Creates `dir`; a non-empty existing directory is an input error unless `force`.
void prepare_out_dir(const std::filesystem::path& dir, bool force);

struct DatasetFiles {
  std::vector<Sample> pretrain;
  std::vector<Sample> forget;
  std::vector<Sample> retain;
  std::vector<Sample> eval_forget;
  std::vector<Sample> eval_retain;
  std::vector<Fact> facts;
  nlohmann::json manifest;
};

void write_dataset(const Corpus& corpus, const std::filesystem::path& dir);
DatasetFiles read_dataset(const std::filesystem::path& dir);

struct SweepRow {
  std::string method;
  EvalReport report;
  std::string base_hash;
  RunLog log;
};

// One unlearn + eval run per method from `base`, sorted by dO descending.
std::vector<SweepRow> run_sweep(const PolicyModel& base, const DatasetFiles& data,
                                const TrainConfig& unlearn_cfg,
                                const std::vector<std::string>& methods,
                                std::size_t max_new_tokens);

// Each command returns the JSON summary it also writes to the output directory.
nlohmann::json cmd_gen_data(const RunSpec& spec);
nlohmann::json cmd_pretrain(const RunSpec& spec);
nlohmann::json cmd_unlearn(const RunSpec& spec);
nlohmann::json cmd_eval(const RunSpec& spec);
nlohmann::json cmd_sweep(const RunSpec& spec);
nlohmann::json cmd_weights(const RunSpec& spec);
nlohmann::json cmd_case_study(const RunSpec& spec);

nlohmann::json run_command(const RunSpec& spec);

// Machine-readable error for stderr.
nlohmann::json error_json(const std::exception& e);
int error_exit_code(const std::exception& e);

}  // namespace unlearn

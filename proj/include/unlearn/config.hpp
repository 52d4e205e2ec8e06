#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "unlearn/corpus.hpp"
#include "unlearn/model.hpp"
#include "unlearn/trainer.hpp"

namespace unlearn {

struct EvalConfig {
  std::size_t max_new_tokens = 16;
  std::vector<std::string> methods = {"GA", "NPO", "SimNPO", "CaTNiP"};
  std::string case_split = "eval-forget";  // sample pool for case-study
};

// Effective configuration of one CLI invocation, after defaults, file values and overrides.
struct AppConfig {
  ModelConfig model;
  CorpusSpec data;
  TrainConfig pretrain;
  TrainConfig unlearn;
  EvalConfig eval;

  AppConfig();
  void validate() const;
};

// Sets `section.key` from its text form; ConfigError naming the key on unknown keys or bad values.
void set_config_value(AppConfig& cfg, std::string_view dotted_key, std::string_view value);
std::string get_config_value(const AppConfig& cfg, std::string_view dotted_key);
std::vector<std::string> config_keys();

// Reads an INI file with sections model, data, objective, train, pretrain, eval.
// Missing keys keep their defaults.
void load_config_file(AppConfig& cfg, const std::filesystem::path& path);
// Applies "section.key=value" overrides in order.
void apply_overrides(AppConfig& cfg, const std::vector<std::string>& assignments);

// INI text that reproduces `cfg`, with a comment per key.
std::string render_config(const AppConfig& cfg);
nlohmann::json to_json(const AppConfig& cfg);

}  // namespace unlearn

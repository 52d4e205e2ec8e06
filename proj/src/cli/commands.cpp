#include "unlearn/commands.hpp"

#include <algorithm>
#include <cstdlib>

#include <fmt/format.h>

#include "unlearn/checkpoint.hpp"
#include "unlearn/error.hpp"
#include "unlearn/io.hpp"

namespace unlearn {
namespace {

namespace fs = std::filesystem;

constexpr const char* kDatasetFiles[] = {"pretrain.jsonl", "forget.jsonl", "retain.jsonl",
                                         "eval_forget.jsonl", "eval_retain.jsonl"};

const fs::path& require_path(const std::optional<fs::path>& path, const char* flag) {
  if (!path) throw ConfigError(flag, fmt::format("{} is required for this command", flag));
  return *path;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  write_file_atomic(path, j.dump(2) + "\n");
}

void write_config_echo(const fs::path& dir, const AppConfig& cfg) {
  write_file_atomic(dir / "config.ini", render_config(cfg));
}

PolicyModel load_model(const fs::path& dir) {
  if (!fs::exists(dir / "manifest")) {
    fail(ErrorKind::kIo, fmt::format("'{}' is not a checkpoint directory", dir.string()));
  }
  return load_checkpoint(dir);
}

nlohmann::json counts_json(const Corpus& c) {
  return {{"pretrain", c.pretrain.size()},     {"forget", c.forget.size()},
          {"retain", c.retain.size()},         {"eval_forget", c.eval_forget.size()},
          {"eval_retain", c.eval_retain.size()}};
}

}  // namespace

AppConfig resolve_config(const RunSpec& spec) {
  AppConfig cfg;
  if (spec.config_path) load_config_file(cfg, *spec.config_path);
  apply_overrides(cfg, spec.overrides);
  if (spec.seed) {
    cfg.data.rng_seed = *spec.seed;
    cfg.model.rng_seed = *spec.seed;
    cfg.pretrain.rng_seed = *spec.seed;
    cfg.unlearn.rng_seed = *spec.seed;
  }
  cfg.validate();
  return cfg;
}

fs::path resolve_out_dir(const RunSpec& spec) {
  if (spec.out_dir) return *spec.out_dir;
  const char* root = std::getenv(kOutputRootEnv);
  const fs::path base = root && *root ? fs::path(root) : fs::path("runs");
  return base / spec.subcommand;
}

void prepare_out_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) {
      throw ConfigError("--out", fmt::format("output path '{}' is not a directory", dir.string()));
    }
    if (!fs::is_empty(dir) && !force) {
      throw ConfigError("--out", fmt::format("output directory '{}' is not empty (use --force)",
                                             dir.string()));
    }
  }
  fs::create_directories(dir);
}

void write_dataset(const Corpus& corpus, const fs::path& dir) {
  const std::vector<const std::vector<Sample>*> parts = {
      &corpus.pretrain, &corpus.forget, &corpus.retain, &corpus.eval_forget, &corpus.eval_retain};
  nlohmann::json hashes = nlohmann::json::object();
  for (std::size_t k = 0; k < parts.size(); ++k) {
    save_jsonl(*parts[k], dir / kDatasetFiles[k]);
    hashes[kDatasetFiles[k]] = samples_hash(*parts[k]);
  }
  nlohmann::json facts = nlohmann::json::array();
  for (const auto& f : corpus.facts) facts.push_back(to_json(f));
  write_json(dir / "manifest.json", {{"version", std::string(version_string())},
                                     {"spec", to_json(corpus.spec)},
                                     {"counts", counts_json(corpus)},
                                     {"hashes", hashes},
                                     {"facts", facts}});
}

DatasetFiles read_dataset(const fs::path& dir) {
  DatasetFiles d;
  std::vector<Sample>* parts[] = {&d.pretrain, &d.forget, &d.retain, &d.eval_forget,
                                  &d.eval_retain};
  for (std::size_t k = 0; k < 5; ++k) {
    const fs::path path = dir / kDatasetFiles[k];
    if (!fs::exists(path)) fail(ErrorKind::kIo, fmt::format("missing dataset file '{}'", path.string()));
    try {
      *parts[k] = load_jsonl(path);
    } catch (const ParseError& e) {
      throw ParseError(e.line(), fmt::format("{}: {}", path.string(), e.what()));
    }
  }
  const fs::path manifest = dir / "manifest.json";
  if (!fs::exists(manifest)) fail(ErrorKind::kIo, fmt::format("missing '{}'", manifest.string()));
  try {
    d.manifest = nlohmann::json::parse(read_file(manifest));
    for (const auto& f : d.manifest.at("facts")) d.facts.push_back(fact_from_json(f));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kParse, fmt::format("{}: {}", manifest.string(), e.what()));
  }
  return d;
}

std::vector<SweepRow> run_sweep(const PolicyModel& base, const DatasetFiles& data,
                                const TrainConfig& unlearn_cfg,
                                const std::vector<std::string>& methods,
                                std::size_t max_new_tokens) {
  if (methods.empty()) throw ConfigError("eval.methods", "no sweep methods given");
  std::vector<Family> families;
  for (const auto& m : methods) families.push_back(parse_family(m));
  const std::string base_hash = model_hash(base);
  const EvalScores base_scores =
      evaluate(base, data.eval_forget, data.eval_retain, max_new_tokens, "base");
  std::vector<SweepRow> rows;
  for (std::size_t k = 0; k < methods.size(); ++k) {
    TrainConfig cfg = unlearn_cfg;
    cfg.phase = Phase::kUnlearn;
    cfg.objective.family = families[k];
    cfg.checkpoint_dir.clear();
    PolicyModel model = base.clone();
    SweepRow row;
    row.method = methods[k];
    row.base_hash = base_hash;
    row.log = unlearn::unlearn(model, data.forget, data.retain, cfg);
    row.report = make_report(
        base_scores, evaluate(model, data.eval_forget, data.eval_retain, max_new_tokens, methods[k]));
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    return a.report.shift.dO > b.report.shift.dO;
  });
  return rows;
}

nlohmann::json cmd_gen_data(const RunSpec& spec) {
  const AppConfig cfg = resolve_config(spec);
  const fs::path out = resolve_out_dir(spec);
  const Corpus corpus = generate_corpus(cfg.data);
  prepare_out_dir(out, spec.force);
  write_dataset(corpus, out);
  write_config_echo(out, cfg);
  return {{"command", "gen-data"}, {"out", out.string()}, {"counts", counts_json(corpus)}};
}

nlohmann::json cmd_pretrain(const RunSpec& spec) {
  const AppConfig cfg = resolve_config(spec);
  const DatasetFiles data = read_dataset(require_path(spec.data_dir, "--data"));
  const fs::path out = resolve_out_dir(spec);
  prepare_out_dir(out, spec.force);
  PolicyModel model(cfg.model);
  TrainConfig tc = cfg.pretrain;
  tc.checkpoint_dir = out.string();
  const RunLog log = pretrain(model, data.pretrain, tc);
  write_config_echo(out, cfg);
  return {{"command", "pretrain"},
          {"out", out.string()},
          {"steps", log.steps},
          {"final_loss", log.records.empty() ? 0.0 : log.records.back().loss},
          {"model_hash", model_hash(model)}};
}

nlohmann::json cmd_unlearn(const RunSpec& spec) {
  const AppConfig cfg = resolve_config(spec);
  const DatasetFiles data = read_dataset(require_path(spec.data_dir, "--data"));
  PolicyModel model = load_model(require_path(spec.checkpoint, "--checkpoint"));
  const std::string base_hash = model_hash(model);
  const fs::path out = resolve_out_dir(spec);
  TrainConfig tc = cfg.unlearn;
  tc.checkpoint_dir = out.string();
  tc.validate();
  prepare_out_dir(out, spec.force);
  const RunLog log = unlearn::unlearn(model, data.forget, data.retain, tc);
  write_config_echo(out, cfg);
  return {{"command", "unlearn"},
          {"out", out.string()},
          {"family", std::string(to_string(tc.objective.family))},
          {"steps", log.steps},
          {"final_loss", log.records.empty() ? 0.0 : log.records.back().loss},
          {"base_hash", base_hash},
          {"model_hash", model_hash(model)}};
}

nlohmann::json cmd_eval(const RunSpec& spec) {
  const AppConfig cfg = resolve_config(spec);
  const DatasetFiles data = read_dataset(require_path(spec.data_dir, "--data"));
  const fs::path ckpt = require_path(spec.checkpoint, "--checkpoint");
  const fs::path base_path = spec.baseline.value_or(ckpt);
  const PolicyModel model = load_model(ckpt);
  const PolicyModel base = load_model(base_path);
  const fs::path out = resolve_out_dir(spec);
  prepare_out_dir(out, spec.force);
  const std::size_t max_new = cfg.eval.max_new_tokens;
  const EvalScores base_scores =
      evaluate(base, data.eval_forget, data.eval_retain, max_new, base_path.string());
  const EvalScores scores = evaluate(model, data.eval_forget, data.eval_retain, max_new, ckpt.string());
  const EvalReport report = make_report(base_scores, scores);
  nlohmann::json j = {{"report", to_json(report)},
                      {"baseline", to_json(base_scores)},
                      {"provenance",
                       {{"model_hash", model_hash(model)},
                        {"baseline_hash", model_hash(base)},
                        {"version", std::string(version_string())}}},
                      {"config", to_json(cfg)}};
  write_json(out / "report.json", j);
  write_file_atomic(out / "comparison.csv", comparison_csv({{ckpt.filename().string(), report}}));
  write_config_echo(out, cfg);
  return {{"command", "eval"}, {"out", out.string()}, {"report", to_json(report)}};
}

nlohmann::json cmd_sweep(const RunSpec& spec) {
  const AppConfig cfg = resolve_config(spec);
  const DatasetFiles data = read_dataset(require_path(spec.data_dir, "--data"));
  const PolicyModel base = load_model(require_path(spec.checkpoint, "--checkpoint"));
  const std::vector<std::string> methods = spec.methods.empty() ? cfg.eval.methods : spec.methods;
  for (const auto& m : methods) parse_family(m);
  TrainConfig tc = cfg.unlearn;
  // Every method compares against the same base checkpoint.
  if (tc.reference == "none") tc.reference = "snapshot";
  const fs::path out = resolve_out_dir(spec);
  prepare_out_dir(out, spec.force);
  const auto rows = run_sweep(base, data, tc, methods, cfg.eval.max_new_tokens);
  std::vector<std::pair<std::string, EvalReport>> table;
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& row : rows) {
    table.emplace_back(row.method, row.report);
    TrainConfig run_cfg = tc;
    run_cfg.objective.family = parse_family(row.method);
    write_run_files(out / row.method, run_cfg, row.log, to_json(row.report));
    summary.push_back({{"method", row.method}, {"base_hash", row.base_hash},
                       {"report", to_json(row.report)}});
  }
  write_file_atomic(out / "comparison.csv", comparison_csv(table));
  write_json(out / "sweep.json", {{"rows", summary}, {"config", to_json(cfg)},
                                  {"version", std::string(version_string())}});
  write_config_echo(out, cfg);
  return {{"command", "sweep"}, {"out", out.string()}, {"rows", summary}};
}

nlohmann::json cmd_weights(const RunSpec& spec) {
  const AppConfig cfg = resolve_config(spec);
  if (spec.betas.empty()) throw ConfigError("--betas", "at least one beta is required");
  for (double b : spec.betas) {
    if (!(b > 0.0)) throw ConfigError("--betas", fmt::format("beta must be positive, got {}", b));
  }
  if (spec.grid_size == 0) throw ConfigError("--grid", "grid size must be >= 1");
  const auto grid = uniform_open_grid(spec.grid_size);
  const fs::path out = resolve_out_dir(spec);
  prepare_out_dir(out, spec.force);
  write_file_atomic(out / "weights.csv", weight_curve_csv(spec.betas, grid));
  write_config_echo(out, cfg);
  return {{"command", "weights"}, {"out", out.string()}, {"rows", grid.size() * spec.betas.size()}};
}

nlohmann::json cmd_case_study(const RunSpec& spec) {
  const AppConfig cfg = resolve_config(spec);
  if (spec.checkpoints.size() < 2) {
    throw ConfigError("--checkpoints", "case-study needs at least two checkpoints");
  }
  if (!spec.names.empty() && spec.names.size() != spec.checkpoints.size()) {
    throw ConfigError("--names", "one name per checkpoint expected");
  }
  const DatasetFiles data = read_dataset(require_path(spec.data_dir, "--data"));
  const auto& pool = cfg.eval.case_split == "forget" ? data.forget : data.eval_forget;
  if (spec.sample_index >= pool.size()) {
    fail(ErrorKind::kInput, fmt::format("sample index {} out of range for {} samples",
                                        spec.sample_index, pool.size()));
  }
  std::vector<PolicyModel> models;
  for (const auto& path : spec.checkpoints) models.push_back(load_model(path));
  std::vector<NamedModel> named;
  for (std::size_t k = 0; k < models.size(); ++k) {
    named.emplace_back(spec.names.empty() ? spec.checkpoints[k].filename().string() : spec.names[k],
                       &models[k]);
  }
  const CaseStudyRecord record = case_study(named, pool[spec.sample_index], data.facts);
  const fs::path out = resolve_out_dir(spec);
  prepare_out_dir(out, spec.force);
  write_json(out / "case_study.json", to_json(record));
  write_file_atomic(out / "case_study.csv", case_study_csv(record));
  write_config_echo(out, cfg);
  return {{"command", "case-study"}, {"out", out.string()}, {"tokens", record.response_tokens.size()}};
}

nlohmann::json run_command(const RunSpec& spec) {
  if (spec.subcommand == "gen-data") return cmd_gen_data(spec);
  if (spec.subcommand == "pretrain") return cmd_pretrain(spec);
  if (spec.subcommand == "unlearn") return cmd_unlearn(spec);
  if (spec.subcommand == "eval") return cmd_eval(spec);
  if (spec.subcommand == "sweep") return cmd_sweep(spec);
  if (spec.subcommand == "weights") return cmd_weights(spec);
  if (spec.subcommand == "case-study") return cmd_case_study(spec);
  throw ConfigError("subcommand", fmt::format("unknown subcommand '{}'", spec.subcommand));
}

nlohmann::json error_json(const std::exception& e) {
  nlohmann::json j = {{"error", "internal"}, {"message", e.what()}, {"exit_code", error_exit_code(e)}};
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    j["error"] = std::string(to_string(err->kind()));
  } else if (dynamic_cast<const fs::filesystem_error*>(&e)) {
    j["error"] = std::string(to_string(ErrorKind::kIo));
  }
  if (const auto* c = dynamic_cast<const ConfigError*>(&e)) j["key"] = c->key();
  if (const auto* p = dynamic_cast<const ParseError*>(&e)) j["line"] = p->line();
  if (const auto* n = dynamic_cast<const NumericError*>(&e)) j["step"] = n->step();
  return j;
}

int error_exit_code(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) return exit_code(err->kind());
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return exit_code(ErrorKind::kIo);
  return 1;
}

}  // namespace unlearn

#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "unlearn/commands.hpp"
#include "unlearn/error.hpp"

namespace {

void add_common(CLI::App* cmd, unlearn::RunSpec& spec) {
  cmd->add_option("-c,--config", spec.config_path, "INI config file");
  cmd->add_option("-s,--set", spec.overrides, "override, e.g. train.learning_rate=1e-3")
      ->take_all();
  cmd->add_option("-o,--out", spec.out_dir, "output directory");
  cmd->add_flag("-f,--force", spec.force, "allow a non-empty output directory");
  cmd->add_option("--seed", spec.seed, "seed for data, model init and batch order");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Token-level unlearning lab: synthetic data, training, unlearning, evaluation"};
  app.require_subcommand(0, 1);
  bool print_config = false;
  app.add_flag("--print-config", print_config, "print the effective configuration and exit");

  unlearn::RunSpec spec;
  std::optional<std::filesystem::path> top_config;
  std::vector<std::string> top_overrides;
  app.add_option("-c,--config", top_config, "INI config file (with --print-config)");
  app.add_option("-s,--set", top_overrides, "override (with --print-config)")->take_all();

  auto* gen = app.add_subcommand("gen-data", "write the synthetic corpus as JSONL plus manifest");
  add_common(gen, spec);

  auto* pre = app.add_subcommand("pretrain", "train a fresh model on pretrain.jsonl");
  add_common(pre, spec);
  pre->add_option("-d,--data", spec.data_dir, "dataset directory from gen-data")->required();

  auto* unl = app.add_subcommand("unlearn", "unlearn the forget set from a checkpoint");
  add_common(unl, spec);
  unl->add_option("-d,--data", spec.data_dir, "dataset directory")->required();
  unl->add_option("-m,--checkpoint", spec.checkpoint, "input checkpoint")->required();

  auto* ev = app.add_subcommand("eval", "score a checkpoint against a baseline");
  add_common(ev, spec);
  ev->add_option("-d,--data", spec.data_dir, "dataset directory")->required();
  ev->add_option("-m,--checkpoint", spec.checkpoint, "checkpoint to score")->required();
  ev->add_option("-b,--baseline", spec.baseline, "baseline checkpoint (default: itself)");

  auto* sw = app.add_subcommand("sweep", "unlearn + eval for several methods from one checkpoint");
  add_common(sw, spec);
  sw->add_option("-d,--data", spec.data_dir, "dataset directory")->required();
  sw->add_option("-m,--checkpoint", spec.checkpoint, "base checkpoint")->required();
  sw->add_option("--methods", spec.methods, "families, e.g. GA,NPO,SimNPO,CaTNiP")->delimiter(',');

  auto* wt = app.add_subcommand("weights", "emit gradient-weight curves as CSV");
  add_common(wt, spec);
  wt->add_option("--betas", spec.betas, "comma-separated betas")->delimiter(',');
  wt->add_option("--grid", spec.grid_size, "interior grid points per beta");

  auto* cs = app.add_subcommand("case-study", "per-token probabilities of one response across models");
  add_common(cs, spec);
  cs->add_option("-d,--data", spec.data_dir, "dataset directory")->required();
  cs->add_option("--checkpoints", spec.checkpoints, "two or more checkpoints")->delimiter(',');
  cs->add_option("--names", spec.names, "display names, one per checkpoint")->delimiter(',');
  cs->add_option("--sample", spec.sample_index, "sample index in the case-study pool");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (print_config) {
      unlearn::RunSpec probe = spec;
      if (top_config) probe.config_path = top_config;
      probe.overrides.insert(probe.overrides.end(), top_overrides.begin(), top_overrides.end());
      std::cout << unlearn::render_config(unlearn::resolve_config(probe));
      return 0;
    }
    if (app.get_subcommands().empty()) {
      std::cout << app.help();
      return 2;
    }
    spec.subcommand = app.get_subcommands().front()->get_name();
    std::cout << unlearn::run_command(spec).dump(2) << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << unlearn::error_json(e).dump() << "\n";
    return unlearn::error_exit_code(e);
  }
}

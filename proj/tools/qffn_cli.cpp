// Experiment driver: qffn train|sweep|ablate|probe --config run.json

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "qffn/qffn.hpp"

namespace {

struct CommonArgs {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "Run configuration (JSON)")->required();
  cmd->add_option("--out", args.out, "Output directory (overrides output_dir)");
  cmd->add_option("--seed", args.seed, "Seed override");
}

qffn::RunConfig load(const CLI::App* cmd, const CommonArgs& args) {
  auto rc = qffn::load_run_config(args.config);
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  if (cmd->count("--seed")) seed = args.seed;
  if (cmd->count("--out")) out = args.out;
  qffn::apply_overrides(rc, seed, out);
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid quantum feedforward BERT experiments"};
  app.require_subcommand(1);

  CommonArgs train_args, sweep_args, ablate_args, probe_args;
  auto* train = app.add_subcommand("train", "Train one model and write metrics");
  auto* sweep = app.add_subcommand("sweep", "Depth x fraction grid with classical baselines");
  auto* ablate = app.add_subcommand("ablate", "Sweep using the vanilla (ablation) circuit");
  auto* probe = app.add_subcommand("probe", "Gradient-variance probe across circuit depths");
  add_common(train, train_args);
  add_common(sweep, sweep_args);
  add_common(ablate, ablate_args);
  add_common(probe, probe_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      qffn::cmd_train(load(train, train_args), std::cout);
      return 0;
    }
    if (sweep->parsed() || ablate->parsed()) {
      const bool is_ablate = ablate->parsed();
      auto rc = is_ablate ? load(ablate, ablate_args) : load(sweep, sweep_args);
      const auto kind = is_ablate ? qffn::FfnKind::VanillaQffn
                                  : (rc.model.ffn_kind == qffn::FfnKind::Classical
                                         ? qffn::FfnKind::Qffn
                                         : rc.model.ffn_kind);
      const auto rows = qffn::cmd_sweep(rc, kind, std::cout);
      for (const auto& r : rows) {
        if (!r.report) return 3;
      }
      return 0;
    }
    if (probe->parsed()) {
      qffn::cmd_probe(load(probe, probe_args), std::cout);
      return 0;
    }
  } catch (const qffn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "streamrl/config_io.hpp"
#include "streamrl/protocol.hpp"
#include "streamrl/version.hpp"

namespace cli = streamrl::cli;

int main(int argc, char** argv) {
  CLI::App app{"analysis toolkit for pipelined RL fine-tuning of token generators"};
  app.set_version_flag("--version", streamrl::kToolVersion);
  app.require_subcommand(1);

  cli::CommonArgs args;
  std::string assets_flag;
  std::uint64_t seed_value = 0;

  auto add_common = [&](CLI::App* sub, bool need_out) {
    sub->add_option("--config", args.config_path, "config file path");
    if (need_out) sub->add_option("--out", args.out_dir, "output directory")->required();
    auto* seed_opt = sub->add_option("--seed", seed_value, "seed override");
    sub->add_option("--assets", assets_flag, "assets directory override");
    sub->parse_complete_callback([&args, seed_opt, &seed_value, &assets_flag] {
      if (seed_opt->count() > 0) args.seed = seed_value;
      args.assets_dir = cli::resolve_assets_dir(assets_flag);
    });
  };

  cli::ModelFlags model_flags;
  auto* model = app.add_subcommand("model", "analytical throughput and lag studies");
  add_common(model, true);
  model->add_flag("--case-study", model_flags.case_study,
                  "run the bundled capacity case study and print the speedup");
  model->add_flag("--speedup-vs-lag", model_flags.speedup_vs_lag,
                  "sweep throughput against the lag cap");
  model->add_flag("--pareto", model_flags.pareto, "emit throughput/effectiveness pairs");
  model->add_flag("--search", model_flags.search, "exhaustive (H, I) configuration search");

  auto* sim = app.add_subcommand("sim", "tick-level simulation of a training scheme");
  add_common(sim, true);

  std::string experiment;
  auto* rlcheck = app.add_subcommand("rlcheck", "off-policy math experiments");
  add_common(rlcheck, true);
  rlcheck->add_option("--experiment", experiment, "one of: ess, gradcheck, mixed-kl")
      ->required();

  auto* serve = app.add_subcommand("serve", "run the mock streaming generation engine");
  add_common(serve, false);

  std::string engine_url;
  auto* drive = app.add_subcommand("drive", "execute a scenario script against an engine");
  add_common(drive, true);
  drive->add_option("--engine", engine_url, "engine base url (overrides the script)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kExitOk : cli::kExitUsage;
  }

  try {
    if (model->parsed()) return cli::cmd_model(args, model_flags);
    if (sim->parsed()) return cli::cmd_sim(args);
    if (rlcheck->parsed()) return cli::cmd_rlcheck(args, experiment);
    if (serve->parsed()) return cli::cmd_serve(args);
    if (drive->parsed()) return cli::cmd_drive(args, engine_url);
  } catch (const streamrl::proto::ConnectivityError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kExitConnectivity;
  } catch (const streamrl::config::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kExitUsage;
  }
  return cli::kExitUsage;
}

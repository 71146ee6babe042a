// SPDX-License-Identifier: Apache-2.0
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include <json.hpp>

#include "commands.hpp"
#include "streamrl/config_io.hpp"
#include "streamrl/csv.hpp"
#include "streamrl/throughput.hpp"

namespace streamrl::cli {

namespace fs = std::filesystem;
using namespace streamrl::throughput;

namespace {

std::string fmt(double v) { return csv::format_double(v); }

void write_search_row(csv::Writer& w, long long step_cap, const SearchResult& result) {
  w.row_strings({std::to_string(step_cap), result.feasible ? "1" : "0",
                 std::to_string(result.gen_batch), std::to_string(result.inference_count),
                 fmt(result.report.r_gen), fmt(result.report.r_train),
                 fmt(result.report.r_total), std::to_string(result.report.max_lag),
                 to_string(result.report.lag_unit)});
}

}  // namespace

int cmd_model(const CommonArgs& args, const ModelFlags& flags) {
  if (!flags.case_study && !flags.speedup_vs_lag && !flags.pareto && !flags.search) {
    std::cerr << "error: model needs at least one of --case-study --speedup-vs-lag "
                 "--pareto --search\n";
    return kExitUsage;
  }
  std::string config_path = args.config_path;
  if (config_path.empty())
    config_path = (fs::path(args.assets_dir) / "configs" / "case_study.json").string();

  // Validate everything before any output lands on disk.
  const config::ModelConfig cfg = config::load_model_config(config_path);
  if (flags.search && !cfg.search_step_lag_cap.has_value())
    throw config::ConfigError("--search requires a 'search' section in " + config_path);
  if (flags.speedup_vs_lag && cfg.sample_lag_grid.empty())
    throw config::ConfigError("--speedup-vs-lag requires a non-empty sample_lag_grid in " +
                              config_path);
  if (flags.pareto && cfg.pareto_configs.empty())
    throw config::ConfigError("--pareto requires a 'pareto' section in " + config_path);

  const auto started = std::chrono::steady_clock::now();
  fs::create_directories(args.out_dir);
  std::vector<std::string> outputs;

  if (flags.case_study) {
    const long long step_cap = cfg.case_study_step_lag_cap.value_or(133);
    const SearchResult best = search_configs(cfg.n_accelerators, cfg.train_batch, cfg.curve,
                                             cfg.tau, cfg.lengths, step_cap, cfg.use_padding);
    if (!best.feasible)
      throw config::ConfigError("case study: no feasible configuration under the lag cap");
    // Conventional equivalent at the same worst-case sample lag.
    const long long sample_cap = best.report.max_lag * cfg.train_batch;
    const long long conv_sequences = sample_cap + 1;
    const ThroughputReport conv = conv_throughput_for_sequences(
        cfg.n_accelerators, conv_sequences, cfg.tau, cfg.curve, cfg.lengths, cfg.use_padding);
    const double speedup = best.report.r_total / conv.r_total;

    const std::string path = (fs::path(args.out_dir) / "case_study.csv").string();
    csv::Writer w(path);
    w.header({"r_pipeline", "r_pipeline_gen", "r_pipeline_train", "gen_batch", "inference_count",
              "max_lag_steps", "r_conv", "r_conv_gen", "r_conv_train", "conv_sequences",
              "conv_max_lag_samples", "speedup"});
    w.row_strings({fmt(best.report.r_total), fmt(best.report.r_gen), fmt(best.report.r_train),
                   std::to_string(best.gen_batch), std::to_string(best.inference_count),
                   std::to_string(best.report.max_lag), fmt(conv.r_total), fmt(conv.r_gen),
                   fmt(conv.r_train), std::to_string(conv_sequences),
                   std::to_string(conv.max_lag), fmt(speedup)});
    outputs.push_back(path);

    std::printf("case study: speedup %.3f\n", speedup);
    std::printf("  pipeline: %.3f tokens/flash at gen_batch=%d inference_count=%d "
                "(max lag %lld optimizer steps)\n",
                best.report.r_total, best.gen_batch, best.inference_count,
                static_cast<long long>(best.report.max_lag));
    std::printf("  conventional: %.3f tokens/flash at %lld sequences per RL step "
                "(max lag %lld samples)\n",
                conv.r_total, conv_sequences, static_cast<long long>(conv.max_lag));
    if (cfg.flash.has_value())
      std::printf("  time unit: 1 flash = %.3e s for the configured hardware\n",
                  throughput::flash_seconds(*cfg.flash));
  }

  if (flags.search) {
    const long long cap = *cfg.search_step_lag_cap;
    const SearchResult best = search_configs(cfg.n_accelerators, cfg.train_batch, cfg.curve,
                                             cfg.tau, cfg.lengths, cap, cfg.use_padding);
    const std::string path = (fs::path(args.out_dir) / "search.csv").string();
    csv::Writer w(path);
    w.header({"max_lag_steps_cap", "feasible", "gen_batch", "inference_count", "r_gen", "r_train",
              "r_total", "max_lag", "lag_unit"});
    write_search_row(w, cap, best);
    outputs.push_back(path);
  }

  if (flags.speedup_vs_lag) {
    const auto rows = speedup_vs_lag(cfg.n_accelerators, cfg.train_batch, cfg.curve, cfg.tau,
                                     cfg.lengths, cfg.sample_lag_grid, cfg.use_padding);
    const std::string path = (fs::path(args.out_dir) / "speedup_vs_lag.csv").string();
    csv::Writer w(path);
    w.header({"sample_lag_cap", "step_lag_cap", "pipeline_feasible", "gen_batch",
              "inference_count", "r_pipeline", "r_conv", "r_conv_gen", "r_conv_train",
              "conv_sequences", "speedup"});
    for (const auto& row : rows) {
      w.row_strings({std::to_string(row.sample_lag_cap), std::to_string(row.step_lag_cap),
                     row.pipeline.feasible ? "1" : "0", std::to_string(row.pipeline.gen_batch),
                     std::to_string(row.pipeline.inference_count),
                     fmt(row.pipeline.report.r_total), fmt(row.r_conv), fmt(row.r_conv_gen),
                     fmt(row.r_conv_train), std::to_string(row.conv_sequences),
                     fmt(row.speedup)});
    }
    outputs.push_back(path);
  }

  if (flags.pareto) {
    std::map<long long, double> proxy = cfg.pareto_proxy;
    if (cfg.pareto_proxy_kind != "table") {
      // Default proxy: monotone-nonincreasing 1 / (1 + lag).
      for (const auto& spec : cfg.pareto_configs) {
        const ThroughputReport r = spec.mode == Mode::Conventional ? conv_throughput(spec)
                                                                   : pipeline_throughput(spec);
        proxy[r.max_lag] = 1.0 / (1.0 + static_cast<double>(r.max_lag));
      }
    }
    const auto points = pareto_points(cfg.pareto_configs, proxy);
    const std::string path = (fs::path(args.out_dir) / "pareto.csv").string();
    csv::Writer w(path);
    w.header({"mode", "max_lag", "lag_unit", "tokens_per_flash", "samples_per_flash",
              "effectiveness", "learning_speed"});
    for (const auto& p : points) {
      w.row_strings({to_string(p.mode), std::to_string(p.max_lag), to_string(p.lag_unit),
                     fmt(p.tokens_per_flash), fmt(p.samples_per_flash), fmt(p.effectiveness),
                     fmt(p.learning_speed)});
    }
    outputs.push_back(path);
  }

  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::steady_clock::now() - started)
                           .count();
  nlohmann::json snapshot = nlohmann::json::parse(config::read_text_file(config_path));
  write_manifest(args.out_dir, "model", snapshot.dump(), args.seed.value_or(0), outputs, elapsed);
  return kExitOk;
}

}  // namespace streamrl::cli

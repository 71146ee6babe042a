// SPDX-License-Identifier: Apache-2.0
#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "commands.hpp"
#include "streamrl/config_io.hpp"
#include "streamrl/csv.hpp"
#include "streamrl/sim.hpp"

namespace streamrl::cli {

namespace fs = std::filesystem;

namespace {

std::string join_versions(const std::vector<std::int32_t>& versions) {
  std::ostringstream out;
  for (std::size_t i = 0; i < versions.size(); ++i) {
    if (i) out << '|';
    out << versions[i];
  }
  return out.str();
}

std::string join_histogram(const std::map<int, long long>& hist) {
  std::ostringstream out;
  bool first = true;
  for (const auto& [lag, count] : hist) {
    if (!first) out << '|';
    out << lag << ':' << count;
    first = false;
  }
  return out.str();
}

}  // namespace

int cmd_sim(const CommonArgs& args) {
  if (args.config_path.empty()) throw config::ConfigError("sim requires --config");
  sim::SimConfig cfg = config::load_sim_config(args.config_path);
  if (args.seed.has_value()) cfg.seed = *args.seed;

  const auto started = std::chrono::steady_clock::now();
  const sim::SimTrace trace = sim::run(cfg);

  fs::create_directories(args.out_dir);
  std::vector<std::string> outputs;

  {
    const std::string path = (fs::path(args.out_dir) / "ticks.csv").string();
    csv::Writer w(path);
    w.header({"tick", "in_flight", "queue_depth", "weight_version"});
    for (const auto& t : trace.ticks)
      w.row_strings({std::to_string(t.tick), std::to_string(t.in_flight),
                     std::to_string(t.queue_depth), std::to_string(t.weight_version)});
    outputs.push_back(path);
  }
  {
    const std::string path = (fs::path(args.out_dir) / "steps.csv").string();
    csv::Writer w(path);
    w.header({"step", "tick", "version_before", "sequences", "tokens", "max_lag_steps",
              "mean_lag_steps", "max_lag_samples", "mean_lag_samples", "ess", "post_warmup",
              "lag_histogram"});
    for (const auto& s : trace.steps)
      w.row_strings({std::to_string(s.step), std::to_string(s.tick),
                     std::to_string(s.version_before), std::to_string(s.sequences),
                     std::to_string(s.tokens), std::to_string(s.max_lag_steps),
                     csv::format_double(s.mean_lag_steps), std::to_string(s.max_lag_samples),
                     csv::format_double(s.mean_lag_samples), csv::format_double(s.ess),
                     s.post_warmup ? "1" : "0", join_histogram(s.lag_histogram_steps)});
    outputs.push_back(path);
  }
  {
    const std::string path = (fs::path(args.out_dir) / "sequences.csv").string();
    csv::Writer w(path);
    w.header({"id", "start_tick", "finish_tick", "start_version", "consumed_step", "outcome",
              "token_versions"});
    for (const auto& s : trace.sequences)
      w.row_strings({std::to_string(s.id), std::to_string(s.start_tick),
                     std::to_string(s.finish_tick), std::to_string(s.start_version),
                     std::to_string(s.consumed_step), s.outcome,
                     join_versions(s.token_versions)});
    outputs.push_back(path);
  }
  {
    const std::string path = (fs::path(args.out_dir) / "events.jsonl").string();
    std::ofstream out(path);
    for (const auto& e : trace.events) {
      nlohmann::json doc = {{"tick", e.tick}, {"kind", e.kind}};
      for (const auto& [key, value] : e.fields) doc[key] = value;
      out << doc.dump() << '\n';
    }
    outputs.push_back(path);
  }
  {
    const std::string path = (fs::path(args.out_dir) / "trace.json").string();
    config::write_text_file(path, trace.to_json() + "\n");
    outputs.push_back(path);
  }

  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::steady_clock::now() - started)
                           .count();
  write_manifest(args.out_dir, "sim", cfg.to_json(), cfg.seed, outputs, elapsed);
  return kExitOk;
}

}  // namespace streamrl::cli

// SPDX-License-Identifier: Apache-2.0
#include <chrono>
#include <cstdio>
#include <filesystem>

#include "commands.hpp"
#include "streamrl/config_io.hpp"
#include "streamrl/protocol.hpp"

namespace streamrl::cli {

namespace fs = std::filesystem;

int cmd_drive(const CommonArgs& args, const std::string& engine_url) {
  if (args.config_path.empty()) throw config::ConfigError("drive requires --config <script>");
  const std::string base_dir = fs::path(args.config_path).parent_path().string();
  const proto::Scenario scenario =
      proto::Scenario::from_json(config::read_text_file(args.config_path), base_dir);

  const std::string target = !engine_url.empty() ? engine_url : scenario.engine_url;
  if (target.empty())
    throw config::ConfigError("no engine url: pass --engine or set 'engine' in the script");

  const auto started = std::chrono::steady_clock::now();
  const proto::Transcript transcript = proto::drive_scenario(target, scenario);

  fs::create_directories(args.out_dir);
  const std::string path = (fs::path(args.out_dir) / "transcript.json").string();
  config::write_text_file(path, transcript.to_json() + "\n");

  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::steady_clock::now() - started)
                           .count();
  write_manifest(args.out_dir, "drive", config::read_text_file(args.config_path),
                 args.seed.value_or(0), {path}, elapsed);

  if (!transcript.ok) {
    std::fprintf(stderr, "scenario failed: %s (partial transcript written)\n",
                 transcript.failure.c_str());
    return kExitScenario;
  }
  std::printf("scenario complete: %zu streams, transcript at %s\n", transcript.streams.size(),
              path.c_str());
  return kExitOk;
}

}  // namespace streamrl::cli

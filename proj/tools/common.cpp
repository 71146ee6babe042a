// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "commands.hpp"
#include "streamrl/config_io.hpp"
#include "streamrl/version.hpp"

namespace streamrl::cli {

namespace fs = std::filesystem;

std::string resolve_assets_dir(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("STREAMRL_ASSETS"); env != nullptr && *env != '\0')
    return env;
  return STREAMRL_DEFAULT_ASSETS;
}

void write_manifest(const std::string& out_dir, const std::string& subcommand,
                    const std::string& config_snapshot_json, std::uint64_t seed,
                    const std::vector<std::string>& outputs, long long duration_ms) {
  nlohmann::json doc = {{"schema", "streamrl.manifest/1"},
                        {"subcommand", subcommand},
                        {"tool_version", kToolVersion},
                        {"seed", seed},
                        {"config", nlohmann::json::parse(config_snapshot_json)},
                        {"outputs", outputs},
                        {"duration_ms", duration_ms}};
  config::write_text_file((fs::path(out_dir) / "manifest.json").string(), doc.dump(2) + "\n");
}

}  // namespace streamrl::cli

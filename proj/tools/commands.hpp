// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace streamrl::cli {

// Process exit codes; no others are used.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitConnectivity = 3;
inline constexpr int kExitScenario = 4;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::string assets_dir;  // resolved: --assets > $STREAMRL_ASSETS > built-in
};

struct ModelFlags {
  bool case_study = false;
  bool speedup_vs_lag = false;
  bool pareto = false;
  bool search = false;
};

std::string resolve_assets_dir(const std::string& flag_value);

/// Writes manifest.json next to the outputs; every run emits exactly one.
void write_manifest(const std::string& out_dir, const std::string& subcommand,
                    const std::string& config_snapshot_json, std::uint64_t seed,
                    const std::vector<std::string>& outputs, long long duration_ms);

int cmd_model(const CommonArgs& args, const ModelFlags& flags);
int cmd_sim(const CommonArgs& args);
int cmd_rlcheck(const CommonArgs& args, const std::string& experiment);
int cmd_serve(const CommonArgs& args);
int cmd_drive(const CommonArgs& args, const std::string& engine_url);

}  // namespace streamrl::cli

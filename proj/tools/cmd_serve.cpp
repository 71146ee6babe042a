// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <thread>

#include "commands.hpp"
#include "streamrl/config_io.hpp"
#include "streamrl/protocol.hpp"

namespace streamrl::cli {

namespace {

std::atomic<bool> g_stop_requested{false};

void handle_signal(int) { g_stop_requested.store(true); }

}  // namespace

int cmd_serve(const CommonArgs& args) {
  if (args.config_path.empty()) throw config::ConfigError("serve requires --config");
  const config::ServeConfig cfg = config::load_serve_config(args.config_path);

  proto::Engine engine({rlmath::policy_from_file(cfg.policy_path), cfg.recompute_state,
                        cfg.start_paused});
  proto::EngineServer server(engine, cfg.host);
  const int port = server.start(cfg.port);

  std::printf("engine listening on http://%s:%d\n", cfg.host.c_str(), port);
  std::printf("endpoints: /v1/chat/completions /init_process_group /request_weight_update\n");
  std::fflush(stdout);

  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  while (!g_stop_requested.load())
    std::this_thread::sleep_for(std::chrono::milliseconds(100));

  server.stop();
  if (!args.out_dir.empty()) {
    std::filesystem::create_directories(args.out_dir);
    write_manifest(args.out_dir, "serve", config::read_text_file(args.config_path),
                   args.seed.value_or(0), {}, 0);
  }
  return kExitOk;
}

}  // namespace streamrl::cli

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "streamrl/engine.hpp"

namespace streamrl::proto {

/// HTTP front end for an Engine. Serves the three protocol endpoints
/// (/v1/chat/completions, /init_process_group, /request_weight_update) plus
/// the control plane (/healthz, /admin/*) described in docs/protocol.md.
class EngineServer {
 public:
  EngineServer(Engine& engine, std::string host);
  ~EngineServer();

  /// Binds `port` (0 picks an ephemeral port) and serves on a background
  /// thread. Throws on bind failure. Returns the bound port.
  int start(int port);
  void stop();

  const std::string& host() const { return host_; }
  int port() const { return port_; }
  std::string base_url() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  Engine& engine_;
  std::string host_;
  int port_ = 0;
};

struct ConnectivityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenerationRequest {
  std::string prompt_id;
  int max_tokens = 1;
  std::uint64_t seed = 0;
  std::int32_t terminator_token = -1;
};

struct StreamResult {
  std::vector<TokenEvent> events;
  FinishReason finish = FinishReason::Running;
};

/// Client for one engine endpoint.
class EngineClient {
 public:
  explicit EngineClient(std::string base_url);

  bool healthy() const;
  int weight_version() const;
  int active_streams() const;

  /// Streams a full generation; `on_event` (optional) observes tokens as
  /// they arrive.
  StreamResult generate(const GenerationRequest& request,
                        const std::function<void(const TokenEvent&)>& on_event = nullptr) const;

  UpdateResult request_weight_update(int new_version, const rlmath::Policy& policy,
                                     const std::string& group_id = {}) const;

  std::string init_process_group(const std::vector<std::string>& members) const;

  // Control plane.
  void pause() const;
  void resume() const;
  long long advance(int rounds) const;

  const std::string& base_url() const { return base_url_; }

 private:
  std::string base_url_;
  std::string host_;
  int port_ = 0;
};

/// Forms a process group across several engines: health-checks every member
/// first (so an unreachable member aborts with no partial group), then
/// registers the canonical member list with each. Returns the group id.
std::string init_process_group(const std::vector<std::string>& member_urls);

/// Pushes one weight update to every engine of a group, in member order.
std::vector<UpdateResult> request_group_weight_update(const std::vector<std::string>& member_urls,
                                                      int new_version,
                                                      const rlmath::Policy& policy,
                                                      const std::string& group_id);

/// Scripted scenario against a live engine; see docs/protocol.md for the
/// action grammar. Lockstep scripts (pause/advance) land updates at exact
/// token positions, which makes transcripts replayable and diffable.
struct ScenarioStep {
  std::string action;  // pause|resume|advance|start_stream|update_weights|await_all
  std::string name;    // start_stream
  GenerationRequest request;
  int rounds = 0;             // advance
  int new_version = 0;        // update_weights
  std::string policy_json;    // update_weights
  long long timeout_ms = 10000;  // await_all
};

struct Scenario {
  std::string engine_url;  // optional default target
  std::vector<ScenarioStep> steps;

  static Scenario from_json(const std::string& text, const std::string& base_dir);
};

struct Transcript {
  bool ok = true;
  std::string failure;  // first failing step description
  std::map<std::string, StreamResult> streams;       // by script name
  std::vector<std::string> log;                      // one line per executed step
  std::string to_json() const;
};

Transcript drive_scenario(const std::string& engine_url, const Scenario& scenario);

}  // namespace streamrl::proto

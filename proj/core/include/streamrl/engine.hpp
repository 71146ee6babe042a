// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "streamrl/policy.hpp"
#include "streamrl/rng.hpp"

namespace streamrl::proto {

/// One emitted token of a generation stream, stamped with the weight
/// version that produced it.
struct TokenEvent {
  std::string stream_id;
  int position = 0;
  std::int32_t token = 0;
  double logprob = 0.0;
  int weight_version = 0;
};

enum class FinishReason { Running, Length, Terminator, Shutdown };

std::string to_string(FinishReason reason);

struct UpdateResult {
  bool applied = false;
  int version = 0;      // applied or current version
  std::string error;    // "version_conflict" | "checksum_mismatch" | empty
};

/// Mock streaming generation engine. The scheduler advances every active
/// stream one token per round; weight updates acquire the same lock the
/// round holds, so a swap can only happen at a token boundary and every
/// token is computed entirely under one weight version.
class Engine {
 public:
  struct Options {
    rlmath::Policy policy;
    bool recompute_state = false;  // rebuild recurrent state after each swap
    bool start_paused = false;     // lockstep mode: rounds run only on advance()
  };

  explicit Engine(Options options);
  ~Engine();

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  /// Registers a stream; emission starts on the next scheduling round. The
  /// per-stream sampler is SplitMix64 seeded directly with `seed`.
  std::string open_stream(const std::string& prompt_id, int max_tokens, std::uint64_t seed,
                          std::int32_t terminator_token);

  /// Blocks until at least one new event or the stream finishes; drains all
  /// available events. Returns false once the stream is finished and fully
  /// drained.
  bool wait_events(const std::string& stream_id, std::vector<TokenEvent>& out,
                   FinishReason& reason);

  /// Validates and atomically applies a weight update; a rejected update
  /// leaves the engine state untouched.
  UpdateResult apply_weight_update(int new_version, rlmath::Policy policy);

  /// Lockstep control: run exactly `rounds` scheduling rounds, blocking
  /// until done. Returns the number of tokens emitted.
  long long advance(int rounds);
  void pause();
  void resume();

  int weight_version() const;
  int active_streams() const;
  long long total_streams() const;  // ever opened
  long long rounds_done() const;
  bool recompute_state_mode() const;

  void set_process_group(std::string group_id, std::vector<std::string> members);
  std::optional<std::string> process_group_id() const;

  void stop();  // finish all streams with Shutdown

 private:
  struct Stream;

  void scheduler_loop();
  bool run_round_locked();  // one round under lock_; true if any stream advanced

  Options options_;
  mutable std::mutex lock_;
  std::condition_variable work_cv_;
  int weight_version_ = 0;
  long long next_stream_ = 0;
  std::vector<std::unique_ptr<Stream>> streams_;
  std::optional<std::string> group_id_;
  std::vector<std::string> group_members_;
  bool paused_ = false;
  long long round_budget_ = 0;  // pending lockstep rounds
  long long rounds_done_ = 0;
  bool stopping_ = false;
  std::thread scheduler_;
};

/// CRC-32 (IEEE 802.3 polynomial) over a byte string; the payload checksum
/// of the weight-update endpoint.
std::uint32_t crc32(std::string_view bytes);

/// Canonical process-group id for a member list: order-insensitive.
std::string process_group_id(std::vector<std::string> members);

}  // namespace streamrl::proto

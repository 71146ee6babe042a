// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "streamrl/policy.hpp"
#include "streamrl/throughput.hpp"

namespace streamrl::sim {

enum class Mode { Conventional, Pipeline };

std::string to_string(Mode mode);

/// Tick-level simulation parameters. One tick is one decode step for every
/// in-progress sequence; trainer cost is expressed in ticks.
struct SimConfig {
  Mode mode = Mode::Pipeline;
  int n_inference_units = 1;
  int gen_batch = 1;           // slots per inference unit (pipeline)
  int train_batch = 1;
  int steps_per_rl_step = 1;   // conventional only
  int train_ticks_per_step = 1;
  int weight_transfer_pause_ticks = 0;
  int preprocessor_delay_ticks = 0;
  int queue_capacity = 1;
  throughput::LengthDistribution lengths;
  int total_optimizer_steps = 1;
  double drift_magnitude = 0.0;  // per-step log-prob drift for the ESS column
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static SimConfig from_json(const std::string& text);
};

/// Synthetic off-policyness model: a token trained g optimizer steps after
/// emission contributes -magnitude * g to its sequence's log-ratio
/// ln pi - ln mu. Purely an instrument for ESS traces; never calibrated to
/// any measured system.
struct DriftModel {
  double magnitude = 0.0;
  std::uint64_t seed = 0;
  std::optional<rlmath::TabularPolicy> base_policy;  // carried for experiments that
                                                     // materialize the drifted policies
};

struct TickRecord {
  long long tick = 0;
  int in_flight = 0;
  int queue_depth = 0;
  int weight_version = 0;
};

struct StepRecord {
  int step = 0;  // optimizer step index, 0-based
  long long tick = 0;
  int version_before = 0;
  int sequences = 0;
  long long tokens = 0;
  std::map<int, long long> lag_histogram_steps;  // token lag in optimizer steps -> count
  long long max_lag_steps = 0;
  double mean_lag_steps = 0.0;
  long long max_lag_samples = 0;
  double mean_lag_samples = 0.0;
  std::vector<long long> sequence_lag_sums_steps;  // per consumed sequence
  std::vector<int> sequence_lengths;
  double ess = 1.0;
  bool post_warmup = false;
};

struct SimEvent {
  long long tick = 0;
  std::string kind;  // "weight_update" | "stall" | "eviction"
  std::map<std::string, long long> fields;
};

struct SequenceRecord {
  long long id = 0;
  long long start_tick = 0;
  long long finish_tick = -1;
  int start_version = 0;
  int consumed_step = -1;  // -1: evicted or left over
  std::string outcome;     // "consumed" | "evicted" | "pending"
  std::vector<std::int32_t> token_versions;
};

struct SimTrace {
  SimConfig config;
  std::vector<TickRecord> ticks;
  std::vector<StepRecord> steps;
  std::vector<SimEvent> events;
  std::vector<SequenceRecord> sequences;

  long long generated = 0;
  long long consumed = 0;
  long long evicted = 0;
  long long pending_end = 0;  // in queue, in the preprocessor, or still decoding
  int first_post_warmup_step = -1;

  std::string to_json() const;
  static SimTrace from_json(const std::string& text);
};

SimTrace run_conventional(const SimConfig& config);
SimTrace run_pipeline(const SimConfig& config);
SimTrace run(const SimConfig& config);

/// Runs the config twice and checks the serialized traces are identical
/// before returning; the determinism harness for external callers.
SimTrace replay(const SimConfig& config);

/// Per-step token-lag histograms for steps in [from_step, to_step).
std::vector<std::map<int, long long>> lag_structure(const SimTrace& trace, int from_step,
                                                    int to_step);

/// Per-step batch ESS under a drift model: sequence weights are
/// min(5, exp(-magnitude * sum of token step lags)).
std::vector<double> ess_trace(const SimTrace& trace, const DriftModel& drift);

}  // namespace streamrl::sim

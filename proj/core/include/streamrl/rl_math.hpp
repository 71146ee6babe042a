// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "streamrl/policy.hpp"
#include "streamrl/trajectory.hpp"

namespace streamrl::rlmath {

inline constexpr std::int32_t kNoTerminator = -1;

/// Per-position log-probabilities of `tokens` under `policy`; their sum is
/// the sequence log-probability.
std::vector<double> policy_logprobs(const Policy& policy, const std::string& prompt_id,
                                    std::span<const std::int32_t> tokens);

/// min(c, exp(pi_logprob_sum - mu_logprob_sum)).
double truncated_is_weight(double pi_logprob_sum, double mu_logprob_sum, double clamp);

/// Normalized effective sample size (sum w)^2 / (N * sum w^2), in (0, 1].
/// Throws EssUndefinedError when every weight is zero.
double ess(std::span<const double> weights);

struct EssUndefinedError : std::invalid_argument {
  EssUndefinedError() : std::invalid_argument("ess undefined: all weights are zero") {}
};

BaselineTable fit_baseline(std::span<const Trajectory> trajectories);

/// Gradient accumulator shaped like TabularPolicy logits. Rows absent from
/// `rows` are zero; contributions through the fallback row accumulate in
/// `default_row`.
struct GradientTable {
  std::map<ContextKey, std::vector<double>> rows;
  std::vector<double> default_row;

  double max_abs() const;
  /// Largest absolute elementwise difference against another table.
  double max_abs_diff(const GradientTable& other) const;
};

GradientTable reinforce_gradient(const TabularPolicy& policy,
                                 std::span<const Trajectory> trajectories,
                                 const BaselineTable& baseline);

enum class IsWeightGranularity { Sequence, PerToken };

/// REINFORCE gradient with each contribution scaled by the truncated
/// importance weight. The default applies one sequence-level ratio per
/// trajectory; PerToken clamps the per-position ratio instead.
GradientTable is_reinforce_gradient(const TabularPolicy& policy,
                                    std::span<const Trajectory> trajectories,
                                    const BaselineTable& baseline, double clamp,
                                    IsWeightGranularity granularity = IsWeightGranularity::Sequence);

/// Ancestral sampling. Trajectory i draws from the substream
/// rng::derive_stream(seed, i); behavior_versions are all zero.
std::vector<Trajectory> sample_trajectories(const Policy& policy, const std::string& prompt_id,
                                            int count, int max_len, std::uint64_t seed,
                                            std::int32_t terminator_token = kNoTerminator);

/// Token positions at which a mixed behavior policy advances to the next
/// checkpoint. The first segment is twice as long as the rest, mirroring the
/// warmup bubble before the first weight update lands.
struct MixedPolicySchedule {
  int max_len = 0;
  int max_lag = 0;
  std::vector<int> switch_points;  // strictly increasing, all < max_len

  static MixedPolicySchedule make(int max_len, int max_lag);

  std::size_t segment_count() const { return switch_points.size() + 1; }
  /// Segment (= checkpoint offset) owning position `t`.
  std::size_t segment_at(int position) const;
};

/// Sample sequences whose tokens switch checkpoint per the schedule.
/// With recompute_state = false a recurrent policy keeps the hidden state
/// computed under earlier checkpoints across a switch; with true the state
/// is re-derived from the token prefix under the new checkpoint.
/// behavior_versions stamp each token with its segment's checkpoint index.
std::vector<Trajectory> mixed_policy_sample(std::span<const Policy> checkpoints,
                                            const MixedPolicySchedule& schedule,
                                            bool recompute_state, const std::string& prompt_id,
                                            int count, int max_len, std::uint64_t seed,
                                            std::int32_t terminator_token = kNoTerminator);

/// Behavior side of a KL comparison: either a single policy or a mixed
/// checkpoint schedule.
struct BehaviorSpec {
  std::vector<Policy> checkpoints;  // size 1 means single-policy behavior
  std::optional<MixedPolicySchedule> schedule;
  bool recompute_state = false;

  static BehaviorSpec single(Policy policy);
  static BehaviorSpec mixed(std::vector<Policy> checkpoints, MixedPolicySchedule schedule,
                            bool recompute_state);
};

/// Mean exact categorical KL(behavior || target) per position over the
/// supplied prefixes. Position t of a prefix contributes iff the prefix has
/// more than t tokens. Computed in closed form over the vocab.
std::vector<double> kl_per_position(const BehaviorSpec& behavior, const Policy& target,
                                    const std::string& prompt_id,
                                    std::span<const Trajectory> prefixes);

/// Experiment helpers: seeded random policies and drifting checkpoint
/// chains (checkpoint i+1 = i plus gaussian noise scaled by `magnitude`).
TabularPolicy random_tabular_policy(std::int32_t vocab_size, std::int32_t context_order,
                                    const std::vector<ContextKey>& keys, double scale,
                                    std::uint64_t seed);
RecurrentToyPolicy random_recurrent_policy(std::int32_t vocab_size, std::int32_t hidden_dim,
                                           double scale, std::uint64_t seed);
std::vector<Policy> drift_checkpoints(const Policy& base, int count, double magnitude,
                                      std::uint64_t seed);

}  // namespace streamrl::rlmath

// SPDX-License-Identifier: Apache-2.0
#include "streamrl/rl_math.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "streamrl/numeric.hpp"
#include "streamrl/rng.hpp"

namespace streamrl::rlmath {

namespace {

void check_tokens_in_vocab(std::span<const std::int32_t> tokens, std::int32_t vocab_size) {
  for (auto t : tokens)
    if (t < 0 || t >= vocab_size)
      throw std::invalid_argument("token " + std::to_string(t) + " out of vocab range");
}

/// Walks one sequence position by position under a (possibly mixed) policy
/// chain, handling recurrent-state carryover across checkpoint switches.
/// This is the single evaluation path shared by sampling and by KL scoring,
/// so the two always agree bit for bit.
class PolicyWalker {
 public:
  PolicyWalker(std::span<const Policy> checkpoints, const MixedPolicySchedule* schedule,
               bool recompute_state, std::string prompt_id)
      : checkpoints_(checkpoints),
        schedule_(schedule),
        recompute_state_(recompute_state),
        prompt_id_(std::move(prompt_id)) {
    if (checkpoints_.empty()) throw std::invalid_argument("no checkpoints supplied");
    if (std::holds_alternative<RecurrentToyPolicy>(checkpoints_.front()))
      state_ = std::get<RecurrentToyPolicy>(checkpoints_.front()).initial_state();
  }

  std::size_t segment(int position) const {
    return schedule_ == nullptr ? 0 : schedule_->segment_at(position);
  }

  /// Log-probabilities of the token at `position` given the prefix so far.
  std::vector<double> next_logprobs(int position) {
    maybe_switch(position);
    const Policy& policy = checkpoints_[current_];
    if (const auto* tab = std::get_if<TabularPolicy>(&policy))
      return tab->next_token_logprobs(prompt_id_, prefix_);
    return std::get<RecurrentToyPolicy>(policy).next_token_logprobs(state_);
  }

  /// Records the emitted token and advances the recurrent state under the
  /// checkpoint that emitted it.
  void push(std::int32_t token) {
    const Policy& policy = checkpoints_[current_];
    if (const auto* rec = std::get_if<RecurrentToyPolicy>(&policy)) rec->advance_state(state_, token);
    prefix_.push_back(token);
  }

  int current_checkpoint() const { return static_cast<int>(current_); }

 private:
  void maybe_switch(int position) {
    const std::size_t target = std::min(segment(position), checkpoints_.size() - 1);
    if (target == current_) return;
    current_ = target;
    if (recompute_state_) {
      if (const auto* rec = std::get_if<RecurrentToyPolicy>(&checkpoints_[current_]))
        state_ = rec->state_for_prefix(prefix_);
    }
    // Stale mode keeps state_ as computed under the earlier checkpoints.
  }

  std::span<const Policy> checkpoints_;
  const MixedPolicySchedule* schedule_;
  bool recompute_state_;
  std::string prompt_id_;
  std::size_t current_ = 0;
  std::vector<std::int32_t> prefix_;
  std::vector<double> state_;
};

std::vector<Trajectory> sample_with_walker(std::span<const Policy> checkpoints,
                                           const MixedPolicySchedule* schedule,
                                           bool recompute_state, const std::string& prompt_id,
                                           int count, int max_len, std::uint64_t seed,
                                           std::int32_t terminator_token) {
  if (count < 1) throw std::invalid_argument("count must be >= 1");
  if (max_len < 1) throw std::invalid_argument("max_len must be >= 1");
  for (const auto& p : checkpoints) validate(p);
  const std::int32_t vocab = vocab_size_of(checkpoints.front());
  for (const auto& p : checkpoints)
    if (vocab_size_of(p) != vocab)
      throw std::invalid_argument("checkpoints disagree on vocab size");
  if (schedule != nullptr) {
    if (max_len > schedule->max_len)
      throw std::invalid_argument("schedule inconsistent with max_len");
    if (checkpoints.size() < schedule->segment_count())
      throw std::invalid_argument("fewer checkpoints than schedule segments");
  }

  std::vector<Trajectory> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    rng::SplitMix64 gen(rng::derive_stream(seed, static_cast<std::uint64_t>(i)));
    PolicyWalker walker(checkpoints, schedule, recompute_state, prompt_id);
    Trajectory traj;
    traj.prompt_id = prompt_id;
    for (int t = 0; t < max_len; ++t) {
      const auto logprobs = walker.next_logprobs(t);
      std::vector<double> probs(logprobs.size());
      for (std::size_t k = 0; k < probs.size(); ++k) probs[k] = std::exp(logprobs[k]);
      const int token = rng::sample_categorical(gen, probs);
      traj.tokens.push_back(token);
      traj.behavior_logprobs.push_back(logprobs[token]);
      traj.behavior_versions.push_back(walker.current_checkpoint());
      walker.push(token);
      if (token == terminator_token) break;
    }
    out.push_back(std::move(traj));
  }
  return out;
}

}  // namespace

std::vector<double> policy_logprobs(const Policy& policy, const std::string& prompt_id,
                                    std::span<const std::int32_t> tokens) {
  validate(policy);
  check_tokens_in_vocab(tokens, vocab_size_of(policy));
  std::vector<Policy> single{policy};
  PolicyWalker walker(single, nullptr, false, prompt_id);
  std::vector<double> out;
  out.reserve(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto logprobs = walker.next_logprobs(static_cast<int>(t));
    out.push_back(logprobs[tokens[t]]);
    walker.push(tokens[t]);
  }
  return out;
}

double truncated_is_weight(double pi_logprob_sum, double mu_logprob_sum, double clamp) {
  if (clamp <= 0.0 || !std::isfinite(clamp))
    throw std::invalid_argument("truncated_is_weight: clamp must be positive");
  if (!std::isfinite(pi_logprob_sum) || !std::isfinite(mu_logprob_sum))
    throw std::invalid_argument("truncated_is_weight: non-finite log-probability");
  return std::min(clamp, std::exp(pi_logprob_sum - mu_logprob_sum));
}

double ess(std::span<const double> weights) {
  if (weights.empty()) throw std::invalid_argument("ess: empty weight vector");
  double sum = 0.0, sum_sq = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0)
      throw std::invalid_argument("ess: weights must be finite and nonnegative");
    sum += w;
    sum_sq += w * w;
  }
  if (sum_sq == 0.0) throw EssUndefinedError();
  return (sum * sum) / (static_cast<double>(weights.size()) * sum_sq);
}

BaselineTable fit_baseline(std::span<const Trajectory> trajectories) {
  if (trajectories.empty()) throw std::invalid_argument("fit_baseline: no trajectories");
  std::map<std::pair<std::string, std::size_t>, std::pair<double, long long>> cells;
  for (const auto& traj : trajectories) {
    traj.validate();
    for (std::size_t t = 0; t < traj.length(); ++t) {
      auto& [sum, n] = cells[{traj.prompt_id, t}];
      sum += traj.reward;
      n += 1;
    }
  }
  BaselineTable table;
  for (const auto& [key, acc] : cells) table.values[key] = acc.first / acc.second;
  return table;
}

double GradientTable::max_abs() const {
  double m = 0.0;
  for (const auto& [key, row] : rows)
    for (double v : row) m = std::max(m, std::abs(v));
  for (double v : default_row) m = std::max(m, std::abs(v));
  return m;
}

double GradientTable::max_abs_diff(const GradientTable& other) const {
  double m = 0.0;
  auto row_diff = [&m](const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = std::max(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) {
      const double x = i < a.size() ? a[i] : 0.0;
      const double y = i < b.size() ? b[i] : 0.0;
      m = std::max(m, std::abs(x - y));
    }
  };
  for (const auto& [key, row] : rows) {
    auto it = other.rows.find(key);
    row_diff(row, it == other.rows.end() ? std::vector<double>{} : it->second);
  }
  for (const auto& [key, row] : other.rows)
    if (rows.find(key) == rows.end()) row_diff(std::vector<double>{}, row);
  row_diff(default_row, other.default_row);
  return m;
}

namespace {

GradientTable weighted_reinforce_gradient(const TabularPolicy& policy,
                                          std::span<const Trajectory> trajectories,
                                          const BaselineTable& baseline, double clamp,
                                          bool use_is_weights,
                                          IsWeightGranularity granularity) {
  policy.validate();
  if (trajectories.empty()) throw std::invalid_argument("reinforce_gradient: no trajectories");
  GradientTable grad;
  const double inv_m = 1.0 / static_cast<double>(trajectories.size());
  for (const auto& traj : trajectories) {
    traj.validate();
    check_tokens_in_vocab(traj.tokens, policy.vocab_size);
    const auto logprobs = policy_logprobs(policy, traj.prompt_id, traj.tokens);

    double seq_weight = 1.0;
    if (use_is_weights && granularity == IsWeightGranularity::Sequence) {
      const double pi_sum = std::accumulate(logprobs.begin(), logprobs.end(), 0.0);
      seq_weight = truncated_is_weight(pi_sum, traj.behavior_logprob_sum(), clamp);
    }

    for (std::size_t t = 0; t < traj.length(); ++t) {
      const double advantage = traj.reward - baseline.at(traj.prompt_id, t);
      double weight = seq_weight;
      if (use_is_weights && granularity == IsWeightGranularity::PerToken)
        weight = truncated_is_weight(logprobs[t], traj.behavior_logprobs[t], clamp);
      const double scale = inv_m * weight * advantage;
      if (scale == 0.0) continue;

      const ContextKey key = policy.context_at(traj.prompt_id, traj.tokens, t);
      const std::vector<double>* row = policy.find_row(key);
      std::vector<double>* target = nullptr;
      std::vector<double> probs;
      if (row != nullptr) {
        probs = numeric::softmax(*row);
        target = &grad.rows[key];
      } else {
        probs = policy.default_logits.empty()
                    ? std::vector<double>(policy.vocab_size, 1.0 / policy.vocab_size)
                    : numeric::softmax(policy.default_logits);
        target = &grad.default_row;
      }
      if (target->empty()) target->assign(policy.vocab_size, 0.0);
      for (std::int32_t k = 0; k < policy.vocab_size; ++k) {
        const double indicator = (k == traj.tokens[t]) ? 1.0 : 0.0;
        (*target)[k] += scale * (indicator - probs[k]);
      }
    }
  }
  return grad;
}

}  // namespace

GradientTable reinforce_gradient(const TabularPolicy& policy,
                                 std::span<const Trajectory> trajectories,
                                 const BaselineTable& baseline) {
  return weighted_reinforce_gradient(policy, trajectories, baseline, 1.0, false,
                                     IsWeightGranularity::Sequence);
}

GradientTable is_reinforce_gradient(const TabularPolicy& policy,
                                    std::span<const Trajectory> trajectories,
                                    const BaselineTable& baseline, double clamp,
                                    IsWeightGranularity granularity) {
  return weighted_reinforce_gradient(policy, trajectories, baseline, clamp, true, granularity);
}

std::vector<Trajectory> sample_trajectories(const Policy& policy, const std::string& prompt_id,
                                            int count, int max_len, std::uint64_t seed,
                                            std::int32_t terminator_token) {
  std::vector<Policy> single{policy};
  return sample_with_walker(single, nullptr, false, prompt_id, count, max_len, seed,
                            terminator_token);
}

MixedPolicySchedule MixedPolicySchedule::make(int max_len, int max_lag) {
  if (max_len < 1) throw std::invalid_argument("schedule: max_len must be positive");
  if (max_lag < 1) throw std::invalid_argument("schedule: max_lag must be positive");
  MixedPolicySchedule s;
  s.max_len = max_len;
  s.max_lag = max_lag;
  const int first = (2 * max_len) / max_lag;
  const int step = max_len / max_lag;
  int t = first;
  while (t < max_len && static_cast<int>(s.switch_points.size()) < max_lag) {
    s.switch_points.push_back(t);
    if (step == 0) break;  // further points would repeat
    t += step;
  }
  return s;
}

std::size_t MixedPolicySchedule::segment_at(int position) const {
  std::size_t g = 0;
  for (int sp : switch_points) {
    if (position >= sp) ++g;
    else break;
  }
  return g;
}

std::vector<Trajectory> mixed_policy_sample(std::span<const Policy> checkpoints,
                                            const MixedPolicySchedule& schedule,
                                            bool recompute_state, const std::string& prompt_id,
                                            int count, int max_len, std::uint64_t seed,
                                            std::int32_t terminator_token) {
  return sample_with_walker(checkpoints, &schedule, recompute_state, prompt_id, count, max_len,
                            seed, terminator_token);
}

BehaviorSpec BehaviorSpec::single(Policy policy) {
  BehaviorSpec spec;
  spec.checkpoints.push_back(std::move(policy));
  return spec;
}

BehaviorSpec BehaviorSpec::mixed(std::vector<Policy> checkpoints, MixedPolicySchedule schedule,
                                 bool recompute_state) {
  BehaviorSpec spec;
  spec.checkpoints = std::move(checkpoints);
  spec.schedule = std::move(schedule);
  spec.recompute_state = recompute_state;
  return spec;
}

std::vector<double> kl_per_position(const BehaviorSpec& behavior, const Policy& target,
                                    const std::string& prompt_id,
                                    std::span<const Trajectory> prefixes) {
  if (behavior.checkpoints.empty()) throw std::invalid_argument("kl: empty behavior spec");
  validate(target);
  const std::int32_t vocab = vocab_size_of(target);
  for (const auto& p : behavior.checkpoints)
    if (vocab_size_of(p) != vocab) throw std::invalid_argument("kl: vocab size mismatch");

  std::size_t max_positions = 0;
  for (const auto& prefix : prefixes) max_positions = std::max(max_positions, prefix.length());
  std::vector<double> sums(max_positions, 0.0);
  std::vector<long long> counts(max_positions, 0);

  const MixedPolicySchedule* schedule =
      behavior.schedule.has_value() ? &*behavior.schedule : nullptr;
  std::vector<Policy> target_single{target};

  for (const auto& prefix : prefixes) {
    prefix.validate();
    check_tokens_in_vocab(prefix.tokens, vocab);
    PolicyWalker behavior_walker(behavior.checkpoints, schedule, behavior.recompute_state,
                                 prompt_id);
    PolicyWalker target_walker(target_single, nullptr, false, prompt_id);
    for (std::size_t t = 0; t < prefix.length(); ++t) {
      const auto logp = behavior_walker.next_logprobs(static_cast<int>(t));
      const auto logq = target_walker.next_logprobs(static_cast<int>(t));
      sums[t] += numeric::kl_from_logprobs(logp, logq);
      counts[t] += 1;
      behavior_walker.push(prefix.tokens[t]);
      target_walker.push(prefix.tokens[t]);
    }
  }
  for (std::size_t t = 0; t < max_positions; ++t)
    if (counts[t] > 0) sums[t] /= static_cast<double>(counts[t]);
  return sums;
}

TabularPolicy random_tabular_policy(std::int32_t vocab_size, std::int32_t context_order,
                                    const std::vector<ContextKey>& keys, double scale,
                                    std::uint64_t seed) {
  rng::SplitMix64 gen(seed);
  TabularPolicy p;
  p.vocab_size = vocab_size;
  p.context_order = context_order;
  p.default_logits.assign(vocab_size, 0.0);
  for (double& v : p.default_logits) v = scale * gen.next_gaussian();
  for (const auto& key : keys) {
    std::vector<double> row(vocab_size);
    for (double& v : row) v = scale * gen.next_gaussian();
    p.logits[key] = std::move(row);
  }
  p.validate();
  return p;
}

RecurrentToyPolicy random_recurrent_policy(std::int32_t vocab_size, std::int32_t hidden_dim,
                                           double scale, std::uint64_t seed) {
  rng::SplitMix64 gen(seed);
  RecurrentToyPolicy p;
  p.vocab_size = vocab_size;
  p.hidden_dim = hidden_dim;
  auto fill = [&](std::vector<double>& m, std::size_t n) {
    m.resize(n);
    for (double& v : m) v = scale * gen.next_gaussian();
  };
  fill(p.input_embedding, static_cast<std::size_t>(vocab_size) * hidden_dim);
  fill(p.recurrence, static_cast<std::size_t>(hidden_dim) * hidden_dim);
  fill(p.output, static_cast<std::size_t>(hidden_dim) * vocab_size);
  p.validate();
  return p;
}

std::vector<Policy> drift_checkpoints(const Policy& base, int count, double magnitude,
                                      std::uint64_t seed) {
  if (count < 1) throw std::invalid_argument("drift_checkpoints: count must be >= 1");
  if (magnitude < 0.0) throw std::invalid_argument("drift_checkpoints: negative magnitude");
  validate(base);
  std::vector<Policy> out;
  out.reserve(count);
  out.push_back(base);
  for (int i = 1; i < count; ++i) {
    rng::SplitMix64 gen(rng::derive_stream(seed, static_cast<std::uint64_t>(i)));
    Policy next = out.back();
    if (auto* tab = std::get_if<TabularPolicy>(&next)) {
      for (double& v : tab->default_logits) v += magnitude * gen.next_gaussian();
      for (auto& [key, row] : tab->logits)
        for (double& v : row) v += magnitude * gen.next_gaussian();
    } else {
      auto& rec = std::get<RecurrentToyPolicy>(next);
      for (double& v : rec.input_embedding) v += magnitude * gen.next_gaussian();
      for (double& v : rec.recurrence) v += magnitude * gen.next_gaussian();
      for (double& v : rec.output) v += magnitude * gen.next_gaussian();
    }
    out.push_back(std::move(next));
  }
  return out;
}

}  // namespace streamrl::rlmath

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace streamrl::rlmath {

/// One sampled sequence together with everything the off-policy estimators
/// need: the behavior log-probabilities and the weight version that emitted
/// each token.
struct Trajectory {
  std::string prompt_id;
  std::vector<std::int32_t> tokens;
  std::vector<double> behavior_logprobs;
  std::vector<std::int32_t> behavior_versions;
  double reward = 0.0;

  void validate() const;
  std::size_t length() const { return tokens.size(); }
  double behavior_logprob_sum() const;
};

/// Per-(prompt, position) value table; the exact least-squares minimizer is
/// the empirical mean reward of the trajectories covering each cell.
struct BaselineTable {
  std::map<std::pair<std::string, std::size_t>, double> values;

  bool contains(const std::string& prompt_id, std::size_t position) const;
  double at(const std::string& prompt_id, std::size_t position) const;
};

/// Line-delimited trajectory records: one JSON object per line with fields
/// prompt_id, tokens, behavior_logprobs, behavior_versions, reward.
std::string trajectories_to_jsonl(const std::vector<Trajectory>& trajectories);
std::vector<Trajectory> trajectories_from_jsonl(const std::string& text);
void trajectories_to_file(const std::vector<Trajectory>& trajectories, const std::string& path);
std::vector<Trajectory> trajectories_from_file(const std::string& path);

}  // namespace streamrl::rlmath

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace streamrl::rlmath {

/// Lookup key for one conditional distribution of a tabular policy: the
/// prompt plus the trailing context window.
struct ContextKey {
  std::string prompt_id;
  std::vector<std::int32_t> context;

  auto operator<=>(const ContextKey&) const = default;
};

/// Exactly evaluable categorical policy over small integer tokens. Each
/// (prompt, context window) pair maps to a logits row; contexts without an
/// explicit row resolve to `default_logits`.
struct TabularPolicy {
  std::int32_t vocab_size = 0;
  std::int32_t context_order = 0;
  std::map<ContextKey, std::vector<double>> logits;
  std::vector<double> default_logits;  // shared fallback row

  void validate() const;

  /// Context window at `position` of `tokens`: the last
  /// min(context_order, position) tokens.
  ContextKey context_at(const std::string& prompt_id,
                        std::span<const std::int32_t> tokens,
                        std::size_t position) const;

  /// Row for a context; nullptr means the default row applies.
  const std::vector<double>* find_row(const ContextKey& key) const;

  /// Log-probabilities of the next token given a prefix.
  std::vector<double> next_token_logprobs(const std::string& prompt_id,
                                          std::span<const std::int32_t> prefix) const;
};

/// Small recurrent next-token policy. Carries one hidden-state vector per
/// sequence, so a weight swap mid-sequence leaves behind state computed
/// under the old weights unless the caller recomputes it.
struct RecurrentToyPolicy {
  std::int32_t vocab_size = 0;
  std::int32_t hidden_dim = 0;
  std::vector<double> input_embedding;  // vocab_size x hidden_dim, row-major
  std::vector<double> recurrence;       // hidden_dim x hidden_dim, row-major
  std::vector<double> output;           // hidden_dim x vocab_size, row-major

  void validate() const;

  std::vector<double> initial_state() const { return std::vector<double>(hidden_dim, 0.0); }

  /// state <- tanh(recurrence * state + input_embedding[token])
  void advance_state(std::vector<double>& state, std::int32_t token) const;

  /// Hidden state after consuming a full prefix from the initial state.
  std::vector<double> state_for_prefix(std::span<const std::int32_t> prefix) const;

  /// Log-probabilities of the next token given the current hidden state.
  std::vector<double> next_token_logprobs(const std::vector<double>& state) const;
};

using Policy = std::variant<TabularPolicy, RecurrentToyPolicy>;

std::int32_t vocab_size_of(const Policy& policy);
void validate(const Policy& policy);

/// Versioned single-document policy serialization (schema
/// "streamrl.policy/1"): shape fields plus row-major weight arrays.
std::string policy_to_json(const Policy& policy);
Policy policy_from_json(const std::string& text);
Policy policy_from_file(const std::string& path);
void policy_to_file(const Policy& policy, const std::string& path);

}  // namespace streamrl::rlmath

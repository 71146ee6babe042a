// SPDX-License-Identifier: Apache-2.0
#include "streamrl/policy.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "streamrl/numeric.hpp"

#include <json.hpp>

namespace streamrl::rlmath {

namespace {

void check_logits_row(const std::vector<double>& row, std::int32_t vocab_size,
                      const char* what) {
  if (static_cast<std::int32_t>(row.size()) != vocab_size)
    throw std::invalid_argument(std::string(what) + ": row size != vocab_size");
  for (double v : row) {
    // -inf encodes a zero-probability token; +inf and NaN are malformed.
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
      throw std::invalid_argument(std::string(what) + ": non-finite logit");
  }
}

}  // namespace

void TabularPolicy::validate() const {
  if (vocab_size < 1) throw std::invalid_argument("TabularPolicy: vocab_size must be positive");
  if (context_order < 0) throw std::invalid_argument("TabularPolicy: negative context_order");
  if (!default_logits.empty()) check_logits_row(default_logits, vocab_size, "default_logits");
  for (const auto& [key, row] : logits) {
    if (static_cast<std::int32_t>(key.context.size()) > context_order)
      throw std::invalid_argument("TabularPolicy: context longer than context_order");
    for (auto t : key.context)
      if (t < 0 || t >= vocab_size)
        throw std::invalid_argument("TabularPolicy: context token out of vocab");
    check_logits_row(row, vocab_size, "logits");
  }
}

ContextKey TabularPolicy::context_at(const std::string& prompt_id,
                                     std::span<const std::int32_t> tokens,
                                     std::size_t position) const {
  const std::size_t window = std::min<std::size_t>(context_order, position);
  ContextKey key;
  key.prompt_id = prompt_id;
  key.context.assign(tokens.begin() + (position - window), tokens.begin() + position);
  return key;
}

const std::vector<double>* TabularPolicy::find_row(const ContextKey& key) const {
  auto it = logits.find(key);
  return it == logits.end() ? nullptr : &it->second;
}

std::vector<double> TabularPolicy::next_token_logprobs(
    const std::string& prompt_id, std::span<const std::int32_t> prefix) const {
  const ContextKey key = context_at(prompt_id, prefix, prefix.size());
  const std::vector<double>* row = find_row(key);
  if (row == nullptr) {
    if (default_logits.empty())
      return numeric::log_softmax(std::vector<double>(vocab_size, 0.0));
    row = &default_logits;
  }
  return numeric::log_softmax(*row);
}

void RecurrentToyPolicy::validate() const {
  if (vocab_size < 1) throw std::invalid_argument("RecurrentToyPolicy: vocab_size must be positive");
  if (hidden_dim < 1) throw std::invalid_argument("RecurrentToyPolicy: hidden_dim must be positive");
  const auto expect = [](const std::vector<double>& m, std::size_t n, const char* what) {
    if (m.size() != n) throw std::invalid_argument(std::string(what) + ": wrong element count");
    for (double v : m)
      if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite weight");
  };
  expect(input_embedding, static_cast<std::size_t>(vocab_size) * hidden_dim, "input_embedding");
  expect(recurrence, static_cast<std::size_t>(hidden_dim) * hidden_dim, "recurrence");
  expect(output, static_cast<std::size_t>(hidden_dim) * vocab_size, "output");
}

void RecurrentToyPolicy::advance_state(std::vector<double>& state, std::int32_t token) const {
  if (token < 0 || token >= vocab_size)
    throw std::invalid_argument("RecurrentToyPolicy: token out of vocab");
  std::vector<double> next(hidden_dim, 0.0);
  for (std::int32_t i = 0; i < hidden_dim; ++i) {
    double acc = input_embedding[static_cast<std::size_t>(token) * hidden_dim + i];
    const double* w = recurrence.data() + static_cast<std::size_t>(i) * hidden_dim;
    for (std::int32_t j = 0; j < hidden_dim; ++j) acc += w[j] * state[j];
    next[i] = std::tanh(acc);
  }
  state = std::move(next);
}

std::vector<double> RecurrentToyPolicy::state_for_prefix(
    std::span<const std::int32_t> prefix) const {
  std::vector<double> state = initial_state();
  for (auto t : prefix) advance_state(state, t);
  return state;
}

std::vector<double> RecurrentToyPolicy::next_token_logprobs(
    const std::vector<double>& state) const {
  std::vector<double> logits(vocab_size, 0.0);
  for (std::int32_t i = 0; i < hidden_dim; ++i) {
    const double s = state[i];
    const double* w = output.data() + static_cast<std::size_t>(i) * vocab_size;
    for (std::int32_t k = 0; k < vocab_size; ++k) logits[k] += s * w[k];
  }
  return numeric::log_softmax(logits);
}

std::int32_t vocab_size_of(const Policy& policy) {
  return std::visit([](const auto& p) { return p.vocab_size; }, policy);
}

void validate(const Policy& policy) {
  std::visit([](const auto& p) { p.validate(); }, policy);
}

namespace {

using nlohmann::json;

json tabular_to_json(const TabularPolicy& p) {
  json rows = json::array();
  for (const auto& [key, row] : p.logits) {
    rows.push_back({{"prompt_id", key.prompt_id}, {"context", key.context}, {"logits", row}});
  }
  return {{"schema", "streamrl.policy/1"},
          {"type", "tabular"},
          {"vocab_size", p.vocab_size},
          {"context_order", p.context_order},
          {"default_logits", p.default_logits},
          {"rows", rows}};
}

json recurrent_to_json(const RecurrentToyPolicy& p) {
  return {{"schema", "streamrl.policy/1"},
          {"type", "recurrent"},
          {"vocab_size", p.vocab_size},
          {"hidden_dim", p.hidden_dim},
          {"input_embedding", p.input_embedding},
          {"recurrence", p.recurrence},
          {"output", p.output}};
}

}  // namespace

std::string policy_to_json(const Policy& policy) {
  json doc = std::visit(
      [](const auto& p) -> json {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, TabularPolicy>) return tabular_to_json(p);
        else return recurrent_to_json(p);
      },
      policy);
  return doc.dump(2);
}

Policy policy_from_json(const std::string& text) {
  json doc = json::parse(text);
  if (doc.value("schema", "") != "streamrl.policy/1")
    throw std::invalid_argument("policy document: unknown schema id");
  const std::string type = doc.at("type").get<std::string>();
  if (type == "tabular") {
    TabularPolicy p;
    p.vocab_size = doc.at("vocab_size").get<std::int32_t>();
    p.context_order = doc.at("context_order").get<std::int32_t>();
    p.default_logits = doc.value("default_logits", std::vector<double>{});
    for (const auto& row : doc.value("rows", json::array())) {
      ContextKey key{row.at("prompt_id").get<std::string>(),
                     row.at("context").get<std::vector<std::int32_t>>()};
      p.logits[std::move(key)] = row.at("logits").get<std::vector<double>>();
    }
    p.validate();
    return p;
  }
  if (type == "recurrent") {
    RecurrentToyPolicy p;
    p.vocab_size = doc.at("vocab_size").get<std::int32_t>();
    p.hidden_dim = doc.at("hidden_dim").get<std::int32_t>();
    p.input_embedding = doc.at("input_embedding").get<std::vector<double>>();
    p.recurrence = doc.at("recurrence").get<std::vector<double>>();
    p.output = doc.at("output").get<std::vector<double>>();
    p.validate();
    return p;
  }
  throw std::invalid_argument("policy document: unknown type " + type);
}

Policy policy_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open policy file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return policy_from_json(ss.str());
}

void policy_to_file(const Policy& policy, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write policy file: " + path);
  out << policy_to_json(policy) << '\n';
}

}  // namespace streamrl::rlmath

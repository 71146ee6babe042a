// SPDX-License-Identifier: Apache-2.0
#include "streamrl/trajectory.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace streamrl::rlmath {

void Trajectory::validate() const {
  const std::size_t n = tokens.size();
  if (n < 1) throw std::invalid_argument("Trajectory: empty token sequence");
  if (behavior_logprobs.size() != n || behavior_versions.size() != n)
    throw std::invalid_argument("Trajectory: field lengths differ");
  for (std::size_t i = 1; i < n; ++i)
    if (behavior_versions[i] < behavior_versions[i - 1])
      throw std::invalid_argument("Trajectory: behavior_versions decrease");
  for (double lp : behavior_logprobs)
    if (std::isnan(lp)) throw std::invalid_argument("Trajectory: NaN behavior logprob");
  if (!std::isfinite(reward)) throw std::invalid_argument("Trajectory: non-finite reward");
}

double Trajectory::behavior_logprob_sum() const {
  return std::accumulate(behavior_logprobs.begin(), behavior_logprobs.end(), 0.0);
}

bool BaselineTable::contains(const std::string& prompt_id, std::size_t position) const {
  return values.count({prompt_id, position}) > 0;
}

double BaselineTable::at(const std::string& prompt_id, std::size_t position) const {
  auto it = values.find({prompt_id, position});
  if (it == values.end())
    throw std::invalid_argument("BaselineTable: missing cell (" + prompt_id + ", " +
                                std::to_string(position) + ")");
  return it->second;
}

namespace {

using nlohmann::json;

json to_json(const Trajectory& t) {
  return {{"prompt_id", t.prompt_id},
          {"tokens", t.tokens},
          {"behavior_logprobs", t.behavior_logprobs},
          {"behavior_versions", t.behavior_versions},
          {"reward", t.reward}};
}

Trajectory from_json(const json& doc) {
  Trajectory t;
  t.prompt_id = doc.at("prompt_id").get<std::string>();
  t.tokens = doc.at("tokens").get<std::vector<std::int32_t>>();
  t.behavior_logprobs = doc.at("behavior_logprobs").get<std::vector<double>>();
  t.behavior_versions = doc.at("behavior_versions").get<std::vector<std::int32_t>>();
  t.reward = doc.at("reward").get<double>();
  t.validate();
  return t;
}

}  // namespace

std::string trajectories_to_jsonl(const std::vector<Trajectory>& trajectories) {
  std::ostringstream out;
  for (const auto& t : trajectories) out << to_json(t).dump() << '\n';
  return out.str();
}

std::vector<Trajectory> trajectories_from_jsonl(const std::string& text) {
  std::vector<Trajectory> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(from_json(json::parse(line)));
  }
  return out;
}

void trajectories_to_file(const std::vector<Trajectory>& trajectories, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trajectory file: " + path);
  out << trajectories_to_jsonl(trajectories);
}

std::vector<Trajectory> trajectories_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trajectory file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return trajectories_from_jsonl(ss.str());
}

}  // namespace streamrl::rlmath

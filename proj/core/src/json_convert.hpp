// SPDX-License-Identifier: Apache-2.0
// Private nlohmann converters shared by the .cpp files; not installed.
#pragma once

#include <json.hpp>

#include "streamrl/throughput.hpp"

namespace streamrl::detail {

using nlohmann::json;

inline json lengths_to_json(const throughput::LengthDistribution& d) {
  using Kind = throughput::LengthDistribution::Kind;
  json out;
  switch (d.kind) {
    case Kind::Uniform:
      out["kind"] = "uniform";
      out["max_len"] = d.max_len;
      break;
    case Kind::Constant:
      out["kind"] = "constant";
      out["max_len"] = d.max_len;
      break;
    case Kind::Empirical:
      out["kind"] = "empirical";
      out["values"] = d.values;
      break;
  }
  return out;
}

inline throughput::LengthDistribution lengths_from_json(const json& doc) {
  const std::string kind = doc.at("kind").get<std::string>();
  if (kind == "uniform")
    return throughput::LengthDistribution::uniform(doc.at("max_len").get<int>());
  if (kind == "constant")
    return throughput::LengthDistribution::constant(doc.at("max_len").get<int>());
  if (kind == "empirical")
    return throughput::LengthDistribution::empirical(doc.at("values").get<std::vector<int>>());
  throw std::invalid_argument("lengths: unknown kind " + kind);
}

inline json curve_to_json(const throughput::UtilizationCurve& c) {
  json samples = json::array();
  for (const auto& s : c.samples) samples.push_back({s.batch_size, s.utilization});
  return {{"samples", samples}, {"padding_window", c.padding_window}};
}

inline throughput::UtilizationCurve curve_from_json(const json& doc) {
  throughput::UtilizationCurve c;
  for (const auto& s : doc.at("samples"))
    c.samples.push_back({s.at(0).get<double>(), s.at(1).get<double>()});
  c.padding_window = doc.value("padding_window", 64);
  c.validate();
  return c;
}

}  // namespace streamrl::detail

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace streamrl::numeric {

inline double log_sum_exp(std::span<const double> xs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;  // all -inf
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

inline std::vector<double> log_softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  auto out = log_softmax(logits);
  for (double& v : out) v = std::exp(v);
  return out;
}

/// Exact categorical KL(p || q) from log-probabilities. A support point with
/// p > 0 and q = 0 yields +inf, matching the analytic definition.
inline double kl_from_logprobs(std::span<const double> logp, std::span<const double> logq) {
  if (logp.size() != logq.size()) throw std::invalid_argument("kl: size mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < logp.size(); ++i) {
    const double p = std::exp(logp[i]);
    if (p == 0.0) continue;
    if (!std::isfinite(logq[i])) return std::numeric_limits<double>::infinity();
    kl += p * (logp[i] - logq[i]);
  }
  return std::max(kl, 0.0);
}

}  // namespace streamrl::numeric

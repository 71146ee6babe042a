// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "streamrl/rl_math.hpp"
#include "streamrl/rng.hpp"

using namespace streamrl;
using namespace streamrl::rlmath;

namespace {

TabularPolicy uniform_policy(std::int32_t vocab) {
  TabularPolicy p;
  p.vocab_size = vocab;
  p.context_order = 0;
  p.default_logits.assign(vocab, 0.0);
  return p;
}

TabularPolicy single_row_policy(std::vector<double> logits) {
  TabularPolicy p;
  p.vocab_size = static_cast<std::int32_t>(logits.size());
  p.context_order = 0;
  p.logits[{"p", {}}] = std::move(logits);
  p.default_logits.assign(p.vocab_size, 0.0);
  return p;
}

// Test-local sequence log-probability, written directly from the logits so
// the finite-difference oracle does not share code with the gradient path.
double oracle_token_logprob(const TabularPolicy& p, const std::string& prompt,
                            const std::vector<std::int32_t>& tokens, std::size_t t) {
  const ContextKey key = p.context_at(prompt, tokens, t);
  const std::vector<double>* row = p.find_row(key);
  if (row == nullptr) row = &p.default_logits;
  double mx = (*row)[0];
  for (double v : *row) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : *row) z += std::exp(v - mx);
  return (*row)[tokens[t]] - (mx + std::log(z));
}

double oracle_surrogate(const TabularPolicy& p, const std::vector<Trajectory>& trajs,
                        const BaselineTable& baseline) {
  double total = 0.0;
  for (const auto& traj : trajs)
    for (std::size_t t = 0; t < traj.length(); ++t)
      total += (traj.reward - baseline.at(traj.prompt_id, t)) *
               oracle_token_logprob(p, traj.prompt_id, traj.tokens, t);
  return total / static_cast<double>(trajs.size());
}

struct FdCheck {
  double max_abs_err = 0.0;
  double grad_scale = 0.0;
  double relative() const { return max_abs_err / std::max(1e-4, grad_scale); }
};

FdCheck finite_difference_check(const TabularPolicy& policy, const std::vector<Trajectory>& trajs,
                                const BaselineTable& baseline, double step) {
  const GradientTable analytic = reinforce_gradient(policy, trajs, baseline);
  FdCheck check;
  auto probe = [&](auto&& set_param, double analytic_value) {
    TabularPolicy plus = policy;
    TabularPolicy minus = policy;
    set_param(plus, step);
    set_param(minus, -step);
    const double fd = (oracle_surrogate(plus, trajs, baseline) -
                       oracle_surrogate(minus, trajs, baseline)) /
                      (2.0 * step);
    check.max_abs_err = std::max(check.max_abs_err, std::abs(fd - analytic_value));
    check.grad_scale = std::max(check.grad_scale, std::abs(fd));
  };
  for (const auto& [key, row] : policy.logits) {
    for (std::int32_t k = 0; k < policy.vocab_size; ++k) {
      const auto it = analytic.rows.find(key);
      const double g = it == analytic.rows.end() || it->second.empty() ? 0.0 : it->second[k];
      probe([&key, k](TabularPolicy& p, double d) { p.logits[key][k] += d; }, g);
    }
  }
  for (std::int32_t k = 0; k < static_cast<std::int32_t>(policy.default_logits.size()); ++k) {
    const double g = analytic.default_row.empty() ? 0.0 : analytic.default_row[k];
    probe([k](TabularPolicy& p, double d) { p.default_logits[k] += d; }, g);
  }
  return check;
}

TabularPolicy random_gradcheck_instance(rng::SplitMix64& gen, std::int32_t* out_vocab) {
  const std::int32_t vocab = static_cast<std::int32_t>(gen.next_int(2, 5));
  const std::int32_t order = static_cast<std::int32_t>(gen.next_int(0, 1));
  std::vector<ContextKey> keys;
  keys.push_back({"p", {}});
  if (order == 1)
    for (std::int32_t t = 0; t < vocab; ++t) keys.push_back({"p", {t}});
  TabularPolicy p = random_tabular_policy(vocab, order, keys, 0.7, gen.next_u64());
  *out_vocab = vocab;
  return p;
}

}  // namespace

TEST_CASE("policy_logprobs uniform policy") {
  const TabularPolicy p = uniform_policy(4);
  const std::vector<std::int32_t> tokens{2, 0, 3};
  const auto lp = policy_logprobs(p, "p", tokens);
  REQUIRE(lp.size() == 3);
  for (double v : lp) CHECK(v == doctest::Approx(std::log(0.25)).epsilon(1e-12));
  CHECK(std::accumulate(lp.begin(), lp.end(), 0.0) ==
        doctest::Approx(3.0 * std::log(0.25)).epsilon(1e-12));
}

TEST_CASE("policy_logprobs hand softmax") {
  const TabularPolicy p = single_row_policy({0.0, std::log(3.0)});
  const auto lp = policy_logprobs(p, "p", std::vector<std::int32_t>{1, 1});
  CHECK(lp[0] == doctest::Approx(std::log(0.75)).epsilon(1e-12));
  CHECK(lp[1] == doctest::Approx(std::log(0.75)).epsilon(1e-12));
}

TEST_CASE("policy_logprobs zero-weight recurrent policy is uniform") {
  RecurrentToyPolicy p;
  p.vocab_size = 5;
  p.hidden_dim = 3;
  p.input_embedding.assign(15, 0.0);
  p.recurrence.assign(9, 0.0);
  p.output.assign(15, 0.0);
  const auto lp = policy_logprobs(p, "p", std::vector<std::int32_t>{0, 4, 2});
  for (double v : lp) CHECK(v == doctest::Approx(std::log(0.2)).epsilon(1e-12));
}

TEST_CASE("policy_logprobs rejects out-of-vocab tokens") {
  const TabularPolicy p = uniform_policy(4);
  CHECK_THROWS_AS(policy_logprobs(p, "p", std::vector<std::int32_t>{4}), std::invalid_argument);
  CHECK_THROWS_AS(policy_logprobs(p, "p", std::vector<std::int32_t>{-1}), std::invalid_argument);
}

TEST_CASE("per-token distributions sum to one") {
  rng::SplitMix64 gen(99);
  for (int i = 0; i < 20; ++i) {
    std::int32_t vocab = 0;
    const TabularPolicy p = random_gradcheck_instance(gen, &vocab);
    for (const auto& [key, row] : p.logits) {
      double sum = 0.0;
      double mx = *std::max_element(row.begin(), row.end());
      double z = 0.0;
      for (double v : row) z += std::exp(v - mx);
      for (double v : row) sum += std::exp(v - mx) / z;
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("recurrent per-token distributions sum to one") {
  const RecurrentToyPolicy rec = random_recurrent_policy(9, 5, 0.8, 123);
  auto state = rec.initial_state();
  for (std::int32_t token : {0, 3, 8, 1}) {
    const auto logprobs = rec.next_token_logprobs(state);
    double sum = 0.0;
    for (double lp : logprobs) sum += std::exp(lp);
    CHECK(std::abs(sum - 1.0) < 1e-12);
    rec.advance_state(state, token);
  }
}

TEST_CASE("truncated_is_weight") {
  CHECK(truncated_is_weight(std::log(10.0), 0.0, 5.0) == doctest::Approx(5.0));
  CHECK(truncated_is_weight(-1.25, -1.25, 7.0) == doctest::Approx(1.0));
  CHECK(truncated_is_weight(std::log(2.0), 0.0, 5.0) == doctest::Approx(2.0));
  CHECK_THROWS_AS(truncated_is_weight(std::nan(""), 0.0, 5.0), std::invalid_argument);
  CHECK_THROWS_AS(truncated_is_weight(0.0, 0.0, 0.0), std::invalid_argument);
}

TEST_CASE("ess exact values") {
  CHECK(ess(std::vector<double>{1, 1, 1, 1}) == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(ess(std::vector<double>{1, 0, 0, 0}) == doctest::Approx(0.25).epsilon(1e-13));
  CHECK(ess(std::vector<double>{2, 1, 1}) == doctest::Approx(16.0 / 18.0).epsilon(1e-13));
  CHECK_THROWS_AS(ess(std::vector<double>{0, 0}), EssUndefinedError);
  CHECK_THROWS_AS(ess(std::vector<double>{1, -1}), std::invalid_argument);
}

TEST_CASE("ess stays in (0, 1] and hits 1 iff nonzero weights equal") {
  rng::SplitMix64 gen(7);
  for (int i = 0; i < 10000; ++i) {
    const int n = static_cast<int>(gen.next_int(1, 12));
    std::vector<double> w(n);
    for (double& v : w) v = gen.next_double() < 0.15 ? 0.0 : gen.next_double() + 1e-9;
    bool all_zero = std::all_of(w.begin(), w.end(), [](double v) { return v == 0.0; });
    if (all_zero) w[0] = 0.5;
    const double value = ess(w);
    CHECK(value > 0.0);
    CHECK(value <= 1.0 + 1e-15);
  }
  CHECK(ess(std::vector<double>{0.0, 3.0, 3.0}) == doctest::Approx(2.0 / 3.0));
  CHECK(ess(std::vector<double>{2.5, 2.5, 2.5}) == doctest::Approx(1.0).epsilon(1e-13));
}

TEST_CASE("fit_baseline is the per-cell mean") {
  Trajectory a{"p", {0, 1, 0}, {-1, -1, -1}, {0, 0, 0}, 0.0};
  Trajectory b{"p", {1, 1, 1}, {-1, -1, -1}, {0, 0, 0}, 1.0};
  const auto table = fit_baseline(std::vector<Trajectory>{a, b});
  for (std::size_t t = 0; t < 3; ++t) CHECK(table.at("p", t) == doctest::Approx(0.5));

  const auto single = fit_baseline(std::vector<Trajectory>{b});
  for (std::size_t t = 0; t < 3; ++t) CHECK(single.at("p", t) == doctest::Approx(1.0));

  Trajectory c = b;
  Trajectory d = b;
  const auto same = fit_baseline(std::vector<Trajectory>{b, c, d});
  CHECK(same.at("p", 2) == doctest::Approx(1.0));

  CHECK_THROWS_AS(fit_baseline(std::vector<Trajectory>{}), std::invalid_argument);
}

TEST_CASE("single-sample baseline implies zero advantage and zero gradient") {
  const TabularPolicy p = uniform_policy(3);
  Trajectory traj{"p", {1, 2}, {std::log(1.0 / 3), std::log(1.0 / 3)}, {0, 0}, 1.0};
  const auto baseline = fit_baseline(std::vector<Trajectory>{traj});
  const auto grad = reinforce_gradient(p, std::vector<Trajectory>{traj}, baseline);
  CHECK(grad.max_abs() == doctest::Approx(0.0));
}

TEST_CASE("reinforce_gradient hand value") {
  const TabularPolicy p = single_row_policy({0.0, 0.0});
  Trajectory traj{"p", {1}, {std::log(0.5)}, {0}, 1.0};
  BaselineTable baseline;
  baseline.values[{"p", 0}] = 0.0;  // advantage +1
  const auto grad = reinforce_gradient(p, std::vector<Trajectory>{traj}, baseline);
  const auto& row = grad.rows.at({"p", {}});
  CHECK(row[0] == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(row[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("reinforce_gradient rejects missing baseline cells") {
  const TabularPolicy p = single_row_policy({0.0, 0.0});
  Trajectory traj{"p", {1, 0}, {std::log(0.5), std::log(0.5)}, {0, 0}, 1.0};
  BaselineTable baseline;
  baseline.values[{"p", 0}] = 0.0;  // cell for position 1 missing
  CHECK_THROWS_AS(reinforce_gradient(p, std::vector<Trajectory>{traj}, baseline),
                  std::invalid_argument);
}

TEST_CASE("reinforce_gradient matches central finite differences") {
  rng::SplitMix64 gen(2024);
  for (int instance = 0; instance < 12; ++instance) {
    std::int32_t vocab = 0;
    const TabularPolicy policy = random_gradcheck_instance(gen, &vocab);
    auto trajs = sample_trajectories(policy, "p", 6, 5, gen.next_u64());
    for (auto& t : trajs) t.reward = gen.next_double();
    const auto baseline = fit_baseline(trajs);
    const FdCheck check = finite_difference_check(policy, trajs, baseline, 1e-5);
    CHECK(check.relative() < 1e-4);
  }
}

TEST_CASE("is_reinforce_gradient equals reinforce_gradient on-policy") {
  rng::SplitMix64 gen(11);
  std::int32_t vocab = 0;
  const TabularPolicy policy = random_gradcheck_instance(gen, &vocab);
  auto trajs = sample_trajectories(policy, "p", 8, 6, 55);
  for (auto& t : trajs) t.reward = gen.next_double();
  const auto baseline = fit_baseline(trajs);
  const auto plain = reinforce_gradient(policy, trajs, baseline);
  const auto weighted = is_reinforce_gradient(policy, trajs, baseline, 5.0);
  CHECK(plain.max_abs_diff(weighted) == doctest::Approx(0.0));
  const auto per_token = is_reinforce_gradient(policy, trajs, baseline, 5.0,
                                               IsWeightGranularity::PerToken);
  CHECK(plain.max_abs_diff(per_token) == doctest::Approx(0.0));
}

TEST_CASE("is_reinforce_gradient clamps to a 5x contribution") {
  const TabularPolicy p = single_row_policy({0.0, 0.0});
  // Behavior log-prob far below the current policy's: ratio clamps at c.
  Trajectory traj{"p", {1}, {std::log(0.5) - std::log(64.0)}, {0}, 1.0};
  BaselineTable baseline;
  baseline.values[{"p", 0}] = 0.0;
  const auto plain = reinforce_gradient(p, std::vector<Trajectory>{traj}, baseline);
  const auto clamped = is_reinforce_gradient(p, std::vector<Trajectory>{traj}, baseline, 5.0);
  const auto& row = clamped.rows.at({"p", {}});
  const auto& base_row = plain.rows.at({"p", {}});
  CHECK(row[1] == doctest::Approx(5.0 * base_row[1]).epsilon(1e-12));

  const auto tiny = is_reinforce_gradient(p, std::vector<Trajectory>{traj}, baseline, 1e-300);
  CHECK(tiny.max_abs() < 1e-290);
}

TEST_CASE("sample_trajectories terminator and determinism") {
  // Logit gap large enough that the non-terminator probability underflows.
  TabularPolicy p = single_row_policy({-2000.0, 0.0});
  const auto trajs = sample_trajectories(p, "p", 10, 8, 42, 1);
  for (const auto& t : trajs) {
    REQUIRE(t.length() == 1);
    CHECK(t.tokens[0] == 1);
    CHECK(t.behavior_versions[0] == 0);
  }

  const TabularPolicy q = uniform_policy(6);
  const auto a = sample_trajectories(q, "p", 5, 12, 7);
  const auto b = sample_trajectories(q, "p", 5, 12, 7);
  CHECK(trajectories_to_jsonl(a) == trajectories_to_jsonl(b));
  const auto c = sample_trajectories(q, "p", 5, 12, 8);
  CHECK(trajectories_to_jsonl(a) != trajectories_to_jsonl(c));
}

TEST_CASE("sampled frequencies match the categorical within 3 standard errors") {
  const TabularPolicy p = single_row_policy({std::log(0.1), std::log(0.2), std::log(0.3),
                                             std::log(0.4)});
  const int n = 100000;
  const auto trajs = sample_trajectories(p, "p", n, 1, 1234);
  std::vector<int> counts(4, 0);
  for (const auto& t : trajs) counts[t.tokens[0]] += 1;
  const std::vector<double> probs{0.1, 0.2, 0.3, 0.4};
  for (int k = 0; k < 4; ++k) {
    const double freq = static_cast<double>(counts[k]) / n;
    const double se = std::sqrt(probs[k] * (1.0 - probs[k]) / n);
    CHECK(std::abs(freq - probs[k]) <= 3.0 * se);
  }
}

TEST_CASE("schedule construction") {
  const auto s = MixedPolicySchedule::make(64, 32);
  REQUIRE(!s.switch_points.empty());
  CHECK(s.switch_points.front() == 4);  // floor(2*64/32)
  CHECK(s.switch_points[1] == 6);       // + floor(64/32)
  CHECK(static_cast<int>(s.switch_points.size()) <= 32);
  for (std::size_t i = 1; i < s.switch_points.size(); ++i)
    CHECK(s.switch_points[i] > s.switch_points[i - 1]);
  for (int sp : s.switch_points) CHECK(sp < 64);

  // First switch lands at max_len: no switch happens at all.
  const auto degenerate = MixedPolicySchedule::make(8, 2);
  CHECK(degenerate.switch_points.empty());
  CHECK(degenerate.segment_count() == 1);

  CHECK(MixedPolicySchedule::make(10, 5).segment_at(0) == 0);
  const auto s2 = MixedPolicySchedule::make(10, 5);  // t1 = 4, then 6, 8
  CHECK(s2.segment_at(3) == 0);
  CHECK(s2.segment_at(4) == 1);
  CHECK(s2.segment_at(7) == 2);
  CHECK(s2.segment_at(9) == 3);
}

TEST_CASE("mixed_policy_sample with one segment reproduces sample_trajectories") {
  const auto schedule = MixedPolicySchedule::make(8, 2);  // no switches
  const RecurrentToyPolicy rec = random_recurrent_policy(6, 4, 0.6, 9);
  std::vector<Policy> checkpoints{rec};
  const auto direct = sample_trajectories(Policy{rec}, "p", 4, 8, 77);
  for (bool recompute : {false, true}) {
    const auto mixed = mixed_policy_sample(checkpoints, schedule, recompute, "p", 4, 8, 77);
    CHECK(trajectories_to_jsonl(direct) == trajectories_to_jsonl(mixed));
  }
}

TEST_CASE("mixed_policy_sample stamps checkpoint indexes and respects the schedule") {
  const auto schedule = MixedPolicySchedule::make(12, 4);  // t1=6, then 9
  const Policy base{random_recurrent_policy(5, 3, 0.5, 3)};
  const auto checkpoints = drift_checkpoints(base, 3, 0.2, 17);
  const auto trajs = mixed_policy_sample(checkpoints, schedule, false, "p", 6, 12, 5);
  for (const auto& t : trajs) {
    for (std::size_t pos = 0; pos < t.length(); ++pos) {
      const int expected = pos < 6 ? 0 : (pos < 9 ? 1 : 2);
      CHECK(t.behavior_versions[pos] == expected);
    }
  }
}

TEST_CASE("recompute flag is a no-op for tabular checkpoints") {
  std::vector<ContextKey> keys{{"p", {}}, {"p", {0}}, {"p", {1}}};
  const Policy base{random_tabular_policy(2, 1, keys, 0.8, 21)};
  const auto checkpoints = drift_checkpoints(base, 4, 0.3, 22);
  const auto schedule = MixedPolicySchedule::make(16, 4);
  const auto stale = mixed_policy_sample(checkpoints, schedule, false, "p", 5, 16, 31);
  const auto recomputed = mixed_policy_sample(checkpoints, schedule, true, "p", 5, 16, 31);
  CHECK(trajectories_to_jsonl(stale) == trajectories_to_jsonl(recomputed));
}

TEST_CASE("mixed_policy_sample validates inputs") {
  const auto schedule = MixedPolicySchedule::make(8, 4);
  const Policy base{random_recurrent_policy(4, 3, 0.5, 1)};
  const auto checkpoints = drift_checkpoints(base, 1, 0.1, 2);
  // max_len beyond the schedule's horizon.
  CHECK_THROWS_AS(mixed_policy_sample(checkpoints, schedule, false, "p", 1, 9, 0),
                  std::invalid_argument);
  // Fewer checkpoints than segments.
  CHECK_THROWS_AS(mixed_policy_sample(checkpoints, schedule, false, "p", 1, 8, 0),
                  std::invalid_argument);
}

TEST_CASE("kl_per_position exact values") {
  const Policy behavior{single_row_policy({0.0, 0.0})};
  const Policy target{single_row_policy({std::log(0.25), std::log(0.75)})};
  Trajectory prefix{"p", {0, 1}, {std::log(0.5), std::log(0.5)}, {0, 0}, 0.0};

  const auto zero = kl_per_position(BehaviorSpec::single(behavior), behavior, "p",
                                    std::vector<Trajectory>{prefix});
  for (double v : zero) CHECK(v == doctest::Approx(0.0));

  const auto kl = kl_per_position(BehaviorSpec::single(behavior), target, "p",
                                  std::vector<Trajectory>{prefix});
  const double expected = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
  for (double v : kl) CHECK(v == doctest::Approx(expected).epsilon(1e-12));
  for (double v : kl) CHECK(v >= 0.0);
}

TEST_CASE("kl reports +inf where target support is missing") {
  const Policy behavior{single_row_policy({0.0, 0.0})};
  const Policy target{single_row_policy({0.0, -std::numeric_limits<double>::infinity()})};
  Trajectory prefix{"p", {0}, {std::log(0.5)}, {0}, 0.0};
  const auto kl = kl_per_position(BehaviorSpec::single(behavior), target, "p",
                                  std::vector<Trajectory>{prefix});
  CHECK(std::isinf(kl[0]));
}

TEST_CASE("identical checkpoints give identically zero KL curves") {
  const Policy base{random_recurrent_policy(6, 4, 0.5, 8)};
  const std::vector<Policy> checkpoints(5, base);
  const auto schedule = MixedPolicySchedule::make(20, 4);
  const auto prefixes = mixed_policy_sample(checkpoints, schedule, false, "p", 8, 20, 3);
  for (bool recompute : {false, true}) {
    const auto curve = kl_per_position(
        BehaviorSpec::mixed(std::vector<Policy>(checkpoints), schedule, recompute), base, "p",
        prefixes);
    for (double v : curve) CHECK(v == doctest::Approx(0.0).epsilon(1e-14));
  }
}

TEST_CASE("mixed behavior stays closer to the final checkpoint than the first one") {
  for (std::uint64_t seed : {101ULL, 202ULL, 303ULL}) {
    const Policy base{random_recurrent_policy(8, 5, 0.5, seed)};
    const auto checkpoints = drift_checkpoints(base, 9, 0.25, seed + 1);
    const auto schedule = MixedPolicySchedule::make(32, 8);
    REQUIRE(schedule.segment_count() <= checkpoints.size());
    const Policy& final_ckpt = checkpoints.back();

    const auto mixed_prefixes =
        mixed_policy_sample(checkpoints, schedule, false, "p", 24, 32, seed + 2);
    const auto mixed_kl = kl_per_position(
        BehaviorSpec::mixed(std::vector<Policy>(checkpoints.begin(), checkpoints.end()),
                            schedule, false),
        final_ckpt, "p", mixed_prefixes);

    const auto first_prefixes = sample_trajectories(checkpoints.front(), "p", 24, 32, seed + 2);
    const auto first_kl = kl_per_position(BehaviorSpec::single(checkpoints.front()), final_ckpt,
                                          "p", first_prefixes);

    const auto mean = [](const std::vector<double>& v) {
      return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    CHECK(mean(mixed_kl) <= mean(first_kl));
  }
}

TEST_CASE("trajectory jsonl round trip") {
  const TabularPolicy p = uniform_policy(5);
  const auto trajs = sample_trajectories(p, "prompt-7", 4, 6, 99, 2);
  const auto text = trajectories_to_jsonl(trajs);
  const auto back = trajectories_from_jsonl(text);
  CHECK(trajectories_to_jsonl(back) == text);
}

TEST_CASE("policy document round trip") {
  const Policy tab{single_row_policy({0.1, -0.2, 0.4})};
  const Policy rec{random_recurrent_policy(4, 3, 0.5, 5)};
  for (const Policy& p : {tab, rec}) {
    const auto text = policy_to_json(p);
    const Policy back = policy_from_json(text);
    CHECK(policy_to_json(back) == text);
    const auto lp_a = policy_logprobs(p, "x", std::vector<std::int32_t>{0, 1, 2});
    const auto lp_b = policy_logprobs(back, "x", std::vector<std::int32_t>{0, 1, 2});
    CHECK(lp_a == lp_b);
  }
}

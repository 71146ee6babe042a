// SPDX-License-Identifier: Apache-2.0
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include <json.hpp>

#include "commands.hpp"
#include "streamrl/config_io.hpp"
#include "streamrl/csv.hpp"
#include "streamrl/rl_math.hpp"
#include "streamrl/rng.hpp"

namespace streamrl::cli {

namespace fs = std::filesystem;
using namespace streamrl::rlmath;

namespace {

std::string fmt(double v) { return csv::format_double(v); }

double mean_of(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) /
         static_cast<double>(values.size());
}

std::vector<ContextKey> context_keys(const std::string& prompt, std::int32_t vocab,
                                     std::int32_t order) {
  std::vector<ContextKey> keys;
  keys.push_back({prompt, {}});
  if (order >= 1)
    for (std::int32_t t = 0; t < vocab; ++t) keys.push_back({prompt, {t}});
  return keys;
}

int run_ess(const CommonArgs& args, const config::RlCheckConfig& cfg, std::uint64_t seed,
            std::vector<std::string>& outputs) {
  std::vector<Trajectory> trajectories;
  Policy target{TabularPolicy{}};
  if (!cfg.ess_trajectories_path.empty()) {
    // Externally supplied rollouts, weighted against an explicit target.
    trajectories = trajectories_from_file(cfg.ess_trajectories_path);
    if (cfg.ess_target_policy_path.empty())
      throw config::ConfigError("ess: 'trajectories' input needs a 'target_policy'");
    target = policy_from_file(cfg.ess_target_policy_path);
    if (trajectories.empty()) throw config::ConfigError("ess: empty trajectory file");
  } else {
    const auto keys = context_keys("p", cfg.ess_vocab_size, cfg.ess_context_order);
    const TabularPolicy behavior =
        random_tabular_policy(cfg.ess_vocab_size, cfg.ess_context_order, keys, 0.6, seed);
    target = drift_checkpoints(Policy{behavior}, 2, cfg.ess_drift_magnitude,
                               rng::derive_stream(seed, 1)).back();
    trajectories = sample_trajectories(Policy{behavior}, "p", cfg.ess_sample_count,
                                       cfg.ess_max_len, rng::derive_stream(seed, 2));
    const std::string traj_path = (fs::path(args.out_dir) / "trajectories.jsonl").string();
    trajectories_to_file(trajectories, traj_path);
    outputs.push_back(traj_path);
  }

  std::vector<double> weights;
  std::vector<double> token_weights;
  const std::string path = (fs::path(args.out_dir) / "weights.csv").string();
  csv::Writer w(path);
  w.header({"trajectory", "length", "ln_mu", "ln_pi", "weight"});
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& traj = trajectories[i];
    const auto pi_logprobs = policy_logprobs(target, traj.prompt_id, traj.tokens);
    const double ln_pi = std::accumulate(pi_logprobs.begin(), pi_logprobs.end(), 0.0);
    const double ln_mu = traj.behavior_logprob_sum();
    const double weight = truncated_is_weight(ln_pi, ln_mu, cfg.ess_clamp);
    weights.push_back(weight);
    for (std::size_t t = 0; t < traj.length(); ++t)
      token_weights.push_back(
          truncated_is_weight(pi_logprobs[t], traj.behavior_logprobs[t], cfg.ess_clamp));
    w.row_strings({std::to_string(i), std::to_string(traj.length()), fmt(ln_mu), fmt(ln_pi),
                   fmt(weight)});
  }
  outputs.push_back(path);

  const double sequence_ess = ess(weights);
  const std::string summary_path = (fs::path(args.out_dir) / "ess_summary.csv").string();
  csv::Writer summary(summary_path);
  summary.header({"count", "clamp", "drift_magnitude", "ess_sequence", "ess_per_token"});
  const double token_ess = cfg.ess_per_token ? ess(token_weights) : -1.0;
  summary.row_strings({std::to_string(trajectories.size()), fmt(cfg.ess_clamp),
                       fmt(cfg.ess_drift_magnitude), fmt(sequence_ess),
                       cfg.ess_per_token ? fmt(token_ess) : "n/a"});
  outputs.push_back(summary_path);

  std::printf("ess (sequence-level truncated weights): %.6f over %zu trajectories\n",
              sequence_ess, trajectories.size());
  if (cfg.ess_per_token) std::printf("ess (per-token weights): %.6f\n", token_ess);
  return kExitOk;
}

// Surrogate objective whose gradient is the REINFORCE estimator with a
// fixed baseline: (1/m) sum_j sum_t advantage * log pi.
double surrogate(const TabularPolicy& policy, const std::vector<Trajectory>& trajectories,
                 const BaselineTable& baseline) {
  double total = 0.0;
  for (const auto& traj : trajectories) {
    const auto logprobs = policy_logprobs(Policy{policy}, traj.prompt_id, traj.tokens);
    for (std::size_t t = 0; t < traj.length(); ++t)
      total += (traj.reward - baseline.at(traj.prompt_id, t)) * logprobs[t];
  }
  return total / static_cast<double>(trajectories.size());
}

int run_gradcheck(const CommonArgs& args, const config::RlCheckConfig& cfg, std::uint64_t seed,
                  std::vector<std::string>& outputs) {
  rng::SplitMix64 gen(seed);
  const std::string path = (fs::path(args.out_dir) / "gradcheck.csv").string();
  csv::Writer w(path);
  w.header({"instance", "vocab_size", "context_order", "parameters", "max_relative_error"});

  double worst = 0.0;
  for (int instance = 0; instance < cfg.grad_instances; ++instance) {
    const auto vocab = static_cast<std::int32_t>(gen.next_int(2, 6));
    const auto order = static_cast<std::int32_t>(gen.next_int(0, 1));
    const auto keys = context_keys("p", vocab, order);
    TabularPolicy policy = random_tabular_policy(vocab, order, keys, 0.7, gen.next_u64());
    const int params = static_cast<int>((keys.size() + 1) * vocab);
    if (params > cfg.grad_max_params)
      throw config::ConfigError("gradcheck instance exceeds max_params");

    auto trajectories = sample_trajectories(Policy{policy}, "p", 6, 5, gen.next_u64());
    for (auto& traj : trajectories) traj.reward = gen.next_double();
    const BaselineTable baseline = fit_baseline(trajectories);
    const GradientTable analytic = reinforce_gradient(policy, trajectories, baseline);

    double max_err = 0.0;
    double scale = 0.0;
    auto probe = [&](auto&& bump, double analytic_value) {
      TabularPolicy plus = policy;
      TabularPolicy minus = policy;
      bump(plus, cfg.grad_fd_step);
      bump(minus, -cfg.grad_fd_step);
      const double fd = (surrogate(plus, trajectories, baseline) -
                         surrogate(minus, trajectories, baseline)) /
                        (2.0 * cfg.grad_fd_step);
      max_err = std::max(max_err, std::abs(fd - analytic_value));
      scale = std::max(scale, std::abs(fd));
    };
    for (const auto& key : keys) {
      const auto it = analytic.rows.find(key);
      for (std::int32_t k = 0; k < vocab; ++k) {
        const double g = it == analytic.rows.end() || it->second.empty() ? 0.0 : it->second[k];
        probe([&key, k](TabularPolicy& p, double d) { p.logits[key][k] += d; }, g);
      }
    }
    for (std::int32_t k = 0; k < vocab; ++k) {
      const double g = analytic.default_row.empty() ? 0.0 : analytic.default_row[k];
      probe([k](TabularPolicy& p, double d) { p.default_logits[k] += d; }, g);
    }
    // Scale floor covers degenerate instances whose true gradient is zero.
    const double relative = max_err / std::max(1e-4, scale);
    worst = std::max(worst, relative);
    w.row_strings({std::to_string(instance), std::to_string(vocab), std::to_string(order),
                   std::to_string(params), fmt(relative)});
  }
  outputs.push_back(path);
  std::printf("gradcheck: max relative error %.3g over %d instances (tolerance %g)\n", worst,
              cfg.grad_instances, cfg.grad_tolerance);
  return worst < cfg.grad_tolerance ? kExitOk : kExitScenario;
}

int run_mixed_kl(const CommonArgs& args, const config::RlCheckConfig& cfg, std::uint64_t seed_arg,
                 std::vector<std::string>& outputs) {
  const std::string curves_path = (fs::path(args.out_dir) / "kl_curves.csv").string();
  const std::string summary_path = (fs::path(args.out_dir) / "kl_summary.csv").string();
  csv::Writer curves(curves_path);
  curves.header({"seed", "curve", "position", "kl"});
  csv::Writer summary(summary_path);
  summary.header({"seed", "curve", "mean_kl"});

  std::vector<std::uint64_t> seeds = cfg.kl_seeds;
  if (seed_arg != 0) seeds = {seed_arg};

  auto emit = [&](std::uint64_t seed, const std::string& name, const std::vector<double>& curve) {
    for (std::size_t t = 0; t < curve.size(); ++t)
      curves.row_strings({std::to_string(seed), name, std::to_string(t), fmt(curve[t])});
    summary.row_strings({std::to_string(seed), name, fmt(mean_of(curve))});
    return mean_of(curve);
  };

  const int checkpoint_count =
      cfg.kl_checkpoint_count > 0 ? cfg.kl_checkpoint_count : cfg.kl_max_lag + 1;
  for (std::uint64_t seed : seeds) {
    const Policy base{random_recurrent_policy(cfg.kl_vocab_size, cfg.kl_hidden_dim, 0.5, seed)};
    const auto checkpoints = drift_checkpoints(base, checkpoint_count, cfg.kl_drift_magnitude,
                                               rng::derive_stream(seed, 7));
    const auto schedule = MixedPolicySchedule::make(cfg.kl_max_len, cfg.kl_max_lag);
    if (checkpoints.size() < schedule.segment_count())
      throw config::ConfigError("mixed-kl: checkpoint count " +
                                std::to_string(checkpoint_count) + " is below the " +
                                std::to_string(schedule.segment_count()) +
                                " schedule segments");
    const Policy& target = checkpoints.back();

    double stale_mean = 0.0, recomputed_mean = 0.0, conv_at_max = 0.0;
    for (const bool recompute : {false, true}) {
      const auto prefixes =
          mixed_policy_sample(checkpoints, schedule, recompute, "p", cfg.kl_sample_count,
                              cfg.kl_max_len, rng::derive_stream(seed, 11));
      const auto curve = kl_per_position(
          BehaviorSpec::mixed({checkpoints.begin(), checkpoints.end()}, schedule, recompute),
          target, "p", prefixes);
      const double mean =
          emit(seed, recompute ? "mixed_recomputed" : "mixed_stale", curve);
      (recompute ? recomputed_mean : stale_mean) = mean;
    }

    for (int lag : cfg.kl_conventional_lags) {
      if (lag < 1 || lag >= static_cast<int>(checkpoints.size()))
        throw config::ConfigError("mixed-kl: conventional lag outside the checkpoint chain");
      const Policy& behavior = checkpoints[checkpoints.size() - 1 - lag];
      const auto prefixes = sample_trajectories(behavior, "p", cfg.kl_sample_count,
                                                cfg.kl_max_len, rng::derive_stream(seed, 13));
      const auto curve =
          kl_per_position(BehaviorSpec::single(behavior), target, "p", prefixes);
      const double mean = emit(seed, "conventional_lag" + std::to_string(lag), curve);
      if (lag == cfg.kl_max_lag) conv_at_max = mean;
    }

    std::printf("seed %llu: mixed_stale %.6f mixed_recomputed %.6f conventional(max lag) %.6f "
                "stale-recomputed gap %.3g\n",
                static_cast<unsigned long long>(seed), stale_mean, recomputed_mean, conv_at_max,
                stale_mean - recomputed_mean);
  }
  outputs.push_back(curves_path);
  outputs.push_back(summary_path);
  return kExitOk;
}

}  // namespace

int cmd_rlcheck(const CommonArgs& args, const std::string& experiment) {
  if (args.config_path.empty()) throw config::ConfigError("rlcheck requires --config");
  config::RlCheckConfig cfg = config::load_rlcheck_config(args.config_path);
  if (!experiment.empty() && experiment != cfg.experiment) {
    // The flag wins; the config's experiment field is the default.
    cfg.experiment = experiment;
    if (experiment != "ess" && experiment != "gradcheck" && experiment != "mixed-kl")
      throw config::ConfigError("unknown experiment '" + experiment + "'");
  }
  const std::uint64_t seed = args.seed.value_or(cfg.seed);

  const auto started = std::chrono::steady_clock::now();
  fs::create_directories(args.out_dir);
  std::vector<std::string> outputs;

  int code = kExitUsage;
  if (cfg.experiment == "ess") code = run_ess(args, cfg, seed == 0 ? 17 : seed, outputs);
  else if (cfg.experiment == "gradcheck") code = run_gradcheck(args, cfg, seed == 0 ? 17 : seed, outputs);
  else code = run_mixed_kl(args, cfg, seed, outputs);

  const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::steady_clock::now() - started)
                           .count();
  write_manifest(args.out_dir, "rlcheck", config::read_text_file(args.config_path), seed, outputs,
                 elapsed);
  return code;
}

}  // namespace streamrl::cli

// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "streamrl/rl_math.hpp"
#include "streamrl/rng.hpp"
#include "streamrl/throughput.hpp"

using namespace streamrl;

namespace {

throughput::UtilizationCurve bundled_curve() {
  throughput::UtilizationCurve c;
  c.samples = {{200.0, 0.4}, {256.0, 0.4}, {512.0, 0.4}, {1024.0, 0.4}};
  return c;
}

void config_search(benchmark::State& state) {
  const auto curve = bundled_curve();
  const auto lengths = throughput::LengthDistribution::uniform(2048);
  for (auto _ : state) {
    auto best = throughput::search_configs(static_cast<int>(state.range(0)), 128, curve,
                                           84.0 / 17.08, lengths, 133, false);
    benchmark::DoNotOptimize(best.report.r_total);
  }
}
BENCHMARK(config_search)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void conv_profile_throughput(benchmark::State& state) {
  const auto curve = bundled_curve();
  const auto lengths = throughput::LengthDistribution::uniform(2048);
  for (auto _ : state) {
    auto report =
        throughput::conv_throughput_for_sequences(128, state.range(0), 84.0 / 17.08, curve,
                                                  lengths, false);
    benchmark::DoNotOptimize(report.r_total);
  }
}
BENCHMARK(conv_profile_throughput)->Arg(1024)->Arg(17024);

void ess_batch(benchmark::State& state) {
  rng::SplitMix64 gen(5);
  std::vector<double> weights(state.range(0));
  for (double& w : weights) w = gen.next_double() + 1e-6;
  for (auto _ : state) benchmark::DoNotOptimize(rlmath::ess(weights));
}
BENCHMARK(ess_batch)->Arg(1024)->Arg(65536);

void mixed_sampling(benchmark::State& state) {
  const rlmath::Policy base{rlmath::random_recurrent_policy(12, 8, 0.5, 3)};
  const auto checkpoints = rlmath::drift_checkpoints(base, 33, 0.05, 4);
  const auto schedule = rlmath::MixedPolicySchedule::make(64, 32);
  for (auto _ : state) {
    auto trajs = rlmath::mixed_policy_sample(checkpoints, schedule, false, "p",
                                             static_cast<int>(state.range(0)), 64, 7);
    benchmark::DoNotOptimize(trajs.size());
  }
}
BENCHMARK(mixed_sampling)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

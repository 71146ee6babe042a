// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "streamrl/sim.hpp"

using namespace streamrl;

namespace {

sim::SimConfig pipeline_config(int units, int steps) {
  sim::SimConfig c;
  c.mode = sim::Mode::Pipeline;
  c.n_inference_units = units;
  c.gen_batch = 16;
  c.train_batch = 16;
  c.train_ticks_per_step = 2;
  c.queue_capacity = 256;
  c.lengths = throughput::LengthDistribution::uniform(64);
  c.total_optimizer_steps = steps;
  c.seed = 12;
  return c;
}

void pipeline_run(benchmark::State& state) {
  const auto config = pipeline_config(static_cast<int>(state.range(0)), 64);
  for (auto _ : state) {
    auto trace = sim::run_pipeline(config);
    benchmark::DoNotOptimize(trace.consumed);
  }
}
BENCHMARK(pipeline_run)->Arg(2)->Arg(8)->Unit(benchmark::kMillisecond);

void conventional_run(benchmark::State& state) {
  sim::SimConfig c;
  c.mode = sim::Mode::Conventional;
  c.train_batch = 16;
  c.steps_per_rl_step = static_cast<int>(state.range(0));
  c.train_ticks_per_step = 2;
  c.queue_capacity = 16 * static_cast<int>(state.range(0));
  c.lengths = throughput::LengthDistribution::uniform(64);
  c.total_optimizer_steps = 64;
  c.seed = 12;
  for (auto _ : state) {
    auto trace = sim::run_conventional(c);
    benchmark::DoNotOptimize(trace.consumed);
  }
}
BENCHMARK(conventional_run)->Arg(4)->Arg(16)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

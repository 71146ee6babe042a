// SPDX-License-Identifier: Apache-2.0
#include "streamrl/sim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <optional>
#include <stdexcept>

#include "streamrl/rl_math.hpp"
#include "streamrl/rng.hpp"

#include "json_convert.hpp"

namespace streamrl::sim {

namespace {

constexpr double kEssClamp = 5.0;
constexpr long long kTickSafetyCap = 100'000'000;

struct ActiveSequence {
  long long id = 0;
  int target_len = 0;
  long long start_tick = 0;
  long long finish_tick = -1;
  int start_version = 0;
  std::vector<std::int32_t> token_versions;
  std::vector<long long> consumed_at_emit;  // trainer consumption count at each emission
};

int draw_length(const throughput::LengthDistribution& lengths, std::uint64_t seed,
                long long sequence_id) {
  using Kind = throughput::LengthDistribution::Kind;
  switch (lengths.kind) {
    case Kind::Constant:
      return lengths.max_len;
    case Kind::Uniform: {
      rng::SplitMix64 gen(rng::derive_stream(seed, static_cast<std::uint64_t>(sequence_id)));
      return static_cast<int>(gen.next_int(1, lengths.max_len));
    }
    case Kind::Empirical:
      // Cyclic assignment in creation order keeps toy traces exact.
      return lengths.values[static_cast<std::size_t>(sequence_id) % lengths.values.size()];
  }
  return lengths.max_len;
}

double batch_ess(const std::vector<long long>& lag_sums, double magnitude) {
  std::vector<double> weights;
  weights.reserve(lag_sums.size());
  for (long long lag : lag_sums)
    weights.push_back(std::min(kEssClamp, std::exp(-magnitude * static_cast<double>(lag))));
  if (weights.empty()) return 1.0;
  try {
    return rlmath::ess(weights);
  } catch (const rlmath::EssUndefinedError&) {
    return 0.0;  // every weight underflowed
  }
}

/// Shared bookkeeping for the per-step record of a consumed batch.
StepRecord make_step_record(int step, long long tick, int version_before,
                            const std::vector<ActiveSequence>& batch, double drift_magnitude) {
  StepRecord rec;
  rec.step = step;
  rec.tick = tick;
  rec.version_before = version_before;
  rec.sequences = static_cast<int>(batch.size());
  long long lag_steps_sum = 0;
  for (const auto& seq : batch) {
    long long seq_lag_sum = 0;
    for (std::size_t t = 0; t < seq.token_versions.size(); ++t) {
      const long long lag = version_before - seq.token_versions[t];
      rec.lag_histogram_steps[static_cast<int>(lag)] += 1;
      rec.max_lag_steps = std::max(rec.max_lag_steps, lag);
      lag_steps_sum += lag;
      seq_lag_sum += lag;
    }
    rec.tokens += static_cast<long long>(seq.token_versions.size());
    rec.sequence_lag_sums_steps.push_back(seq_lag_sum);
    rec.sequence_lengths.push_back(static_cast<int>(seq.token_versions.size()));
  }
  rec.mean_lag_steps = rec.tokens > 0 ? static_cast<double>(lag_steps_sum) / rec.tokens : 0.0;
  rec.ess = batch_ess(rec.sequence_lag_sums_steps, drift_magnitude);
  return rec;
}

void fill_sample_lags(StepRecord& rec, const std::vector<ActiveSequence>& batch,
                      long long consumed_before_step) {
  long long sum = 0;
  long long count = 0;
  long long index = consumed_before_step;
  for (const auto& seq : batch) {
    for (std::size_t t = 0; t < seq.consumed_at_emit.size(); ++t) {
      const long long lag = index - seq.consumed_at_emit[t];
      rec.max_lag_samples = std::max(rec.max_lag_samples, lag);
      sum += lag;
      ++count;
    }
    ++index;
  }
  rec.mean_lag_samples = count > 0 ? static_cast<double>(sum) / count : 0.0;
}

bool batch_post_warmup(const std::vector<ActiveSequence>& batch) {
  for (const auto& seq : batch)
    if (seq.token_versions.empty() || seq.token_versions.front() < 1) return false;
  return true;
}

struct LoggedSequence {
  ActiveSequence seq;
  int consumed_step = -1;
  std::string outcome;  // "consumed" | "evicted" | "pending"
};

void finalize_sequence_records(SimTrace& trace, std::vector<LoggedSequence>& log) {
  std::sort(log.begin(), log.end(),
            [](const LoggedSequence& a, const LoggedSequence& b) { return a.seq.id < b.seq.id; });
  for (auto& item : log) {
    SequenceRecord rec;
    rec.id = item.seq.id;
    rec.start_tick = item.seq.start_tick;
    rec.finish_tick = item.seq.finish_tick;
    rec.start_version = item.seq.start_version;
    rec.consumed_step = item.consumed_step;
    rec.outcome = item.outcome;
    rec.token_versions = std::move(item.seq.token_versions);
    trace.sequences.push_back(std::move(rec));
  }
}

}  // namespace

void SimConfig::validate() const {
  if (n_inference_units < 1) throw std::invalid_argument("SimConfig: n_inference_units >= 1");
  if (gen_batch < 1) throw std::invalid_argument("SimConfig: gen_batch >= 1");
  if (train_batch < 1) throw std::invalid_argument("SimConfig: train_batch >= 1");
  if (steps_per_rl_step < 1) throw std::invalid_argument("SimConfig: steps_per_rl_step >= 1");
  if (train_ticks_per_step < 1) throw std::invalid_argument("SimConfig: train_ticks_per_step >= 1");
  if (weight_transfer_pause_ticks < 0)
    throw std::invalid_argument("SimConfig: negative weight_transfer_pause_ticks");
  if (preprocessor_delay_ticks < 0)
    throw std::invalid_argument("SimConfig: negative preprocessor_delay_ticks");
  if (queue_capacity < train_batch)
    throw std::invalid_argument("SimConfig: queue_capacity must be >= train_batch");
  if (total_optimizer_steps < 1)
    throw std::invalid_argument("SimConfig: total_optimizer_steps >= 1");
  if (drift_magnitude < 0.0) throw std::invalid_argument("SimConfig: negative drift_magnitude");
  lengths.validate();
}

std::string to_string(Mode mode) {
  return mode == Mode::Conventional ? "conventional" : "pipeline";
}

SimTrace run_conventional(const SimConfig& config) {
  config.validate();
  SimTrace trace;
  trace.config = config;

  const long long sequences_per_step =
      static_cast<long long>(config.train_batch) * config.steps_per_rl_step;
  long long tick = 0;
  int version = 0;
  int steps_done = 0;
  long long next_id = 0;
  long long consumed_count = 0;

  std::vector<LoggedSequence> sequence_log;

  while (steps_done < config.total_optimizer_steps) {
    // Generation phase: all sequences of the RL step decode to completion;
    // the in-flight count decays as the short ones finish.
    std::vector<ActiveSequence> batch_pool;
    for (long long i = 0; i < sequences_per_step; ++i) {
      ActiveSequence seq;
      seq.id = next_id++;
      seq.target_len = draw_length(config.lengths, config.seed, seq.id);
      seq.start_tick = tick;
      seq.start_version = version;
      batch_pool.push_back(std::move(seq));
    }
    trace.generated += sequences_per_step;

    long long finished = 0;
    while (finished < sequences_per_step) {
      int in_flight = 0;
      for (auto& seq : batch_pool) {
        if (seq.finish_tick >= 0) continue;
        ++in_flight;
        seq.token_versions.push_back(version);
        seq.consumed_at_emit.push_back(consumed_count);
        if (static_cast<int>(seq.token_versions.size()) == seq.target_len) {
          seq.finish_tick = tick;
          ++finished;
        }
      }
      trace.ticks.push_back({tick, in_flight,
                             static_cast<int>(finished),
                             version});
      ++tick;
      if (tick > kTickSafetyCap) throw std::logic_error("simulation exceeded tick cap");
    }

    // Training phase: G optimizer steps, each consuming train_batch
    // sequences in creation order; weight updates are instantaneous.
    long long pool_cursor = 0;
    for (int g = 0; g < config.steps_per_rl_step && steps_done < config.total_optimizer_steps;
         ++g) {
      for (int t = 0; t < config.train_ticks_per_step; ++t) {
        trace.ticks.push_back(
            {tick, 0, static_cast<int>(sequences_per_step - pool_cursor), version});
        ++tick;
      }
      std::vector<ActiveSequence> batch(batch_pool.begin() + pool_cursor,
                                        batch_pool.begin() + pool_cursor + config.train_batch);
      StepRecord rec = make_step_record(steps_done, tick - 1, version, batch,
                                        config.drift_magnitude);
      fill_sample_lags(rec, batch, consumed_count);
      rec.post_warmup = batch_post_warmup(batch);
      if (rec.post_warmup && trace.first_post_warmup_step < 0)
        trace.first_post_warmup_step = rec.step;
      trace.steps.push_back(std::move(rec));

      for (int b = 0; b < config.train_batch; ++b)
        sequence_log.push_back({std::move(batch_pool[pool_cursor + b]), steps_done, "consumed"});
      pool_cursor += config.train_batch;
      consumed_count += config.train_batch;
      trace.consumed += config.train_batch;
      ++version;
      ++steps_done;
      trace.events.push_back({tick - 1, "weight_update", {{"version", version}}});
    }

    // A run stopped mid RL step leaves the rest of the pool pending.
    for (long long i = pool_cursor; i < sequences_per_step; ++i) {
      sequence_log.push_back({std::move(batch_pool[i]), -1, "pending"});
      trace.pending_end += 1;
    }
  }

  finalize_sequence_records(trace, sequence_log);
  return trace;
}

SimTrace run_pipeline(const SimConfig& config) {
  config.validate();
  SimTrace trace;
  trace.config = config;

  const int total_slots = config.n_inference_units * config.gen_batch;
  const long long mean_len =
      std::max<long long>(1, std::llround(config.lengths.mean()));

  // Initial prompt injection is staggered across one mean-length window so
  // constant-length runs settle into the steady stream the lag analysis
  // assumes instead of marching in synchronized cohorts.
  std::vector<long long> start_gate(total_slots);
  for (int k = 0; k < total_slots; ++k)
    start_gate[k] = (static_cast<long long>(k) * mean_len) / total_slots;

  std::vector<std::optional<ActiveSequence>> slots(total_slots);
  std::deque<ActiveSequence> preprocessor;  // finished, waiting out the delay
  std::deque<long long> preprocessor_ready;
  std::deque<ActiveSequence> ring;

  long long tick = 0;
  int version = 0;
  int steps_done = 0;
  long long next_id = 0;
  long long consumed_count = 0;
  int pause_remaining = 0;
  long long next_step_due = config.train_ticks_per_step;
  bool stall_pending = false;
  long long stall_scheduled = 0;

  std::vector<LoggedSequence> sequence_log;

  while (steps_done < config.total_optimizer_steps) {
    // Refill: empty slots past their start gate admit a new prompt that
    // begins decoding this tick.
    for (int k = 0; k < total_slots; ++k) {
      if (slots[k].has_value() || tick < start_gate[k]) continue;
      ActiveSequence seq;
      seq.id = next_id++;
      seq.target_len = draw_length(config.lengths, config.seed, seq.id);
      seq.start_tick = tick;
      seq.start_version = version;
      slots[k] = std::move(seq);
      trace.generated += 1;
    }

    // Emission: one token per in-progress sequence, unless the actors are
    // paused receiving weights.
    int in_flight = 0;
    std::vector<ActiveSequence> finished_now;
    if (pause_remaining > 0) {
      --pause_remaining;
      for (const auto& slot : slots)
        if (slot.has_value()) ++in_flight;
    } else {
      for (int k = 0; k < total_slots; ++k) {
        if (!slots[k].has_value()) continue;
        ++in_flight;
        auto& seq = *slots[k];
        seq.token_versions.push_back(version);
        seq.consumed_at_emit.push_back(consumed_count);
        if (static_cast<int>(seq.token_versions.size()) == seq.target_len) {
          seq.finish_tick = tick;
          finished_now.push_back(std::move(seq));
          slots[k].reset();
        }
      }
    }

    // Preprocessor: finished sequences become trainable after the delay.
    for (auto& seq : finished_now) {
      preprocessor.push_back(std::move(seq));
      preprocessor_ready.push_back(tick + config.preprocessor_delay_ticks);
    }
    while (!preprocessor.empty() && preprocessor_ready.front() <= tick) {
      if (static_cast<int>(ring.size()) == config.queue_capacity) {
        trace.events.push_back({tick, "eviction", {{"sequence", ring.front().id}}});
        sequence_log.push_back({std::move(ring.front()), -1, "evicted"});
        ring.pop_front();
        trace.evicted += 1;
      }
      ring.push_back(std::move(preprocessor.front()));
      preprocessor.pop_front();
      preprocessor_ready.pop_front();
    }

    // Trainer: one optimizer step per due tick when a full batch is queued;
    // a starved trainer waits and the stall shifts the schedule.
    if (tick >= next_step_due) {
      if (static_cast<int>(ring.size()) >= config.train_batch) {
        std::vector<ActiveSequence> batch;
        for (int b = 0; b < config.train_batch; ++b) {
          batch.push_back(std::move(ring.front()));
          ring.pop_front();
        }
        StepRecord rec = make_step_record(steps_done, tick, version, batch,
                                          config.drift_magnitude);
        fill_sample_lags(rec, batch, consumed_count);
        rec.post_warmup = batch_post_warmup(batch);
        if (rec.post_warmup && trace.first_post_warmup_step < 0)
          trace.first_post_warmup_step = rec.step;
        trace.steps.push_back(std::move(rec));

        for (auto& seq : batch) sequence_log.push_back({std::move(seq), steps_done, "consumed"});
        consumed_count += config.train_batch;
        trace.consumed += config.train_batch;
        ++version;
        ++steps_done;
        trace.events.push_back({tick, "weight_update", {{"version", version}}});
        if (stall_pending) {
          trace.events.push_back(
              {tick, "stall", {{"scheduled_tick", stall_scheduled}, {"actual_tick", tick}}});
          stall_pending = false;
        }
        pause_remaining = config.weight_transfer_pause_ticks;
        next_step_due = tick + config.train_ticks_per_step;
      } else if (!stall_pending) {
        stall_pending = true;
        stall_scheduled = next_step_due;
      }
    }

    trace.ticks.push_back({tick, in_flight, static_cast<int>(ring.size()), version});
    ++tick;
    if (tick > kTickSafetyCap) throw std::logic_error("simulation exceeded tick cap");
  }

  trace.pending_end = static_cast<long long>(ring.size() + preprocessor.size());
  for (auto& seq : ring) sequence_log.push_back({std::move(seq), -1, "pending"});
  for (auto& seq : preprocessor) sequence_log.push_back({std::move(seq), -1, "pending"});
  for (auto& slot : slots) {
    if (!slot.has_value()) continue;
    trace.pending_end += 1;
    sequence_log.push_back({std::move(*slot), -1, "pending"});
  }

  finalize_sequence_records(trace, sequence_log);
  return trace;
}

SimTrace run(const SimConfig& config) {
  return config.mode == Mode::Conventional ? run_conventional(config) : run_pipeline(config);
}

SimTrace replay(const SimConfig& config) {
  SimTrace first = run(config);
  const SimTrace second = run(config);
  if (first.to_json() != second.to_json())
    throw std::logic_error("replay: repeated run diverged from the first");
  return first;
}

std::vector<std::map<int, long long>> lag_structure(const SimTrace& trace, int from_step,
                                                    int to_step) {
  if (from_step < 0 || to_step > static_cast<int>(trace.steps.size()) || from_step > to_step)
    throw std::invalid_argument("lag_structure: step range out of bounds");
  std::vector<std::map<int, long long>> out;
  out.reserve(to_step - from_step);
  for (int s = from_step; s < to_step; ++s) out.push_back(trace.steps[s].lag_histogram_steps);
  return out;
}

std::vector<double> ess_trace(const SimTrace& trace, const DriftModel& drift) {
  if (drift.magnitude < 0.0) throw std::invalid_argument("ess_trace: negative magnitude");
  std::vector<double> out;
  out.reserve(trace.steps.size());
  for (const auto& step : trace.steps)
    out.push_back(batch_ess(step.sequence_lag_sums_steps, drift.magnitude));
  return out;
}

namespace {

using nlohmann::json;

json config_to_json_doc(const SimConfig& c) {
  return {{"schema", "streamrl.sim_config/1"},
          {"mode", to_string(c.mode)},
          {"n_inference_units", c.n_inference_units},
          {"gen_batch", c.gen_batch},
          {"train_batch", c.train_batch},
          {"steps_per_rl_step", c.steps_per_rl_step},
          {"train_ticks_per_step", c.train_ticks_per_step},
          {"weight_transfer_pause_ticks", c.weight_transfer_pause_ticks},
          {"preprocessor_delay_ticks", c.preprocessor_delay_ticks},
          {"queue_capacity", c.queue_capacity},
          {"lengths", detail::lengths_to_json(c.lengths)},
          {"total_optimizer_steps", c.total_optimizer_steps},
          {"drift_magnitude", c.drift_magnitude},
          {"seed", c.seed}};
}

SimConfig config_from_json_doc(const json& doc) {
  SimConfig c;
  const std::string mode = doc.at("mode").get<std::string>();
  if (mode == "conventional") c.mode = Mode::Conventional;
  else if (mode == "pipeline") c.mode = Mode::Pipeline;
  else throw std::invalid_argument("sim config: unknown mode " + mode);
  c.n_inference_units = doc.value("n_inference_units", 1);
  c.gen_batch = doc.value("gen_batch", 1);
  c.train_batch = doc.at("train_batch").get<int>();
  c.steps_per_rl_step = doc.value("steps_per_rl_step", 1);
  c.train_ticks_per_step = doc.value("train_ticks_per_step", 1);
  c.weight_transfer_pause_ticks = doc.value("weight_transfer_pause_ticks", 0);
  c.preprocessor_delay_ticks = doc.value("preprocessor_delay_ticks", 0);
  c.queue_capacity = doc.value("queue_capacity", c.train_batch);
  c.lengths = detail::lengths_from_json(doc.at("lengths"));
  c.total_optimizer_steps = doc.at("total_optimizer_steps").get<int>();
  c.drift_magnitude = doc.value("drift_magnitude", 0.0);
  c.seed = doc.value("seed", std::uint64_t{0});
  c.validate();
  return c;
}

}  // namespace

std::string SimConfig::to_json() const { return config_to_json_doc(*this).dump(2); }

SimConfig SimConfig::from_json(const std::string& text) {
  return config_from_json_doc(json::parse(text));
}

std::string SimTrace::to_json() const {
  json ticks_doc = json::array();
  for (const auto& t : ticks)
    ticks_doc.push_back({t.tick, t.in_flight, t.queue_depth, t.weight_version});
  json steps_doc = json::array();
  for (const auto& s : steps) {
    json hist = json::array();
    for (const auto& [lag, count] : s.lag_histogram_steps) hist.push_back({lag, count});
    steps_doc.push_back({{"step", s.step},
                         {"tick", s.tick},
                         {"version_before", s.version_before},
                         {"sequences", s.sequences},
                         {"tokens", s.tokens},
                         {"lag_histogram_steps", hist},
                         {"max_lag_steps", s.max_lag_steps},
                         {"mean_lag_steps", s.mean_lag_steps},
                         {"max_lag_samples", s.max_lag_samples},
                         {"mean_lag_samples", s.mean_lag_samples},
                         {"sequence_lag_sums_steps", s.sequence_lag_sums_steps},
                         {"sequence_lengths", s.sequence_lengths},
                         {"ess", s.ess},
                         {"post_warmup", s.post_warmup}});
  }
  json events_doc = json::array();
  for (const auto& e : events)
    events_doc.push_back({{"tick", e.tick}, {"kind", e.kind}, {"fields", e.fields}});
  json seqs_doc = json::array();
  for (const auto& s : sequences)
    seqs_doc.push_back({{"id", s.id},
                        {"start_tick", s.start_tick},
                        {"finish_tick", s.finish_tick},
                        {"start_version", s.start_version},
                        {"consumed_step", s.consumed_step},
                        {"outcome", s.outcome},
                        {"token_versions", s.token_versions}});
  json doc = {{"schema", "streamrl.sim_trace/1"},
              {"config", config_to_json_doc(config)},
              {"ticks", ticks_doc},
              {"steps", steps_doc},
              {"events", events_doc},
              {"sequences", seqs_doc},
              {"generated", generated},
              {"consumed", consumed},
              {"evicted", evicted},
              {"pending_end", pending_end},
              {"first_post_warmup_step", first_post_warmup_step}};
  return doc.dump();
}

SimTrace SimTrace::from_json(const std::string& text) {
  const json doc = json::parse(text);
  if (doc.value("schema", "") != "streamrl.sim_trace/1")
    throw std::invalid_argument("sim trace: unknown schema id");
  SimTrace trace;
  trace.config = config_from_json_doc(doc.at("config"));
  for (const auto& t : doc.at("ticks"))
    trace.ticks.push_back({t.at(0).get<long long>(), t.at(1).get<int>(), t.at(2).get<int>(),
                           t.at(3).get<int>()});
  for (const auto& s : doc.at("steps")) {
    StepRecord rec;
    rec.step = s.at("step").get<int>();
    rec.tick = s.at("tick").get<long long>();
    rec.version_before = s.at("version_before").get<int>();
    rec.sequences = s.at("sequences").get<int>();
    rec.tokens = s.at("tokens").get<long long>();
    for (const auto& h : s.at("lag_histogram_steps"))
      rec.lag_histogram_steps[h.at(0).get<int>()] = h.at(1).get<long long>();
    rec.max_lag_steps = s.at("max_lag_steps").get<long long>();
    rec.mean_lag_steps = s.at("mean_lag_steps").get<double>();
    rec.max_lag_samples = s.at("max_lag_samples").get<long long>();
    rec.mean_lag_samples = s.at("mean_lag_samples").get<double>();
    rec.sequence_lag_sums_steps = s.at("sequence_lag_sums_steps").get<std::vector<long long>>();
    rec.sequence_lengths = s.at("sequence_lengths").get<std::vector<int>>();
    rec.ess = s.at("ess").get<double>();
    rec.post_warmup = s.at("post_warmup").get<bool>();
    trace.steps.push_back(std::move(rec));
  }
  for (const auto& e : doc.at("events")) {
    SimEvent ev;
    ev.tick = e.at("tick").get<long long>();
    ev.kind = e.at("kind").get<std::string>();
    ev.fields = e.at("fields").get<std::map<std::string, long long>>();
    trace.events.push_back(std::move(ev));
  }
  for (const auto& s : doc.at("sequences")) {
    SequenceRecord rec;
    rec.id = s.at("id").get<long long>();
    rec.start_tick = s.at("start_tick").get<long long>();
    rec.finish_tick = s.at("finish_tick").get<long long>();
    rec.start_version = s.at("start_version").get<int>();
    rec.consumed_step = s.at("consumed_step").get<int>();
    rec.outcome = s.at("outcome").get<std::string>();
    rec.token_versions = s.at("token_versions").get<std::vector<std::int32_t>>();
    trace.sequences.push_back(std::move(rec));
  }
  trace.generated = doc.at("generated").get<long long>();
  trace.consumed = doc.at("consumed").get<long long>();
  trace.evicted = doc.at("evicted").get<long long>();
  trace.pending_end = doc.at("pending_end").get<long long>();
  trace.first_post_warmup_step = doc.at("first_post_warmup_step").get<int>();
  return trace;
}

}  // namespace streamrl::sim

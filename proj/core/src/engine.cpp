// SPDX-License-Identifier: Apache-2.0
#include "streamrl/engine.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "streamrl/numeric.hpp"

namespace streamrl::proto {

std::string to_string(FinishReason reason) {
  switch (reason) {
    case FinishReason::Running: return "running";
    case FinishReason::Length: return "length";
    case FinishReason::Terminator: return "terminator";
    case FinishReason::Shutdown: return "shutdown";
  }
  return "running";
}

struct Engine::Stream {
  std::string id;
  std::string prompt_id;
  int max_tokens = 1;
  std::int32_t terminator = -1;
  rng::SplitMix64 gen;
  std::vector<std::int32_t> tokens;
  std::vector<double> state;  // recurrent hidden state
  std::deque<TokenEvent> outbox;
  FinishReason finish = FinishReason::Running;

  Stream(std::uint64_t seed) : gen(seed) {}
};

Engine::Engine(Options options) : options_(std::move(options)) {
  rlmath::validate(options_.policy);
  paused_ = options_.start_paused;
  scheduler_ = std::thread([this] { scheduler_loop(); });
}

Engine::~Engine() { stop(); }

std::string Engine::open_stream(const std::string& prompt_id, int max_tokens, std::uint64_t seed,
                                std::int32_t terminator_token) {
  if (max_tokens < 1) throw std::invalid_argument("open_stream: max_tokens must be >= 1");
  std::lock_guard lk(lock_);
  auto stream = std::make_unique<Stream>(seed);
  stream->id = "s" + std::to_string(next_stream_++);
  stream->prompt_id = prompt_id;
  stream->max_tokens = max_tokens;
  stream->terminator = terminator_token;
  if (const auto* rec = std::get_if<rlmath::RecurrentToyPolicy>(&options_.policy))
    stream->state = rec->initial_state();
  const std::string id = stream->id;
  streams_.push_back(std::move(stream));
  work_cv_.notify_all();
  return id;
}

bool Engine::wait_events(const std::string& stream_id, std::vector<TokenEvent>& out,
                         FinishReason& reason) {
  std::unique_lock lk(lock_);
  Stream* stream = nullptr;
  for (auto& s : streams_)
    if (s->id == stream_id) stream = s.get();
  if (stream == nullptr) throw std::invalid_argument("unknown stream id " + stream_id);
  work_cv_.wait(lk, [&] { return !stream->outbox.empty() || stream->finish != FinishReason::Running; });
  while (!stream->outbox.empty()) {
    out.push_back(stream->outbox.front());
    stream->outbox.pop_front();
  }
  reason = stream->finish;
  return !out.empty() || reason == FinishReason::Running;
}

UpdateResult Engine::apply_weight_update(int new_version, rlmath::Policy policy) {
  std::lock_guard lk(lock_);
  UpdateResult result;
  if (new_version != weight_version_ + 1) {
    result.applied = false;
    result.version = weight_version_;
    result.error = "version_conflict";
    return result;
  }
  try {
    rlmath::validate(policy);
  } catch (const std::exception&) {
    result.applied = false;
    result.version = weight_version_;
    result.error = "invalid_policy";
    return result;
  }
  if (policy.index() != options_.policy.index() ||
      rlmath::vocab_size_of(policy) != rlmath::vocab_size_of(options_.policy)) {
    result.applied = false;
    result.version = weight_version_;
    result.error = "policy_mismatch";
    return result;
  }
  // Holding lock_ here means no scheduling round is in progress: the swap
  // lands exactly on a token boundary.
  options_.policy = std::move(policy);
  weight_version_ = new_version;
  if (options_.recompute_state) {
    if (const auto* rec = std::get_if<rlmath::RecurrentToyPolicy>(&options_.policy)) {
      for (auto& stream : streams_)
        if (stream->finish == FinishReason::Running)
          stream->state = rec->state_for_prefix(stream->tokens);
    }
  }
  result.applied = true;
  result.version = weight_version_;
  return result;
}

bool Engine::run_round_locked() {
  bool advanced = false;
  for (auto& stream : streams_) {
    if (stream->finish != FinishReason::Running) continue;
    std::vector<double> logprobs;
    if (const auto* tab = std::get_if<rlmath::TabularPolicy>(&options_.policy)) {
      logprobs = tab->next_token_logprobs(stream->prompt_id, stream->tokens);
    } else {
      logprobs = std::get<rlmath::RecurrentToyPolicy>(options_.policy)
                     .next_token_logprobs(stream->state);
    }
    std::vector<double> probs(logprobs.size());
    for (std::size_t k = 0; k < probs.size(); ++k) probs[k] = std::exp(logprobs[k]);
    const int token = rng::sample_categorical(stream->gen, probs);

    TokenEvent event;
    event.stream_id = stream->id;
    event.position = static_cast<int>(stream->tokens.size());
    event.token = token;
    event.logprob = logprobs[token];
    event.weight_version = weight_version_;
    stream->outbox.push_back(event);

    if (const auto* rec = std::get_if<rlmath::RecurrentToyPolicy>(&options_.policy))
      rec->advance_state(stream->state, token);
    stream->tokens.push_back(token);

    if (token == stream->terminator)
      stream->finish = FinishReason::Terminator;
    else if (static_cast<int>(stream->tokens.size()) >= stream->max_tokens)
      stream->finish = FinishReason::Length;
    advanced = true;
  }
  return advanced;
}

void Engine::scheduler_loop() {
  for (;;) {
    std::unique_lock lk(lock_);
    if (stopping_) return;
    const bool has_live = std::any_of(streams_.begin(), streams_.end(), [](const auto& s) {
      return s->finish == FinishReason::Running;
    });
    const bool runnable = paused_ ? round_budget_ > 0 : has_live;
    if (!runnable) {
      work_cv_.wait(lk);
      continue;
    }
    run_round_locked();
    if (paused_) --round_budget_;
    ++rounds_done_;
    work_cv_.notify_all();
  }
}

long long Engine::advance(int rounds) {
  if (rounds < 0) throw std::invalid_argument("advance: negative round count");
  std::unique_lock lk(lock_);
  if (!paused_) throw std::logic_error("advance requires a paused engine");
  long long emitted_before = 0;
  for (const auto& s : streams_) emitted_before += static_cast<long long>(s->tokens.size());
  const long long target = rounds_done_ + rounds;
  round_budget_ += rounds;
  work_cv_.notify_all();
  work_cv_.wait(lk, [&] { return rounds_done_ >= target || stopping_; });
  long long emitted_after = 0;
  for (const auto& s : streams_) emitted_after += static_cast<long long>(s->tokens.size());
  return emitted_after - emitted_before;
}

void Engine::pause() {
  std::lock_guard lk(lock_);
  paused_ = true;
}

void Engine::resume() {
  std::lock_guard lk(lock_);
  paused_ = false;
  round_budget_ = 0;
  work_cv_.notify_all();
}

int Engine::weight_version() const {
  std::lock_guard lk(lock_);
  return weight_version_;
}

int Engine::active_streams() const {
  std::lock_guard lk(lock_);
  int n = 0;
  for (const auto& s : streams_)
    if (s->finish == FinishReason::Running) ++n;
  return n;
}

long long Engine::total_streams() const {
  std::lock_guard lk(lock_);
  return next_stream_;
}

long long Engine::rounds_done() const {
  std::lock_guard lk(lock_);
  return rounds_done_;
}

bool Engine::recompute_state_mode() const {
  std::lock_guard lk(lock_);
  return options_.recompute_state;
}

void Engine::set_process_group(std::string group_id, std::vector<std::string> members) {
  std::lock_guard lk(lock_);
  group_id_ = std::move(group_id);
  group_members_ = std::move(members);
}

std::optional<std::string> Engine::process_group_id() const {
  std::lock_guard lk(lock_);
  return group_id_;
}

void Engine::stop() {
  {
    std::lock_guard lk(lock_);
    if (stopping_) {
      // already stopped; nothing to finish
    } else {
      stopping_ = true;
      for (auto& stream : streams_)
        if (stream->finish == FinishReason::Running) stream->finish = FinishReason::Shutdown;
    }
    work_cv_.notify_all();
  }
  if (scheduler_.joinable()) scheduler_.join();
}

namespace {

std::array<std::uint32_t, 256> make_crc_table() {
  std::array<std::uint32_t, 256> table{};
  for (std::uint32_t i = 0; i < 256; ++i) {
    std::uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    table[i] = c;
  }
  return table;
}

}  // namespace

std::uint32_t crc32(std::string_view bytes) {
  static const auto table = make_crc_table();
  std::uint32_t c = 0xFFFFFFFFu;
  for (unsigned char b : bytes) c = table[(c ^ b) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

std::string process_group_id(std::vector<std::string> members) {
  if (members.empty()) throw std::invalid_argument("process group needs at least one member");
  std::sort(members.begin(), members.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the canonical member list
  for (const auto& m : members) {
    for (unsigned char b : m) {
      h ^= b;
      h *= 0x100000001b3ULL;
    }
    h ^= '\n';
    h *= 0x100000001b3ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "pg-%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace streamrl::proto

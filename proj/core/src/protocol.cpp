// SPDX-License-Identifier: Apache-2.0
#include "streamrl/protocol.hpp"

#include <chrono>
#include <fstream>
#include <future>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace streamrl::proto {

namespace {

using nlohmann::json;

json token_event_to_json(const TokenEvent& e) {
  return {{"stream_id", e.stream_id},
          {"position", e.position},
          {"token", e.token},
          {"logprob", e.logprob},
          {"weight_version", e.weight_version}};
}

TokenEvent token_event_from_json(const json& doc) {
  TokenEvent e;
  e.stream_id = doc.at("stream_id").get<std::string>();
  e.position = doc.at("position").get<int>();
  e.token = doc.at("token").get<std::int32_t>();
  e.logprob = doc.at("logprob").get<double>();
  e.weight_version = doc.at("weight_version").get<int>();
  return e;
}

FinishReason finish_from_string(const std::string& s) {
  if (s == "length") return FinishReason::Length;
  if (s == "terminator") return FinishReason::Terminator;
  if (s == "shutdown") return FinishReason::Shutdown;
  return FinishReason::Running;
}

std::pair<std::string, int> split_url(const std::string& base_url) {
  std::string rest = base_url;
  const auto scheme = rest.find("://");
  if (scheme != std::string::npos) rest = rest.substr(scheme + 3);
  while (!rest.empty() && rest.back() == '/') rest.pop_back();
  const auto colon = rest.rfind(':');
  if (colon == std::string::npos)
    throw std::invalid_argument("engine url must be host:port, got " + base_url);
  return {rest.substr(0, colon), std::stoi(rest.substr(colon + 1))};
}

}  // namespace

struct EngineServer::Impl {
  httplib::Server server;
  std::thread worker;
};

EngineServer::EngineServer(Engine& engine, std::string host)
    : impl_(std::make_unique<Impl>()), engine_(engine), host_(std::move(host)) {}

EngineServer::~EngineServer() { stop(); }

std::string EngineServer::base_url() const {
  return "http://" + host_ + ":" + std::to_string(port_);
}

int EngineServer::start(int port) {
  auto& svr = impl_->server;

  svr.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
    json doc = {{"status", "ok"},
                {"weight_version", engine_.weight_version()},
                {"active_streams", engine_.active_streams()},
                {"total_streams", engine_.total_streams()},
                {"recompute_state", engine_.recompute_state_mode()}};
    res.set_content(doc.dump(), "application/json");
  });

  svr.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
    GenerationRequest gen;
    try {
      const json doc = json::parse(req.body);
      gen.prompt_id = doc.at("prompt_id").get<std::string>();
      gen.max_tokens = doc.at("max_tokens").get<int>();
      gen.seed = doc.value("seed", std::uint64_t{0});
      gen.terminator_token = doc.value("terminator", -1);
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", std::string("bad_request: ") + e.what()}}.dump(),
                      "application/json");
      return;
    }
    std::string stream_id;
    try {
      stream_id = engine_.open_stream(gen.prompt_id, gen.max_tokens, gen.seed,
                                      gen.terminator_token);
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
      return;
    }
    auto done_sent = std::make_shared<bool>(false);
    res.set_chunked_content_provider(
        "application/x-ndjson",
        [this, stream_id, done_sent](std::size_t, httplib::DataSink& sink) {
          if (*done_sent) {
            sink.done();
            return true;
          }
          std::vector<TokenEvent> events;
          FinishReason reason = FinishReason::Running;
          const bool more = engine_.wait_events(stream_id, events, reason);
          std::string payload;
          for (const auto& e : events) payload += token_event_to_json(e).dump() + "\n";
          if (!more || (reason != FinishReason::Running && events.empty())) {
            payload += json{{"done", true},
                            {"stream_id", stream_id},
                            {"finish_reason", to_string(reason)}}
                           .dump() +
                       "\n";
            *done_sent = true;
          }
          if (!payload.empty() && !sink.write(payload.data(), payload.size())) return false;
          if (*done_sent) sink.done();
          return true;
        });
  });

  svr.Post("/init_process_group", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const json doc = json::parse(req.body);
      auto members = doc.at("members").get<std::vector<std::string>>();
      const std::string id = process_group_id(members);
      engine_.set_process_group(id, members);
      res.set_content(json{{"group_id", id}, {"size", members.size()}}.dump(),
                      "application/json");
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  });

  svr.Post("/request_weight_update", [this](const httplib::Request& req, httplib::Response& res) {
    json doc;
    try {
      doc = json::parse(req.body);
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", std::string("bad_request: ") + e.what()}}.dump(),
                      "application/json");
      return;
    }
    const int new_version = doc.value("new_version", -1);
    if (!doc.contains("policy") || !doc.contains("checksum") || new_version < 0) {
      res.status = 400;
      res.set_content(json{{"error", "bad_request: missing field"}}.dump(), "application/json");
      return;
    }
    const std::string policy_bytes = doc.at("policy").dump();
    const auto expected = doc.at("checksum").get<std::uint64_t>();
    if (crc32(policy_bytes) != expected) {
      res.status = 400;
      res.set_content(json{{"error", "checksum_mismatch"},
                           {"current_version", engine_.weight_version()}}
                          .dump(),
                      "application/json");
      return;
    }
    rlmath::Policy policy;
    try {
      policy = rlmath::policy_from_json(policy_bytes);
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", std::string("invalid_policy: ") + e.what()}}.dump(),
                      "application/json");
      return;
    }
    const UpdateResult result = engine_.apply_weight_update(new_version, std::move(policy));
    if (result.applied) {
      res.set_content(json{{"applied_version", result.version}}.dump(), "application/json");
    } else {
      res.status = result.error == "version_conflict" ? 409 : 400;
      res.set_content(json{{"error", result.error}, {"current_version", result.version}}.dump(),
                      "application/json");
    }
  });

  svr.Post("/admin/pause", [this](const httplib::Request&, httplib::Response& res) {
    engine_.pause();
    res.set_content("{}", "application/json");
  });
  svr.Post("/admin/resume", [this](const httplib::Request&, httplib::Response& res) {
    engine_.resume();
    res.set_content("{}", "application/json");
  });
  svr.Post("/admin/advance", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const json doc = json::parse(req.body);
      const int rounds = doc.at("rounds").get<int>();
      const long long emitted = engine_.advance(rounds);
      res.set_content(json{{"rounds", rounds}, {"tokens_emitted", emitted}}.dump(),
                      "application/json");
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  });
  svr.Get("/admin/state", [this](const httplib::Request&, httplib::Response& res) {
    json doc = {{"weight_version", engine_.weight_version()},
                {"active_streams", engine_.active_streams()},
                {"total_streams", engine_.total_streams()},
                {"rounds_done", engine_.rounds_done()},
                {"group_id", engine_.process_group_id().value_or("")}};
    res.set_content(doc.dump(), "application/json");
  });

  if (port == 0) {
    port_ = svr.bind_to_any_port(host_);
    if (port_ < 0) throw std::runtime_error("cannot bind " + host_);
  } else {
    if (!svr.bind_to_port(host_, port))
      throw std::runtime_error("cannot bind " + host_ + ":" + std::to_string(port));
    port_ = port;
  }
  impl_->worker = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port_;
}

void EngineServer::stop() {
  if (!impl_) return;
  if (impl_->server.is_running()) impl_->server.stop();
  engine_.stop();  // unblocks streaming handlers waiting on events
  if (impl_->worker.joinable()) impl_->worker.join();
}

EngineClient::EngineClient(std::string base_url) : base_url_(std::move(base_url)) {
  std::tie(host_, port_) = split_url(base_url_);
}

namespace {

httplib::Client make_client(const std::string& host, int port) {
  httplib::Client cli(host, port);
  cli.set_connection_timeout(5, 0);
  cli.set_read_timeout(300, 0);
  cli.set_write_timeout(30, 0);
  return cli;
}

json post_json(const std::string& host, int port, const std::string& path, const json& body,
               int* status = nullptr) {
  auto cli = make_client(host, port);
  auto res = cli.Post(path, body.dump(), "application/json");
  if (!res) throw ConnectivityError("cannot reach engine at " + host + ":" +
                                    std::to_string(port) + " (" + httplib::to_string(res.error()) +
                                    ")");
  if (status != nullptr) *status = res->status;
  if (res->body.empty()) return json::object();
  return json::parse(res->body);
}

}  // namespace

bool EngineClient::healthy() const {
  auto cli = make_client(host_, port_);
  auto res = cli.Get("/healthz");
  return res && res->status == 200;
}

int EngineClient::weight_version() const {
  auto cli = make_client(host_, port_);
  auto res = cli.Get("/healthz");
  if (!res) throw ConnectivityError("cannot reach engine at " + base_url_);
  return json::parse(res->body).at("weight_version").get<int>();
}

int EngineClient::active_streams() const {
  auto cli = make_client(host_, port_);
  auto res = cli.Get("/admin/state");
  if (!res) throw ConnectivityError("cannot reach engine at " + base_url_);
  return json::parse(res->body).at("active_streams").get<int>();
}

StreamResult EngineClient::generate(const GenerationRequest& request,
                                    const std::function<void(const TokenEvent&)>& on_event) const {
  auto cli = make_client(host_, port_);
  const json body = {{"prompt_id", request.prompt_id},
                     {"max_tokens", request.max_tokens},
                     {"seed", request.seed},
                     {"terminator", request.terminator_token}};

  StreamResult result;
  std::string buffer;
  auto consume_lines = [&]() {
    std::size_t pos = 0;
    for (;;) {
      const auto nl = buffer.find('\n', pos);
      if (nl == std::string::npos) break;
      const std::string line = buffer.substr(pos, nl - pos);
      pos = nl + 1;
      if (line.empty()) continue;
      const json doc = json::parse(line);
      if (doc.value("done", false)) {
        result.finish = finish_from_string(doc.value("finish_reason", "running"));
      } else {
        TokenEvent event = token_event_from_json(doc);
        if (on_event) on_event(event);
        result.events.push_back(std::move(event));
      }
    }
    buffer.erase(0, pos);
  };

  httplib::Request req;
  req.method = "POST";
  req.path = "/v1/chat/completions";
  req.body = body.dump();
  req.set_header("Content-Type", "application/json");
  req.content_receiver = [&](const char* data, std::size_t n, std::uint64_t, std::uint64_t) {
    buffer.append(data, n);
    consume_lines();
    return true;
  };
  auto res = cli.send(req);
  if (!res)
    throw ConnectivityError("generation stream failed: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw std::runtime_error("generation request rejected with status " +
                             std::to_string(res->status));
  consume_lines();
  if (result.finish == FinishReason::Running) result.finish = FinishReason::Shutdown;
  return result;
}

UpdateResult EngineClient::request_weight_update(int new_version, const rlmath::Policy& policy,
                                                 const std::string& group_id) const {
  const json policy_doc = json::parse(rlmath::policy_to_json(policy));
  const std::string policy_bytes = policy_doc.dump();
  json body = {{"new_version", new_version},
               {"policy", policy_doc},
               {"checksum", crc32(policy_bytes)}};
  if (!group_id.empty()) body["group_id"] = group_id;
  int status = 0;
  const json reply = post_json(host_, port_, "/request_weight_update", body, &status);
  UpdateResult result;
  result.applied = status == 200;
  result.version = result.applied ? reply.at("applied_version").get<int>()
                                  : reply.value("current_version", -1);
  result.error = reply.value("error", "");
  return result;
}

std::string EngineClient::init_process_group(const std::vector<std::string>& members) const {
  int status = 0;
  const json reply = post_json(host_, port_, "/init_process_group", json{{"members", members}},
                               &status);
  if (status != 200)
    throw std::runtime_error("init_process_group rejected: " + reply.value("error", "unknown"));
  return reply.at("group_id").get<std::string>();
}

void EngineClient::pause() const { post_json(host_, port_, "/admin/pause", json::object()); }

void EngineClient::resume() const { post_json(host_, port_, "/admin/resume", json::object()); }

long long EngineClient::advance(int rounds) const {
  int status = 0;
  const json reply = post_json(host_, port_, "/admin/advance", json{{"rounds", rounds}}, &status);
  if (status != 200) throw std::runtime_error("advance rejected: " + reply.value("error", ""));
  return reply.at("tokens_emitted").get<long long>();
}

std::string init_process_group(const std::vector<std::string>& member_urls) {
  if (member_urls.empty()) throw std::invalid_argument("process group needs members");
  // Probe everyone first: an unreachable member aborts before any engine
  // stores a partial group.
  for (const auto& url : member_urls) {
    EngineClient client(url);
    if (!client.healthy()) throw ConnectivityError("group member unreachable: " + url);
  }
  std::string group_id;
  for (const auto& url : member_urls) {
    EngineClient client(url);
    const std::string id = client.init_process_group(member_urls);
    if (!group_id.empty() && id != group_id)
      throw std::runtime_error("group members disagree on group id");
    group_id = id;
  }
  return group_id;
}

std::vector<UpdateResult> request_group_weight_update(const std::vector<std::string>& member_urls,
                                                      int new_version,
                                                      const rlmath::Policy& policy,
                                                      const std::string& group_id) {
  std::vector<UpdateResult> results;
  results.reserve(member_urls.size());
  for (const auto& url : member_urls)
    results.push_back(EngineClient(url).request_weight_update(new_version, policy, group_id));
  return results;
}

Scenario Scenario::from_json(const std::string& text, const std::string& base_dir) {
  const json doc = json::parse(text);
  if (doc.value("schema", "") != "streamrl.scenario/1")
    throw std::invalid_argument("scenario: unknown schema id");
  Scenario scenario;
  scenario.engine_url = doc.value("engine", "");
  for (const auto& step_doc : doc.at("steps")) {
    ScenarioStep step;
    step.action = step_doc.at("action").get<std::string>();
    if (step.action == "start_stream") {
      step.name = step_doc.at("name").get<std::string>();
      step.request.prompt_id = step_doc.at("prompt_id").get<std::string>();
      step.request.max_tokens = step_doc.at("max_tokens").get<int>();
      step.request.seed = step_doc.value("seed", std::uint64_t{0});
      step.request.terminator_token = step_doc.value("terminator", -1);
    } else if (step.action == "advance") {
      step.rounds = step_doc.at("rounds").get<int>();
    } else if (step.action == "update_weights") {
      step.new_version = step_doc.at("new_version").get<int>();
      if (step_doc.contains("policy")) {
        step.policy_json = step_doc.at("policy").dump();
      } else {
        const auto rel = step_doc.at("policy_file").get<std::string>();
        const std::string path = base_dir.empty() ? rel : base_dir + "/" + rel;
        std::ifstream in(path);
        if (!in) throw std::runtime_error("scenario: cannot open policy file " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        step.policy_json = ss.str();
      }
    } else if (step.action == "await_all") {
      step.timeout_ms = step_doc.value("timeout_ms", 10000LL);
    } else if (step.action != "pause" && step.action != "resume") {
      throw std::invalid_argument("scenario: unknown action " + step.action);
    }
    scenario.steps.push_back(std::move(step));
  }
  return scenario;
}

std::string Transcript::to_json() const {
  json streams_doc = json::object();
  for (const auto& [name, result] : streams) {
    json events = json::array();
    for (const auto& e : result.events) events.push_back(token_event_to_json(e));
    streams_doc[name] = {{"finish_reason", to_string(result.finish)}, {"events", events}};
  }
  json doc = {{"schema", "streamrl.transcript/1"},
              {"ok", ok},
              {"failure", failure},
              {"log", log},
              {"streams", streams_doc}};
  return doc.dump(2);
}

Transcript drive_scenario(const std::string& engine_url, const Scenario& scenario) {
  EngineClient control(engine_url);
  if (!control.healthy()) throw ConnectivityError("no engine at " + engine_url);

  Transcript transcript;
  std::map<std::string, std::future<StreamResult>> running;
  long long streams_started = 0;

  auto state_total_streams = [&]() {
    auto cli = make_client(split_url(engine_url).first, split_url(engine_url).second);
    auto res = cli.Get("/admin/state");
    if (!res) throw ConnectivityError("engine state unavailable");
    return json::parse(res->body).at("total_streams").get<long long>();
  };
  const long long preexisting = state_total_streams();

  for (const auto& step : scenario.steps) {
    if (step.action == "pause") {
      control.pause();
      transcript.log.push_back("pause");
    } else if (step.action == "resume") {
      control.resume();
      transcript.log.push_back("resume");
    } else if (step.action == "advance") {
      const long long emitted = control.advance(step.rounds);
      transcript.log.push_back("advance rounds=" + std::to_string(step.rounds) +
                               " tokens=" + std::to_string(emitted));
    } else if (step.action == "start_stream") {
      GenerationRequest request = step.request;
      running[step.name] = std::async(std::launch::async, [engine_url, request] {
        return EngineClient(engine_url).generate(request);
      });
      ++streams_started;
      // Wait for registration so a following advance schedules this stream.
      const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(10);
      while (state_total_streams() < preexisting + streams_started) {
        if (std::chrono::steady_clock::now() > deadline)
          throw std::runtime_error("stream registration timed out");
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
      }
      transcript.log.push_back("start_stream " + step.name);
    } else if (step.action == "update_weights") {
      const rlmath::Policy policy = rlmath::policy_from_json(step.policy_json);
      const UpdateResult result =
          EngineClient(engine_url).request_weight_update(step.new_version, policy);
      transcript.log.push_back("update_weights version=" + std::to_string(step.new_version) +
                               (result.applied ? " applied" : " rejected:" + result.error));
    } else if (step.action == "await_all") {
      const auto deadline =
          std::chrono::steady_clock::now() + std::chrono::milliseconds(step.timeout_ms);
      for (auto& [name, future] : running) {
        if (!future.valid()) continue;
        if (future.wait_until(deadline) != std::future_status::ready) {
          transcript.ok = false;
          transcript.failure = "await_all timed out waiting for stream " + name;
          break;
        }
        transcript.streams[name] = future.get();
      }
      transcript.log.push_back(transcript.ok ? "await_all done" : "await_all timeout");
      if (!transcript.ok) break;
    }
  }

  // Drain the remaining streams. After a failure the engine may be paused;
  // resuming lets every bounded stream run to completion so the futures
  // (whose destructors block) can be collected.
  if (!transcript.ok) {
    try {
      control.resume();
    } catch (const std::exception&) {
    }
  }
  for (auto& [name, future] : running) {
    if (!future.valid() || transcript.streams.count(name)) continue;
    try {
      transcript.streams[name] = future.get();
    } catch (const std::exception& e) {
      transcript.ok = false;
      if (transcript.failure.empty())
        transcript.failure = "stream " + name + " failed: " + e.what();
    }
  }
  return transcript;
}

}  // namespace streamrl::proto

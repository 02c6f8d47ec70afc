#include "tpx/decoder.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "httplib.h"
#include "tpx/error.hpp"

namespace tpx {

Micros TraceRound::generation_time() const {
  Micros total = prefill_latency_us;
  for (const auto& t : tokens) total += t.latency_us;
  return total;
}

std::string TraceRound::text() const {
  std::string out;
  for (const auto& t : tokens) out += t.text;
  return out;
}

DecodeTrace DecodeTrace::from_json(const nlohmann::json& doc) {
  auto fail = [](const std::string& why) { throw Error(ErrorCode::InvalidConfig, "trace: " + why); };
  if (!doc.is_object() || !doc.contains("rounds") || !doc["rounds"].is_array()) fail("missing 'rounds' array");
  DecodeTrace trace;
  for (const auto& r : doc["rounds"]) {
    TraceRound round;
    round.prefill_latency_us = r.value("prefill_latency_us", Micros{0});
    round.empty_response = r.value("empty_response", false);
    if (round.prefill_latency_us < 0) fail("negative prefill_latency_us");
    if (!r.contains("tokens") || !r["tokens"].is_array()) fail("round without 'tokens'");
    for (const auto& t : r["tokens"]) {
      if (!t.contains("text") || !t["text"].is_string()) fail("token without text");
      TraceToken tok{t["text"].get<std::string>(), t.value("latency_us", Micros{0})};
      if (tok.latency_us < 0) fail("negative latency_us");
      round.tokens.push_back(std::move(tok));
    }
    if (round.tokens.empty() && !round.empty_response) {
      fail("round " + std::to_string(trace.rounds.size()) + " has no tokens and is not marked empty_response");
    }
    trace.rounds.push_back(std::move(round));
  }
  if (trace.rounds.empty()) fail("a trace needs at least one round");
  return trace;
}

DecodeTrace DecodeTrace::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidConfig, "cannot open trace " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, "trace " + path.string() + ": " + e.what());
  }
  return from_json(doc);
}

nlohmann::json DecodeTrace::to_json() const {
  nlohmann::json rounds_json = nlohmann::json::array();
  for (const auto& r : rounds) {
    nlohmann::json tokens = nlohmann::json::array();
    for (const auto& t : r.tokens) tokens.push_back({{"text", t.text}, {"latency_us", t.latency_us}});
    nlohmann::json round = {{"prefill_latency_us", r.prefill_latency_us}, {"tokens", std::move(tokens)}};
    if (r.empty_response) round["empty_response"] = true;
    rounds_json.push_back(std::move(round));
  }
  return {{"rounds", std::move(rounds_json)}};
}

std::uint64_t prompt_hash(std::string_view prompt) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : prompt) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------

SimulatedDecoder::SimulatedDecoder(DecodeTrace trace, Clock& clock) : trace_(std::move(trace)), clock_(clock) {}

void SimulatedDecoder::start_round(std::string_view prompt) {
  if (round_ >= trace_.rounds.size()) {
    throw Error(ErrorCode::TraceExhausted, "trace has " + std::to_string(trace_.rounds.size()) +
                                               " rounds; round " + std::to_string(round_) + " requested");
  }
  prompt_hashes_.push_back(prompt_hash(prompt));
  cursor_ = 0;
  active_ = true;
  cancelled_ = false;
  clock_.sleep_for(trace_.rounds[round_].prefill_latency_us);
  ++round_;
}

std::optional<TokenEvent> SimulatedDecoder::next_token() {
  if (!active_) return std::nullopt;
  if (cancelled_) return std::nullopt;
  const auto& round = trace_.rounds[round_ - 1];
  if (cursor_ >= round.tokens.size()) {
    active_ = false;
    return std::nullopt;
  }
  const auto& entry = round.tokens[cursor_];
  clock_.sleep_for(entry.latency_us);
  TokenEvent ev{Token{entry.text, cursor_}, clock_.now()};
  ++cursor_;
  return ev;
}

void SimulatedDecoder::cancel() {
  cancelled_ = true;
  active_ = false;
}

// ---------------------------------------------------------------------------

std::optional<std::string> parse_sse_delta(std::string_view payload) {
  while (!payload.empty() && payload.front() == ' ') payload.remove_prefix(1);
  if (payload == "[DONE]") return std::nullopt;
  auto doc = nlohmann::json::parse(payload, nullptr, false);
  if (doc.is_discarded()) throw Error(ErrorCode::StreamBroken, "bad SSE payload: " + std::string(payload));
  if (!doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty()) return std::nullopt;
  const auto& choice = doc["choices"][0];
  if (choice.contains("delta") && choice["delta"].contains("content") && choice["delta"]["content"].is_string()) {
    return choice["delta"]["content"].get<std::string>();
  }
  if (choice.contains("text") && choice["text"].is_string()) return choice["text"].get<std::string>();
  return std::nullopt;
}

RemoteDecoder::RemoteDecoder(RemoteConfig config, Clock& clock) : config_(std::move(config)), clock_(clock) {}

RemoteDecoder::~RemoteDecoder() {
  cancel();
  join();
}

void RemoteDecoder::join() {
  if (reader_.joinable()) reader_.join();
}

void RemoteDecoder::start_round(std::string_view prompt) {
  cancel();
  join();
  {
    std::lock_guard lock(m_);
    deltas_.clear();
    finished_ = false;
    cancelled_ = false;
    error_.reset();
  }
  index_ = 0;
  ++rounds_;

  nlohmann::json body = {
      {"model", config_.model},
      {"stream", true},
      {"temperature", 0},
      {"messages", nlohmann::json::array({{{"role", "user"}, {"content", std::string(prompt)}}})},
  };
  std::string token;
  if (const char* env = std::getenv(config_.auth_env.c_str())) token = env;

  reader_ = std::thread([this, payload = body.dump(), token] {
    httplib::Client cli(config_.base_url);
    const auto secs = config_.timeout_us / 1'000'000;
    cli.set_read_timeout(static_cast<time_t>(secs), 0);
    cli.set_connection_timeout(static_cast<time_t>(secs), 0);

    httplib::Request req;
    req.method = "POST";
    req.path = config_.path;
    req.body = payload;
    req.set_header("Content-Type", "application/json");
    req.set_header("Accept", "text/event-stream");
    if (!token.empty()) req.set_header("Authorization", "Bearer " + token);

    std::string buffer;
    bool done = false;
    req.content_receiver = [&](const char* data, size_t len, uint64_t, uint64_t) {
      buffer.append(data, len);
      std::size_t nl;
      while ((nl = buffer.find('\n')) != std::string::npos) {
        std::string line = buffer.substr(0, nl);
        buffer.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.rfind("data:", 0) != 0) continue;
        std::string_view payload_view(line);
        payload_view.remove_prefix(5);
        std::optional<std::string> delta;
        try {
          delta = parse_sse_delta(payload_view);
        } catch (const Error& e) {
          std::lock_guard lock(m_);
          error_ = e.what();
          cv_.notify_all();
          return false;
        }
        std::lock_guard lock(m_);
        if (cancelled_) return false;
        auto trimmed = payload_view;
        while (!trimmed.empty() && trimmed.front() == ' ') trimmed.remove_prefix(1);
        if (trimmed == "[DONE]") done = true;
        if (delta && !delta->empty()) deltas_.push_back(std::move(*delta));
        cv_.notify_all();
      }
      return !done;
    };

    httplib::Response res;
    httplib::Error err = httplib::Error::Success;
    bool ok = cli.send(req, res, err);
    std::lock_guard lock(m_);
    if (!cancelled_ && !error_ && !done) {
      if (!ok && err != httplib::Error::Canceled) {
        error_ = "request failed: " + httplib::to_string(err);
      } else if (ok && res.status >= 400) {
        error_ = "HTTP " + std::to_string(res.status);
      }
    }
    finished_ = true;
    cv_.notify_all();
  });
}

std::optional<TokenEvent> RemoteDecoder::next_token() {
  std::unique_lock lock(m_);
  cv_.wait(lock, [&] { return !deltas_.empty() || finished_ || error_ || cancelled_; });
  if (cancelled_) return std::nullopt;
  if (!deltas_.empty()) {
    TokenEvent ev{Token{std::move(deltas_.front()), index_++}, clock_.now()};
    deltas_.pop_front();
    return ev;
  }
  if (error_) throw Error(ErrorCode::StreamBroken, *error_);
  return std::nullopt;
}

void RemoteDecoder::cancel() {
  std::lock_guard lock(m_);
  cancelled_ = true;
  cv_.notify_all();
}

}  // namespace tpx

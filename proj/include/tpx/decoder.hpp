#pragma once

// Token sources for the scheduler.
//
// SimulatedDecoder replays a scripted trace: per round a prefill cost, then a
// list of (text, latency) entries with EOS implied at the end. Each round is
// replayed only after the scheduler submits that round's prompt. The clock it
// is given decides whether latencies are logical advances or real sleeps.
//
// RemoteDecoder streams deltas from a chat-completion endpoint over
// server-sent events.

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "json.hpp"
#include "tpx/clock.hpp"
#include "tpx/stream_parser.hpp"

namespace tpx {

struct TraceToken {
  std::string text;
  Micros latency_us = 0;
};

struct TraceRound {
  Micros prefill_latency_us = 0;
  std::vector<TraceToken> tokens;
  bool empty_response = false;

  /// prefill + sum of token latencies
  Micros generation_time() const;
  std::string text() const;
};

struct DecodeTrace {
  std::vector<TraceRound> rounds;

  /// Throws Error(InvalidConfig) when the document breaks the trace schema.
  static DecodeTrace from_json(const nlohmann::json& doc);
  static DecodeTrace load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

struct TokenEvent {
  Token token;
  Micros emit_time = 0;
};

/// 64-bit FNV-1a; used to audit which prompt each round was started with.
std::uint64_t prompt_hash(std::string_view prompt);

class Decoder {
 public:
  virtual ~Decoder() = default;

  /// Throws Error(TraceExhausted) for the simulated decoder when the trace has
  /// no further round, Error(StreamBroken) for a remote failure.
  virtual void start_round(std::string_view prompt) = 0;
  /// Next token, or nullopt at EOS.
  virtual std::optional<TokenEvent> next_token() = 0;
  /// Stops the current round; subsequent next_token() calls return EOS.
  virtual void cancel() = 0;
  virtual std::size_t rounds_started() const = 0;
};

class SimulatedDecoder final : public Decoder {
 public:
  SimulatedDecoder(DecodeTrace trace, Clock& clock);

  void start_round(std::string_view prompt) override;
  std::optional<TokenEvent> next_token() override;
  void cancel() override;
  std::size_t rounds_started() const override { return round_; }

  const std::vector<std::uint64_t>& prompt_hashes() const { return prompt_hashes_; }
  const DecodeTrace& trace() const { return trace_; }

 private:
  DecodeTrace trace_;
  Clock& clock_;
  std::size_t round_ = 0;
  std::size_t cursor_ = 0;
  bool active_ = false;
  bool cancelled_ = false;
  std::vector<std::uint64_t> prompt_hashes_;
};

struct RemoteConfig {
  std::string base_url;                         // e.g. http://127.0.0.1:8000
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string auth_env = "TPX_API_KEY";         // bearer token source
  Micros timeout_us = 60'000'000;
};

/// Extracts `choices[0].delta.content` from one SSE `data:` payload.
/// Returns nullopt for `[DONE]` and for payloads without content.
std::optional<std::string> parse_sse_delta(std::string_view payload);

class RemoteDecoder final : public Decoder {
 public:
  RemoteDecoder(RemoteConfig config, Clock& clock);
  ~RemoteDecoder() override;

  void start_round(std::string_view prompt) override;
  std::optional<TokenEvent> next_token() override;
  void cancel() override;
  std::size_t rounds_started() const override { return rounds_; }

 private:
  void join();

  RemoteConfig config_;
  Clock& clock_;
  std::size_t rounds_ = 0;
  std::size_t index_ = 0;

  std::mutex m_;
  std::condition_variable cv_;
  std::deque<std::string> deltas_;
  bool finished_ = false;
  bool cancelled_ = false;
  std::optional<std::string> error_;
  std::thread reader_;
};

}  // namespace tpx

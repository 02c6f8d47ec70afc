#pragma once

// Request lifecycle: decode a round token by token, feed the parser, hand
// completed pieces to tool workers, then drain the tools and build the next
// prompt from their observations. A round that activates no tool is final.
//
// Partial mode dispatches each piece the moment the parser emits it.
// Sequential mode collects the round's invocations and runs them one after
// another once decoding reaches EOS.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tpx/decoder.hpp"
#include "tpx/latency_model.hpp"
#include "tpx/plugin_api.hpp"
#include "tpx/stream_parser.hpp"
#include "tpx/timeline.hpp"
#include "tpx/tool_runtime.hpp"

namespace tpx {

enum class ServeMode { Partial, Sequential };

std::string_view to_string(ServeMode m);
std::optional<ServeMode> parse_serve_mode(std::string_view name);

struct Request {
  std::string id;
  std::string prompt;
  ServeMode mode = ServeMode::Partial;
  Grammar grammar;
  int max_rounds = 8;
};

struct ToolRecord {
  JobId job = -1;
  std::string tool;
  JobState state = JobState::Spawning;
  Observation observation;
  Micros activation = 0;
  Micros terminal = 0;
  Micros busy_us = 0;  // time inside the tool's hooks, queue waits excluded
};

struct RoundRecord {
  int index = 0;
  std::string generated_text;
  std::size_t tokens = 0;
  Micros start_time = 0;
  Micros eos_time = 0;
  Micros end_time = 0;
  Micros g_time = 0;          // round start to EOS, prefill included
  Micros post_eos_wait = 0;   // EOS to all tools terminal
  std::vector<ToolRecord> tools;  // activation order

  Micros wall() const { return end_time - start_time; }
  Micros t_sum() const;
  Micros t_critical() const;
  std::vector<std::pair<std::string, Observation>> observations() const;
};

enum class ServeStatus { Ok, Aborted, Failed };

std::string_view to_string(ServeStatus s);

struct ServeResult {
  ServeStatus status = ServeStatus::Ok;
  std::string response_text;
  std::optional<ErrorCode> error;
  std::string error_detail;
  std::vector<RoundRecord> rounds;
  std::vector<TimelineEvent> timeline;
  std::vector<std::string> warnings;
  std::vector<std::string> prompts;  // prompt submitted for each round
  Micros start_time = 0;
  Micros total_latency_us = 0;

  std::optional<Micros> abort_time;
  std::string abort_reason;
  std::size_t tokens_after_abort = 0;

  std::int64_t parser_ns = 0;
  std::int64_t dispatch_ns = 0;
  std::int64_t wall_ns = 0;

  bool ok() const { return status == ServeStatus::Ok; }
};

struct ServeOptions {
  RuntimeOptions runtime;
  /// Record a TokenDecoded event per token.
  bool record_tokens = true;
};

/// Runs `request` to completion. Errors (trace exhaustion, broken stream,
/// drain timeout, too many rounds) come back as a Failed result.
ServeResult serve(const Request& request, Decoder& decoder, const Registry& registry, Clock& clock,
                  const ServeOptions& options = {});

/// Text a tool's observation contributes to the next prompt.
std::string observation_text(const Observation& obs);

/// prev + plan + "\n[OBSERVATION <tool>]\n<text>\n" per observation, in order.
std::string assemble_prompt(std::string_view prev_prompt, std::string_view plan_text,
                            const std::vector<std::pair<std::string, Observation>>& observations);

/// Latency model of a served request: one tool round per round that ran
/// tools, the last round's generation as the final term. Throws
/// Error(ModelIllFormed) for an empty record list.
LatencyModel measure(const std::vector<RoundRecord>& records);

}  // namespace tpx

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tpx/clock.hpp"

namespace tpx {

enum class TimelineKind {
  TokenDecoded,
  ToolStart,
  PieceDispatched,
  PieceExecuted,
  ToolDone,
  RoundStart,
  RoundEnd,
  AbortSignal,
  ResponseReady,
};

std::string_view to_string(TimelineKind kind);
std::optional<TimelineKind> parse_timeline_kind(std::string_view name);

/// One timestamped occurrence. Negative ids mean "not applicable".
/// PieceExecuted is stamped with the piece's completion time and carries
/// `start=<us>` in its detail.
struct TimelineEvent {
  Micros t = 0;
  TimelineKind kind = TimelineKind::TokenDecoded;
  int round = -1;
  int job = -1;
  int piece = -1;
  std::string detail;
  std::uint64_t seq = 0;

  bool operator==(const TimelineEvent&) const = default;
};

/// Append-only event log owned by one request. Not thread-safe: only the
/// request's scheduler context records into it.
class Timeline {
 public:
  void record(Micros t, TimelineKind kind, int round = -1, int job = -1, int piece = -1, std::string detail = {});

  /// Events ordered by time, ties broken by recording order.
  std::vector<TimelineEvent> sorted() const;
  const std::vector<TimelineEvent>& raw() const { return events_; }
  bool empty() const { return events_.empty(); }

 private:
  std::vector<TimelineEvent> events_;
  std::uint64_t next_seq_ = 0;
};

/// Tab-separated export, one line per event: t_us, kind, round, job, piece,
/// detail. Missing ids are written as "-".
std::string export_timeline(const std::vector<TimelineEvent>& events);

/// Inverse of export_timeline. Throws Error(InvalidConfig) on a malformed line.
std::vector<TimelineEvent> parse_timeline(std::string_view text);

/// Value of `key=` inside a space-separated detail string.
std::optional<std::string> detail_field(std::string_view detail, std::string_view key);

}  // namespace tpx

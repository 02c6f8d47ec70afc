#pragma once

// Isolated tool execution.
//
// Every activated tool gets its own worker thread and a duplex channel: the
// scheduler pushes Start/Data/Finish/Cancel messages without waiting, and
// drains PartialResult/Observation/Heartbeat replies when it polls. Messages
// are FIFO per job in each direction.
//
// Under a virtual clock each worker keeps its own time cursor. A message is
// stamped with the scheduler's time when sent; the worker starts it at
// max(cursor, stamp) and advances the cursor by whatever the tool sleeps.
// Polling at time T waits until the worker has processed everything sent so
// far, then reveals only replies stamped <= T, which makes overlap exact and
// runs byte-for-byte reproducible.

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tpx/clock.hpp"
#include "tpx/plugin_api.hpp"
#include "tpx/timeline.hpp"

namespace tpx {

using JobId = int;

enum class JobState { Spawning, Running, Done, Failed, Aborted };

std::string_view to_string(JobState s);
inline bool is_terminal(JobState s) {
  return s == JobState::Done || s == JobState::Failed || s == JobState::Aborted;
}

enum class ToToolKind { Start, Data, Finish, Cancel };
enum class FromToolKind { Heartbeat, PartialResult, Observation };

struct ToToolMessage {
  ToToolKind kind = ToToolKind::Data;
  DataPiece piece;
  int piece_index = -1;
  Micros stamp = 0;  // scheduler time at send
};

struct FromToolMessage {
  FromToolKind kind = FromToolKind::Heartbeat;
  PartialResult result;
  Observation observation;
  int piece_index = -1;
  Micros start = 0;
  Micros end = 0;
};

/// Scheduler-side view of a job as of the last poll.
struct JobSnapshot {
  JobId id = -1;
  std::string plugin;
  int round = 0;
  JobState state = JobState::Spawning;
  std::optional<Observation> observation;  // Done / Failed
  std::string abort_reason;                // Aborted
  bool aborted_by_tool = false;            // Abort came from PartialResult, not cancel()
  std::size_t enqueued_pieces = 0;
  std::size_t completed_pieces = 0;
  Micros spawn_time = 0;
  std::optional<Micros> first_data_time;
  std::optional<Micros> finish_time;
  Micros busy_us = 0;  // time the worker spent inside plugin hooks

  bool terminal() const { return is_terminal(state); }
  /// Observation to hand to the next round; Aborted jobs yield a failure.
  Observation result() const;
};

struct RuntimeOptions {
  Micros drain_budget_us = 30'000'000;
  /// Real-clock drain polling interval.
  Micros poll_quantum_us = 1'000;
  /// Simulated cold-start cost per plugin name, charged before on_start.
  std::map<std::string, Micros, std::less<>> startup_us;
};

struct DrainResult {
  std::vector<JobSnapshot> jobs;  // in activation order
  Micros waited_us = 0;
  bool timed_out = false;

  std::vector<Observation> observations() const;
};

class ToolRuntime {
 public:
  ToolRuntime(const Registry& registry, Clock& clock, RuntimeOptions options = {}, Timeline* timeline = nullptr);
  ~ToolRuntime();
  ToolRuntime(const ToolRuntime&) = delete;
  ToolRuntime& operator=(const ToolRuntime&) = delete;

  /// Starts a worker for `plugin` and returns at once. Throws UnknownTool.
  JobId spawn(std::string_view plugin, int round = 0);

  /// Queues a piece without waiting for the tool. A terminal job drops the
  /// piece and records a warning.
  void send_data(JobId job, DataPiece piece);

  /// Signals end of input; the tool produces its Observation.
  void finish(JobId job);

  /// Non-blocking in real mode. Applies every reply due by now.
  JobSnapshot poll(JobId job);
  std::vector<JobSnapshot> poll_all();

  /// Idempotent; forces Aborted and stops the worker.
  void cancel(JobId job, std::string reason = "cancelled");
  void cancel_all(const std::string& reason);

  /// Waits until every listed job is terminal or the drain budget runs out,
  /// in which case the stragglers fail with a synthesized Observation.
  /// `progress` runs after each poll step and may send more data.
  DrainResult drain(std::span<const JobId> jobs, const std::function<void()>& progress = {});
  DrainResult drain_round(int round, const std::function<void()>& progress = {});

  std::vector<JobId> jobs_of_round(int round) const;
  const JobSnapshot& snapshot(JobId job) const;
  std::vector<std::string> warnings() const { return warnings_; }

  /// Wall time spent inside spawn/send_data/finish/poll/cancel.
  std::int64_t call_overhead_ns() const { return call_ns_; }
  const RuntimeOptions& options() const { return options_; }

 private:
  struct Job;

  Job& job(JobId id);
  void push(Job& j, ToToolMessage msg);
  void deliver(Job& j);
  void apply(Job& j, const FromToolMessage& msg);
  void sync(Job& j);
  std::optional<Micros> next_reply_time();

  const Registry& registry_;
  Clock& clock_;
  RuntimeOptions options_;
  Timeline* timeline_;
  std::vector<std::unique_ptr<Job>> jobs_;
  std::vector<std::string> warnings_;
  std::int64_t call_ns_ = 0;
};

}  // namespace tpx

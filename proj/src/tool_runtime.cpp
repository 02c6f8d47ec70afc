#include "tpx/tool_runtime.hpp"

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <thread>

namespace tpx {

std::string_view to_string(JobState s) {
  switch (s) {
    case JobState::Spawning: return "spawning";
    case JobState::Running: return "running";
    case JobState::Done: return "done";
    case JobState::Failed: return "failed";
    case JobState::Aborted: return "aborted";
  }
  return "?";
}

Observation JobSnapshot::result() const {
  if (observation) return *observation;
  if (state == JobState::Aborted) return Observation::failure(abort_reason.empty() ? "aborted" : abort_reason);
  return Observation::failure("no result");
}

std::vector<Observation> DrainResult::observations() const {
  std::vector<Observation> out;
  out.reserve(jobs.size());
  for (const auto& j : jobs) out.push_back(j.result());
  return out;
}

struct ToolRuntime::Job {
  JobSnapshot snap;
  int next_piece = 0;
  bool finish_sent = false;

  std::mutex m;
  std::condition_variable_any cv;
  std::deque<ToToolMessage> inbox;
  std::deque<FromToolMessage> outbox;
  std::size_t sent = 0;
  std::size_t processed = 0;

  std::jthread worker;
};

namespace {

class WorkerContext final : public ToolContext {
 public:
  WorkerContext(const Clock& clock, std::stop_token stop) : clock_(clock), stop_(std::move(stop)) {}

  void begin(Micros stamp) {
    if (clock_.is_virtual()) cursor_ = std::max(cursor_, stamp);
  }
  Micros now() const override { return clock_.is_virtual() ? cursor_ : clock_.now(); }
  void sleep_for(Micros us) override {
    if (us <= 0) return;
    if (clock_.is_virtual()) {
      cursor_ += us;
    } else {
      interruptible_sleep(us, stop_);
    }
  }
  bool stop_requested() const override { return stop_.stop_requested(); }
  ClockMode clock_mode() const override { return clock_.mode(); }

 private:
  const Clock& clock_;
  std::stop_token stop_;
  Micros cursor_ = 0;
};

struct WorkerArgs {
  const Registry* registry;
  const Clock* clock;
  std::string plugin;
  Micros startup_us;
};

}  // namespace

namespace {

template <typename JobT>
void worker_main(std::stop_token stop, JobT* job, WorkerArgs args) {
  WorkerContext ctx(*args.clock, stop);
  std::unique_ptr<ToolPlugin> tool;
  bool dead = false;

  auto reply = [&](std::optional<FromToolMessage> msg) {
    std::lock_guard lock(job->m);
    if (msg) job->outbox.push_back(std::move(*msg));
    ++job->processed;
    job->cv.notify_all();
  };
  auto failure = [&](std::string detail, int piece, Micros start) {
    FromToolMessage out;
    out.kind = FromToolKind::Observation;
    out.observation = Observation::failure(std::move(detail));
    out.piece_index = piece;
    out.start = start;
    out.end = ctx.now();
    dead = true;
    return out;
  };

  for (;;) {
    ToToolMessage msg;
    {
      std::unique_lock lock(job->m);
      if (!job->cv.wait(lock, stop, [&] { return !job->inbox.empty(); })) return;
      msg = std::move(job->inbox.front());
      job->inbox.pop_front();
    }
    if (msg.kind == ToToolKind::Cancel) {
      reply(std::nullopt);
      return;
    }
    if (dead) {
      reply(std::nullopt);
      continue;
    }
    ctx.begin(msg.stamp);
    const Micros start = ctx.now();
    switch (msg.kind) {
      case ToToolKind::Start:
        try {
          tool = args.registry->create(args.plugin);
          ctx.sleep_for(args.startup_us);
          tool->on_start(ctx);
          FromToolMessage out;
          out.kind = FromToolKind::Heartbeat;
          out.start = start;
          out.end = ctx.now();
          reply(out);
        } catch (const std::exception& e) {
          reply(failure(std::string("startup failure: ") + e.what(), -1, start));
        }
        break;
      case ToToolKind::Data:
        try {
          FromToolMessage out;
          out.kind = FromToolKind::PartialResult;
          out.result = tool->on_data(ctx, msg.piece);
          out.piece_index = msg.piece_index;
          out.start = start;
          out.end = ctx.now();
          if (out.result.status == PartialStatus::Abort) dead = true;
          reply(out);
        } catch (const std::exception& e) {
          reply(failure(e.what(), msg.piece_index, start));
        }
        break;
      case ToToolKind::Finish:
        try {
          FromToolMessage out;
          out.kind = FromToolKind::Observation;
          out.observation = tool->on_finish(ctx);
          if (!out.observation.success && !out.observation.error_detail) out.observation.error_detail = "failed";
          out.start = start;
          out.end = ctx.now();
          dead = true;
          reply(out);
        } catch (const std::exception& e) {
          reply(failure(e.what(), -1, start));
        }
        break;
      case ToToolKind::Cancel:
        break;
    }
  }
}

}  // namespace

ToolRuntime::ToolRuntime(const Registry& registry, Clock& clock, RuntimeOptions options, Timeline* timeline)
    : registry_(registry), clock_(clock), options_(std::move(options)), timeline_(timeline) {}

ToolRuntime::~ToolRuntime() {
  for (auto& j : jobs_) {
    j->worker.request_stop();
    std::lock_guard lock(j->m);
    j->cv.notify_all();
  }
}

ToolRuntime::Job& ToolRuntime::job(JobId id) {
  if (id < 0 || static_cast<std::size_t>(id) >= jobs_.size()) {
    throw Error(ErrorCode::UnknownTool, "unknown job id " + std::to_string(id));
  }
  return *jobs_[static_cast<std::size_t>(id)];
}

const JobSnapshot& ToolRuntime::snapshot(JobId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= jobs_.size()) {
    throw Error(ErrorCode::UnknownTool, "unknown job id " + std::to_string(id));
  }
  return jobs_[static_cast<std::size_t>(id)]->snap;
}

void ToolRuntime::push(Job& j, ToToolMessage msg) {
  std::lock_guard lock(j.m);
  j.inbox.push_back(std::move(msg));
  ++j.sent;
  j.cv.notify_all();
}

JobId ToolRuntime::spawn(std::string_view plugin, int round) {
  Stopwatch sw;
  const auto* desc = registry_.find_name(plugin);
  if (!desc) throw Error(ErrorCode::UnknownTool, "unknown tool '" + std::string(plugin) + "'");

  auto j = std::make_unique<Job>();
  const JobId id = static_cast<JobId>(jobs_.size());
  const Micros now = clock_.now();
  j->snap.id = id;
  j->snap.plugin = desc->name;
  j->snap.round = round;
  j->snap.spawn_time = now;

  Micros startup = 0;
  if (auto it = options_.startup_us.find(desc->name); it != options_.startup_us.end()) startup = it->second;

  ToToolMessage start;
  start.kind = ToToolKind::Start;
  start.stamp = now;
  push(*j, std::move(start));
  j->worker = std::jthread(worker_main<Job>, j.get(), WorkerArgs{&registry_, &clock_, desc->name, startup});

  if (timeline_) timeline_->record(now, TimelineKind::ToolStart, round, id, -1, "tool=" + desc->name);
  jobs_.push_back(std::move(j));
  call_ns_ += sw.elapsed_ns();
  return id;
}

void ToolRuntime::send_data(JobId id, DataPiece piece) {
  Stopwatch sw;
  Job& j = job(id);
  if (j.snap.terminal() || j.finish_sent) {
    warnings_.push_back("job " + std::to_string(id) + " (" + j.snap.plugin + ") is " +
                        std::string(to_string(j.snap.state)) + "; piece dropped");
    call_ns_ += sw.elapsed_ns();
    return;
  }
  const Micros now = clock_.now();
  ToToolMessage msg;
  msg.kind = ToToolKind::Data;
  msg.piece = std::move(piece);
  msg.piece_index = j.next_piece++;
  msg.stamp = now;
  ++j.snap.enqueued_pieces;
  if (timeline_) timeline_->record(now, TimelineKind::PieceDispatched, j.snap.round, id, msg.piece_index);
  push(j, std::move(msg));
  call_ns_ += sw.elapsed_ns();
}

void ToolRuntime::finish(JobId id) {
  Stopwatch sw;
  Job& j = job(id);
  if (!j.snap.terminal() && !j.finish_sent) {
    j.finish_sent = true;
    ToToolMessage msg;
    msg.kind = ToToolKind::Finish;
    msg.stamp = clock_.now();
    push(j, std::move(msg));
  }
  call_ns_ += sw.elapsed_ns();
}

void ToolRuntime::sync(Job& j) {
  if (!clock_.is_virtual() || j.snap.terminal()) return;
  std::unique_lock lock(j.m);
  j.cv.wait(lock, [&] { return j.processed == j.sent; });
}

void ToolRuntime::apply(Job& j, const FromToolMessage& msg) {
  JobSnapshot& s = j.snap;
  if (s.terminal()) return;
  s.busy_us += msg.end - msg.start;
  switch (msg.kind) {
    case FromToolKind::Heartbeat:
      if (s.state == JobState::Spawning) s.state = JobState::Running;
      return;
    case FromToolKind::PartialResult: {
      if (s.state == JobState::Spawning) s.state = JobState::Running;
      ++s.completed_pieces;
      if (!s.first_data_time) s.first_data_time = msg.start;
      std::string status = msg.result.status == PartialStatus::Accepted   ? "accepted"
                           : msg.result.status == PartialStatus::NeedMore ? "need_more"
                                                                           : "abort";
      if (timeline_) {
        timeline_->record(msg.end, TimelineKind::PieceExecuted, s.round, s.id, msg.piece_index,
                          "start=" + std::to_string(msg.start) + " status=" + status);
      }
      if (msg.result.status == PartialStatus::Abort) {
        s.state = JobState::Aborted;
        s.abort_reason = msg.result.abort_reason;
        s.aborted_by_tool = true;
        s.finish_time = msg.end;
        if (timeline_) timeline_->record(msg.end, TimelineKind::ToolDone, s.round, s.id, -1, "state=aborted");
      }
      return;
    }
    case FromToolKind::Observation:
      if (msg.piece_index >= 0) {
        ++s.completed_pieces;
        if (!s.first_data_time) s.first_data_time = msg.start;
        if (timeline_) {
          timeline_->record(msg.end, TimelineKind::PieceExecuted, s.round, s.id, msg.piece_index,
                            "start=" + std::to_string(msg.start) + " status=error");
        }
      }
      s.observation = msg.observation;
      s.state = msg.observation.success ? JobState::Done : JobState::Failed;
      s.finish_time = msg.end;
      if (timeline_) {
        timeline_->record(msg.end, TimelineKind::ToolDone, s.round, s.id, -1,
                          std::string("state=") + std::string(to_string(s.state)));
      }
      return;
  }
}

void ToolRuntime::deliver(Job& j) {
  if (j.snap.terminal()) return;
  sync(j);
  std::vector<FromToolMessage> due;
  {
    std::lock_guard lock(j.m);
    const bool is_virtual = clock_.is_virtual();
    const Micros now = is_virtual ? clock_.now() : 0;
    while (!j.outbox.empty()) {
      if (is_virtual && j.outbox.front().end > now) break;
      due.push_back(std::move(j.outbox.front()));
      j.outbox.pop_front();
    }
  }
  for (const auto& msg : due) apply(j, msg);
}

JobSnapshot ToolRuntime::poll(JobId id) {
  Stopwatch sw;
  Job& j = job(id);
  deliver(j);
  call_ns_ += sw.elapsed_ns();
  return j.snap;
}

std::vector<JobSnapshot> ToolRuntime::poll_all() {
  Stopwatch sw;
  std::vector<JobSnapshot> out;
  out.reserve(jobs_.size());
  for (auto& j : jobs_) {
    deliver(*j);
    out.push_back(j->snap);
  }
  call_ns_ += sw.elapsed_ns();
  return out;
}

void ToolRuntime::cancel(JobId id, std::string reason) {
  Stopwatch sw;
  Job& j = job(id);
  if (!j.snap.terminal()) {
    const Micros now = clock_.now();
    j.snap.state = JobState::Aborted;
    j.snap.abort_reason = reason.empty() ? "cancelled" : std::move(reason);
    j.snap.finish_time = now;
    if (timeline_) timeline_->record(now, TimelineKind::ToolDone, j.snap.round, id, -1, "state=aborted");
    ToToolMessage msg;
    msg.kind = ToToolKind::Cancel;
    msg.stamp = now;
    push(j, std::move(msg));
    j.worker.request_stop();
  }
  call_ns_ += sw.elapsed_ns();
}

void ToolRuntime::cancel_all(const std::string& reason) {
  for (auto& j : jobs_) cancel(j->snap.id, reason);
}

std::optional<Micros> ToolRuntime::next_reply_time() {
  std::optional<Micros> best;
  for (auto& j : jobs_) {
    if (j->snap.terminal()) continue;
    sync(*j);
    std::lock_guard lock(j->m);
    if (!j->outbox.empty()) {
      Micros t = j->outbox.front().end;
      if (!best || t < *best) best = t;
    }
  }
  return best;
}

DrainResult ToolRuntime::drain(std::span<const JobId> ids, const std::function<void()>& progress) {
  const Micros started = clock_.now();
  const Micros deadline = started + options_.drain_budget_us;
  DrainResult result;

  auto all_terminal = [&] {
    return std::all_of(ids.begin(), ids.end(), [&](JobId id) { return job(id).snap.terminal(); });
  };

  for (;;) {
    poll_all();
    if (progress) progress();
    if (all_terminal()) break;
    if (clock_.is_virtual()) {
      auto t = next_reply_time();
      if (t && *t <= deadline) {
        clock_.advance_to(*t);
        continue;
      }
      clock_.advance_to(deadline);
    } else if (clock_.now() < deadline) {
      clock_.sleep_for(std::min(options_.poll_quantum_us, deadline - clock_.now()));
      continue;
    }
    result.timed_out = true;
    const Micros now = clock_.now();
    for (JobId id : ids) {
      Job& j = job(id);
      if (j.snap.terminal()) continue;
      j.snap.state = JobState::Failed;
      j.snap.observation = Observation::failure("drain timeout after " + std::to_string(now - started) + " us");
      j.snap.finish_time = now;
      if (timeline_) timeline_->record(now, TimelineKind::ToolDone, j.snap.round, id, -1, "state=failed");
      ToToolMessage msg;
      msg.kind = ToToolKind::Cancel;
      msg.stamp = now;
      push(j, std::move(msg));
      j.worker.request_stop();
    }
    break;
  }

  result.waited_us = clock_.now() - started;
  for (JobId id : ids) result.jobs.push_back(job(id).snap);
  return result;
}

DrainResult ToolRuntime::drain_round(int round, const std::function<void()>& progress) {
  auto ids = jobs_of_round(round);
  return drain(ids, progress);
}

std::vector<JobId> ToolRuntime::jobs_of_round(int round) const {
  std::vector<JobId> out;
  for (const auto& j : jobs_) {
    if (j->snap.round == round) out.push_back(j->snap.id);
  }
  return out;
}

}  // namespace tpx

#include "tpx/scheduler.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "tpx/builtin_tools.hpp"

namespace tpx {

std::string_view to_string(ServeMode m) { return m == ServeMode::Partial ? "partial" : "sequential"; }

std::optional<ServeMode> parse_serve_mode(std::string_view name) {
  if (name == "partial") return ServeMode::Partial;
  if (name == "sequential") return ServeMode::Sequential;
  return std::nullopt;
}

std::string_view to_string(ServeStatus s) {
  switch (s) {
    case ServeStatus::Ok: return "ok";
    case ServeStatus::Aborted: return "aborted";
    case ServeStatus::Failed: return "failed";
  }
  return "?";
}

Micros RoundRecord::t_sum() const {
  Micros total = 0;
  for (const auto& t : tools) total += t.busy_us;
  return total;
}

Micros RoundRecord::t_critical() const {
  Micros best = 0;
  for (const auto& t : tools) best = std::max(best, t.busy_us);
  return best;
}

std::vector<std::pair<std::string, Observation>> RoundRecord::observations() const {
  std::vector<std::pair<std::string, Observation>> out;
  out.reserve(tools.size());
  for (const auto& t : tools) out.emplace_back(t.tool, t.observation);
  return out;
}

std::string observation_text(const Observation& obs) {
  if (obs.success) return obs.text;
  std::string out = "error: " + obs.error_detail.value_or("failed");
  if (!obs.text.empty()) out += "\n" + obs.text;
  return out;
}

std::string assemble_prompt(std::string_view prev_prompt, std::string_view plan_text,
                            const std::vector<std::pair<std::string, Observation>>& observations) {
  std::string out;
  out.reserve(prev_prompt.size() + plan_text.size());
  out += prev_prompt;
  out += plan_text;
  for (const auto& [tool, obs] : observations) {
    out += "\n[OBSERVATION ";
    out += tool;
    out += "]\n";
    out += observation_text(obs);
    out += "\n";
  }
  return out;
}

LatencyModel measure(const std::vector<RoundRecord>& records) {
  if (records.empty()) throw Error(ErrorCode::ModelIllFormed, "no rounds to measure");
  LatencyModel m;
  for (const auto& r : records) {
    if (r.tools.empty()) continue;
    m.g.push_back(static_cast<double>(r.g_time));
    m.t.push_back(static_cast<double>(r.t_sum()));
    m.t_critical.push_back(static_cast<double>(r.t_critical()));
  }
  m.n = m.t.size();
  m.g.push_back(records.back().tools.empty() ? static_cast<double>(records.back().g_time) : 0.0);
  return m;
}

namespace {

/// Tool region opened by the parser in the current round.
struct Invocation {
  const PluginDescriptor* desc = nullptr;
  std::string tool;
  std::vector<DataPiece> pieces;
  std::optional<PlanStage> stage;
  std::optional<std::string> malformed;
  bool closed = false;
  JobId job = -1;
  bool dispatched = false;  // pieces and finish handed to the job
};

class RequestRun {
 public:
  RequestRun(const Request& req, Decoder& decoder, const Registry& registry, Clock& clock, const ServeOptions& opts)
      : req_(req),
        decoder_(decoder),
        registry_(registry),
        clock_(clock),
        opts_(opts),
        runtime_(registry, clock, opts.runtime, &timeline_) {}

  ServeResult run();

 private:
  bool partial() const { return req_.mode == ServeMode::Partial; }

  void run_round(int index, const std::string& prompt);
  void handle(const std::vector<ParserEvent>& events);
  void on_tool_start(const ParserEvent& ev);
  void on_piece(DataPiece piece);
  void on_tool_end();
  void on_diagnostic(const ParserEvent& ev);

  void activate(Invocation& inv);
  void dispatch_ready();
  bool refs_resolved(const Invocation& inv) const;
  void cancel_unresolvable();
  void collect_stage_results();
  bool check_abort();
  void run_sequential_tools();
  void abort_request(const std::string& reason);

  const Request& req_;
  Decoder& decoder_;
  const Registry& registry_;
  Clock& clock_;
  const ServeOptions& opts_;
  Timeline timeline_;
  ToolRuntime runtime_;
  ServeResult result_;

  int round_ = 0;
  std::vector<Invocation> invocations_;
  std::optional<std::size_t> open_;  // index into invocations_
  bool ignoring_region_ = false;     // unknown tool: its region stays plain text
  std::map<std::string, std::string, std::less<>> vars_;  // "E1" -> stage output
  std::set<JobId> recorded_stages_;
  bool aborted_ = false;
};

void RequestRun::on_tool_start(const ParserEvent& ev) {
  const PluginDescriptor* desc = registry_.find(Binding{req_.grammar.id, ev.key});
  if (!desc && req_.grammar.id == GrammarId::Fence) desc = registry_.find_name(ev.tool);
  if (!desc) {
    result_.warnings.push_back("unknown tool '" + ev.key + "' in round " + std::to_string(round_) +
                               "; region treated as plain text");
    ignoring_region_ = true;
    return;
  }
  Invocation inv;
  inv.desc = desc;
  inv.tool = desc->name;
  invocations_.push_back(std::move(inv));
  open_ = invocations_.size() - 1;
  if (partial()) activate(invocations_.back());
}

void RequestRun::activate(Invocation& inv) { inv.job = runtime_.spawn(inv.tool, round_); }

void RequestRun::on_piece(DataPiece piece) {
  if (!open_) return;
  Invocation& inv = invocations_[*open_];
  if (inv.desc->binding.grammar == GrammarId::Plan) {
    inv.stage = match_plan_stage(piece.text);
    return;
  }
  if (partial() && inv.desc->granularity != Granularity::WholeCall) {
    runtime_.send_data(inv.job, std::move(piece));
  } else {
    inv.pieces.push_back(std::move(piece));
  }
}

void RequestRun::on_tool_end() {
  if (ignoring_region_) {
    ignoring_region_ = false;
    return;
  }
  if (!open_) return;
  Invocation& inv = invocations_[*open_];
  open_.reset();
  inv.closed = true;
  if (!partial()) return;
  if (inv.malformed) {
    runtime_.cancel(inv.job, *inv.malformed);
    inv.dispatched = true;
    return;
  }
  if (inv.stage) {
    dispatch_ready();
    return;
  }
  for (auto& p : inv.pieces) runtime_.send_data(inv.job, std::move(p));
  inv.pieces.clear();
  runtime_.finish(inv.job);
  inv.dispatched = true;
}

void RequestRun::on_diagnostic(const ParserEvent& ev) {
  result_.warnings.push_back("round " + std::to_string(round_) + ": " + std::string(to_string(ev.diagnostic)) +
                             (ev.tool.empty() ? "" : " (" + ev.tool + ")") + ": " + ev.text);
  if (ev.diagnostic == DiagnosticCode::MalformedToolSyntax && open_) {
    invocations_[*open_].malformed = "malformed tool syntax: " + ev.text;
  }
}

void RequestRun::handle(const std::vector<ParserEvent>& events) {
  for (const auto& ev : events) {
    switch (ev.kind) {
      case EventKind::ToolStart: on_tool_start(ev); break;
      case EventKind::ToolData: on_piece(DataPiece{ev.text, {}}); break;
      case EventKind::FieldComplete: on_piece(DataPiece{ev.text, ev.path}); break;
      case EventKind::ToolEnd: on_tool_end(); break;
      case EventKind::Diagnostic: on_diagnostic(ev); break;
      case EventKind::PlainText:
      case EventKind::StreamEnd: break;
    }
  }
}

bool RequestRun::refs_resolved(const Invocation& inv) const {
  for (int ref : find_refs(inv.stage->args)) {
    if (!vars_.count("E" + std::to_string(ref))) return false;
  }
  return true;
}

void RequestRun::collect_stage_results() {
  for (const auto& inv : invocations_) {
    if (!inv.stage || inv.job < 0 || recorded_stages_.count(inv.job)) continue;
    const JobSnapshot& s = runtime_.snapshot(inv.job);
    if (!s.terminal()) continue;
    vars_["E" + std::to_string(inv.stage->index)] = observation_text(s.result());
    recorded_stages_.insert(inv.job);
  }
}

void RequestRun::dispatch_ready() {
  collect_stage_results();
  for (auto& inv : invocations_) {
    if (!inv.stage || !inv.closed || inv.dispatched || inv.job < 0) continue;
    if (!refs_resolved(inv)) continue;
    std::string args = substitute_refs(inv.stage->args, vars_);
    runtime_.send_data(inv.job, DataPiece{std::move(args), {}});
    runtime_.finish(inv.job);
    inv.dispatched = true;
  }
}

// After EOS a stage whose references can no longer be produced would wait
// forever; fail it instead.
void RequestRun::cancel_unresolvable() {
  collect_stage_results();
  bool pending_producer = false;
  for (const auto& inv : invocations_) {
    if (inv.job >= 0 && inv.dispatched && !runtime_.snapshot(inv.job).terminal()) pending_producer = true;
  }
  if (pending_producer) return;
  for (auto& inv : invocations_) {
    if (!inv.stage || inv.dispatched || inv.job < 0) continue;
    std::string missing;
    for (int ref : find_refs(inv.stage->args)) {
      if (!vars_.count("E" + std::to_string(ref))) missing += " #E" + std::to_string(ref);
    }
    runtime_.cancel(inv.job, "unresolved reference" + missing);
    inv.dispatched = true;
  }
}

bool RequestRun::check_abort() {
  for (const auto& inv : invocations_) {
    if (inv.job < 0) continue;
    const JobSnapshot& s = runtime_.snapshot(inv.job);
    if (s.state == JobState::Aborted && s.aborted_by_tool) {
      abort_request(s.abort_reason);
      return true;
    }
  }
  return false;
}

void RequestRun::abort_request(const std::string& reason) {
  aborted_ = true;
  const Micros now = clock_.now();
  decoder_.cancel();
  timeline_.record(now, TimelineKind::AbortSignal, round_, -1, -1, "reason=" + reason);
  runtime_.cancel_all("request aborted: " + reason);
  result_.abort_time = now;
  result_.abort_reason = reason;
}

void RequestRun::run_sequential_tools() {
  for (auto& inv : invocations_) {
    activate(inv);
    if (inv.malformed) {
      runtime_.cancel(inv.job, *inv.malformed);
    } else if (inv.stage) {
      collect_stage_results();
      if (refs_resolved(inv)) {
        runtime_.send_data(inv.job, DataPiece{substitute_refs(inv.stage->args, vars_), {}});
        runtime_.finish(inv.job);
      } else {
        std::string missing;
        for (int ref : find_refs(inv.stage->args)) {
          if (!vars_.count("E" + std::to_string(ref))) missing += " #E" + std::to_string(ref);
        }
        runtime_.cancel(inv.job, "unresolved reference" + missing);
      }
    } else {
      for (auto& p : inv.pieces) runtime_.send_data(inv.job, std::move(p));
      runtime_.finish(inv.job);
    }
    inv.dispatched = true;
    JobId id = inv.job;
    DrainResult d = runtime_.drain(std::span<const JobId>(&id, 1));
    if (d.timed_out) {
      throw Error(ErrorCode::DrainTimeout, "tool '" + inv.tool + "' did not finish within " +
                                               std::to_string(runtime_.options().drain_budget_us) + " us");
    }
    collect_stage_results();
    if (check_abort()) return;
  }
}

void RequestRun::run_round(int index, const std::string& prompt) {
  round_ = index;
  invocations_.clear();
  open_.reset();
  ignoring_region_ = false;

  RoundRecord rec;
  rec.index = index;
  rec.start_time = clock_.now();
  timeline_.record(rec.start_time, TimelineKind::RoundStart, index);
  result_.prompts.push_back(prompt);
  decoder_.start_round(prompt);

  StreamParser parser(req_.grammar);
  while (auto tok = decoder_.next_token()) {
    if (aborted_) {
      ++result_.tokens_after_abort;
      continue;
    }
    rec.generated_text += tok->token.text;
    ++rec.tokens;
    if (opts_.record_tokens) {
      timeline_.record(tok->emit_time, TimelineKind::TokenDecoded, index, -1, static_cast<int>(tok->token.index));
    }
    Stopwatch sw;
    auto events = parser.feed(tok->token);
    result_.parser_ns += sw.elapsed_ns();
    handle(events);
    if (partial()) {
      runtime_.poll_all();
      dispatch_ready();
      if (check_abort()) break;
    }
  }

  if (aborted_) {
    parser.abort();
  } else {
    Stopwatch sw;
    auto events = parser.flush();
    result_.parser_ns += sw.elapsed_ns();
    handle(events);
  }
  rec.eos_time = clock_.now();
  rec.g_time = rec.eos_time - rec.start_time;
  timeline_.record(rec.eos_time, TimelineKind::RoundEnd, index, -1, -1, "decode");

  if (!aborted_) {
    if (partial()) {
      runtime_.poll_all();
      dispatch_ready();
      if (!check_abort()) {
        auto ids = runtime_.jobs_of_round(index);
        DrainResult d = runtime_.drain(ids, [&] {
          dispatch_ready();
          cancel_unresolvable();
          if (!aborted_) check_abort();
        });
        if (d.timed_out && !aborted_) {
          throw Error(ErrorCode::DrainTimeout, "round " + std::to_string(index) + " tools did not finish within " +
                                                   std::to_string(runtime_.options().drain_budget_us) + " us");
        }
      }
    } else {
      run_sequential_tools();
    }
  }
  rec.end_time = clock_.now();
  rec.post_eos_wait = rec.end_time - rec.eos_time;
  timeline_.record(rec.end_time, TimelineKind::RoundEnd, index, -1, -1, "tools");

  collect_stage_results();
  for (const auto& inv : invocations_) {
    if (inv.job < 0) continue;
    const JobSnapshot& s = runtime_.snapshot(inv.job);
    ToolRecord tr;
    tr.job = s.id;
    tr.tool = s.plugin;
    tr.state = s.state;
    tr.observation = s.result();
    tr.activation = s.spawn_time;
    tr.terminal = s.finish_time.value_or(rec.end_time);
    tr.busy_us = s.busy_us;
    rec.tools.push_back(std::move(tr));
  }
  result_.rounds.push_back(std::move(rec));
}

ServeResult RequestRun::run() {
  Stopwatch wall;
  result_.start_time = clock_.now();
  std::string prompt = req_.prompt;
  try {
    if (req_.max_rounds < 1) throw Error(ErrorCode::InvalidConfig, "max_rounds must be at least 1");
    for (int i = 0;; ++i) {
      if (i >= req_.max_rounds) {
        throw Error(ErrorCode::MaxRoundsExceeded,
                    "request still invoking tools after " + std::to_string(req_.max_rounds) + " rounds");
      }
      run_round(i, prompt);
      const RoundRecord& rec = result_.rounds.back();
      if (aborted_) {
        result_.status = ServeStatus::Aborted;
        result_.response_text = "ABORTED: " + result_.abort_reason;
        break;
      }
      if (rec.tools.empty()) {
        result_.response_text = rec.generated_text;
        break;
      }
      prompt = assemble_prompt(prompt, rec.generated_text, rec.observations());
    }
  } catch (const Error& e) {
    result_.status = ServeStatus::Failed;
    result_.error = e.code();
    result_.error_detail = e.what();
    result_.response_text = "FAILED: " + std::string(to_string(e.code())) + ": " + e.what();
    runtime_.cancel_all("request failed");
  }
  const Micros end = clock_.now();
  timeline_.record(end, TimelineKind::ResponseReady, -1, -1, -1, std::string("status=") + std::string(to_string(result_.status)));
  result_.total_latency_us = end - result_.start_time;
  for (auto& w : runtime_.warnings()) result_.warnings.push_back(std::move(w));
  result_.dispatch_ns = runtime_.call_overhead_ns();
  result_.timeline = timeline_.sorted();
  result_.wall_ns = wall.elapsed_ns();
  return std::move(result_);
}

}  // namespace

ServeResult serve(const Request& request, Decoder& decoder, const Registry& registry, Clock& clock,
                  const ServeOptions& options) {
  RequestRun run(request, decoder, registry, clock, options);
  return run.run();
}

}  // namespace tpx

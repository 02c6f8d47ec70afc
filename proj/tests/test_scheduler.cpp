#include <gtest/gtest.h>

#include <map>
#include <set>

#include "support.hpp"
#include "tpx/builtin_tools.hpp"
#include "tpx/scheduler.hpp"
#include "tpx/workload.hpp"

namespace tpx {
namespace {

using test::Hooks;
using test::register_lambda;
using test::round_of;

struct Served {
  ServeResult result;
  std::vector<std::uint64_t> hashes;
};

Served serve_trace(const Registry& reg, DecodeTrace trace, Grammar grammar, ServeMode mode, ServeOptions opts = {},
                   int max_rounds = 8) {
  VirtualClock clock;
  SimulatedDecoder dec(std::move(trace), clock);
  Request req{"r", "PROMPT\n", mode, std::move(grammar), max_rounds};
  Served s{serve(req, dec, reg, clock, opts), {}};
  s.hashes = dec.prompt_hashes();
  return s;
}

std::vector<const TimelineEvent*> events_of(const ServeResult& r, TimelineKind kind) {
  std::vector<const TimelineEvent*> out;
  for (const auto& e : r.timeline) {
    if (e.kind == kind) out.push_back(&e);
  }
  return out;
}

Micros decode_end(const ServeResult& r, int round) {
  for (const auto& e : r.timeline) {
    if (e.kind == TimelineKind::RoundEnd && e.round == round && e.detail == "decode") return e.t;
  }
  ADD_FAILURE() << "no decode end for round " << round;
  return -1;
}

ServeResult run_workload(const std::string& name, ServeMode mode) {
  WorkloadHarness h(WorkloadSpec::load(resolve_workload(name)));
  return h.run(mode);
}

// ---- pure helpers ---------------------------------------------------------------

TEST(AssemblePrompt, NoObservations) { EXPECT_EQ(assemble_prompt("P\n", "plan", {}), "P\nplan"); }

TEST(AssemblePrompt, OneObservation) {
  auto p = assemble_prompt("Q\n", "@call calculator {\"expression\": \"200*701\"}",
                           {{"calculator", Observation::ok("140200")}});
  EXPECT_EQ(p, "Q\n@call calculator {\"expression\": \"200*701\"}\n[OBSERVATION calculator]\n140200\n");
}

TEST(AssemblePrompt, BlocksFollowActivationOrder) {
  auto p = assemble_prompt("", "x", {{"b", Observation::ok("2")}, {"a", Observation::failure("boom")}});
  EXPECT_EQ(p, "x\n[OBSERVATION b]\n2\n\n[OBSERVATION a]\nerror: boom\n");
}

TEST(Measure, SingleRoundWithoutTools) {
  RoundRecord r;
  r.g_time = 700;
  auto m = measure({r});
  EXPECT_EQ(m.n, 0u);
  EXPECT_EQ(m.g, std::vector<double>{700});
  EXPECT_TRUE(m.t.empty());
  EXPECT_THROW(measure({}), Error);
}

TEST(Measure, ToolRoundsThenFinal) {
  RoundRecord a;
  a.g_time = 10;
  a.tools = {ToolRecord{0, "x", JobState::Done, {}, 0, 0, 4}, ToolRecord{1, "y", JobState::Done, {}, 0, 0, 6}};
  RoundRecord b;
  b.g_time = 3;
  auto m = measure({a, b});
  EXPECT_EQ(m.n, 1u);
  EXPECT_EQ(m.g, (std::vector<double>{10, 3}));
  EXPECT_EQ(m.t, std::vector<double>{10});
  EXPECT_EQ(m.t_critical, std::vector<double>{6});
}

// ---- serving synthetic traces -------------------------------------------------------

Registry echo_registry() {
  Registry reg;
  Hooks h;
  h.data = [](ToolContext& ctx, const DataPiece&) {
    ctx.sleep_for(10'000);
    return PartialResult::accepted();
  };
  register_lambda(reg, "echo", Binding{GrammarId::Fence, "echo"}, Granularity::Line, h);
  return reg;
}

TEST(Serve, NoToolTraceIsIdenticalInBothModes) {
  Registry reg = echo_registry();
  DecodeTrace t;
  t.rounds.push_back(round_of({{"Just ", 100}, {"an ", 100}, {"```text\n", 50}, {"answer.", 100}}, 40));
  auto p = serve_trace(reg, t, reg.grammar_for(GrammarId::Fence), ServeMode::Partial).result;
  auto s = serve_trace(reg, t, reg.grammar_for(GrammarId::Fence), ServeMode::Sequential).result;
  ASSERT_TRUE(p.ok());
  EXPECT_EQ(p.response_text, "Just an ```text\nanswer.");
  EXPECT_EQ(p.response_text, s.response_text);
  EXPECT_EQ(export_timeline(p.timeline), export_timeline(s.timeline));
  EXPECT_EQ(p.total_latency_us, 390);
  ASSERT_EQ(p.rounds.size(), 1u);
  EXPECT_EQ(p.rounds[0].g_time, 390);
  EXPECT_EQ(p.rounds[0].post_eos_wait, 0);
}

DecodeTrace echo_trace() {
  DecodeTrace t;
  t.rounds.push_back(round_of({{"```echo\n", 1'000}, {"a\n", 20'000}, {"b\n", 20'000}, {"c\n", 20'000},
                               {"```\n", 1'000}, {"done", 1'000}},
                              5'000));
  t.rounds.push_back(round_of({{"final", 2'000}}, 1'000));
  return t;
}

TEST(Serve, PartialOverlapsAndSequentialWaits) {
  Registry reg = echo_registry();
  auto grammar = reg.grammar_for(GrammarId::Fence);
  auto p = serve_trace(reg, echo_trace(), grammar, ServeMode::Partial).result;
  auto s = serve_trace(reg, echo_trace(), grammar, ServeMode::Sequential).result;
  ASSERT_TRUE(p.ok()) << p.response_text;
  ASSERT_TRUE(s.ok()) << s.response_text;
  EXPECT_EQ(p.response_text, "final");
  EXPECT_EQ(p.rounds[0].observations(), s.rounds[0].observations());
  EXPECT_EQ(p.rounds[0].observations()[0].second.text, "a|b|c");

  // lines a and b finish within the 20 ms gaps; line c overlaps the last 2 ms of decoding
  EXPECT_EQ(p.rounds[0].post_eos_wait, 10'000 - 2'000);
  EXPECT_EQ(s.rounds[0].post_eos_wait, 30'000);
  EXPECT_EQ(s.total_latency_us - p.total_latency_us, 30'000 - 8'000);
  EXPECT_EQ(s.rounds[0].t_sum(), 30'000);
}

TEST(Serve, SequentialStartsToolsOnlyAfterEos) {
  auto s = run_workload("Search", ServeMode::Sequential);
  ASSERT_TRUE(s.ok());
  for (const auto* e : events_of(s, TimelineKind::ToolStart)) EXPECT_GE(e->t, decode_end(s, e->round));
  for (const auto& r : s.rounds) EXPECT_EQ(r.post_eos_wait, r.t_sum());
}

TEST(Serve, PromptsAreAssembledFromObservations) {
  Registry reg = echo_registry();
  auto served = serve_trace(reg, echo_trace(), reg.grammar_for(GrammarId::Fence), ServeMode::Partial);
  const auto& r = served.result;
  ASSERT_EQ(r.prompts.size(), 2u);
  EXPECT_EQ(r.prompts[0], "PROMPT\n");
  EXPECT_EQ(r.prompts[1], assemble_prompt(r.prompts[0], r.rounds[0].generated_text, r.rounds[0].observations()));
  ASSERT_EQ(served.hashes.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(served.hashes[i], prompt_hash(r.prompts[i]));
}

TEST(Serve, DispatchOrderFollowsPieceOrder) {
  for (const char* w : {"CodeGen", "Search", "Planning"}) {
    auto r = run_workload(w, ServeMode::Partial);
    std::map<int, int> last;
    for (const auto* e : events_of(r, TimelineKind::PieceDispatched)) {
      auto it = last.find(e->job);
      if (it != last.end()) EXPECT_GT(e->piece, it->second) << w;
      last[e->job] = e->piece;
    }
  }
}

TEST(Serve, TimelineIsSortedAndDeterministic) {
  for (const auto& w : bundled_workloads()) {
    auto a = run_workload(w, ServeMode::Partial);
    auto b = run_workload(w, ServeMode::Partial);
    EXPECT_EQ(export_timeline(a.timeline), export_timeline(b.timeline)) << w;
    EXPECT_EQ(a.total_latency_us, b.total_latency_us);
    for (std::size_t i = 1; i < a.timeline.size(); ++i) {
      const auto& x = a.timeline[i - 1];
      const auto& y = a.timeline[i];
      EXPECT_TRUE(x.t < y.t || (x.t == y.t && x.seq < y.seq)) << w;
    }
  }
}

TEST(Serve, UnknownToolRegionStaysPlainText) {
  Registry reg;
  register_builtin(reg, "calculator", Binding{GrammarId::Call, "calculator"});
  DecodeTrace t;
  t.rounds.push_back(round_of({{"@call teleport {\"to\": \"Mars\"}", 100}, {" ok", 100}}));
  auto r = serve_trace(reg, t, Grammar::call(), ServeMode::Partial).result;
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(r.response_text, "@call teleport {\"to\": \"Mars\"} ok");
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("unknown tool 'teleport'"), std::string::npos);
  EXPECT_TRUE(events_of(r, TimelineKind::ToolStart).empty());
}

TEST(Serve, MalformedCallFailsItsJobAndDecodingContinues) {
  for (auto mode : {ServeMode::Partial, ServeMode::Sequential}) {
    Registry reg;
    register_builtin(reg, "calculator", Binding{GrammarId::Call, "calculator"});
    DecodeTrace t;
    t.rounds.push_back(round_of({{"@call calculator {\"expression\" 200}", 100}, {" more text", 100}}));
    t.rounds.push_back(round_of({{"sorry", 100}}));
    auto r = serve_trace(reg, t, Grammar::call(), mode).result;
    ASSERT_TRUE(r.ok()) << r.response_text;
    EXPECT_EQ(r.response_text, "sorry");
    ASSERT_EQ(r.rounds[0].tools.size(), 1u);
    EXPECT_EQ(r.rounds[0].generated_text, "@call calculator {\"expression\" 200} more text");
    const auto& obs = r.rounds[0].tools[0].observation;
    EXPECT_FALSE(obs.success);
    EXPECT_NE(obs.error_detail->find("malformed tool syntax"), std::string::npos);
    EXPECT_NE(r.prompts[1].find("error: malformed tool syntax"), std::string::npos);
  }
}

TEST(Serve, ToolCrashBecomesAFailedObservation) {
  Registry reg;
  Hooks h;
  h.data = [](ToolContext&, const DataPiece&) -> PartialResult { throw std::runtime_error("segfault simulated"); };
  register_lambda(reg, "crashy", Binding{GrammarId::Fence, "python"}, Granularity::Line, h);
  DecodeTrace t;
  t.rounds.push_back(round_of({{"```python\n", 100}, {"x\n", 100}, {"y\n", 100}, {"```\n", 100}}));
  t.rounds.push_back(round_of({{"recovered", 100}}));
  auto r = serve_trace(reg, t, reg.grammar_for(GrammarId::Fence), ServeMode::Partial).result;
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(r.response_text, "recovered");
  EXPECT_EQ(r.rounds[0].tools[0].state, JobState::Failed);
  EXPECT_EQ(r.rounds[0].tools[0].observation.error_detail, "segfault simulated");
  EXPECT_EQ(r.rounds[0].tokens, 4u);
}

TEST(Serve, DrainTimeoutFailsTheRequest) {
  Registry reg;
  Hooks h;
  h.finish = [](ToolContext& ctx) {
    ctx.sleep_for(3'600'000'000LL);
    return Observation::ok("never");
  };
  register_lambda(reg, "hang", Binding{GrammarId::Fence, "python"}, Granularity::Line, h);
  DecodeTrace t;
  t.rounds.push_back(round_of({{"```python\n", 100}, {"x\n", 100}, {"```\n", 100}}));
  t.rounds.push_back(round_of({{"unreached", 100}}));
  for (auto mode : {ServeMode::Partial, ServeMode::Sequential}) {
    auto r = serve_trace(reg, t, reg.grammar_for(GrammarId::Fence), mode).result;
    EXPECT_EQ(r.status, ServeStatus::Failed);
    EXPECT_EQ(r.error, ErrorCode::DrainTimeout);
    EXPECT_EQ(r.response_text.rfind("FAILED: DrainTimeout", 0), 0u);
    EXPECT_EQ(r.total_latency_us, 300 + 30'000'000);
  }
}

TEST(Serve, TraceExhaustionFailsTheRequest) {
  Registry reg;
  register_builtin(reg, "calculator", Binding{GrammarId::Call, "calculator"});
  DecodeTrace t;
  t.rounds.push_back(round_of({{"@call calculator {\"expression\": \"1+1\"}", 100}}));
  auto r = serve_trace(reg, t, Grammar::call(), ServeMode::Partial).result;
  EXPECT_EQ(r.status, ServeStatus::Failed);
  EXPECT_EQ(r.error, ErrorCode::TraceExhausted);
  EXPECT_EQ(r.rounds.size(), 1u);
}

TEST(Serve, MaxRoundsExceeded) {
  Registry reg;
  register_builtin(reg, "calculator", Binding{GrammarId::Call, "calculator"});
  DecodeTrace t;
  for (int i = 0; i < 4; ++i) t.rounds.push_back(round_of({{"@call calculator {\"expression\": \"1\"}", 100}}));
  auto r = serve_trace(reg, t, Grammar::call(), ServeMode::Partial, {}, 3).result;
  EXPECT_EQ(r.status, ServeStatus::Failed);
  EXPECT_EQ(r.error, ErrorCode::MaxRoundsExceeded);
  EXPECT_EQ(r.rounds.size(), 3u);

  auto bad = serve_trace(reg, t, Grammar::call(), ServeMode::Partial, {}, 0).result;
  EXPECT_EQ(bad.error, ErrorCode::InvalidConfig);
}

TEST(Serve, AbortCancelsSiblingJobs) {
  Registry reg;
  Hooks slow;
  slow.data = [](ToolContext& ctx, const DataPiece&) {
    ctx.sleep_for(1'000'000);
    return PartialResult::accepted();
  };
  register_lambda(reg, "slow", Binding{GrammarId::Call, "slow"}, Granularity::Field, slow, StartCondition::OnNameParsed);
  register_builtin(reg, "validator", Binding{GrammarId::Call, "get_news"},
                   {{"required", {"location"}}, {"formats", {{"location", "city_state"}}}});
  DecodeTrace t;
  t.rounds.push_back(round_of({{"@call slow {\"a\": \"1\"}", 100},
                               {"@call get_news {\"location\": \"Seattle\"", 100},
                               {", \"rest\": \"x\"}", 100}}));
  auto r = serve_trace(reg, t, Grammar::call(), ServeMode::Partial).result;
  EXPECT_EQ(r.status, ServeStatus::Aborted);
  EXPECT_EQ(r.response_text, "ABORTED: missing state code");
  EXPECT_EQ(r.abort_time, 200);
  ASSERT_EQ(r.rounds[0].tools.size(), 2u);
  EXPECT_EQ(r.rounds[0].tools[0].state, JobState::Aborted);
  EXPECT_EQ(r.rounds[0].tools[1].state, JobState::Aborted);
  EXPECT_EQ(r.tokens_after_abort, 0u);
  EXPECT_EQ(r.rounds[0].tokens, 2u);
}

TEST(Serve, ToolsDoNotDelayTokenEmissionOnTheRealClock) {
  Registry reg;
  Hooks h;
  h.data = [](ToolContext& ctx, const DataPiece&) {
    ctx.sleep_for(50'000);
    return PartialResult::accepted();
  };
  register_lambda(reg, "sleepy", Binding{GrammarId::Fence, "python"}, Granularity::Line, h);
  Hooks boom;
  boom.data = [](ToolContext&, const DataPiece&) -> PartialResult { throw std::runtime_error("crash"); };
  register_lambda(reg, "crashy", Binding{GrammarId::Fence, "sh"}, Granularity::Line, boom);

  DecodeTrace t;
  TraceRound round;
  for (const char* s : {"```python\n", "a\n", "w ", "b\n", "w ", "c\n", "```\n", "```sh\n", "x\n", "```\n"}) {
    round.tokens.push_back({s, 5'000});
  }
  for (int i = 0; i < 14; ++i) round.tokens.push_back({"w ", 5'000});
  t.rounds.push_back(round);
  t.rounds.push_back(round_of({{"end", 0}}));

  RealClock clock;
  SimulatedDecoder dec(t, clock);
  Request req{"r", "", ServeMode::Partial, reg.grammar_for(GrammarId::Fence), 8};
  auto r = serve(req, dec, reg, clock);
  ASSERT_TRUE(r.ok()) << r.response_text;
  std::vector<Micros> emits;
  for (const auto& e : r.timeline) {
    if (e.kind == TimelineKind::TokenDecoded && e.round == 0) emits.push_back(e.t);
  }
  ASSERT_EQ(emits.size(), 24u);
  // a tool piece running on the decode path would stall one gap by its 50 ms
  for (std::size_t i = 1; i < emits.size(); ++i) EXPECT_LT(emits[i] - emits[i - 1], 45'000) << i;
  // 23 gaps of 5 ms; blocking on the three sleepy lines would add 150 ms
  EXPECT_LT(emits.back() - emits.front(), 115'000 + 50'000);
  EXPECT_EQ(r.rounds[0].tools.size(), 2u);
  EXPECT_EQ(r.rounds[0].tools[1].state, JobState::Failed);
}

// ---- bundled workloads --------------------------------------------------------------------

TEST(Workloads, CodeGenRunsAllButTheLastLineDuringDecode) {
  auto r = run_workload("CodeGen", ServeMode::Partial);
  ASSERT_TRUE(r.ok());
  const Micros eos = decode_end(r, 0);
  int before = 0, after = 0;
  for (const auto* e : events_of(r, TimelineKind::PieceExecuted)) {
    if (e->round != 0) continue;
    (e->t <= eos ? before : after) += 1;
    if (e->t > eos) EXPECT_EQ(e->piece, 12);
  }
  EXPECT_EQ(before, 12);
  EXPECT_EQ(after, 1);
  // the post-EOS wait is what remains of the final line once decoding ends
  Micros last_sent = -1, last_done = -1;
  for (const auto* e : events_of(r, TimelineKind::PieceDispatched)) {
    if (e->round == 0 && e->piece == 12) last_sent = e->t;
  }
  for (const auto* e : events_of(r, TimelineKind::PieceExecuted)) {
    if (e->round == 0 && e->piece == 12) {
      last_done = e->t;
      EXPECT_EQ(std::stoll(*detail_field(e->detail, "start")), last_sent);
    }
  }
  auto trace = DecodeTrace::load(test::fixtures() / "traces" / "codegen.json");
  const std::string last_line = trace.rounds[0].text().substr(0, trace.rounds[0].text().rfind("\n```"));
  const std::string code = last_line.substr(last_line.rfind('\n') + 1);
  EXPECT_EQ(last_done - last_sent, 250'000) << code;
  EXPECT_EQ(r.rounds[0].post_eos_wait, last_done - eos);
  EXPECT_GT(eos, last_sent);
}

TEST(Workloads, SearchCallsOverlapTheNextCallsDecoding) {
  auto r = run_workload("Search", ServeMode::Partial);
  ASSERT_TRUE(r.ok());
  auto starts = events_of(r, TimelineKind::ToolStart);
  auto dispatched = events_of(r, TimelineKind::PieceDispatched);
  ASSERT_EQ(starts.size(), 3u);
  ASSERT_EQ(dispatched.size(), 3u);
  // query k is sent before call k+1 is even named
  EXPECT_LT(dispatched[0]->t, starts[1]->t);
  EXPECT_LT(dispatched[1]->t, starts[2]->t);
  // the first search finished while the model was still decoding
  for (const auto* e : events_of(r, TimelineKind::ToolDone)) {
    if (e->job == 0) EXPECT_LT(e->t, decode_end(r, 0));
  }
}

TEST(Workloads, PlanStagesWaitForTheirReferences) {
  auto r = run_workload("Planning", ServeMode::Partial);
  ASSERT_TRUE(r.ok()) << r.response_text;
  std::map<int, Micros> done;
  for (const auto* e : events_of(r, TimelineKind::ToolDone)) done[e->job] = e->t;
  std::map<int, Micros> sent;
  for (const auto* e : events_of(r, TimelineKind::PieceDispatched)) sent[e->job] = e->t;
  ASSERT_EQ(sent.size(), 4u);
  // stage 3 uses #E1 and #E2, stage 4 uses #E3
  EXPECT_GE(sent[2], std::max(done[0], done[1]));
  EXPECT_GE(sent[3], done[2]);
  // the two searches overlap each other and decoding
  EXPECT_LT(sent[1], done[0]);
  const auto& obs = r.rounds[0].observations();
  ASSERT_EQ(obs.size(), 4u);
  EXPECT_EQ(obs[2].second.text, "3.1");
  EXPECT_EQ(obs[3].second.text, "The market cap of Microsoft is 3.1 times that of Apple.");
}

TEST(Workloads, ValidationAbortsBeforeDecodeEnds) {
  auto r = run_workload("Validation", ServeMode::Partial);
  EXPECT_EQ(r.status, ServeStatus::Aborted);
  EXPECT_EQ(r.response_text, "ABORTED: missing state code");
  ASSERT_TRUE(r.abort_time);
  auto trace = DecodeTrace::load(test::fixtures() / "traces" / "validation.json");
  const Micros g1 = trace.rounds[0].generation_time();
  EXPECT_LT(*r.abort_time - r.start_time, g1);
  EXPECT_EQ(r.tokens_after_abort, 0u);
  auto aborts = events_of(r, TimelineKind::AbortSignal);
  ASSERT_EQ(aborts.size(), 1u);
  for (const auto* e : events_of(r, TimelineKind::TokenDecoded)) EXPECT_LE(e->t, aborts[0]->t);
  EXPECT_LE(aborts[0]->t, decode_end(r, 0));
}

TEST(Workloads, ValidatorAbortsOnTheTokenCompletingTheField) {
  auto trace = DecodeTrace::load(test::fixtures() / "traces" / "validation.json");
  // find the token whose text closes the location value
  StreamParser p(Grammar::call());
  Micros t = trace.rounds[0].prefill_latency_us;
  Micros closing = -1;
  for (const auto& tok : trace.rounds[0].tokens) {
    t += tok.latency_us;
    for (const auto& e : p.feed(std::string_view(tok.text))) {
      if (e.kind == EventKind::FieldComplete && closing < 0) closing = t;
    }
  }
  auto r = run_workload("Validation", ServeMode::Partial);
  EXPECT_EQ(*r.abort_time, closing);
}

TEST(Workloads, PartialModeNeverWaitsLongerThanTheSlowestTool) {
  for (const char* w : {"CodeGen", "Search", "Database", "Calculator"}) {
    auto r = run_workload(w, ServeMode::Partial);
    for (const auto& rec : r.rounds) EXPECT_LE(rec.post_eos_wait, rec.t_critical()) << w;
  }
}

TEST(Workloads, RoundWallLiesBetweenOverlapAndSum) {
  for (const auto& w : bundled_workloads()) {
    auto r = run_workload(w, ServeMode::Partial);
    if (!r.ok()) continue;
    for (const auto& rec : r.rounds) {
      EXPECT_GE(rec.wall(), std::max(rec.g_time, rec.t_critical())) << w;
      EXPECT_LE(rec.wall(), rec.g_time + rec.t_sum()) << w;
    }
  }
}

}  // namespace
}  // namespace tpx

#include "tpx/bench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "tpx/builtin_tools.hpp"
#include "tpx/expr.hpp"

namespace tpx {

Stats compute_stats(const std::vector<double>& samples) {
  Stats s;
  s.count = samples.size();
  if (samples.empty()) return s;
  double sum = 0;
  for (double v : samples) sum += v;
  s.mean = sum / static_cast<double>(samples.size());
  double sq = 0;
  for (double v : samples) sq += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(sq / static_cast<double>(samples.size()));
  auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
  s.min = *lo;
  s.max = *hi;
  return s;
}

namespace {

std::string fmt(double v, int precision = 1) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

}  // namespace

std::string BenchReport::csv() const {
  std::ostringstream os;
  os << "workload,mode,run,latency_us\n";
  for (const auto& r : results) {
    for (const auto& run : r.runs) {
      os << run.workload << ',' << to_string(run.mode) << ',' << run.run << ',';
      if (run.status == ServeStatus::Failed) {
        os << "NA";
      } else {
        os << run.total_latency_us;
      }
      os << '\n';
    }
  }
  return os.str();
}

std::string BenchReport::stats_csv() const {
  std::ostringstream os;
  os << "workload,mode,runs,failures,mean_us,stddev_us,min_us,max_us\n";
  for (const auto& r : results) {
    os << r.workload << ',' << to_string(r.mode) << ',' << r.runs.size() << ',' << r.failures << ','
       << fmt(r.stats.mean) << ',' << fmt(r.stats.stddev) << ',' << fmt(r.stats.min) << ',' << fmt(r.stats.max)
       << '\n';
  }
  return os.str();
}

std::optional<double> BenchReport::improvement(const std::string& workload) const {
  const BenchResult* partial = nullptr;
  const BenchResult* sequential = nullptr;
  for (const auto& r : results) {
    if (r.workload != workload || r.stats.count == 0) continue;
    (r.mode == ServeMode::Partial ? partial : sequential) = &r;
  }
  if (!partial || !sequential || partial->stats.mean <= 0) return std::nullopt;
  return sequential->stats.mean / partial->stats.mean - 1.0;
}

std::string BenchReport::summary() const {
  std::ostringstream os;
  os << std::left << std::setw(12) << "workload" << std::setw(12) << "mode" << std::right << std::setw(6) << "runs"
     << std::setw(14) << "mean_ms" << std::setw(12) << "stddev_ms" << std::setw(10) << "failed" << '\n';
  std::vector<std::string> order;
  for (const auto& r : results) {
    os << std::left << std::setw(12) << r.workload << std::setw(12) << to_string(r.mode) << std::right << std::setw(6)
       << r.runs.size() << std::setw(14) << fmt(r.stats.mean / 1000.0, 3) << std::setw(12)
       << fmt(r.stats.stddev / 1000.0, 3) << std::setw(10) << r.failures << '\n';
    if (std::find(order.begin(), order.end(), r.workload) == order.end()) order.push_back(r.workload);
  }
  for (const auto& w : order) {
    if (auto imp = improvement(w)) os << "improvement " << w << ": " << fmt(*imp * 100.0, 1) << "%\n";
  }
  return os.str();
}

BenchReport run_benchmark(const std::vector<std::filesystem::path>& workloads, const BenchOptions& options) {
  if (options.runs < 1) throw Error(ErrorCode::InvalidConfig, "runs must be at least 1");
  if (options.modes.empty()) throw Error(ErrorCode::InvalidConfig, "at least one mode is required");
  if (options.timeline_dir) std::filesystem::create_directories(*options.timeline_dir);

  BenchReport report;
  for (const auto& path : workloads) {
    WorkloadHarness harness(WorkloadSpec::load(path), options.clock);
    const std::string name = harness.spec().name;
    for (ServeMode mode : options.modes) {
      BenchResult result;
      result.workload = name;
      result.mode = mode;
      result.runs.resize(static_cast<std::size_t>(options.runs));

      auto one = [&](int i) {
        BenchRun& run = result.runs[static_cast<std::size_t>(i)];
        run.workload = name;
        run.mode = mode;
        run.run = i;
        ServeResult r = harness.run(mode);
        run.status = r.status;
        run.total_latency_us = r.total_latency_us;
        run.error = r.error_detail;
        run.rounds = std::move(r.rounds);
        if (options.timeline_dir) {
          std::ofstream out(*options.timeline_dir /
                            (name + "_" + std::string(to_string(mode)) + "_" + std::to_string(i) + ".tsv"));
          out << export_timeline(r.timeline);
        }
      };

      if (options.parallel) {
        std::vector<std::thread> threads;
        const int width = std::max(1u, std::thread::hardware_concurrency());
        for (int start = 0; start < options.runs; start += width) {
          threads.clear();
          for (int i = start; i < std::min(options.runs, start + width); ++i) threads.emplace_back(one, i);
          for (auto& t : threads) t.join();
        }
      } else {
        for (int i = 0; i < options.runs; ++i) one(i);
      }

      std::vector<double> samples;
      for (const auto& run : result.runs) {
        if (run.status == ServeStatus::Failed) {
          ++result.failures;
        } else {
          samples.push_back(static_cast<double>(run.total_latency_us));
        }
      }
      result.stats = compute_stats(samples);
      report.results.push_back(std::move(result));
    }
  }
  return report;
}

// ---- sweep ------------------------------------------------------------------

DecodeTrace synth_sweep_trace(double ratio, const SweepOptions& o) {
  if (!(ratio > 0) || !std::isfinite(ratio)) throw Error(ErrorCode::InvalidConfig, "ratio must be positive");
  if (o.n_rounds < 1 || o.g_per_round_us <= 0 || o.tokens_per_round < 4) {
    throw Error(ErrorCode::InvalidConfig, "sweep needs n_rounds >= 1, g > 0 and at least 4 tokens per round");
  }
  DecodeTrace trace;
  const Micros per_token = o.g_per_round_us / o.tokens_per_round;
  const double sleep_ms = ratio * static_cast<double>(o.g_per_round_us) / 1000.0;
  for (int i = 0; i < o.n_rounds; ++i) {
    TraceRound round;
    round.tokens.push_back({"```python\n", per_token});
    round.tokens.push_back({"sleep " + expr::format_number(sleep_ms) + "\n", per_token});
    round.tokens.push_back({"```\n", per_token});
    for (int k = 3; k < o.tokens_per_round - 1; ++k) round.tokens.push_back({"step ", per_token});
    round.tokens.push_back({"\n", o.g_per_round_us - per_token * (o.tokens_per_round - 1)});
    trace.rounds.push_back(std::move(round));
  }
  TraceRound last;
  last.tokens.push_back({"done", std::max<Micros>(1, o.g_per_round_us / 1000)});
  trace.rounds.push_back(std::move(last));
  return trace;
}

std::vector<SweepRow> sweep(const std::vector<double>& ratios, const SweepOptions& options) {
  Registry registry;
  register_builtin(registry, "interp", Binding{GrammarId::Fence, "python"});
  std::vector<SweepRow> rows;
  for (double r : ratios) {
    DecodeTrace trace = synth_sweep_trace(r, options);
    Request req;
    req.id = "sweep";
    req.grammar = registry.grammar_for(GrammarId::Fence);
    req.max_rounds = options.n_rounds + 1;

    Micros latency[2] = {0, 0};
    for (ServeMode mode : {ServeMode::Partial, ServeMode::Sequential}) {
      VirtualClock clock;
      SimulatedDecoder decoder(trace, clock);
      req.mode = mode;
      ServeOptions so;
      so.record_tokens = false;
      // a round's tool sleeps ratio * g, which can exceed the default budget
      so.runtime.drain_budget_us = std::max(so.runtime.drain_budget_us,
                                            static_cast<Micros>(2.0 * (r + 1.0) * static_cast<double>(options.g_per_round_us)));
      ServeResult res = serve(req, decoder, registry, clock, so);
      if (!res.ok()) throw Error(res.error.value_or(ErrorCode::ToolRuntimeError), "sweep run failed: " + res.error_detail);
      latency[mode == ServeMode::Partial ? 0 : 1] = res.total_latency_us;
    }
    SweepRow row;
    row.ratio = r;
    row.theory = improvement_at(r);
    row.partial_us = latency[0];
    row.sequential_us = latency[1];
    row.measured = static_cast<double>(latency[1]) / static_cast<double>(latency[0]) - 1.0;
    rows.push_back(row);
  }
  return rows;
}

std::string sweep_tsv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "r\tf_theory\tf_measured\n";
  for (const auto& row : rows) {
    os << expr::format_number(row.ratio) << '\t' << fmt(row.theory, 6) << '\t' << fmt(row.measured, 6) << '\n';
  }
  return os.str();
}

// ---- overhead ---------------------------------------------------------------

OverheadReport overhead_report(const std::filesystem::path& workload) {
  WorkloadHarness harness(WorkloadSpec::load(workload), ClockMode::Real);
  ServeOptions so;
  so.record_tokens = false;
  ServeResult r = harness.run(ServeMode::Partial, so);
  OverheadReport rep;
  rep.parser_ns = r.parser_ns;
  rep.dispatch_ns = r.dispatch_ns;
  rep.wall_ns = r.wall_ns;
  rep.status = r.status;
  rep.fraction = r.wall_ns > 0 ? static_cast<double>(r.parser_ns + r.dispatch_ns) / static_cast<double>(r.wall_ns) : 0.0;
  return rep;
}

// ---- gantt ------------------------------------------------------------------

std::string render_gantt(const std::vector<TimelineEvent>& events, int width) {
  if (events.empty()) throw Error(ErrorCode::InvalidConfig, "timeline is empty");
  width = std::max(width, 10);
  Micros t0 = events.front().t;
  Micros t1 = events.front().t;
  for (const auto& e : events) {
    t0 = std::min(t0, e.t);
    t1 = std::max(t1, e.t);
  }
  const double span = std::max<Micros>(1, t1 - t0);
  auto col = [&](Micros t) {
    return std::clamp(static_cast<int>(static_cast<double>(t - t0) / span * (width - 1) + 0.5), 0, width - 1);
  };
  auto fill = [&](std::string& lane, Micros a, Micros b, char c) {
    for (int i = col(a); i <= col(b); ++i) {
      if (lane[static_cast<std::size_t>(i)] == ' ' || c == '#') lane[static_cast<std::size_t>(i)] = c;
    }
  };

  std::string decode(static_cast<std::size_t>(width), ' ');
  std::map<int, std::string> lanes;
  std::map<int, std::string> labels;
  std::map<int, Micros> tool_start;
  std::map<int, Micros> round_start;
  std::vector<std::string> notes;

  for (const auto& e : events) {
    switch (e.kind) {
      case TimelineKind::RoundStart: round_start[e.round] = e.t; break;
      case TimelineKind::RoundEnd:
        if (e.detail == "decode") {
          fill(decode, round_start.count(e.round) ? round_start[e.round] : e.t, e.t, '=');
          auto& c = decode[static_cast<std::size_t>(col(e.t))];
          if (c != 'X') c = '|';
        }
        break;
      case TimelineKind::ToolStart:
        tool_start[e.job] = e.t;
        lanes[e.job] = std::string(static_cast<std::size_t>(width), ' ');
        labels[e.job] = "r" + std::to_string(e.round) + " " + detail_field(e.detail, "tool").value_or("tool") + "#" +
                        std::to_string(e.job);
        break;
      case TimelineKind::PieceExecuted:
        if (lanes.count(e.job)) {
          Micros start = e.t;
          if (auto s = detail_field(e.detail, "start")) start = std::stoll(*s);
          fill(lanes[e.job], start, e.t, '#');
        }
        break;
      case TimelineKind::ToolDone:
        if (lanes.count(e.job)) {
          fill(lanes[e.job], tool_start[e.job], e.t, '.');
          auto state = detail_field(e.detail, "state").value_or("done");
          lanes[e.job][static_cast<std::size_t>(col(e.t))] = state == "done" ? ']' : 'X';
        }
        break;
      case TimelineKind::AbortSignal:
        decode[static_cast<std::size_t>(col(e.t))] = 'X';
        notes.push_back("abort at " + std::to_string(e.t - t0) + " us: " + e.detail.substr(e.detail.find('=') + 1));
        break;
      default: break;
    }
  }
  std::size_t label_width = 8;
  for (const auto& [_, l] : labels) label_width = std::max(label_width, l.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(label_width)) << "lane" << " |0 us" << std::string(static_cast<std::size_t>(std::max(0, width - 16)), ' ')
     << (t1 - t0) << " us\n";
  os << std::setw(static_cast<int>(label_width)) << "decode" << " |" << decode << "|\n";
  for (const auto& [job, lane] : lanes) {
    os << std::setw(static_cast<int>(label_width)) << labels[job] << " |" << lane << "|\n";
  }
  os << "legend: '=' decoding, '|' end of decoding, '#' piece executing, '.' tool idle, ']' done, 'X' abort/failure\n";
  for (const auto& n : notes) os << n << '\n';
  return os.str();
}

}  // namespace tpx

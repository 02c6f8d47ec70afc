#include "tpx/cli.hpp"

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "tpx/bench.hpp"
#include "tpx/workload.hpp"

namespace tpx {

namespace {

constexpr int kOk = 0;
constexpr int kServeFailure = 1;
constexpr int kUsage = 2;

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::InvalidConfig, "cannot write " + path);
  f << content;
}

std::optional<ClockMode> clock_override(const std::string& name) {
  if (name.empty()) return std::nullopt;
  if (name == "virtual") return ClockMode::Virtual;
  if (name == "real") return ClockMode::Real;
  throw Error(ErrorCode::InvalidConfig, "unknown clock '" + name + "'");
}

void print_rounds(std::ostream& out, const ServeResult& r) {
  out << std::left << std::setw(7) << "round" << std::right << std::setw(8) << "tokens" << std::setw(14) << "g_us"
      << std::setw(14) << "t_us" << std::setw(14) << "t_crit_us" << std::setw(14) << "post_eos_us" << "  tools\n";
  for (const auto& rec : r.rounds) {
    std::string tools;
    for (const auto& t : rec.tools) {
      if (!tools.empty()) tools += ", ";
      tools += t.tool + "(" + std::string(to_string(t.state)) + ")";
    }
    out << std::left << std::setw(7) << rec.index << std::right << std::setw(8) << rec.tokens << std::setw(14)
        << rec.g_time << std::setw(14) << rec.t_sum() << std::setw(14) << rec.t_critical() << std::setw(14)
        << rec.post_eos_wait << "  " << (tools.empty() ? "-" : tools) << '\n';
  }
}

int cmd_run(const std::string& workload, const std::string& mode_name, const std::string& timeline,
            const std::string& clock, std::ostream& out, std::ostream& err) {
  auto mode = parse_serve_mode(mode_name);
  if (!mode) throw Error(ErrorCode::InvalidConfig, "unknown mode '" + mode_name + "'");
  WorkloadHarness harness(WorkloadSpec::load(resolve_workload(workload)), clock_override(clock));
  ServeResult r = harness.run(*mode);

  out << "workload: " << harness.spec().name << " (" << to_string(*mode) << ", "
      << (harness.clock_mode() == ClockMode::Virtual ? "virtual" : "real") << " clock)\n";
  out << "response:\n" << r.response_text << "\n\n";
  print_rounds(out, r);
  for (const auto& rec : r.rounds) {
    for (const auto& t : rec.tools) {
      out << "observation r" << rec.index << " " << t.tool << ": " << observation_text(t.observation) << '\n';
    }
  }
  out << "total latency: " << r.total_latency_us << " us\n";
  if (r.abort_time) out << "abort signal at: " << (*r.abort_time - r.start_time) << " us\n";
  for (const auto& w : r.warnings) err << "warning: " << w << '\n';
  if (!timeline.empty()) write_file(timeline, export_timeline(r.timeline));
  if (r.status == ServeStatus::Failed) err << "error: " << r.error_detail << '\n';
  return r.status == ServeStatus::Ok ? kOk : kServeFailure;
}

int cmd_bench(const std::vector<std::string>& workloads, int runs, const std::string& modes, const std::string& csv,
              const std::string& stats, bool parallel, const std::string& timeline_dir, const std::string& clock,
              std::ostream& out) {
  BenchOptions o;
  o.runs = runs;
  o.parallel = parallel;
  o.clock = clock_override(clock);
  if (modes == "both") {
    o.modes = {ServeMode::Partial, ServeMode::Sequential};
  } else if (auto m = parse_serve_mode(modes)) {
    o.modes = {*m};
  } else {
    throw Error(ErrorCode::InvalidConfig, "unknown modes '" + modes + "'");
  }
  if (!timeline_dir.empty()) o.timeline_dir = timeline_dir;

  std::vector<std::filesystem::path> paths;
  for (const auto& w : workloads) {
    if (w == "all") {
      for (const auto& name : bundled_workloads()) paths.push_back(resolve_workload(name));
    } else {
      paths.push_back(resolve_workload(w));
    }
  }
  BenchReport report = run_benchmark(paths, o);
  out << report.summary();
  if (!csv.empty()) write_file(csv, report.csv());
  if (!stats.empty()) write_file(stats, report.stats_csv());
  for (const auto& r : report.results) {
    if (r.failures) return kServeFailure;
  }
  return kOk;
}

int cmd_sweep(const std::vector<double>& ratios, int rounds, Micros g_us, const std::string& outfile,
              std::ostream& out) {
  SweepOptions o;
  o.n_rounds = rounds;
  o.g_per_round_us = g_us;
  auto rows = sweep(ratios.empty() ? default_sweep_ratios() : ratios, o);
  std::string tsv = sweep_tsv(rows);
  out << tsv;
  if (!outfile.empty()) write_file(outfile, tsv);
  return kOk;
}

int cmd_report(const std::string& path, int width, std::ostream& out) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::InvalidConfig, "cannot open timeline " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  out << render_gantt(parse_timeline(buf.str()), width);
  return kOk;
}

int cmd_overhead(const std::string& workload, std::ostream& out) {
  OverheadReport rep = overhead_report(resolve_workload(workload));
  out << "parser_ns\t" << rep.parser_ns << "\ndispatch_ns\t" << rep.dispatch_ns << "\nwall_ns\t" << rep.wall_ns
      << "\nfraction\t" << std::fixed << std::setprecision(6) << rep.fraction << '\n';
  return rep.status == ServeStatus::Failed ? kServeFailure : kOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Serve tool-using requests with tools overlapped against decoding, and benchmark the overlap."};
  app.require_subcommand(0, 1);
  bool list = false;
  app.add_flag("--list", list, "List the bundled workloads");

  std::string workload, mode = "partial", timeline, clock;
  auto* run = app.add_subcommand("run", "Serve one request of a workload");
  run->add_option("workload", workload, "Bundled workload name or workload file")->required();
  run->add_option("--mode", mode, "partial or sequential")->check(CLI::IsMember({"partial", "sequential"}));
  run->add_option("--timeline", timeline, "Write the timeline (TSV) to this file");
  run->add_option("--clock", clock, "Override the workload clock")->check(CLI::IsMember({"virtual", "real"}));

  std::vector<std::string> bench_workloads;
  int runs = 1;
  std::string modes = "both", csv, stats, timeline_dir, bench_clock;
  bool parallel = false;
  auto* bench = app.add_subcommand("bench", "Serve workloads repeatedly in both modes");
  bench->add_option("workloads", bench_workloads, "Workload names, files, or 'all'")->required();
  bench->add_option("--runs", runs, "Runs per mode")->check(CLI::PositiveNumber);
  bench->add_option("--modes", modes, "both, partial or sequential")
      ->check(CLI::IsMember({"both", "partial", "sequential"}));
  bench->add_option("--csv", csv, "Per-run CSV output");
  bench->add_option("--stats", stats, "Per-mode statistics CSV output");
  bench->add_flag("--parallel", parallel, "Run independent requests concurrently");
  bench->add_option("--timeline-dir", timeline_dir, "Write each run's timeline here");
  bench->add_option("--clock", bench_clock, "Override the workload clock")->check(CLI::IsMember({"virtual", "real"}));

  std::vector<double> ratios;
  int rounds = 3;
  Micros g_us = 1'000'000;
  std::string sweep_out;
  auto* sw = app.add_subcommand("sweep", "Measured vs ideal improvement over tool/decode ratios");
  sw->add_option("--ratios", ratios, "Tool/decode time ratios")->delimiter(',')->check(CLI::PositiveNumber);
  sw->add_option("--rounds", rounds, "Tool rounds per request")->check(CLI::PositiveNumber);
  sw->add_option("--g-us", g_us, "Decode time per round (us)")->check(CLI::PositiveNumber);
  sw->add_option("--out", sweep_out, "Write the table here as well");

  std::string report_file;
  int width = 72;
  auto* report = app.add_subcommand("report", "Render a timeline file as a text Gantt chart");
  report->add_option("--timeline", report_file, "Timeline TSV")->required();
  report->add_option("--width", width, "Chart width in columns")->check(CLI::Range(10, 400));

  std::string overhead_workload = "CodeGen";
  auto* overhead = app.add_subcommand("overhead", "Parser and dispatch share of wall time (real clock)");
  overhead->add_option("workload", overhead_workload, "Workload name or file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }

  try {
    if (list) {
      for (const auto& name : bundled_workloads()) {
        auto spec = WorkloadSpec::load(resolve_workload(name));
        out << std::left << std::setw(12) << spec.name << spec.description << '\n';
      }
      return kOk;
    }
    if (*run) return cmd_run(workload, mode, timeline, clock, out, err);
    if (*bench) return cmd_bench(bench_workloads, runs, modes, csv, stats, parallel, timeline_dir, bench_clock, out);
    if (*sw) return cmd_sweep(ratios, rounds, g_us, sweep_out, out);
    if (*report) return cmd_report(report_file, width, out);
    if (*overhead) return cmd_overhead(overhead_workload, out);
    err << app.help();
    return kUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    switch (e.code()) {
      case ErrorCode::InvalidConfig:
      case ErrorCode::InvalidDescriptor:
      case ErrorCode::DuplicateName:
        return kUsage;
      default:
        return kServeFailure;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kServeFailure;
  }
}

}  // namespace tpx

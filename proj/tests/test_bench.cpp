#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "support.hpp"
#include "tpx/bench.hpp"
#include "tpx/latency_model.hpp"
#include "tpx/workload.hpp"

namespace tpx {
namespace {

LatencyModel model(std::vector<double> g, std::vector<double> t) {
  LatencyModel m;
  m.n = t.size();
  m.g = std::move(g);
  m.t = std::move(t);
  return m;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::InvalidConfig;
}

// ---- closed forms --------------------------------------------------------------

TEST(LatencyModel, OldLatencyExamples) {
  EXPECT_EQ(l_old(model({7}, {})), 7);
  EXPECT_EQ(l_old(model({10, 2}, {10})), 22);
  EXPECT_EQ(l_old(model({5, 5, 5}, {3, 7})), 25);
}

TEST(LatencyModel, BoundExamples) {
  EXPECT_EQ(l_new_bounds(model({10, 2}, {10})), (std::pair<double, double>{12, 22}));
  EXPECT_EQ(l_new_bounds(model({10, 0}, {1})), (std::pair<double, double>{10, 11}));
  EXPECT_EQ(l_new_bounds(model({4, 5, 6}, {0, 0})), (std::pair<double, double>{15, 15}));
}

TEST(LatencyModel, ImprovementExamples) {
  EXPECT_EQ(best_case_improvement(model({10, 0}, {10})), 1.0);
  EXPECT_EQ(best_case_improvement(model({3, 4}, {0})), 0.0);
  EXPECT_NEAR(best_case_improvement(model({10, 0}, {1000})), 0.01, 1e-12);
  EXPECT_EQ(code_of([] { best_case_improvement(model({0, 0}, {0})); }), ErrorCode::DegenerateModel);
}

TEST(LatencyModel, IllFormedModelsAreRejected) {
  EXPECT_EQ(code_of([] { l_old(model({1}, {1})); }), ErrorCode::ModelIllFormed);
  EXPECT_EQ(code_of([] { l_old(model({1, -1}, {1})); }), ErrorCode::ModelIllFormed);
  EXPECT_EQ(code_of([] { l_new_bounds(model({1, 1}, {-2})); }), ErrorCode::ModelIllFormed);
  auto m = model({1, 1}, {1});
  m.t_critical = {1, 1};
  EXPECT_EQ(code_of([&] { l_new_bounds(m); }), ErrorCode::ModelIllFormed);
}

TEST(LatencyModel, CriticalPathLowersTheFloorOnly) {
  auto m = model({10, 2}, {30});
  m.t_critical = {12};
  EXPECT_EQ(l_old(m), 42);
  EXPECT_EQ(l_new_bounds(m), (std::pair<double, double>{14, 42}));
}

TEST(LatencyModel, RandomModelsMatchDirectSums) {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> n_dist(0, 10);
  std::uniform_real_distribution<double> d(0, 1e7);
  for (int k = 0; k < 1000; ++k) {
    const int n = n_dist(rng);
    std::vector<double> g(n + 1), t(n);
    for (auto& x : g) x = d(rng);
    for (auto& x : t) x = d(rng);
    double old_sum = g[n], low = g[n];
    for (int i = 0; i < n; ++i) {
      old_sum += g[i] + t[i];
      low += std::max(g[i], t[i]);
    }
    auto m = model(g, t);
    EXPECT_NEAR(l_old(m), old_sum, 1e-9 * old_sum);
    auto [lo, hi] = l_new_bounds(m);
    EXPECT_NEAR(lo, low, 1e-9 * low);
    EXPECT_NEAR(hi, old_sum, 1e-9 * old_sum);
    EXPECT_LE(lo, hi);
    const double imp = old_sum / low - 1;
    EXPECT_NEAR(best_case_improvement(m), imp, 1e-9 * std::max(1.0, imp));
  }
}

TEST(ImprovementCurve, PeakAndTails) {
  EXPECT_EQ(improvement_at(1), 1.0);
  EXPECT_NEAR(improvement_at(0.01), 0.01, 1e-15);
  EXPECT_NEAR(improvement_at(100), 0.01, 1e-15);
  EXPECT_EQ(code_of([] { improvement_curve({1, 0}); }), ErrorCode::InvalidConfig);
  EXPECT_EQ(code_of([] { improvement_curve({-1}); }), ErrorCode::InvalidConfig);
}

TEST(ImprovementCurve, PiecewiseIdentitiesAndShape) {
  std::vector<double> rs;
  for (double r = 0.001; r < 1000; r *= 1.07) rs.push_back(r);
  auto curve = improvement_curve(rs);
  ASSERT_EQ(curve.size(), rs.size());
  for (std::size_t i = 0; i < rs.size(); ++i) {
    const double r = rs[i];
    EXPECT_EQ(curve[i].first, r);
    EXPECT_NEAR(curve[i].second, r <= 1 ? r : 1 / r, 1e-12);
    if (i > 0 && r <= 1) EXPECT_GE(curve[i].second, curve[i - 1].second);
    if (i > 0 && rs[i - 1] >= 1) EXPECT_LE(curve[i].second, curve[i - 1].second);
  }
  // the closed form agrees with a model of equal rounds and a vanishing final generation
  for (double r : {0.2, 1.0, 3.0}) {
    auto m = model({1e6, 1e6, 1e6, 0}, {r * 1e6, r * 1e6, r * 1e6});
    EXPECT_NEAR(best_case_improvement(m), improvement_at(r), 1e-12);
  }
}

// ---- stats and benchmark ----------------------------------------------------------

TEST(Stats, PopulationMoments) {
  std::vector<double> xs = {2, 4, 4, 4, 5, 5, 7, 9};
  auto s = compute_stats(xs);
  EXPECT_EQ(s.count, 8u);
  EXPECT_DOUBLE_EQ(s.mean, 5);
  EXPECT_DOUBLE_EQ(s.stddev, 2);
  EXPECT_EQ(s.min, 2);
  EXPECT_EQ(s.max, 9);
  auto one = compute_stats({42});
  EXPECT_EQ(one.mean, 42);
  EXPECT_EQ(one.stddev, 0);
  EXPECT_EQ(one.min, 42);
  EXPECT_EQ(one.max, 42);
}

TEST(Stats, RandomSamplesMatchTwoPassOracle) {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> d(0, 1e6);
  for (int k = 0; k < 50; ++k) {
    std::vector<double> xs(1 + k * 3);
    for (auto& x : xs) x = d(rng);
    double mean = 0;
    for (double x : xs) mean += x;
    mean /= xs.size();
    double var = 0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= xs.size();
    auto s = compute_stats(xs);
    EXPECT_NEAR(s.mean, mean, 1e-9 * mean);
    EXPECT_NEAR(s.stddev, std::sqrt(var), 1e-6);
    EXPECT_GE(s.stddev, 0);
  }
}

std::size_t count_lines(const std::string& s) { return std::count(s.begin(), s.end(), '\n'); }

TEST(Benchmark, VirtualRunsAreDeterministic) {
  BenchOptions opts;
  opts.runs = 3;
  auto report = run_benchmark({resolve_workload("CodeGen"), resolve_workload("Calculator")}, opts);
  ASSERT_EQ(report.results.size(), 4u);
  for (const auto& r : report.results) {
    EXPECT_EQ(r.runs.size(), 3u);
    EXPECT_EQ(r.failures, 0u);
    EXPECT_EQ(r.stats.stddev, 0);
    EXPECT_EQ(r.stats.min, r.stats.max);
  }
  const std::string csv = report.csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "workload,mode,run,latency_us");
  EXPECT_EQ(count_lines(csv), 1 + 12u);
  EXPECT_EQ(count_lines(report.stats_csv()), 1 + 4u);
  ASSERT_TRUE(report.improvement("CodeGen"));
  EXPECT_GE(*report.improvement("CodeGen"), 0.20);
  EXPECT_LE(*report.improvement("CodeGen"), 0.35);
  EXPECT_LE(*report.improvement("Calculator"), 0.02);
  EXPECT_FALSE(report.improvement("Nope"));
  EXPECT_NE(report.summary().find("CodeGen"), std::string::npos);
}

TEST(Benchmark, SingleRunStatsEqualTheSample) {
  BenchOptions opts;
  opts.modes = {ServeMode::Partial};
  auto report = run_benchmark({resolve_workload("Search")}, opts);
  ASSERT_EQ(report.results.size(), 1u);
  const auto& r = report.results[0];
  EXPECT_EQ(r.stats.mean, static_cast<double>(r.runs[0].total_latency_us));
  EXPECT_EQ(r.stats.stddev, 0);
  EXPECT_FALSE(report.improvement("Search"));
}

TEST(Benchmark, AbortedRunsAreRecordedAndTheBatchContinues) {
  BenchOptions opts;
  opts.runs = 2;
  auto report = run_benchmark({resolve_workload("Validation"), resolve_workload("Database")}, opts);
  ASSERT_EQ(report.results.size(), 4u);
  for (const auto& r : report.results) {
    if (r.workload == "Validation") {
      for (const auto& run : r.runs) EXPECT_EQ(run.status, ServeStatus::Aborted);
    } else {
      EXPECT_EQ(r.failures, 0u);
    }
  }
}

TEST(Benchmark, ParallelMatchesSerial) {
  BenchOptions serial;
  serial.runs = 2;
  BenchOptions par = serial;
  par.parallel = true;
  std::vector<std::filesystem::path> ws;
  for (const auto& w : bundled_workloads()) ws.push_back(resolve_workload(w));
  EXPECT_EQ(run_benchmark(ws, serial).csv(), run_benchmark(ws, par).csv());
}

TEST(Benchmark, RejectsZeroRuns) {
  BenchOptions opts;
  opts.runs = 0;
  EXPECT_EQ(code_of([&] { run_benchmark({resolve_workload("CodeGen")}, opts); }), ErrorCode::InvalidConfig);
}

TEST(Benchmark, WritesTimelinesPerRun) {
  auto dir = std::filesystem::temp_directory_path() / "tpx_bench_timelines";
  std::filesystem::remove_all(dir);
  BenchOptions opts;
  opts.timeline_dir = dir;
  run_benchmark({resolve_workload("Calculator")}, opts);
  std::size_t files = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    ++files;
    std::ifstream in(entry.path());
    std::stringstream ss;
    ss << in.rdbuf();
    EXPECT_FALSE(parse_timeline(ss.str()).empty());
  }
  EXPECT_EQ(files, 2u);
  std::filesystem::remove_all(dir);
}

// ---- sweep -------------------------------------------------------------------------------

TEST(Sweep, MeasuredStaysUnderTheoryAndPeaksAtOne) {
  auto rows = sweep(default_sweep_ratios());
  ASSERT_EQ(rows.size(), 7u);
  for (const auto& row : rows) {
    EXPECT_NEAR(row.theory, improvement_at(row.ratio), 1e-12);
    EXPECT_LE(row.measured, row.theory + 0.01) << row.ratio;
    EXPECT_GE(row.measured, 0) << row.ratio;
    EXPECT_EQ(row.measured, static_cast<double>(row.sequential_us) / row.partial_us - 1);
  }
  EXPECT_GE(rows[3].measured, 0.85);
  EXPECT_LE(rows.front().measured, 0.05);
  EXPECT_LE(rows.back().measured, 0.05);
  std::size_t peak = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].measured > rows[peak].measured) peak = i;
  }
  for (std::size_t i = 1; i <= peak; ++i) EXPECT_GE(rows[i].measured, rows[i - 1].measured);
  for (std::size_t i = peak + 1; i < rows.size(); ++i) EXPECT_LE(rows[i].measured, rows[i - 1].measured);
}

TEST(Sweep, TraceHasTheRequestedShape) {
  SweepOptions o;
  o.n_rounds = 2;
  o.g_per_round_us = 500'000;
  o.tokens_per_round = 50;
  auto trace = synth_sweep_trace(2.0, o);
  ASSERT_EQ(trace.rounds.size(), 3u);
  for (int i = 0; i < 2; ++i) EXPECT_EQ(trace.rounds[i].generation_time(), 500'000);
  EXPECT_LT(trace.rounds[2].generation_time(), 500'000 / 100);
}

TEST(Sweep, RejectsNonPositiveRatios) {
  EXPECT_EQ(code_of([] { sweep({1, 0}); }), ErrorCode::InvalidConfig);
}

TEST(Sweep, TsvHasHeaderAndOneRowPerRatio) {
  auto tsv = sweep_tsv(sweep({0.5, 1}));
  std::istringstream in(tsv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "r\tf_theory\tf_measured");
  int rows = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), '\t'), 2);
    ++rows;
  }
  EXPECT_EQ(rows, 2);
}

// ---- overhead and gantt -------------------------------------------------------------------

TEST(Overhead, FractionIsSmallOnTheRealClock) {
  auto rep = overhead_report(resolve_workload("CodeGen"));
  EXPECT_EQ(rep.status, ServeStatus::Ok);
  EXPECT_GE(rep.fraction, 0);
  EXPECT_LE(rep.fraction, 1);
  EXPECT_LT(rep.fraction, 0.05);
  EXPECT_GT(rep.wall_ns, 0);
  EXPECT_DOUBLE_EQ(rep.fraction, static_cast<double>(rep.parser_ns + rep.dispatch_ns) / rep.wall_ns);
}

TEST(Gantt, RendersDecodeAndToolLanes) {
  WorkloadHarness h(WorkloadSpec::load(resolve_workload("CodeGen")));
  auto r = h.run(ServeMode::Partial);
  auto chart = render_gantt(r.timeline, 60);
  EXPECT_NE(chart.find("decode"), std::string::npos);
  EXPECT_NE(chart.find("interp"), std::string::npos);
  EXPECT_EQ(code_of([] { render_gantt({}); }), ErrorCode::InvalidConfig);
}

TEST(Gantt, MarksTheAbort) {
  WorkloadHarness h(WorkloadSpec::load(resolve_workload("Validation")));
  auto r = h.run(ServeMode::Partial);
  EXPECT_NE(render_gantt(r.timeline).find('X'), std::string::npos);
}

}  // namespace
}  // namespace tpx

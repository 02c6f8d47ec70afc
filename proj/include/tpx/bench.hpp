#pragma once

// Benchmark harness: repeated serving of workloads in both modes, the
// ratio sweep against the ideal improvement curve, the overhead report and a
// text Gantt rendering of timelines.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tpx/latency_model.hpp"
#include "tpx/scheduler.hpp"
#include "tpx/timeline.hpp"
#include "tpx/workload.hpp"

namespace tpx {

struct Stats {
  std::size_t count = 0;
  double mean = 0;
  double stddev = 0;  // population
  double min = 0;
  double max = 0;
};

Stats compute_stats(const std::vector<double>& samples);

struct BenchRun {
  std::string workload;
  ServeMode mode = ServeMode::Partial;
  int run = 0;
  ServeStatus status = ServeStatus::Ok;
  Micros total_latency_us = 0;
  std::string error;
  std::vector<RoundRecord> rounds;
};

struct BenchResult {
  std::string workload;
  ServeMode mode = ServeMode::Partial;
  std::vector<BenchRun> runs;
  Stats stats;  // over runs that did not fail
  std::size_t failures = 0;
};

struct BenchOptions {
  int runs = 1;
  std::vector<ServeMode> modes = {ServeMode::Partial, ServeMode::Sequential};
  bool parallel = false;
  std::optional<ClockMode> clock;
  /// When set, each run's timeline is written to <dir>/<workload>_<mode>_<run>.tsv.
  std::optional<std::filesystem::path> timeline_dir;
};

struct BenchReport {
  std::vector<BenchResult> results;

  /// workload,mode,run,latency_us
  std::string csv() const;
  /// workload,mode,runs,failures,mean_us,stddev_us,min_us,max_us
  std::string stats_csv() const;
  /// mean sequential / mean partial - 1, when both modes ran.
  std::optional<double> improvement(const std::string& workload) const;
  /// Human-readable table including per-workload improvement.
  std::string summary() const;
};

/// Serves every workload `runs` times per mode. A failing run is recorded and
/// the batch carries on. Throws Error(InvalidConfig) for runs < 1.
BenchReport run_benchmark(const std::vector<std::filesystem::path>& workloads, const BenchOptions& options);

struct SweepRow {
  double ratio = 0;
  double theory = 0;
  double measured = 0;
  Micros partial_us = 0;
  Micros sequential_us = 0;
};

struct SweepOptions {
  int n_rounds = 3;
  Micros g_per_round_us = 1'000'000;
  int tokens_per_round = 100;
};

inline const std::vector<double>& default_sweep_ratios() {
  static const std::vector<double> r = {0.01, 0.1, 0.5, 1, 2, 10, 100};
  return r;
}

/// Synthetic request: each tool round decodes g_per_round_us worth of tokens
/// and triggers a sleep of ratio * g_per_round_us; the final round is short.
DecodeTrace synth_sweep_trace(double ratio, const SweepOptions& options);

/// Throws Error(InvalidConfig) for a ratio <= 0.
std::vector<SweepRow> sweep(const std::vector<double>& ratios, const SweepOptions& options = {});

/// r, f_theory, f_measured, tab-separated with a header line.
std::string sweep_tsv(const std::vector<SweepRow>& rows);

struct OverheadReport {
  std::int64_t parser_ns = 0;
  std::int64_t dispatch_ns = 0;
  std::int64_t wall_ns = 0;
  double fraction = 0;  // (parser + dispatch) / wall
  ServeStatus status = ServeStatus::Ok;
};

/// Serves the workload once in Partial mode on the real clock.
OverheadReport overhead_report(const std::filesystem::path& workload);

/// One row per lane (decode, then each tool job), `width` columns wide.
/// Throws Error(InvalidConfig) for an empty timeline.
std::string render_gantt(const std::vector<TimelineEvent>& events, int width = 72);

}  // namespace tpx

#pragma once

// Request latency with and without overlapping tools and decoding.
//
// A request has n tool rounds and a final generation: g holds the n+1
// generation times, t the n tool times. Sequentially every tool waits for the
// end of its round's decoding:
//
//   old = sum(g[i] + t[i]) + g[n]
//
// With overlap, round i takes between max(g[i], t[i]) and g[i] + t[i], so
//
//   sum(max(g[i], t[i])) + g[n] <= new <= old

#include <cstddef>
#include <utility>
#include <vector>

#include "tpx/clock.hpp"

namespace tpx {

struct LatencyModel {
  std::size_t n = 0;
  std::vector<double> g;  // n + 1 generation times (us)
  std::vector<double> t;  // n tool times (us), summed over the round's jobs
  /// Longest single job per round. When several jobs share a round they can
  /// overlap with each other, so the overlap floor uses this instead of t.
  /// Empty means "same as t".
  std::vector<double> t_critical;

  /// Throws Error(ModelIllFormed) on wrong lengths or negative entries.
  void validate() const;
  const std::vector<double>& overlap_t() const { return t_critical.empty() ? t : t_critical; }
};

double l_old(const LatencyModel& m);

/// {lower, upper}; upper == l_old(m).
std::pair<double, double> l_new_bounds(const LatencyModel& m);

/// l_old / lower - 1. Throws Error(DegenerateModel) when lower == 0.
double best_case_improvement(const LatencyModel& m);

/// Best-case improvement when every round's tool time is r times its decode
/// time and the final generation is negligible: (1 + r) / max(1, r) - 1.
double improvement_at(double r);

/// Throws Error(InvalidConfig) for r <= 0.
std::vector<std::pair<double, double>> improvement_curve(const std::vector<double>& ratios);

}  // namespace tpx

#include "tpx/latency_model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tpx/error.hpp"

namespace tpx {

void LatencyModel::validate() const {
  if (g.size() != n + 1) {
    throw Error(ErrorCode::ModelIllFormed,
                "expected " + std::to_string(n + 1) + " generation times, got " + std::to_string(g.size()));
  }
  if (t.size() != n) {
    throw Error(ErrorCode::ModelIllFormed, "expected " + std::to_string(n) + " tool times, got " + std::to_string(t.size()));
  }
  if (!t_critical.empty() && t_critical.size() != n) {
    throw Error(ErrorCode::ModelIllFormed, "critical tool times must match the number of rounds");
  }
  auto bad = [](double v) { return !(v >= 0) || !std::isfinite(v); };
  if (std::any_of(g.begin(), g.end(), bad) || std::any_of(t.begin(), t.end(), bad) ||
      std::any_of(t_critical.begin(), t_critical.end(), bad)) {
    throw Error(ErrorCode::ModelIllFormed, "durations must be finite and non-negative");
  }
}

double l_old(const LatencyModel& m) {
  m.validate();
  double total = m.g[m.n];
  for (std::size_t i = 0; i < m.n; ++i) total += m.g[i] + m.t[i];
  return total;
}

std::pair<double, double> l_new_bounds(const LatencyModel& m) {
  const double upper = l_old(m);
  const auto& tc = m.overlap_t();
  double lower = m.g[m.n];
  for (std::size_t i = 0; i < m.n; ++i) lower += std::max(m.g[i], tc[i]);
  return {lower, upper};
}

double best_case_improvement(const LatencyModel& m) {
  auto [lower, upper] = l_new_bounds(m);
  if (lower == 0) throw Error(ErrorCode::DegenerateModel, "lower latency bound is zero");
  return upper / lower - 1.0;
}

double improvement_at(double r) {
  if (!(r > 0) || !std::isfinite(r)) throw Error(ErrorCode::InvalidConfig, "ratio must be positive and finite");
  return (1.0 + r) / std::max(1.0, r) - 1.0;
}

std::vector<std::pair<double, double>> improvement_curve(const std::vector<double>& ratios) {
  std::vector<std::pair<double, double>> out;
  out.reserve(ratios.size());
  for (double r : ratios) out.emplace_back(r, improvement_at(r));
  return out;
}

}  // namespace tpx

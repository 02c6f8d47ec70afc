#pragma once

// Workload specification files and the harness that serves them.
//
// A workload is a JSON document:
//
//   {
//     "name": "CodeGen",
//     "prompt": "...",
//     "trace": "../traces/codegen.json",
//     "grammar": "fence" | "call" | "plan",
//     "clock": "virtual" | "real",
//     "modes": ["partial", "sequential"],
//     "max_rounds": 8,
//     "search_fixture": "../data/search.json",      (optional: starts a mock server)
//     "startup_us": {"interp": 0},                   (optional)
//     "tools": [{"tool": "interp", "bind": "python", "config": {...}}]
//   }
//
// Relative paths resolve against the workload file's directory.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tpx/decoder.hpp"
#include "tpx/mock_search.hpp"
#include "tpx/plugin_api.hpp"
#include "tpx/scheduler.hpp"

namespace tpx {

struct ToolSpec {
  std::string tool;           // builtin tool kind
  std::string name;           // registry name; defaults to `tool`
  std::string bind;           // fence tag, call name or plan stage name
  nlohmann::json config = nlohmann::json::object();
};

struct WorkloadSpec {
  std::string name;
  std::string description;
  std::string prompt;
  std::filesystem::path trace_path;
  GrammarId grammar = GrammarId::Fence;
  ClockMode clock = ClockMode::Virtual;
  std::vector<ServeMode> modes = {ServeMode::Partial, ServeMode::Sequential};
  int max_rounds = 8;
  std::optional<std::filesystem::path> search_fixture;
  std::map<std::string, Micros, std::less<>> startup_us;
  std::vector<ToolSpec> tools;
  std::filesystem::path base_dir;

  /// Throws Error(InvalidConfig) for schema violations or missing files.
  static WorkloadSpec from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
  static WorkloadSpec load(const std::filesystem::path& path);
};

/// Directory holding the bundled fixtures: $TPX_FIXTURES if set, else the
/// path compiled into the library.
std::filesystem::path fixtures_dir();

/// Bundled workload names, in presentation order.
const std::vector<std::string>& bundled_workloads();

/// Path of a bundled workload by (case-insensitive) name, or the argument
/// itself when it names an existing file. Throws Error(InvalidConfig).
std::filesystem::path resolve_workload(std::string_view name_or_path);

/// Owns everything needed to serve one workload repeatedly: the registry,
/// the decoded trace and, when configured, a running mock search server.
class WorkloadHarness {
 public:
  explicit WorkloadHarness(WorkloadSpec spec, std::optional<ClockMode> clock_override = std::nullopt);
  ~WorkloadHarness();

  /// One request on a fresh clock and decoder.
  ServeResult run(ServeMode mode, ServeOptions options = {}) const;

  const WorkloadSpec& spec() const { return spec_; }
  const Registry& registry() const { return registry_; }
  const DecodeTrace& trace() const { return trace_; }
  ClockMode clock_mode() const { return clock_; }
  MockSearchServer* search_server() const { return server_.get(); }

 private:
  WorkloadSpec spec_;
  ClockMode clock_;
  DecodeTrace trace_;
  std::unique_ptr<MockSearchServer> server_;
  Registry registry_;
};

}  // namespace tpx
